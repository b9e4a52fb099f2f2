//! Declarative stack configuration.
//!
//! A stack is described in TOML: an ordered list of devices (layered
//! devices may only reference earlier declarations, which keeps the graph
//! a DAG), the exports to serve, and reactor settings. Unknown fields are
//! rejected, and kind-specific fields are only accepted on the kinds they
//! belong to.
//!
//! ```toml
//! [[devices]]
//! id = "n0"
//! kind = "null"
//! block_size = 4096
//! block_count = 1048576
//!
//! [[devices]]
//! id = "r0"
//! kind = "raid"
//! level = "raid1"
//! bases = ["n0", "n1"]
//!
//! [[exports]]
//! listen = "127.0.0.1:9700"
//! mode = "processed"
//! device = "r0"
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::DeviceGeometry;
use crate::raid::{PoisonConfig, RaidLayout, RaidLevel};
use crate::registry::DeviceSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("device {id:?}: duplicate id")]
    DuplicateDevice { id: String },
    #[error("device {id:?}: field {field:?} is required for kind {kind:?}")]
    MissingField { id: String, kind: String, field: &'static str },
    #[error("device {id:?}: field {field:?} is not valid for kind {kind:?}")]
    ForbiddenField { id: String, kind: String, field: &'static str },
    #[error("device {id:?}: base {base:?} must be declared earlier (cycles are impossible)")]
    UnknownBase { id: String, base: String },
    #[error("device {id:?}: base devices must share one geometry, {base:?} differs")]
    BaseGeometryMismatch { id: String, base: String },
    #[error("device {id:?}: {message}")]
    Invalid { id: String, message: String },
    #[error("export {listen:?}: duplicate listen endpoint")]
    DuplicateExport { listen: String },
    #[error("export {listen:?}: {message}")]
    InvalidExport { listen: String, message: String },
    #[error("reactors: {0}")]
    InvalidReactors(String),
}

fn default_reactor_count() -> usize {
    1
}
fn default_poll_budget() -> usize {
    32
}
fn default_true() -> bool {
    true
}
fn default_depth() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactorSettings {
    #[serde(default = "default_reactor_count")]
    pub count: usize,
    #[serde(default = "default_poll_budget")]
    pub poll_budget: usize,
    #[serde(default = "default_true")]
    pub idle_yield: bool,
    /// Channel depth used when a consumer does not pick its own.
    #[serde(default = "default_depth")]
    pub default_depth: usize,
}

impl Default for ReactorSettings {
    fn default() -> Self {
        Self {
            count: default_reactor_count(),
            poll_budget: default_poll_budget(),
            idle_yield: true,
            default_depth: default_depth(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKindName {
    Null,
    Memory,
    File,
    Raid,
    Compress,
}

impl std::fmt::Display for DeviceKindName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DeviceKindName::Null => "null",
            DeviceKindName::Memory => "memory",
            DeviceKindName::File => "file",
            DeviceKindName::Raid => "raid",
            DeviceKindName::Compress => "compress",
        };
        f.write_str(s)
    }
}

/// One device declaration. Kind-specific fields are optional here and
/// checked against the kind during validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDecl {
    pub id: String,
    pub kind: DeviceKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<RaidLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strip_size_blocks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison: Option<PoisonConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_reads: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_job_bytes: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMode {
    Processed,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportDecl {
    /// Listen address, `host:port`.
    pub listen: String,
    pub mode: ExportMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
}

/// A parsed and semantically validated stack description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    #[serde(default, skip_serializing_if = "is_default_reactors")]
    pub reactors: ReactorSettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub devices: Vec<DeviceDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exports: Vec<ExportDecl>,
}

fn is_default_reactors(r: &ReactorSettings) -> bool {
    *r == ReactorSettings::default()
}

/// A validated device with its exposed geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDevice {
    pub id: String,
    pub spec: DeviceSpec,
    pub geometry: DeviceGeometry,
}

pub fn parse_config(text: &str) -> Result<StackSpec, ConfigError> {
    let spec: StackSpec = toml::from_str(text)?;
    spec.resolve()?;
    Ok(spec)
}

pub fn serialize_config(spec: &StackSpec) -> String {
    toml::to_string_pretty(spec).expect("stack specs serialize")
}

impl StackSpec {
    /// Validates the description and produces build-ready device specs in
    /// declaration order.
    pub fn resolve(&self) -> Result<Vec<ResolvedDevice>, ConfigError> {
        if self.reactors.count == 0 {
            return Err(ConfigError::InvalidReactors("count must be at least 1".into()));
        }
        if self.reactors.default_depth == 0 {
            return Err(ConfigError::InvalidReactors("default_depth must be at least 1".into()));
        }
        let mut resolved: Vec<ResolvedDevice> = Vec::with_capacity(self.devices.len());
        for decl in &self.devices {
            if resolved.iter().any(|r| r.id == decl.id) {
                return Err(ConfigError::DuplicateDevice { id: decl.id.clone() });
            }
            let device = resolve_device(decl, &resolved)?;
            resolved.push(device);
        }
        self.validate_exports(&resolved)?;
        Ok(resolved)
    }

    fn validate_exports(&self, resolved: &[ResolvedDevice]) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for export in &self.exports {
            if !seen.insert(export.listen.clone()) {
                return Err(ConfigError::DuplicateExport { listen: export.listen.clone() });
            }
            let err = |message: String| ConfigError::InvalidExport {
                listen: export.listen.clone(),
                message,
            };
            match export.mode {
                ExportMode::Processed => {
                    let device = export
                        .device
                        .as_ref()
                        .ok_or_else(|| err("processed mode requires 'device'".into()))?;
                    if export.upstream.is_some() {
                        return Err(err("'upstream' is not valid in processed mode".into()));
                    }
                    if !resolved.iter().any(|r| &r.id == device) {
                        return Err(err(format!("unknown device {device:?}")));
                    }
                }
                ExportMode::Passthrough => {
                    export
                        .upstream
                        .as_ref()
                        .ok_or_else(|| err("passthrough mode requires 'upstream'".into()))?;
                    if export.device.is_some() {
                        return Err(err("'device' is not valid in passthrough mode".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

fn resolve_device(
    decl: &DeviceDecl,
    earlier: &[ResolvedDevice],
) -> Result<ResolvedDevice, ConfigError> {
    let id = decl.id.clone();
    let kind = decl.kind.to_string();
    let missing = |field: &'static str| ConfigError::MissingField {
        id: id.clone(),
        kind: kind.clone(),
        field,
    };
    let invalid = |message: String| ConfigError::Invalid { id: id.clone(), message };

    let mut forbidden: Vec<(&'static str, bool)> = vec![
        ("block_size", decl.block_size.is_some()),
        ("block_count", decl.block_count.is_some()),
        ("path", decl.path.is_some()),
        ("sparse", decl.sparse.is_some()),
        ("level", decl.level.is_some()),
        ("strip_size_blocks", decl.strip_size_blocks.is_some()),
        ("bases", decl.bases.is_some()),
        ("poison", decl.poison.is_some()),
        ("verify_reads", decl.verify_reads.is_some()),
        ("base", decl.base.is_some()),
        ("max_job_bytes", decl.max_job_bytes.is_some()),
    ];
    let mut allow = |fields: &[&'static str]| {
        forbidden.retain(|(name, _)| !fields.contains(name));
    };

    let geometry_of = |decl: &DeviceDecl| -> Result<DeviceGeometry, ConfigError> {
        let block_size = decl.block_size.ok_or_else(|| missing("block_size"))?;
        let block_count = decl.block_count.ok_or_else(|| missing("block_count"))?;
        DeviceGeometry::new(block_size, block_count).map_err(|e| invalid(e.to_string()))
    };
    let find_base = |base: &String| -> Result<&ResolvedDevice, ConfigError> {
        earlier
            .iter()
            .find(|r| &r.id == base)
            .ok_or_else(|| ConfigError::UnknownBase { id: id.clone(), base: base.clone() })
    };

    let (spec, geometry) = match decl.kind {
        DeviceKindName::Null => {
            allow(&["block_size", "block_count"]);
            let geometry = geometry_of(decl)?;
            (DeviceSpec::Null { geometry }, geometry)
        }
        DeviceKindName::Memory => {
            allow(&["block_size", "block_count"]);
            let geometry = geometry_of(decl)?;
            (DeviceSpec::Memory { geometry }, geometry)
        }
        DeviceKindName::File => {
            allow(&["block_size", "block_count", "path", "sparse"]);
            let geometry = geometry_of(decl)?;
            let path = decl.path.clone().ok_or_else(|| missing("path"))?;
            let sparse = decl.sparse.unwrap_or(true);
            (DeviceSpec::File { geometry, path, sparse }, geometry)
        }
        DeviceKindName::Raid => {
            allow(&["level", "strip_size_blocks", "bases", "poison", "verify_reads"]);
            let level = decl.level.ok_or_else(|| missing("level"))?;
            let bases = decl.bases.clone().ok_or_else(|| missing("bases"))?;
            if level != RaidLevel::Raid5 {
                if decl.poison.is_some() {
                    return Err(invalid(format!("poison requires level raid5, not {level}")));
                }
                if decl.verify_reads.is_some() {
                    return Err(invalid(format!(
                        "verify_reads requires level raid5, not {level}"
                    )));
                }
            }
            if let Some(poison) = &decl.poison {
                poison.validate().map_err(|e| invalid(e.to_string()))?;
            }
            let strip_size_blocks = decl.strip_size_blocks.unwrap_or(1);
            let mut base_geometry = None;
            for base in &bases {
                let entry = find_base(base)?;
                let expected = *base_geometry.get_or_insert(entry.geometry);
                if entry.geometry != expected {
                    return Err(ConfigError::BaseGeometryMismatch {
                        id: id.clone(),
                        base: base.clone(),
                    });
                }
            }
            let base_geometry =
                base_geometry.ok_or_else(|| invalid("bases must not be empty".into()))?;
            let layout = RaidLayout::new(level, bases.len(), strip_size_blocks, base_geometry)
                .map_err(|e| invalid(e.to_string()))?;
            let geometry = layout.exposed_geometry();
            (
                DeviceSpec::Raid {
                    level,
                    strip_size_blocks,
                    bases,
                    poison: decl.poison,
                    verify_reads: decl.verify_reads.unwrap_or(true),
                },
                geometry,
            )
        }
        DeviceKindName::Compress => {
            allow(&["base", "max_job_bytes"]);
            let base = decl.base.clone().ok_or_else(|| missing("base"))?;
            let geometry = find_base(&base)?.geometry;
            let max_job_bytes =
                decl.max_job_bytes.unwrap_or(crate::compress::DEFAULT_MAX_JOB_BYTES);
            if max_job_bytes == 0 {
                return Err(invalid("max_job_bytes must be positive".into()));
            }
            (DeviceSpec::Compress { base, max_job_bytes }, geometry)
        }
    };

    if let Some((field, _)) = forbidden.iter().find(|(_, present)| *present) {
        return Err(ConfigError::ForbiddenField { id, kind, field });
    }

    Ok(ResolvedDevice { id, spec, geometry })
}
