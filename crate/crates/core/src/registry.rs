//! Device registry: declarative registration of terminal and layered
//! devices, and a synchronous execution path used by tests and tools.
//! Layered devices must name already-registered bases, so the device graph
//! is a DAG by construction.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

use crate::backstore::{FileDevice, MemoryDevice, NullDevice};
use crate::block::{
    validate_request, DeviceGeometry, DeviceHandle, DeviceKind, GeometryError, IoCompletion,
    IoRequest, RequestError, SharedDevice,
};
use crate::compress::{CompressDevice, CompressLimits};
use crate::raid::{LayoutError, PoisonConfig, RaidDevice, RaidError, RaidLayout, RaidLevel};

/// Declarative description of a device to register.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceSpec {
    Null {
        geometry: DeviceGeometry,
    },
    Memory {
        geometry: DeviceGeometry,
    },
    File {
        geometry: DeviceGeometry,
        path: PathBuf,
        sparse: bool,
    },
    Raid {
        level: RaidLevel,
        strip_size_blocks: u64,
        bases: Vec<String>,
        poison: Option<PoisonConfig>,
        verify_reads: bool,
    },
    Compress {
        base: String,
        max_job_bytes: u64,
    },
}

impl DeviceSpec {
    pub fn kind(&self) -> DeviceKind {
        match self {
            DeviceSpec::Null { .. } => DeviceKind::Null,
            DeviceSpec::Memory { .. } => DeviceKind::Memory,
            DeviceSpec::File { .. } => DeviceKind::File,
            DeviceSpec::Raid { .. } => DeviceKind::Raid,
            DeviceSpec::Compress { .. } => DeviceKind::Compress,
        }
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("device id {0:?} is already registered")]
    DuplicateId(String),
    #[error("device {id:?} references unknown base {base:?}")]
    UnknownBase { id: String, base: String },
    #[error("device {id:?}: {source}")]
    Geometry {
        id: String,
        #[source]
        source: GeometryError,
    },
    #[error("device {id:?}: {source}")]
    Layout {
        id: String,
        #[source]
        source: LayoutError,
    },
    #[error("device {id:?}: {source}")]
    Raid {
        id: String,
        #[source]
        source: RaidError,
    },
    #[error("device {id:?}: failed to open backing file: {source}")]
    Backing {
        id: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ExecuteError {
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error(transparent)]
    Request(#[from] RequestError),
}

struct Entry {
    handle: DeviceHandle,
    device: SharedDevice,
}

/// Holds every registered device, in registration order.
#[derive(Default)]
pub struct Registry {
    order: Vec<String>,
    entries: HashMap<String, Entry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: &str, spec: DeviceSpec) -> Result<DeviceHandle, RegistryError> {
        if self.entries.contains_key(id) {
            return Err(RegistryError::DuplicateId(id.to_string()));
        }
        let check_geometry = |geometry: DeviceGeometry| {
            DeviceGeometry::new(geometry.block_size, geometry.block_count)
                .map_err(|source| RegistryError::Geometry { id: id.to_string(), source })
        };
        let kind = spec.kind();
        let (geometry, device): (DeviceGeometry, SharedDevice) = match spec {
            DeviceSpec::Null { geometry } => {
                let geometry = check_geometry(geometry)?;
                (geometry, crate::block::share_device(NullDevice::new(geometry)))
            }
            DeviceSpec::Memory { geometry } => {
                let geometry = check_geometry(geometry)?;
                (geometry, crate::block::share_device(MemoryDevice::new(geometry)))
            }
            DeviceSpec::File { geometry, path, sparse } => {
                let geometry = check_geometry(geometry)?;
                let device = FileDevice::open(geometry, &path, sparse)
                    .map_err(|source| RegistryError::Backing { id: id.to_string(), source })?;
                (geometry, crate::block::share_device(device))
            }
            DeviceSpec::Raid { level, strip_size_blocks, bases, poison, verify_reads } => {
                let mut shared = Vec::with_capacity(bases.len());
                let mut base_geometry = None;
                for base in &bases {
                    let entry = self.entries.get(base).ok_or_else(|| {
                        RegistryError::UnknownBase { id: id.to_string(), base: base.clone() }
                    })?;
                    base_geometry.get_or_insert(entry.handle.geometry);
                    shared.push(entry.device.clone());
                }
                let base_geometry = base_geometry.ok_or(RegistryError::Layout {
                    id: id.to_string(),
                    source: LayoutError::TooFewDevices { level, min: 2, got: 0 },
                })?;
                let layout = RaidLayout::new(level, bases.len(), strip_size_blocks, base_geometry)
                    .map_err(|source| RegistryError::Layout { id: id.to_string(), source })?;
                let device = RaidDevice::new(layout, shared, poison, verify_reads)
                    .map_err(|source| RegistryError::Raid { id: id.to_string(), source })?;
                (layout.exposed_geometry(), crate::block::share_device(device))
            }
            DeviceSpec::Compress { base, max_job_bytes } => {
                let entry = self.entries.get(&base).ok_or_else(|| {
                    RegistryError::UnknownBase { id: id.to_string(), base: base.clone() }
                })?;
                let device = CompressDevice::new(
                    entry.device.clone(),
                    CompressLimits::with_max_job_bytes(max_job_bytes),
                );
                (entry.handle.geometry, crate::block::share_device(device))
            }
        };
        let handle = DeviceHandle { id: id.to_string(), kind, geometry };
        self.order.push(id.to_string());
        self.entries.insert(id.to_string(), Entry { handle: handle.clone(), device });
        Ok(handle)
    }

    pub fn handle(&self, id: &str) -> Option<&DeviceHandle> {
        self.entries.get(id).map(|e| &e.handle)
    }

    pub fn device(&self, id: &str) -> Option<SharedDevice> {
        self.entries.get(id).map(|e| e.device.clone())
    }

    /// Device ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Validates and executes one request synchronously, bypassing the
    /// reactor. Completion timing covers the device call.
    pub fn execute(&self, id: &str, req: &IoRequest) -> Result<IoCompletion, ExecuteError> {
        let entry =
            self.entries.get(id).ok_or_else(|| ExecuteError::UnknownDevice(id.to_string()))?;
        let start = Instant::now();
        if let Some(status) = validate_request(&entry.handle.geometry, req)? {
            return Ok(IoCompletion::new(req.id, status));
        }
        let out = entry.device.lock().execute(req);
        Ok(IoCompletion {
            request_id: req.id,
            status: out.status,
            payload: out.payload,
            submit_to_complete_ns: start.elapsed().as_nanos() as u64,
        })
    }
}
