//! Stack assembly: turns a validated [`StackSpec`] into a running system
//! of registered devices, reactors, and network exports.
//!
//! Startup is transactional: if anything fails, everything brought up so
//! far is torn down before the error is returned, leaving no listening
//! sockets or running threads behind.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;

use thiserror::Error;

use crate::block::{DeviceGeometry, DeviceHandle, IoCompletion, IoRequest, SharedDevice};
use crate::config::{ConfigError, ExportMode, StackSpec};
use crate::engine::{EngineError, IoChannel, Reactor, ReactorConfig, ReactorHandle};
use crate::export::{ExportServer, ReactorChannelProvider, ServerMode};
use crate::registry::{ExecuteError, Registry, RegistryError};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("export {listen:?}: bind failed: {source}")]
    Bind {
        listen: String,
        #[source]
        source: std::io::Error,
    },
    #[error("export {listen:?}: {source}")]
    Serve {
        listen: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum StackError {
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Registry plus the reactors its devices are pinned to.
pub struct StackCore {
    registry: Registry,
    reactors: Vec<ReactorHandle>,
    assignment: HashMap<String, usize>,
    default_depth: usize,
}

impl StackCore {
    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn handle(&self, id: &str) -> Option<&DeviceHandle> {
        self.registry.handle(id)
    }

    pub fn geometry(&self, id: &str) -> Option<DeviceGeometry> {
        self.registry.handle(id).map(|h| h.geometry)
    }

    pub fn device(&self, id: &str) -> Option<SharedDevice> {
        self.registry.device(id)
    }

    pub fn default_depth(&self) -> usize {
        self.default_depth
    }

    /// Opens a polled channel onto a registered device, on the reactor the
    /// device is pinned to.
    pub fn open_channel(&self, id: &str, depth: usize) -> Result<IoChannel, StackError> {
        let device = self
            .registry
            .device(id)
            .ok_or_else(|| StackError::UnknownDevice(id.to_string()))?;
        let reactor = &self.reactors[self.assignment[id]];
        Ok(reactor.open_channel(device, depth)?)
    }

    /// Synchronous execution, bypassing the reactors.
    pub fn execute(&self, id: &str, req: &IoRequest) -> Result<IoCompletion, ExecuteError> {
        self.registry.execute(id, req)
    }

    fn provider_for(&self, id: &str) -> Result<ReactorChannelProvider, StackError> {
        let device = self
            .registry
            .device(id)
            .ok_or_else(|| StackError::UnknownDevice(id.to_string()))?;
        Ok(ReactorChannelProvider {
            reactor: self.reactors[self.assignment[id]].clone(),
            device,
            depth: self.default_depth,
        })
    }
}

/// A running stack. Dropping it without `shutdown` leaks threads, so call
/// `shutdown` when done.
pub struct StackHandle {
    core: Arc<StackCore>,
    reactor_threads: Vec<std::thread::JoinHandle<()>>,
    exports: Vec<ExportServer>,
}

impl StackHandle {
    pub fn core(&self) -> Arc<StackCore> {
        self.core.clone()
    }

    /// Bound addresses of the exports, in declaration order.
    pub fn export_addrs(&self) -> Vec<SocketAddr> {
        self.exports.iter().map(|e| e.local_addr()).collect()
    }

    /// Stops exports first (severing client connections), then drains and
    /// joins the reactors.
    pub fn shutdown(mut self) {
        for export in self.exports.drain(..) {
            export.shutdown();
        }
        for reactor in &self.core.reactors {
            reactor.stop();
        }
        for thread in self.reactor_threads.drain(..) {
            let _ = thread.join();
        }
    }
}

/// Builds and starts the whole stack: devices bottom-up, reactors, then
/// exports.
pub fn build_stack(spec: &StackSpec) -> Result<StackHandle, StartupError> {
    let resolved = spec.resolve()?;

    let mut reactors = Vec::with_capacity(spec.reactors.count);
    let mut reactor_threads = Vec::with_capacity(spec.reactors.count);
    for _ in 0..spec.reactors.count {
        let (reactor, handle) = Reactor::new(ReactorConfig {
            poll_budget: spec.reactors.poll_budget.max(1),
            idle_yield: spec.reactors.idle_yield,
        });
        reactor_threads.push(reactor.spawn());
        reactors.push(handle);
    }
    let teardown = |reactors: &[ReactorHandle], threads: Vec<std::thread::JoinHandle<()>>| {
        for r in reactors {
            r.stop();
        }
        for t in threads {
            let _ = t.join();
        }
    };

    let mut registry = Registry::new();
    let mut assignment = HashMap::new();
    for (index, device) in resolved.iter().enumerate() {
        if let Err(err) = registry.register(&device.id, device.spec.clone()) {
            teardown(&reactors, reactor_threads);
            return Err(err.into());
        }
        assignment.insert(device.id.clone(), index % reactors.len());
    }

    let core = Arc::new(StackCore {
        registry,
        reactors,
        assignment,
        default_depth: spec.reactors.default_depth,
    });

    // Bind every listener before serving any of them, so a late bind
    // failure cannot leave a half-exported stack running.
    let mut listeners = Vec::with_capacity(spec.exports.len());
    for export in &spec.exports {
        match TcpListener::bind(&export.listen) {
            Ok(listener) => listeners.push(listener),
            Err(source) => {
                teardown(&core.reactors, reactor_threads);
                return Err(StartupError::Bind { listen: export.listen.clone(), source });
            }
        }
    }

    let mut exports = Vec::with_capacity(listeners.len());
    for (decl, listener) in spec.exports.iter().zip(listeners) {
        let mode = match decl.mode {
            ExportMode::Processed => {
                let device = decl.device.as_ref().expect("validated by resolve");
                let provider = core.provider_for(device).expect("device registered");
                ServerMode::Processed(Arc::new(provider))
            }
            ExportMode::Passthrough => ServerMode::Passthrough {
                upstream: decl.upstream.clone().expect("validated by resolve"),
            },
        };
        match ExportServer::spawn(listener, mode) {
            Ok(server) => exports.push(server),
            Err(source) => {
                for started in exports.drain(..) {
                    started.shutdown();
                }
                teardown(&core.reactors, reactor_threads);
                return Err(StartupError::Serve { listen: decl.listen.clone(), source });
            }
        }
    }

    log::info!(
        "stack up: {} devices, {} reactors, {} exports",
        core.registry.len(),
        core.reactors.len(),
        exports.len()
    );
    Ok(StackHandle { core, reactor_threads, exports })
}
