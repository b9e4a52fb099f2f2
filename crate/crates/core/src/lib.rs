//! User-space software-defined block storage stack.
//!
//! Building blocks:
//! - [`block`]: device geometry, the request/completion model, and the
//!   `BlockDevice` trait.
//! - [`backstore`]: terminal devices (null, memory, file).
//! - [`raid`]: RAID0/1/5 layering with parity-verified reads and a
//!   deterministic write-path fault injector.
//! - [`compress`]: transparent deflate compression over any base device.
//! - [`engine`]: polled-mode reactor with depth-limited channels.
//! - [`registry`]: declarative device registration and layering.
//! - [`wire`] and [`export`]: framed binary block protocol, network
//!   targets (processed and passthrough modes), and the client.
//! - [`bench`]: workload generator with latency percentiles.
//! - [`config`] and [`stack`]: TOML stack descriptions and assembly.

pub mod backstore;
pub mod bench;
pub mod block;
pub mod compress;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod export;
pub mod raid;
pub mod registry;
pub mod stack;
pub mod wire;

pub use block::{
    BlockDevice, DeviceGeometry, DeviceHandle, DeviceKind, IoCompletion, IoOp, IoRequest,
    IoStatus, SharedDevice,
};
pub use config::{parse_config, serialize_config, StackSpec};
pub use registry::{DeviceSpec, Registry};
pub use stack::{build_stack, StackCore, StackHandle};
