//! Network block target and client over the framed binary protocol.

mod client;
mod server;

pub use client::{BlockClient, ClientError, WireCompletion, CONTROL_REQUEST_ID};
pub use server::{ChannelProvider, ExportServer, ReactorChannelProvider, ServerMode};
