//! Client for the framed block protocol.
//!
//! Supports synchronous request/response and pipelined operation: submit
//! as many requests as the window allows, then collect completions in
//! whatever order the target produces them, correlated by request id.

use std::collections::HashMap;
use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::block::{DeviceGeometry, IoStatus};
use crate::wire::{decode_geometry, Frame, Opcode, WireError};

/// Request id the client reserves for its own control traffic.
pub const CONTROL_REQUEST_ID: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(WireError),
    #[error("timed out waiting for a response")]
    Timeout,
    #[error("connection lost with {0} requests outstanding")]
    ConnectionLost(usize),
    #[error("response for unknown request id {0}")]
    UnknownResponseId(u64),
    #[error("request id {0} is already in flight")]
    DuplicateId(u64),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl From<WireError> for ClientError {
    fn from(err: WireError) -> Self {
        match err {
            WireError::Io(io_err)
                if matches!(
                    io_err.kind(),
                    io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock
                ) =>
            {
                ClientError::Timeout
            }
            WireError::Io(io_err) => ClientError::Io(io_err),
            other => ClientError::Wire(other),
        }
    }
}

/// A completed wire operation, with client-side end-to-end latency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireCompletion {
    pub request_id: u64,
    pub opcode: Opcode,
    pub status: IoStatus,
    pub payload: Vec<u8>,
    pub latency: Duration,
}

struct Outstanding {
    opcode: Opcode,
    submitted_at: Instant,
}

pub struct BlockClient {
    stream: TcpStream,
    outstanding: HashMap<u64, Outstanding>,
}

impl BlockClient {
    /// Connects with the given timeout, which also bounds each wait for a
    /// response.
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> io::Result<BlockClient> {
        let mut last_err = io::Error::new(io::ErrorKind::AddrNotAvailable, "no address resolved");
        for candidate in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&candidate, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(Some(timeout))?;
                    return Ok(BlockClient { stream, outstanding: HashMap::new() });
                }
                Err(err) => last_err = err,
            }
        }
        Err(last_err)
    }

    pub fn in_flight(&self) -> usize {
        self.outstanding.len()
    }

    /// Queries target geometry; must be called with no requests in flight.
    pub fn geometry(&mut self) -> Result<DeviceGeometry, ClientError> {
        let completion = self.roundtrip(Frame::info_request(CONTROL_REQUEST_ID))?;
        if !completion.status.is_ok() {
            return Err(ClientError::Protocol(format!("INFO failed: {}", completion.status)));
        }
        decode_geometry(&completion.payload).map_err(ClientError::Wire)
    }

    pub fn submit_read(&mut self, id: u64, offset: u64, length: u32) -> Result<(), ClientError> {
        self.submit(Frame::read_request(id, offset, length))
    }

    pub fn submit_write(&mut self, id: u64, offset: u64, payload: Vec<u8>) -> Result<(), ClientError> {
        self.submit(Frame::write_request(id, offset, payload))
    }

    pub fn submit_flush(&mut self, id: u64) -> Result<(), ClientError> {
        self.submit(Frame::flush_request(id))
    }

    fn submit(&mut self, frame: Frame) -> Result<(), ClientError> {
        if self.outstanding.contains_key(&frame.request_id) {
            return Err(ClientError::DuplicateId(frame.request_id));
        }
        frame.write_to(&mut self.stream).map_err(ClientError::from)?;
        self.outstanding.insert(
            frame.request_id,
            Outstanding { opcode: frame.opcode, submitted_at: Instant::now() },
        );
        Ok(())
    }

    /// Blocks for the next response. Errors do not consume outstanding
    /// requests; after `ConnectionLost` use [`fail_outstanding`] to turn
    /// the remainder into IO_ERROR completions.
    ///
    /// [`fail_outstanding`]: BlockClient::fail_outstanding
    pub fn poll_completion(&mut self) -> Result<WireCompletion, ClientError> {
        let frame = match Frame::read_from(&mut self.stream) {
            Ok(frame) => frame,
            Err(err) => {
                return Err(match ClientError::from(err) {
                    ClientError::Io(_) => ClientError::ConnectionLost(self.outstanding.len()),
                    other => other,
                })
            }
        };
        if !frame.response {
            return Err(ClientError::Protocol("request frame from target".into()));
        }
        let entry = self
            .outstanding
            .remove(&frame.request_id)
            .ok_or(ClientError::UnknownResponseId(frame.request_id))?;
        Ok(WireCompletion {
            request_id: frame.request_id,
            opcode: entry.opcode,
            status: frame.status,
            payload: frame.payload,
            latency: entry.submitted_at.elapsed(),
        })
    }

    /// Fails every outstanding request locally, e.g. after the connection
    /// died mid-flight.
    pub fn fail_outstanding(&mut self) -> Vec<WireCompletion> {
        self.outstanding
            .drain()
            .map(|(id, entry)| WireCompletion {
                request_id: id,
                opcode: entry.opcode,
                status: IoStatus::IoError,
                payload: Vec::new(),
                latency: entry.submitted_at.elapsed(),
            })
            .collect()
    }

    fn roundtrip(&mut self, frame: Frame) -> Result<WireCompletion, ClientError> {
        if !self.outstanding.is_empty() {
            return Err(ClientError::Protocol(
                "synchronous call with requests in flight".into(),
            ));
        }
        self.submit(frame)?;
        self.poll_completion()
    }

    /// Synchronous read.
    pub fn read(&mut self, offset: u64, length: u32) -> Result<WireCompletion, ClientError> {
        self.roundtrip(Frame::read_request(CONTROL_REQUEST_ID, offset, length))
    }

    /// Synchronous write.
    pub fn write(&mut self, offset: u64, payload: Vec<u8>) -> Result<WireCompletion, ClientError> {
        self.roundtrip(Frame::write_request(CONTROL_REQUEST_ID, offset, payload))
    }

    /// Synchronous flush.
    pub fn flush(&mut self) -> Result<WireCompletion, ClientError> {
        self.roundtrip(Frame::flush_request(CONTROL_REQUEST_ID))
    }
}
