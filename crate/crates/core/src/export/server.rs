//! Network block target.
//!
//! Two modes:
//! - processed: frames are translated into requests on a local device and
//!   completions are translated back, status for status.
//! - passthrough: frames are relayed verbatim to an upstream target after
//!   header validation; payloads are never interpreted. If the upstream is
//!   unreachable or dies, outstanding and subsequent requests complete
//!   with IO_ERROR.
//!
//! Each connection gets its own channel onto the exported device, so
//! per-connection pipelining is bounded by the channel depth.

use std::collections::HashMap;
use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;

use crate::block::{DeviceGeometry, IoOp, IoRequest, IoStatus, SharedDevice};
use crate::engine::{EngineError, IoChannel, ReactorHandle};
use crate::wire::{Frame, Opcode, WireError};

/// Opens one device channel per incoming connection.
pub trait ChannelProvider: Send + Sync + 'static {
    fn open(&self) -> Result<IoChannel, EngineError>;
    fn geometry(&self) -> DeviceGeometry;
}

/// Standard provider: channels onto a shared device via a reactor handle.
pub struct ReactorChannelProvider {
    pub reactor: ReactorHandle,
    pub device: SharedDevice,
    pub depth: usize,
}

impl ChannelProvider for ReactorChannelProvider {
    fn open(&self) -> Result<IoChannel, EngineError> {
        self.reactor.open_channel(self.device.clone(), self.depth)
    }

    fn geometry(&self) -> DeviceGeometry {
        self.device.lock().geometry()
    }
}

pub enum ServerMode {
    Processed(Arc<dyn ChannelProvider>),
    Passthrough { upstream: String },
}

/// A running listener; dropping or shutting it down closes every
/// connection it accepted.
pub struct ExportServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
    state: Arc<ServerState>,
}

struct ServerState {
    streams: Mutex<Vec<TcpStream>>,
    handlers: Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl ServerState {
    fn track_stream(&self, stream: &TcpStream) {
        if let Ok(clone) = stream.try_clone() {
            self.streams.lock().push(clone);
        }
    }
}

impl ExportServer {
    pub fn spawn(listener: TcpListener, mode: ServerMode) -> std::io::Result<ExportServer> {
        let local_addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let state = Arc::new(ServerState { streams: Mutex::new(Vec::new()), handlers: Mutex::new(Vec::new()) });
        let mode = Arc::new(mode);

        let accept_stop = stop.clone();
        let accept_state = state.clone();
        let accept_thread = std::thread::Builder::new()
            .name(format!("softblock-accept-{local_addr}"))
            .spawn(move || {
                while !accept_stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, peer)) => {
                            log::debug!("target {local_addr}: connection from {peer}");
                            let _ = stream.set_nodelay(true);
                            let _ = stream.set_nonblocking(false);
                            accept_state.track_stream(&stream);
                            let mode = mode.clone();
                            let conn_state = accept_state.clone();
                            let handler = std::thread::spawn(move || match &*mode {
                                ServerMode::Processed(provider) => {
                                    handle_processed(stream, provider.as_ref());
                                }
                                ServerMode::Passthrough { upstream } => {
                                    handle_passthrough(stream, upstream, &conn_state);
                                }
                            });
                            accept_state.handlers.lock().push(handler);
                        }
                        Err(err) if err.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(2));
                        }
                        Err(err) => {
                            log::warn!("target {local_addr}: accept failed: {err}");
                            std::thread::sleep(Duration::from_millis(20));
                        }
                    }
                }
            })?;

        Ok(ExportServer { local_addr, stop, accept_thread: Some(accept_thread), state })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting, severs open connections, and joins every handler.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        for stream in self.state.streams.lock().drain(..) {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
        let handlers: Vec<_> = self.state.handlers.lock().drain(..).collect();
        for handler in handlers {
            let _ = handler.join();
        }
    }
}

struct Pending {
    opcode: Opcode,
    offset: u64,
}

/// Translates frames to device requests and completions to frames.
fn handle_processed(stream: TcpStream, provider: &dyn ChannelProvider) {
    let channel = match provider.open() {
        Ok(channel) => Arc::new(channel),
        Err(err) => {
            log::warn!("processed target: cannot open channel: {err}");
            return;
        }
    };
    let geometry = provider.geometry();
    let mut reader = match stream.try_clone() {
        Ok(clone) => clone,
        Err(_) => return,
    };
    let writer = Arc::new(Mutex::new(stream));
    let pending: Arc<Mutex<HashMap<u64, Pending>>> = Arc::new(Mutex::new(HashMap::new()));
    let reader_done = Arc::new(AtomicBool::new(false));

    let completion_writer = {
        let channel = channel.clone();
        let writer = writer.clone();
        let pending = pending.clone();
        let reader_done = reader_done.clone();
        std::thread::spawn(move || loop {
            match channel.wait_completion(Duration::from_millis(10)) {
                Some(completion) => {
                    let Some(entry) = pending.lock().remove(&completion.request_id) else {
                        continue;
                    };
                    let response = Frame::response_to(
                        entry.opcode,
                        completion.request_id,
                        entry.offset,
                        completion.status,
                        completion.payload,
                    );
                    if response.write_to(&mut *writer.lock()).is_err() {
                        return;
                    }
                }
                None => {
                    if reader_done.load(Ordering::Relaxed) && pending.lock().is_empty() {
                        return;
                    }
                }
            }
        })
    };

    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(frame) => frame,
            Err(WireError::Io(_)) => break,
            Err(err) => {
                // Malformed frame: best-effort error response, then reset.
                let response =
                    Frame::response_to(Opcode::Flush, 0, 0, err.as_status(), Vec::new());
                let _ = response.write_to(&mut *writer.lock());
                break;
            }
        };
        if frame.response {
            break; // A target never accepts responses.
        }
        let (opcode, request_id, offset, length) =
            (frame.opcode, frame.request_id, frame.offset, frame.length);
        if opcode == Opcode::Info {
            let response = Frame::info_response(request_id, geometry);
            if response.write_to(&mut *writer.lock()).is_err() {
                break;
            }
            continue;
        }

        let reject = |status: IoStatus| {
            let response = Frame::response_to(opcode, request_id, offset, status, Vec::new());
            response.write_to(&mut *writer.lock()).is_ok()
        };

        let bs = geometry.block_size as u64;
        let aligned = offset % bs == 0 && length as u64 % bs == 0;
        let req = match opcode {
            Opcode::Flush => IoRequest::flush(request_id),
            Opcode::Read | Opcode::Write if !aligned || length == 0 => {
                if !reject(IoStatus::Unsupported) {
                    break;
                }
                continue;
            }
            Opcode::Read => IoRequest::read(request_id, offset / bs, (length as u64 / bs) as u32),
            Opcode::Write => IoRequest {
                id: request_id,
                op: IoOp::Write,
                lba: offset / bs,
                num_blocks: (length as u64 / bs) as u32,
                payload: frame.payload,
            },
            Opcode::Info => unreachable!(),
        };

        {
            let mut map = pending.lock();
            if map.contains_key(&request_id) {
                drop(map);
                let _ = reject(IoStatus::IoError);
                break; // Duplicate in-flight id: protocol violation.
            }
            map.insert(request_id, Pending { opcode, offset });
        }
        if channel.submit(req).is_err() {
            pending.lock().remove(&request_id);
            let _ = reject(IoStatus::IoError);
            break;
        }
    }

    reader_done.store(true, Ordering::Relaxed);
    let _ = completion_writer.join();
}

/// Relays raw frames to an upstream target and responses back. Tracks
/// request ids (header-only inspection) so upstream failure can be
/// reported per request.
fn handle_passthrough(client: TcpStream, upstream_addr: &str, state: &ServerState) {
    let mut client_reader = match client.try_clone() {
        Ok(clone) => clone,
        Err(_) => return,
    };

    let upstream = match TcpStream::connect(upstream_addr) {
        Ok(upstream) => {
            let _ = upstream.set_nodelay(true);
            state.track_stream(&upstream);
            upstream
        }
        Err(err) => {
            log::warn!("passthrough: upstream {upstream_addr} unreachable: {err}");
            serve_upstream_down(client, &mut client_reader);
            return;
        }
    };

    let pending: Arc<Mutex<HashMap<u64, Pending>>> = Arc::new(Mutex::new(HashMap::new()));
    let mut upstream_reader = match upstream.try_clone() {
        Ok(clone) => clone,
        Err(_) => return,
    };
    let client_writer = Arc::new(Mutex::new(client));

    // Upstream-to-client pump.
    let response_pump = {
        let pending = pending.clone();
        let client_writer = client_writer.clone();
        std::thread::spawn(move || {
            loop {
                match Frame::read_from(&mut upstream_reader) {
                    Ok(frame) => {
                        pending.lock().remove(&frame.request_id);
                        let bytes = frame.encode().expect("frame decoded, so it re-encodes");
                        if client_writer.lock().write_all(&bytes).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            // Upstream died: fail whatever is still in flight, then stop.
            let mut map = pending.lock();
            let mut writer = client_writer.lock();
            for (id, entry) in map.drain() {
                let response =
                    Frame::response_to(entry.opcode, id, entry.offset, IoStatus::IoError, Vec::new());
                if response.write_to(&mut *writer).is_err() {
                    break;
                }
            }
            let _ = writer.shutdown(std::net::Shutdown::Both);
        })
    };

    // Client-to-upstream pump.
    let mut upstream_writer = upstream;
    loop {
        match Frame::read_from(&mut client_reader) {
            Ok(frame) => {
                if !frame.response {
                    pending
                        .lock()
                        .insert(frame.request_id, Pending { opcode: frame.opcode, offset: frame.offset });
                }
                let bytes = frame.encode().expect("frame decoded, so it re-encodes");
                if upstream_writer.write_all(&bytes).is_err() {
                    break;
                }
            }
            Err(WireError::Io(_)) => break,
            Err(err) => {
                let response = Frame::response_to(Opcode::Flush, 0, 0, err.as_status(), Vec::new());
                let _ = response.write_to(&mut *client_writer.lock());
                break;
            }
        }
    }
    let _ = upstream_writer.shutdown(std::net::Shutdown::Both);
    let _ = response_pump.join();
}

/// With no upstream, every request is answered with IO_ERROR until the
/// client goes away.
fn serve_upstream_down(client: TcpStream, reader: &mut TcpStream) {
    let mut writer = client;
    loop {
        match Frame::read_from(reader) {
            Ok(frame) if !frame.response => {
                let response = Frame::response_to(
                    frame.opcode,
                    frame.request_id,
                    frame.offset,
                    IoStatus::IoError,
                    Vec::new(),
                );
                if response.write_to(&mut writer).is_err() {
                    return;
                }
            }
            Ok(_) => {}
            Err(_) => return,
        }
    }
}
