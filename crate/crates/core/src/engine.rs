//! Polled-mode I/O engine.
//!
//! A reactor busy-polls the submission queues of its channels, runs device
//! logic inline, and pushes completions back to the submitting side, which
//! consumes them by polling. Nothing in the data path waits on an
//! interrupt or a wakeup; an optional idle yield keeps shared machines
//! usable when every queue is empty.
//!
//! Each channel caps its in-flight requests at a fixed depth. Submitters
//! that hit the cap are back-pressured (blocked or bounced), never
//! dropped.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, Sender, TryRecvError};
use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::block::{
    validate_request, DeviceGeometry, IoCompletion, IoRequest, RequestError, SharedDevice,
};

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error("reactor is stopped")]
    Stopped,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("channel depth must be at least 1")]
    ZeroDepth,
    #[error("reactor is stopped")]
    Stopped,
}

/// Counting window that enforces the channel depth. Blocked acquirers
/// sleep on a condvar and are woken as completions are delivered.
struct Window {
    limit: usize,
    state: Mutex<WindowState>,
    available: Condvar,
}

#[derive(Default)]
struct WindowState {
    in_flight: usize,
    peak: usize,
}

impl Window {
    fn new(limit: usize) -> Self {
        Self { limit, state: Mutex::new(WindowState::default()), available: Condvar::new() }
    }

    fn try_acquire(&self) -> bool {
        let mut state = self.state.lock();
        if state.in_flight < self.limit {
            state.in_flight += 1;
            state.peak = state.peak.max(state.in_flight);
            true
        } else {
            false
        }
    }

    fn acquire(&self) {
        let mut state = self.state.lock();
        while state.in_flight >= self.limit {
            self.available.wait(&mut state);
        }
        state.in_flight += 1;
        state.peak = state.peak.max(state.in_flight);
    }

    fn release(&self) {
        let mut state = self.state.lock();
        state.in_flight -= 1;
        drop(state);
        self.available.notify_one();
    }

    fn in_flight(&self) -> usize {
        self.state.lock().in_flight
    }

    fn peak(&self) -> usize {
        self.state.lock().peak
    }
}

struct Envelope {
    req: IoRequest,
    accepted_at: Instant,
}

/// Submitting side of a channel. One owner drives submissions and
/// consumes completions; the queues themselves are multi-producer safe.
pub struct IoChannel {
    geometry: DeviceGeometry,
    window: Arc<Window>,
    tx: Sender<Envelope>,
    completions: Receiver<IoCompletion>,
    /// For immediate completions that never reach the reactor.
    loopback: Sender<IoCompletion>,
    in_flight_ids: Mutex<std::collections::HashSet<u64>>,
}

impl IoChannel {
    pub fn geometry(&self) -> DeviceGeometry {
        self.geometry
    }

    /// Submits, blocking while the channel is at depth. Never waits for
    /// the device itself.
    pub fn submit(&self, req: IoRequest) -> Result<(), SubmitError> {
        self.submit_inner(req, true).map(|accepted| debug_assert!(accepted))
    }

    /// Non-blocking submit; returns `Ok(false)` when the window is full.
    pub fn try_submit(&self, req: IoRequest) -> Result<bool, SubmitError> {
        self.submit_inner(req, false)
    }

    fn submit_inner(&self, req: IoRequest, block: bool) -> Result<bool, SubmitError> {
        let shortcut = validate_request(&self.geometry, &req).map_err(SubmitError::Request)?;
        {
            let ids = self.in_flight_ids.lock();
            if ids.contains(&req.id) {
                return Err(SubmitError::Request(RequestError::DuplicateId(req.id)));
            }
        }
        if let Some(status) = shortcut {
            // Completes immediately; does not consume a window slot.
            self.in_flight_ids.lock().insert(req.id);
            self.loopback
                .send(IoCompletion::new(req.id, status))
                .map_err(|_| SubmitError::Stopped)?;
            return Ok(true);
        }
        if block {
            self.window.acquire();
        } else if !self.window.try_acquire() {
            return Ok(false);
        }
        self.in_flight_ids.lock().insert(req.id);
        let id = req.id;
        if self.tx.send(Envelope { req, accepted_at: Instant::now() }).is_err() {
            self.in_flight_ids.lock().remove(&id);
            self.window.release();
            return Err(SubmitError::Stopped);
        }
        Ok(true)
    }

    pub fn try_completion(&self) -> Option<IoCompletion> {
        let completion = self.completions.try_recv().ok()?;
        self.in_flight_ids.lock().remove(&completion.request_id);
        Some(completion)
    }

    pub fn wait_completion(&self, timeout: Duration) -> Option<IoCompletion> {
        let completion = self.completions.recv_timeout(timeout).ok()?;
        self.in_flight_ids.lock().remove(&completion.request_id);
        Some(completion)
    }

    /// Requests accepted but not yet completed (immediate completions
    /// excluded).
    pub fn in_flight(&self) -> usize {
        self.window.in_flight()
    }

    /// High-water mark of concurrent in-flight requests.
    pub fn peak_in_flight(&self) -> usize {
        self.window.peak()
    }
}

struct ChannelCore {
    device: SharedDevice,
    rx: Receiver<Envelope>,
    done: Sender<IoCompletion>,
    window: Arc<Window>,
}

#[derive(Debug, Clone, Copy)]
pub struct ReactorConfig {
    /// Max requests drained per channel per loop iteration; keeps one busy
    /// channel from starving the rest.
    pub poll_budget: usize,
    /// Yield the core when an iteration found no work anywhere.
    pub idle_yield: bool,
}

impl Default for ReactorConfig {
    fn default() -> Self {
        Self { poll_budget: 32, idle_yield: true }
    }
}

/// Handle for opening channels on a running reactor and stopping it.
#[derive(Clone)]
pub struct ReactorHandle {
    ctrl: Sender<ChannelCore>,
    stop: Arc<AtomicBool>,
}

impl ReactorHandle {
    pub fn open_channel(
        &self,
        device: SharedDevice,
        depth: usize,
    ) -> Result<IoChannel, EngineError> {
        if depth == 0 {
            return Err(EngineError::ZeroDepth);
        }
        let geometry = device.lock().geometry();
        let window = Arc::new(Window::new(depth));
        let (tx, rx) = channel::unbounded();
        let (done_tx, done_rx) = channel::unbounded();
        let core = ChannelCore { device, rx, done: done_tx.clone(), window: window.clone() };
        self.ctrl.send(core).map_err(|_| EngineError::Stopped)?;
        Ok(IoChannel {
            geometry,
            window,
            tx,
            completions: done_rx,
            loopback: done_tx,
            in_flight_ids: Mutex::new(std::collections::HashSet::new()),
        })
    }

    /// Asks the reactor to drain in-flight work and exit.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Single-threaded polling loop driving a set of channels.
pub struct Reactor {
    config: ReactorConfig,
    channels: Vec<ChannelCore>,
    ctrl: Receiver<ChannelCore>,
    stop: Arc<AtomicBool>,
}

impl Reactor {
    pub fn new(config: ReactorConfig) -> (Self, ReactorHandle) {
        let (ctrl_tx, ctrl_rx) = channel::unbounded();
        let stop = Arc::new(AtomicBool::new(false));
        let reactor = Reactor { config, channels: Vec::new(), ctrl: ctrl_rx, stop: stop.clone() };
        (reactor, ReactorHandle { ctrl: ctrl_tx, stop })
    }

    pub fn spawn(self) -> std::thread::JoinHandle<()> {
        std::thread::Builder::new()
            .name("softblock-reactor".into())
            .spawn(move || self.run())
            .expect("spawn reactor thread")
    }

    /// Runs until stopped, then drains whatever is still queued and exits.
    pub fn run(mut self) {
        loop {
            while let Ok(core) = self.ctrl.try_recv() {
                self.channels.push(core);
            }
            let stopping = self.stop.load(Ordering::Relaxed);
            let mut did_work = false;

            let mut index = 0;
            while index < self.channels.len() {
                let mut drained = 0;
                let mut disconnected = false;
                loop {
                    if !stopping && drained >= self.config.poll_budget {
                        break;
                    }
                    match self.channels[index].rx.try_recv() {
                        Ok(envelope) => {
                            drained += 1;
                            did_work = true;
                            Self::service(&self.channels[index], envelope);
                        }
                        Err(TryRecvError::Empty) => break,
                        Err(TryRecvError::Disconnected) => {
                            disconnected = true;
                            break;
                        }
                    }
                }
                if disconnected {
                    self.channels.swap_remove(index);
                } else {
                    index += 1;
                }
            }

            if stopping && !did_work {
                return;
            }
            if !did_work {
                if self.config.idle_yield {
                    std::thread::yield_now();
                } else {
                    std::hint::spin_loop();
                }
            }
        }
    }

    fn service(core: &ChannelCore, envelope: Envelope) {
        let out = core.device.lock().execute(&envelope.req);
        let completion = IoCompletion {
            request_id: envelope.req.id,
            status: out.status,
            payload: out.payload,
            submit_to_complete_ns: envelope.accepted_at.elapsed().as_nanos() as u64,
        };
        // The submitter may already be gone; completions to nowhere are fine.
        let _ = core.done.send(completion);
        core.window.release();
    }
}
