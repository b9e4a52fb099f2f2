//! Workload generator and runner.
//!
//! Each worker thread owns one channel or connection and keeps `io_depth`
//! bench requests outstanding until the runtime elapses, then drains.
//! Bench requests larger than the 128 KiB per-I/O ceiling are split into
//! sequential device-sized I/Os; latency is measured per bench request,
//! submission to final completion, which is what an end-to-end benchmark
//! observes. Offset sequences are deterministic per seed.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::stats::{compute_stats, LatencyStats};
use crate::block::{DeviceGeometry, IoRequest, IoStatus, MAX_IO_BYTES};
use crate::engine::IoChannel;
use crate::export::{BlockClient, ClientError};
use crate::stack::StackCore;

pub const MAX_BENCH_BLOCK: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    SeqRead,
    SeqWrite,
    RandRead,
    RandWrite,
}

impl Pattern {
    pub fn is_write(self) -> bool {
        matches!(self, Pattern::SeqWrite | Pattern::RandWrite)
    }

    fn is_sequential(self) -> bool {
        matches!(self, Pattern::SeqRead | Pattern::SeqWrite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFill {
    Zero,
    Random,
    TextCorpus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchTarget {
    /// A device in a locally running stack.
    Device(String),
    /// A network target, `host:port`.
    Endpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub target: BenchTarget,
    pub pattern: Pattern,
    /// Bench request size in bytes; split into device I/Os internally.
    pub block_size: u32,
    pub io_depth: usize,
    pub threads: usize,
    pub runtime: Duration,
    pub seed: u64,
    pub fill: DataFill,
    /// Optional text file used for `TextCorpus` fill instead of the
    /// built-in generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("workload: {0}")]
    InvalidSpec(String),
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("local targets need a running stack")]
    NoStack,
    #[error("i/o driver failure: {0}")]
    Driver(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreadReport {
    pub thread: usize,
    pub submitted_ops: u64,
    pub ok_ops: u64,
    pub failed_ops: u64,
    pub ok_bytes: u64,
    pub latency: LatencyStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub total_bytes: u64,
    pub elapsed_secs: f64,
    pub throughput_bps: f64,
    pub latency: LatencyStats,
    /// Per-status completion counts over device-sized operations.
    pub status_counts: BTreeMap<String, u64>,
    pub submitted_ops: u64,
    pub ok_ops: u64,
    pub failed_ops: u64,
    pub per_thread: Vec<ThreadReport>,
}

impl BenchReport {
    /// Every submitted operation is accounted for.
    pub fn conserved(&self) -> bool {
        self.submitted_ops == self.ok_ops + self.failed_ops
    }
}

/// One device-op completion as seen by a worker.
struct OpCompletion {
    id: u64,
    status: IoStatus,
    bytes: u64,
}

/// Uniform face over local channels and network connections.
trait WorkerIo {
    fn submit_read(&mut self, id: u64, offset: u64, len: u32) -> Result<(), BenchError>;
    fn submit_write(&mut self, id: u64, offset: u64, payload: Vec<u8>) -> Result<(), BenchError>;
    /// Waits briefly; `None` means nothing completed yet.
    fn next_completion(&mut self) -> Result<Option<OpCompletion>, BenchError>;
    /// Fails everything still outstanding (used on timeout/teardown).
    fn fail_outstanding(&mut self) -> Vec<OpCompletion>;
}

struct LocalIo {
    channel: IoChannel,
    block_size: u32,
}

impl WorkerIo for LocalIo {
    fn submit_read(&mut self, id: u64, offset: u64, len: u32) -> Result<(), BenchError> {
        let req = IoRequest::read(id, offset / self.block_size as u64, len / self.block_size);
        self.channel.submit(req).map_err(|e| BenchError::Driver(e.to_string()))
    }

    fn submit_write(&mut self, id: u64, offset: u64, payload: Vec<u8>) -> Result<(), BenchError> {
        let num_blocks = (payload.len() as u32) / self.block_size;
        let req = IoRequest::write(id, offset / self.block_size as u64, num_blocks, payload);
        self.channel.submit(req).map_err(|e| BenchError::Driver(e.to_string()))
    }

    fn next_completion(&mut self) -> Result<Option<OpCompletion>, BenchError> {
        Ok(self.channel.wait_completion(Duration::from_millis(1)).map(|c| OpCompletion {
            id: c.request_id,
            status: c.status,
            bytes: if c.status.is_ok() { c.payload.len() as u64 } else { 0 },
        }))
    }

    fn fail_outstanding(&mut self) -> Vec<OpCompletion> {
        let mut failed = Vec::new();
        while self.channel.in_flight() > 0 {
            match self.channel.wait_completion(Duration::from_millis(100)) {
                Some(c) => failed.push(OpCompletion {
                    id: c.request_id,
                    status: c.status,
                    bytes: if c.status.is_ok() { c.payload.len() as u64 } else { 0 },
                }),
                None => break,
            }
        }
        failed
    }
}

struct RemoteIo {
    client: BlockClient,
    write_bytes: HashMap<u64, u64>,
    /// Failures synthesized after a timeout or lost connection, handed out
    /// one per `next_completion` call.
    stashed_failures: std::collections::VecDeque<OpCompletion>,
}

impl RemoteIo {
    fn new(client: BlockClient) -> Self {
        Self { client, write_bytes: HashMap::new(), stashed_failures: Default::default() }
    }

    fn completion(&mut self, c: crate::export::WireCompletion) -> OpCompletion {
        let written = self.write_bytes.remove(&c.request_id).unwrap_or(0);
        OpCompletion {
            id: c.request_id,
            status: c.status,
            bytes: if c.status.is_ok() { c.payload.len() as u64 + written } else { 0 },
        }
    }

    fn stash_client_failures(&mut self) {
        let failed: Vec<_> = self.client.fail_outstanding();
        for c in failed {
            self.stashed_failures.push_back(OpCompletion {
                id: c.request_id,
                status: c.status,
                bytes: 0,
            });
        }
    }
}

impl WorkerIo for RemoteIo {
    fn submit_read(&mut self, id: u64, offset: u64, len: u32) -> Result<(), BenchError> {
        self.client.submit_read(id, offset, len).map_err(|e| BenchError::Driver(e.to_string()))
    }

    fn submit_write(&mut self, id: u64, offset: u64, payload: Vec<u8>) -> Result<(), BenchError> {
        self.write_bytes.insert(id, payload.len() as u64);
        self.client
            .submit_write(id, offset, payload)
            .map_err(|e| BenchError::Driver(e.to_string()))
    }

    fn next_completion(&mut self) -> Result<Option<OpCompletion>, BenchError> {
        if let Some(failed) = self.stashed_failures.pop_front() {
            return Ok(Some(failed));
        }
        if self.client.in_flight() == 0 {
            return Ok(None);
        }
        match self.client.poll_completion() {
            Ok(c) => Ok(Some(self.completion(c))),
            Err(ClientError::Timeout) | Err(ClientError::ConnectionLost(_)) => {
                // All in-flight requests fail together.
                self.stash_client_failures();
                Ok(self.stashed_failures.pop_front())
            }
            Err(err) => Err(BenchError::Driver(err.to_string())),
        }
    }

    fn fail_outstanding(&mut self) -> Vec<OpCompletion> {
        self.stash_client_failures();
        self.stashed_failures.drain(..).collect()
    }
}

/// Deterministic offset source.
struct OffsetGen {
    rng: ChaCha8Rng,
    sequential: bool,
    next: u64,
    region_start: u64,
    region_slots: u64,
    request_bytes: u64,
}

impl OffsetGen {
    fn new(spec: &WorkloadSpec, thread: usize, capacity_bytes: u64) -> Result<Self, BenchError> {
        let request_bytes = spec.block_size as u64;
        let total_slots = capacity_bytes / request_bytes;
        if total_slots == 0 {
            return Err(BenchError::InvalidSpec(format!(
                "device of {capacity_bytes} bytes is smaller than one {request_bytes} byte request"
            )));
        }
        let (region_start, region_slots) = if spec.pattern.is_sequential() {
            // Sequential threads work disjoint regions when possible.
            let per_thread = total_slots / spec.threads as u64;
            if per_thread == 0 {
                (0, total_slots)
            } else {
                (thread as u64 * per_thread * request_bytes, per_thread)
            }
        } else {
            (0, total_slots)
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(thread as u64)),
            sequential: spec.pattern.is_sequential(),
            next: 0,
            region_start,
            region_slots,
            request_bytes,
        })
    }

    fn next_offset(&mut self) -> u64 {
        if self.sequential {
            let offset = self.region_start + self.next * self.request_bytes;
            self.next = (self.next + 1) % self.region_slots;
            offset
        } else {
            self.rng.gen_range(0..self.region_slots) * self.request_bytes
        }
    }
}

/// Write payload source.
enum FillSource {
    Zero,
    Buffer(Arc<Vec<u8>>),
}

impl FillSource {
    fn op_payload(&self, offset: u64, len: u32) -> Vec<u8> {
        match self {
            FillSource::Zero => vec![0u8; len as usize],
            FillSource::Buffer(buf) => {
                let start = (offset as usize) % (buf.len() - len as usize + 1);
                buf[start..start + len as usize].to_vec()
            }
        }
    }
}

fn build_fill(spec: &WorkloadSpec) -> Result<FillSource, BenchError> {
    Ok(match spec.fill {
        DataFill::Zero => FillSource::Zero,
        DataFill::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_f111);
            let mut buf = vec![0u8; (spec.block_size as usize * 4).max(1 << 20)];
            rng.fill(buf.as_mut_slice());
            FillSource::Buffer(Arc::new(buf))
        }
        DataFill::TextCorpus => {
            let text = match &spec.corpus_path {
                Some(path) => std::fs::read(path).map_err(|e| {
                    BenchError::InvalidSpec(format!("corpus {}: {e}", path.display()))
                })?,
                None => crate::corpus::generate(spec.seed, (spec.block_size as usize * 4).max(1 << 20)),
            };
            if text.len() < spec.block_size as usize {
                return Err(BenchError::InvalidSpec("corpus smaller than one request".into()));
            }
            FillSource::Buffer(Arc::new(text))
        }
    })
}

struct Slot {
    op_id: u64,
    started_at: Instant,
    base_offset: u64,
    next_op: u32,
    total_ops: u32,
    failed: bool,
}

struct WorkerOutcome {
    submitted_ops: u64,
    ok_ops: u64,
    failed_ops: u64,
    ok_bytes: u64,
    latencies_ns: Vec<u64>,
    status_counts: BTreeMap<String, u64>,
}

#[allow(clippy::too_many_arguments)]
fn run_worker(
    io: &mut dyn WorkerIo,
    spec: &WorkloadSpec,
    thread: usize,
    geometry: DeviceGeometry,
    fill: &FillSource,
) -> Result<WorkerOutcome, BenchError> {
    let op_len = spec.block_size.min(MAX_IO_BYTES);
    let ops_per_request = spec.block_size / op_len;
    let mut offsets = OffsetGen::new(spec, thread, geometry.capacity_bytes())?;

    let mut slots: Vec<Option<Slot>> = (0..spec.io_depth).map(|_| None).collect();
    let mut by_op: HashMap<u64, usize> = HashMap::new();
    let mut next_id = 0u64;
    let mut outcome = WorkerOutcome {
        submitted_ops: 0,
        ok_ops: 0,
        failed_ops: 0,
        ok_bytes: 0,
        latencies_ns: Vec::new(),
        status_counts: BTreeMap::new(),
    };

    let start = Instant::now();
    let deadline = start + spec.runtime;
    let drain_deadline = deadline + Duration::from_secs(30);

    let submit_op = |io: &mut dyn WorkerIo,
                     slot: &mut Slot,
                     outcome: &mut WorkerOutcome,
                     next_id: &mut u64,
                     fill: &FillSource|
     -> Result<u64, BenchError> {
        let id = *next_id;
        *next_id += 1;
        let offset = slot.base_offset + slot.next_op as u64 * op_len as u64;
        if spec.pattern.is_write() {
            io.submit_write(id, offset, fill.op_payload(offset, op_len))?;
        } else {
            io.submit_read(id, offset, op_len)?;
        }
        slot.op_id = id;
        slot.next_op += 1;
        outcome.submitted_ops += 1;
        Ok(id)
    };

    loop {
        // Keep the window full while the clock runs.
        while Instant::now() < deadline {
            let Some(free) = slots.iter().position(Option::is_none) else { break };
            let mut slot = Slot {
                op_id: 0,
                started_at: Instant::now(),
                base_offset: offsets.next_offset(),
                next_op: 0,
                total_ops: ops_per_request,
                failed: false,
            };
            let id = submit_op(io, &mut slot, &mut outcome, &mut next_id, fill)?;
            by_op.insert(id, free);
            slots[free] = Some(slot);
        }

        let outstanding = by_op.len();
        if outstanding == 0 {
            if Instant::now() >= deadline {
                break;
            }
            continue;
        }

        let Some(completion) = io.next_completion()? else {
            if Instant::now() > drain_deadline {
                for failed in io.fail_outstanding() {
                    *outcome.status_counts.entry(failed.status.to_string()).or_default() += 1;
                    outcome.failed_ops += 1;
                }
                by_op.clear();
                slots.iter_mut().for_each(|s| *s = None);
                break;
            }
            continue;
        };

        *outcome.status_counts.entry(completion.status.to_string()).or_default() += 1;
        if completion.status.is_ok() {
            outcome.ok_ops += 1;
            outcome.ok_bytes += completion.bytes;
        } else {
            outcome.failed_ops += 1;
        }

        let Some(slot_index) = by_op.remove(&completion.id) else { continue };
        let slot = slots[slot_index].as_mut().expect("slot occupied");
        if !completion.status.is_ok() {
            slot.failed = true;
        }
        if slot.next_op < slot.total_ops && !slot.failed {
            let id = submit_op(io, slot, &mut outcome, &mut next_id, fill)?;
            by_op.insert(id, slot_index);
        } else {
            if !slot.failed {
                outcome.latencies_ns.push(slot.started_at.elapsed().as_nanos() as u64);
            }
            slots[slot_index] = None;
        }
    }

    Ok(outcome)
}

enum WorkerKind {
    Local(LocalIo),
    Remote(RemoteIo),
}

fn make_worker(
    spec: &WorkloadSpec,
    stack: Option<&Arc<StackCore>>,
) -> Result<(WorkerKind, DeviceGeometry), BenchError> {
    match &spec.target {
        BenchTarget::Device(id) => {
            let stack = stack.ok_or(BenchError::NoStack)?;
            let geometry = stack
                .geometry(id)
                .ok_or_else(|| BenchError::Unreachable(format!("unknown device {id:?}")))?;
            let channel = stack
                .open_channel(id, spec.io_depth.max(1))
                .map_err(|e| BenchError::Unreachable(e.to_string()))?;
            Ok((WorkerKind::Local(LocalIo { channel, block_size: geometry.block_size }), geometry))
        }
        BenchTarget::Endpoint(addr) => {
            let mut client = BlockClient::connect(addr, Duration::from_secs(5))
                .map_err(|e| BenchError::Unreachable(format!("{addr}: {e}")))?;
            let geometry =
                client.geometry().map_err(|e| BenchError::Unreachable(format!("{addr}: {e}")))?;
            Ok((WorkerKind::Remote(RemoteIo::new(client)), geometry))
        }
    }
}

fn validate(spec: &WorkloadSpec, geometry: DeviceGeometry) -> Result<(), BenchError> {
    if spec.io_depth == 0 || spec.threads == 0 {
        return Err(BenchError::InvalidSpec("io_depth and threads must be at least 1".into()));
    }
    if spec.block_size == 0 || spec.block_size > MAX_BENCH_BLOCK {
        return Err(BenchError::InvalidSpec(format!(
            "block_size must be in 1..={MAX_BENCH_BLOCK}"
        )));
    }
    if spec.block_size % geometry.block_size != 0 {
        return Err(BenchError::InvalidSpec(format!(
            "block_size {} is not a multiple of the device block size {}",
            spec.block_size, geometry.block_size
        )));
    }
    let op_len = spec.block_size.min(MAX_IO_BYTES);
    if spec.block_size % op_len != 0 {
        return Err(BenchError::InvalidSpec(format!(
            "block_size {} does not split evenly into {op_len} byte device I/Os",
            spec.block_size
        )));
    }
    Ok(())
}

/// Runs the workload and aggregates per-thread results.
pub fn run_workload(
    spec: &WorkloadSpec,
    stack: Option<&Arc<StackCore>>,
) -> Result<BenchReport, BenchError> {
    // Probe the target once up front for validation.
    let (_probe, geometry) = make_worker(spec, stack)?;
    validate(spec, geometry)?;
    let fill = build_fill(spec)?;

    let started = Instant::now();
    let outcomes: Vec<(usize, WorkerOutcome)> = std::thread::scope(|scope| {
        let mut joins = Vec::new();
        for thread in 0..spec.threads {
            let fill = &fill;
            let spec_ref = &*spec;
            joins.push(scope.spawn(move || {
                let (kind, geometry) = make_worker(spec_ref, stack)?;
                let outcome = match kind {
                    WorkerKind::Local(mut io) => {
                        run_worker(&mut io, spec_ref, thread, geometry, fill)?
                    }
                    WorkerKind::Remote(mut io) => {
                        run_worker(&mut io, spec_ref, thread, geometry, fill)?
                    }
                };
                Ok::<_, BenchError>((thread, outcome))
            }));
        }
        joins
            .into_iter()
            .map(|j| j.join().expect("worker panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let elapsed = started.elapsed();

    let mut report = BenchReport {
        total_bytes: 0,
        elapsed_secs: elapsed.as_secs_f64(),
        throughput_bps: 0.0,
        latency: LatencyStats::zero(),
        status_counts: BTreeMap::new(),
        submitted_ops: 0,
        ok_ops: 0,
        failed_ops: 0,
        per_thread: Vec::new(),
    };
    let mut all_latencies = Vec::new();
    for (thread, outcome) in outcomes {
        report.total_bytes += outcome.ok_bytes;
        report.submitted_ops += outcome.submitted_ops;
        report.ok_ops += outcome.ok_ops;
        report.failed_ops += outcome.failed_ops;
        for (status, count) in &outcome.status_counts {
            *report.status_counts.entry(status.clone()).or_default() += count;
        }
        report.per_thread.push(ThreadReport {
            thread,
            submitted_ops: outcome.submitted_ops,
            ok_ops: outcome.ok_ops,
            failed_ops: outcome.failed_ops,
            ok_bytes: outcome.ok_bytes,
            latency: compute_stats(&outcome.latencies_ns),
        });
        all_latencies.extend(outcome.latencies_ns);
    }
    report.latency = compute_stats(&all_latencies);
    if elapsed.as_secs_f64() > 0.0 {
        report.throughput_bps = report.total_bytes as f64 / elapsed.as_secs_f64();
    }
    Ok(report)
}

/// Side-by-side run of two workloads with identical seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathComparison {
    pub first: BenchReport,
    pub second: BenchReport,
    /// second / first.
    pub throughput_ratio: f64,
    /// second / first.
    pub mean_latency_ratio: f64,
}

pub fn compare_paths(
    first: &WorkloadSpec,
    second: &WorkloadSpec,
    stack: Option<&Arc<StackCore>>,
) -> Result<PathComparison, BenchError> {
    let a = run_workload(first, stack)?;
    let b = run_workload(second, stack)?;
    let throughput_ratio =
        if a.throughput_bps > 0.0 { b.throughput_bps / a.throughput_bps } else { 0.0 };
    let mean_latency_ratio =
        if a.latency.mean_ns > 0.0 { b.latency.mean_ns / a.latency.mean_ns } else { 0.0 };
    Ok(PathComparison { first: a, second: b, throughput_ratio, mean_latency_ratio })
}
