//! End-to-end tests of the network target and client over real sockets.

use std::io::Write;
use std::time::Duration;

use softblock::bench::{self, BenchTarget, DataFill, Pattern, WorkloadSpec};
use softblock::export::{BlockClient, ClientError};
use softblock::wire::Frame;
use softblock::{build_stack, parse_config, IoStatus, StackHandle};

fn boot(config: &str) -> StackHandle {
    build_stack(&parse_config(config).unwrap()).unwrap()
}

fn memory_target() -> StackHandle {
    boot(
        r#"
        [[devices]]
        id = "m0"
        kind = "memory"
        block_size = 4096
        block_count = 256

        [[exports]]
        listen = "127.0.0.1:0"
        mode = "processed"
        device = "m0"
    "#,
    )
}

fn connect(stack: &StackHandle) -> BlockClient {
    let addr = stack.export_addrs()[0];
    BlockClient::connect(addr, Duration::from_secs(5)).unwrap()
}

#[test]
fn info_reports_device_geometry() {
    let stack = memory_target();
    let mut client = connect(&stack);
    let geometry = client.geometry().unwrap();
    assert_eq!(geometry.block_size, 4096);
    assert_eq!(geometry.block_count, 256);
    stack.shutdown();
}

#[test]
fn write_then_read_round_trips() {
    let stack = memory_target();
    let mut client = connect(&stack);
    let payload = vec![0xA7u8; 8192];
    let w = client.write(4096, payload.clone()).unwrap();
    assert_eq!(w.status, IoStatus::Ok);
    let r = client.read(4096, 8192).unwrap();
    assert_eq!(r.status, IoStatus::Ok);
    assert_eq!(r.payload, payload);
    assert_eq!(client.flush().unwrap().status, IoStatus::Ok);
    stack.shutdown();
}

#[test]
fn processed_raid1_over_null_reads_zero() {
    let stack = boot(
        r#"
        [[devices]]
        id = "n0"
        kind = "null"
        block_size = 4096
        block_count = 1024

        [[devices]]
        id = "n1"
        kind = "null"
        block_size = 4096
        block_count = 1024

        [[devices]]
        id = "r0"
        kind = "raid"
        level = "raid1"
        bases = ["n0", "n1"]

        [[exports]]
        listen = "127.0.0.1:0"
        mode = "processed"
        device = "r0"
    "#,
    );
    let mut client = connect(&stack);
    client.write(0, vec![0xFF; 4096]).unwrap();
    let r = client.read(0, 4096).unwrap();
    assert_eq!(r.status, IoStatus::Ok);
    assert_eq!(r.payload, vec![0u8; 4096]);
    stack.shutdown();
}

#[test]
fn out_of_range_and_misalignment_map_to_statuses() {
    let stack = memory_target();
    let mut client = connect(&stack);
    // Past the end: 256 blocks of 4 KiB.
    let r = client.read(256 * 4096, 4096).unwrap();
    assert_eq!(r.status, IoStatus::OutOfRange);
    assert!(r.payload.is_empty());
    // Misaligned offset.
    let r = client.read(100, 4096).unwrap();
    assert_eq!(r.status, IoStatus::Unsupported);
    // Zero-length read.
    let r = client.read(0, 0).unwrap();
    assert_eq!(r.status, IoStatus::Unsupported);
    stack.shutdown();
}

#[test]
fn pipelined_reads_correlate_by_id() {
    let stack = memory_target();
    let mut client = connect(&stack);
    for id in 0..32u64 {
        client.submit_write(id, id * 4096, vec![id as u8; 4096]).unwrap();
    }
    assert_eq!(client.in_flight(), 32);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..32 {
        let c = client.poll_completion().unwrap();
        assert_eq!(c.status, IoStatus::Ok);
        assert!(seen.insert(c.request_id), "duplicate completion id");
    }
    assert_eq!(client.in_flight(), 0);

    for id in 0..32u64 {
        client.submit_read(id, id * 4096, 4096).unwrap();
    }
    for _ in 0..32 {
        let c = client.poll_completion().unwrap();
        assert_eq!(c.payload, vec![c.request_id as u8; 4096]);
    }
    stack.shutdown();
}

#[test]
fn duplicate_in_flight_wire_id_is_rejected_locally() {
    let stack = memory_target();
    let mut client = connect(&stack);
    client.submit_read(9, 0, 4096).unwrap();
    assert!(matches!(client.submit_read(9, 0, 4096), Err(ClientError::DuplicateId(9))));
    client.poll_completion().unwrap();
    stack.shutdown();
}

#[test]
fn malformed_frame_gets_error_response_then_reset() {
    let stack = memory_target();
    let addr = stack.export_addrs()[0];
    let mut raw = std::net::TcpStream::connect(addr).unwrap();
    raw.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut bytes = Frame::read_request(1, 0, 4096).encode().unwrap();
    bytes[0] = b'Z'; // break the magic
    raw.write_all(&bytes).unwrap();
    let response = Frame::read_from(&mut raw).unwrap();
    assert!(response.response);
    assert_eq!(response.status, IoStatus::IoError);
    // Connection is then closed by the server.
    match Frame::read_from(&mut raw) {
        Err(_) => {}
        Ok(frame) => panic!("expected reset, got {frame:?}"),
    }
    stack.shutdown();
}

#[test]
fn server_shutdown_fails_outstanding_client_requests() {
    let stack = memory_target();
    let mut client = connect(&stack);
    for id in 0..8u64 {
        client.submit_read(id, 0, 4096).unwrap();
    }
    stack.shutdown();
    // Drain whatever made it out, then the connection dies.
    let mut finished = 0;
    loop {
        match client.poll_completion() {
            Ok(_) => finished += 1,
            Err(ClientError::ConnectionLost(_)) | Err(ClientError::Timeout) => break,
            Err(other) => panic!("unexpected error: {other}"),
        }
    }
    let failed = client.fail_outstanding();
    assert_eq!(finished + failed.len(), 8);
    for completion in failed {
        assert_eq!(completion.status, IoStatus::IoError);
    }
}

fn passthrough_chain() -> (StackHandle, StackHandle) {
    let processed = boot(
        r#"
        [[devices]]
        id = "m0"
        kind = "memory"
        block_size = 512
        block_count = 512

        [[exports]]
        listen = "127.0.0.1:0"
        mode = "processed"
        device = "m0"
    "#,
    );
    let upstream = processed.export_addrs()[0];
    let relay = boot(&format!(
        r#"
        [[exports]]
        listen = "127.0.0.1:0"
        mode = "passthrough"
        upstream = "{upstream}"
    "#
    ));
    (processed, relay)
}

/// The relay is invisible: any trace through it yields field-for-field
/// the responses a direct connection yields.
#[test]
fn passthrough_relay_is_transparent() {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let (processed, relay) = passthrough_chain();
    let mut direct = connect(&processed);
    let mut relayed = BlockClient::connect(relay.export_addrs()[0], Duration::from_secs(5)).unwrap();

    assert_eq!(direct.geometry().unwrap(), relayed.geometry().unwrap());

    let mut rng = StdRng::seed_from_u64(2024);
    for id in 0..200u64 {
        let block = rng.gen_range(0..512u64);
        let action = rng.gen_range(0..10);
        let (a, b) = if action < 4 {
            let payload = vec![rng.gen::<u8>(); 512];
            (
                direct.write(block * 512, payload.clone()).unwrap(),
                relayed.write(block * 512, payload).unwrap(),
            )
        } else if action < 9 {
            // Sometimes past the end, to compare error paths too.
            let offset = if action == 8 { 512 * 512 } else { block * 512 };
            (direct.read(offset, 512).unwrap(), relayed.read(offset, 512).unwrap())
        } else {
            (direct.flush().unwrap(), relayed.flush().unwrap())
        };
        assert_eq!(a.status, b.status, "status diverged at step {id}");
        assert_eq!(a.payload, b.payload, "payload diverged at step {id}");
    }

    relay.shutdown();
    processed.shutdown();
}

#[test]
fn passthrough_with_dead_upstream_reports_io_error() {
    // Bind-then-drop to get an address nobody listens on.
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead_addr = dead.local_addr().unwrap();
    drop(dead);

    let relay = boot(&format!(
        r#"
        [[exports]]
        listen = "127.0.0.1:0"
        mode = "passthrough"
        upstream = "{dead_addr}"
    "#
    ));
    let mut client = connect(&relay);
    let r = client.read(0, 4096).unwrap();
    assert_eq!(r.status, IoStatus::IoError);
    let w = client.write(0, vec![0u8; 4096]).unwrap();
    assert_eq!(w.status, IoStatus::IoError);
    relay.shutdown();
}

#[test]
fn remote_bench_runs_over_the_wire() {
    let stack = memory_target();
    let addr = stack.export_addrs()[0];
    let spec = WorkloadSpec {
        target: BenchTarget::Endpoint(addr.to_string()),
        pattern: Pattern::RandWrite,
        block_size: 8192,
        io_depth: 8,
        threads: 2,
        runtime: Duration::from_millis(300),
        seed: 11,
        fill: DataFill::Random,
        corpus_path: None,
    };
    let report = bench::run_workload(&spec, None).unwrap();
    assert!(report.conserved());
    assert!(report.total_bytes > 0);
    assert_eq!(report.failed_ops, 0, "statuses: {:?}", report.status_counts);
    stack.shutdown();
}
