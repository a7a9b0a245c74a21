//! End-to-end runs of the `lcc` binary against a small synthetic dataset.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread;

use flate2::write::GzEncoder;
use flate2::Compression;
use lcc_core::data::{encode_images, encode_labels, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use tempfile::TempDir;

fn lcc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcc")).current_dir(dir).args(args).output().expect("spawn lcc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::fast());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

/// Deterministic pseudo-images whose class shifts a bright stripe.
fn synthetic(count: usize, side: usize, salt: u64) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    let mut state = 0x2545_F491_4F6C_DD1Du64 ^ salt;
    for i in 0..count {
        let label = (i % 10) as u8;
        labels.push(label);
        for p in 0..side * side {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let stripe = (p % side) * 10 / side == label as usize;
            pixels.push(if stripe { 200 } else { (state % 60) as u8 });
        }
    }
    (pixels, labels)
}

fn write_dataset(dir: &Path, side: usize) {
    fs::create_dir_all(dir).unwrap();
    for (images, labels, n, salt) in [(TRAIN_IMAGES, TRAIN_LABELS, 160, 1), (TEST_IMAGES, TEST_LABELS, 60, 2)] {
        let (px, lb) = synthetic(n, side, salt);
        fs::write(dir.join(images), gz(&encode_images(side, side, &px))).unwrap();
        fs::write(dir.join(labels), gz(&encode_labels(&lb))).unwrap();
    }
}

/// A workspace with 8x8 synthetic data and a small configuration.
fn small_workspace(variant: &str) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    write_dataset(&tmp.path().join("data"), 8);
    let cfg = tmp.path().join("small.toml");
    fs::write(
        &cfg,
        format!(
            "version = 1\n\
             [scheme]\nimage_side = 8\nvariant = \"{variant}\"\nl1 = 16\nl2 = 8\nepochs = 2\nbatch_size = 8\n\
             [straggler]\ndistribution = \"exponential\"\nrate = 2.0\n\
             [data]\ndata_dir = \"data\"\ntest_subset = 40\n\
             [simulation]\nbatch_groups = 4\n"
        ),
    )
    .unwrap();
    (tmp, cfg)
}

fn assert_exit(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

#[test]
fn params_for_the_four_input_convolutional_scheme() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cl.toml");
    fs::write(&cfg, "version = 1\n[scheme]\nencoder_arch = \"cl\"\ncomp_arch = \"cl\"\n").unwrap();
    let args = ["params", "--config", cfg.to_str().unwrap(), "--K", "4", "--workers", "5", "--variant", "hs"];
    let a = lcc(tmp.path(), &[&args[..], &["--G", "1", "--P", "4"]].concat());
    let b = lcc(tmp.path(), &[&args[..], &["--G", "4", "--P", "1"]].concat());
    assert_exit(&a, 0);
    assert_exit(&b, 0);
    assert!(stdout(&a).contains("(≈100%)"), "{}", stdout(&a));
    assert!(stdout(&a).contains("R = 5") && stdout(&b).contains("R = 5"));
    let total = |s: String| s.lines().find(|l| l.starts_with("total")).unwrap().to_string();
    assert_eq!(total(stdout(&a)), total(stdout(&b)));
}

#[test]
fn lcc_demo_recovers_from_every_drop_set() {
    let tmp = TempDir::new().unwrap();
    let o = lcc(tmp.path(), &["lcc-demo", "--K", "2", "--workers", "5", "--drop", "2"]);
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("max error < 1e-8"));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("dropped")).count(), 10);

    let o = lcc(tmp.path(), &["lcc-demo", "--K", "2", "--workers", "5", "--drop", "3"]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("kind=unrecoverable"));
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let o = lcc(tmp.path(), &["--no-such-flag"]);
    assert_exit(&o, 1);
    assert!(stderr(&o).starts_with("lcc: error kind=usage exit=1 message="));
    assert_eq!(stderr(&o).lines().count(), 1);

    assert_exit(&lcc(tmp.path(), &["params", "--G", "0"]), 1);
    fs::write(tmp.path().join("bad.toml"), "version = 1\n[scheme]\nrecovery_threshold = 3\n").unwrap();
    let o = lcc(tmp.path(), &["params", "--config", "bad.toml"]);
    assert_exit(&o, 1);
    assert!(stderr(&o).contains("kind=config") && stderr(&o).contains("derived"));
    assert_exit(&lcc(tmp.path(), &["--help"]), 0);
}

#[test]
fn runtime_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let o = lcc(tmp.path(), &["eval", "--checkpoint", "missing.lcc", "--data-dir", "nowhere"]);
    assert_exit(&o, 2);
    fs::write(tmp.path().join("junk.lcc"), b"NOPE1234").unwrap();
    write_dataset(&tmp.path().join("data"), 28);
    let o = lcc(tmp.path(), &["eval", "--checkpoint", "junk.lcc", "--data-dir", "data"]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("kind=checkpoint"), "{}", stderr(&o));
}

#[test]
fn train_smoke_on_default_configuration() {
    let tmp = TempDir::new().unwrap();
    write_dataset(&tmp.path().join("data/fashion-mnist"), 28);
    let o = lcc(tmp.path(), &["train", "--subset", "64", "--epochs", "1"]);
    assert_exit(&o, 0);
    assert!(tmp.path().join("model.lcc").exists());
    assert_eq!(fs::read_to_string(tmp.path().join("metrics.jsonl")).unwrap().lines().count(), 1);
    assert_exit(&lcc(tmp.path(), &["eval"]), 0);
}

#[test]
fn seeded_training_is_bit_identical() {
    for variant in ["hs", "hb"] {
        let (tmp, cfg) = small_workspace(variant);
        let c = cfg.to_str().unwrap();
        for run in ["a", "b"] {
            let o = lcc(
                tmp.path(),
                &["train", "--config", c, "--seed", "7", "--checkpoint", &format!("{run}.lcc"), "--metrics", &format!("{run}.jsonl")],
            );
            assert_exit(&o, 0);
        }
        let read = |f: &str| fs::read(tmp.path().join(f)).unwrap();
        assert_eq!(read("a.jsonl"), read("b.jsonl"));
        assert_eq!(read("a.lcc"), read("b.lcc"));
        assert_eq!(String::from_utf8(read("a.jsonl")).unwrap().lines().count(), 2);

        let o = lcc(tmp.path(), &["eval", "--config", c, "--checkpoint", "a.lcc"]);
        assert_exit(&o, 0);
        assert!(stdout(&o).contains("40 test images"));
        assert_exit(&lcc(tmp.path(), &["eval", "--config", c, "--checkpoint", "a.lcc", "--direct"]), 0);
    }
}

#[test]
fn baseline_trains_and_evaluates() {
    let (tmp, cfg) = small_workspace("hb");
    let c = cfg.to_str().unwrap();
    let o = lcc(tmp.path(), &["train", "--config", c, "--baseline", "mlp", "--checkpoint", "base.lcc"]);
    assert_exit(&o, 0);
    assert_exit(&lcc(tmp.path(), &["eval", "--config", c, "--checkpoint", "base.lcc"]), 0);
    let o = lcc(tmp.path(), &["simulate", "--config", c, "--checkpoint", "base.lcc"]);
    assert_exit(&o, 1);
}

#[test]
fn socket_and_in_process_reports_match() {
    let (tmp, cfg) = small_workspace("hs");
    let c = cfg.to_str().unwrap();
    assert_exit(&lcc(tmp.path(), &["train", "--config", c, "--epochs", "1"]), 0);
    let a = lcc(tmp.path(), &["simulate", "--config", c, "--report", "threads.jsonl"]);
    let b = lcc(tmp.path(), &["simulate", "--config", c, "--report", "socket.jsonl", "--socket"]);
    assert_exit(&a, 0);
    assert_exit(&b, 0);
    let ra = fs::read_to_string(tmp.path().join("threads.jsonl")).unwrap();
    assert_eq!(ra, fs::read_to_string(tmp.path().join("socket.jsonl")).unwrap());
    // 40 test images, K = 2, 4 groups per batch.
    assert_eq!(ra.lines().count(), 5 + 1);
    assert!(ra.lines().last().unwrap().contains("\"type\":\"summary\""));
}

struct Worker(Child);

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn separate_worker_processes_serve_the_simulator() {
    let (tmp, cfg) = small_workspace("hb");
    let c = cfg.to_str().unwrap();
    assert_exit(&lcc(tmp.path(), &["train", "--config", c, "--epochs", "1"]), 0);

    let mut workers = Vec::new();
    let mut addrs = Vec::new();
    for _ in 0..3 {
        let mut child = Command::new(env!("CARGO_BIN_EXE_lcc"))
            .current_dir(tmp.path())
            .args(["worker", "--config", c, "--port", "0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        addrs.push(line.trim().strip_prefix("listening on ").expect("address line").to_string());
        workers.push(Worker(child));
    }
    let endpoints = addrs.join(",");
    let a = lcc(tmp.path(), &["simulate", "--config", c, "--report", "remote.jsonl", "--endpoints", &endpoints]);
    assert_exit(&a, 0);
    let b = lcc(tmp.path(), &["simulate", "--config", c, "--report", "local.jsonl"]);
    assert_exit(&b, 0);
    assert_eq!(
        fs::read_to_string(tmp.path().join("remote.jsonl")).unwrap(),
        fs::read_to_string(tmp.path().join("local.jsonl")).unwrap()
    );
}

#[test]
fn gradcheck_passes() {
    let tmp = TempDir::new().unwrap();
    let o = lcc(tmp.path(), &["gradcheck"]);
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("forward_train"));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn example_config_round_trips() {
    let tmp = TempDir::new().unwrap();
    let o = lcc(tmp.path(), &["example-config"]);
    assert_exit(&o, 0);
    fs::write(tmp.path().join("ex.toml"), &o.stdout).unwrap();
    let o = lcc(tmp.path(), &["params", "--config", "ex.toml"]);
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("R = 2"));
}

/// Serve `body` for every request on a loopback port.
fn serve_bytes(body: Vec<u8>, requests: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().take(requests) {
            let mut s = stream.unwrap();
            let mut buf = [0u8; 4096];
            let _ = s.read(&mut buf);
            let head = format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
            let _ = s.write_all(head.as_bytes());
            let _ = s.write_all(&body);
        }
    });
    format!("http://{addr}/")
}

#[test]
fn fetch_data_verifies_checksums() {
    let tmp = TempDir::new().unwrap();
    let body = b"not really idx".to_vec();
    let url = serve_bytes(body.clone(), 8);
    let digest = "0000000000000000000000000000000000000000000000000000000000000000";
    fs::write(
        tmp.path().join("f.toml"),
        format!("version = 1\n[data]\ndata_dir = \"d\"\nmirror_url = \"{url}\"\n[data.checksums]\n\"{TRAIN_IMAGES}\" = \"{digest}\"\n"),
    )
    .unwrap();
    let o = lcc(tmp.path(), &["fetch-data", "--config", "f.toml"]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("checksum mismatch"));
    assert!(!tmp.path().join("d").join(TRAIN_IMAGES).exists());

    fs::write(
        tmp.path().join("g.toml"),
        format!("version = 1\n[data]\ndata_dir = \"d\"\nmirror_url = \"{url}\"\n"),
    )
    .unwrap();
    let o = lcc(tmp.path(), &["fetch-data", "--config", "g.toml"]);
    assert_exit(&o, 0);
    assert_eq!(stdout(&o).matches("no checksum configured").count(), 4);
    assert_eq!(fs::read(tmp.path().join("d").join(TEST_LABELS)).unwrap(), body);
}
