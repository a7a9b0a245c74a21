//! Command implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Mutex;
use std::time::Duration;

use itertools::Itertools;
use lcc_core::config::ConfigFile;
use lcc_core::data::{ImageSet, Split};
use lcc_core::gradcheck::{op_suite, GradcheckOptions};
use lcc_core::lagrange::{lcc_reference_run, Gram, MatrixPolynomial};
use lcc_core::nets::checkpoint::{self, Checkpoint};
use lcc_core::nets::{percent_of_reference, ArchSpec, REFERENCE_PARAM_COUNT};
use lcc_core::scheme::{evaluate, evaluate_direct, train as fit, BaselineModel, EpochMetrics, TrainOptions};
use lcc_core::scheme::{CheckpointMeta, CodedModel, Placement, SchemeConfig, SchemeNets};
use lcc_core::simulator::{serve_worker, spawn_worker, RemotePool, WorkerHandle};
use lcc_core::simulator::{run_inference, SimOptions, Transport};
use lcc_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{BaselineArg, CmdResult, Failure};

/// Per-reply timeout for socket workers.
const SOCKET_TIMEOUT: Duration = Duration::from_secs(30);

fn load_split(cfg: &ConfigFile, split: Split) -> Result<ImageSet, Failure> {
    ImageSet::load_split(&cfg.data.data_dir, split).map_err(|e| match e {
        Error::Io(io) => Failure::runtime(format!(
            "cannot read data in {}: {io} (run `lcc fetch-data`)",
            cfg.data.data_dir.display()
        )),
        other => other.into(),
    })
}

fn train_set(cfg: &ConfigFile) -> Result<ImageSet, Failure> {
    let set = load_split(cfg, Split::Train)?;
    Ok(match cfg.data.subset {
        Some(n) if n < set.len() => set.subset(n, cfg.scheme.seed),
        _ => set,
    })
}

fn test_set(cfg: &ConfigFile) -> Result<ImageSet, Failure> {
    let set = load_split(cfg, Split::Test)?;
    Ok(match cfg.data.test_subset {
        Some(n) if n < set.len() => set.select(&(0..n).collect::<Vec<_>>()),
        _ => set,
    })
}

fn baseline_spec(s: &SchemeConfig, kind: BaselineArg) -> ArchSpec {
    match kind {
        BaselineArg::Mlp => ArchSpec::baseline_mlp(s.image_side, s.classes).with_widths(s.l1, s.l2),
        BaselineArg::Cnn => ArchSpec::baseline_cnn(s.image_side, s.classes, s.hidden_channels),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

// ---------------------------------------------------------------------------

pub fn train(
    cfg: &ConfigFile,
    checkpoint: Option<PathBuf>,
    metrics: Option<PathBuf>,
    baseline: Option<BaselineArg>,
    with_eval: bool,
) -> CmdResult {
    let checkpoint = checkpoint.unwrap_or_else(|| cfg.output.checkpoint.clone());
    let metrics = metrics.unwrap_or_else(|| cfg.output.metrics.clone());
    let train = train_set(cfg)?;
    let test = if with_eval { Some(test_set(cfg)?) } else { None };
    let opts = TrainOptions::from_config(&cfg.scheme);
    let mut log = create(&metrics)?;
    let mut write_line = |m: &EpochMetrics| -> lcc_core::Result<()> {
        let line = serde_json::to_string(m).map_err(|e| Error::Input(e.to_string()))?;
        writeln!(log, "{line}")?;
        log.flush()?;
        let acc = m.test_accuracy.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
        println!("epoch {:>3}  train_loss {:.4}  test_accuracy {acc}  ({:.1}s)", m.epoch, m.train_loss, m.wall_seconds);
        Ok(())
    };

    match baseline {
        Some(kind) => {
            let mut model = BaselineModel::new(&baseline_spec(&cfg.scheme, kind), cfg.scheme.seed)?;
            // Same number of images per step as the coded model.
            let opts = TrainOptions { batch_size: opts.batch_size * cfg.scheme.group_size, ..opts };
            println!("baseline {:?}: {} parameters, {} training images", kind, model.param_count(), train.len());
            fit(&mut model, &train, test.as_ref(), &opts, &mut write_line)?;
            model.save(&checkpoint)?;
        }
        None => {
            let mut model = CodedModel::<f32>::new(&cfg.scheme)?;
            let s = &cfg.scheme;
            println!(
                "{:?} K={} N={} G={} P={} R={}: {} parameters, {} training images",
                s.variant,
                s.group_size,
                s.workers,
                s.encoder_degree,
                s.computation_degree,
                s.recovery_threshold(),
                model.param_count(),
                train.len()
            );
            fit(&mut model, &train, test.as_ref(), &opts, &mut write_line)?;
            model.save(&checkpoint)?;
        }
    }
    println!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

// ---------------------------------------------------------------------------

/// Inference-time settings that may differ from the trained configuration.
#[derive(Clone, Copy, Debug, Default)]
pub struct Runtime {
    pub workers: Option<usize>,
    pub placement: Option<Placement>,
}

enum Loaded {
    Coded(CodedModel<f32>),
    Baseline(BaselineModel),
}

fn load_model(path: &Path, runtime: Runtime) -> Result<Loaded, Failure> {
    let ckpt: Checkpoint = checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Failure::runtime(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other.into(),
    })?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.header.metadata.clone())
        .map_err(|e| Failure::from(Error::Checkpoint(lcc_core::CheckpointError::Header(format!("metadata: {e}")))))?;
    match meta {
        CheckpointMeta::Baseline { .. } => Ok(Loaded::Baseline(BaselineModel::from_checkpoint(ckpt)?)),
        CheckpointMeta::Coded { mut config } => {
            if let Some(n) = runtime.workers {
                config.workers = n;
            }
            if let Some(p) = runtime.placement {
                config.placement = p;
            }
            config.validate()?;
            Ok(Loaded::Coded(CodedModel::from_checkpoint(ckpt, Some(&config))?))
        }
    }
}

pub fn eval(cfg: &ConfigFile, checkpoint: Option<PathBuf>, direct: bool) -> CmdResult {
    let path = checkpoint.unwrap_or_else(|| cfg.output.checkpoint.clone());
    let test = test_set(cfg)?;
    let (accuracy, path_kind) = match load_model(&path, Runtime::default())? {
        Loaded::Coded(m) if direct => (evaluate_direct(&m, &test)?, "direct"),
        Loaded::Coded(m) => (evaluate(&m, &test)?, "decoded"),
        Loaded::Baseline(_) if direct => {
            return Err(Failure::usage("--direct applies to coded checkpoints only"));
        }
        Loaded::Baseline(m) => (evaluate(&m, &test)?, "baseline"),
    };
    println!("accuracy {accuracy:.6} ({path_kind}, {} test images)", test.len());
    Ok(())
}

// ---------------------------------------------------------------------------

pub struct SimulateArgs {
    pub checkpoint: Option<PathBuf>,
    pub random_init: bool,
    pub report: Option<PathBuf>,
    pub endpoints: Vec<SocketAddr>,
    pub max_batches: Option<usize>,
    pub batch_groups: Option<usize>,
    pub runtime: Runtime,
}

pub fn simulate(cfg: &ConfigFile, args: SimulateArgs) -> CmdResult {
    let model = if args.random_init {
        CodedModel::<f32>::new(&cfg.scheme)?
    } else {
        let path = args.checkpoint.unwrap_or_else(|| cfg.output.checkpoint.clone());
        match load_model(&path, args.runtime)? {
            Loaded::Coded(m) => m,
            Loaded::Baseline(_) => return Err(Failure::usage("simulate needs a coded checkpoint, not a baseline")),
        }
    };
    let test = test_set(cfg)?;
    let mut opts = SimOptions::new(args.batch_groups.unwrap_or(cfg.simulation.batch_groups), model.config().placement);
    opts.max_batches = args.max_batches.or(cfg.simulation.max_batches);

    // Loopback workers live until the end of the run.
    let mut _local: Vec<WorkerHandle> = Vec::new();
    let mut transport = if !args.endpoints.is_empty() {
        Transport::Socket(RemotePool::connect(&args.endpoints, SOCKET_TIMEOUT))
    } else if cfg.simulation.socket {
        let slice = model.worker_slice()?;
        for _ in 0..model.config().workers {
            _local.push(spawn_worker(slice.clone(), 0)?);
        }
        let addrs: Vec<SocketAddr> = _local.iter().map(WorkerHandle::addr).collect();
        Transport::Socket(RemotePool::connect(&addrs, SOCKET_TIMEOUT))
    } else {
        Transport::InProcess
    };

    let report = run_inference(&model, &test, &cfg.straggler, &opts, &mut transport)?;
    let path = args.report.unwrap_or_else(|| cfg.output.report.clone());
    let mut out = create(&path)?;
    report.write_jsonl(&mut out)?;
    out.flush()?;

    let s = &report.summary;
    let lat = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "batches {}  unrecoverable {}  accuracy {:.4}  mean_decode_latency {}  p95_decode_latency {}  ({:.1}s)",
        s.batches,
        s.unrecoverable_batches,
        s.accuracy,
        lat(s.mean_decode_latency),
        lat(s.p95_decode_latency),
        s.wall_seconds
    );
    println!("report written to {}", path.display());
    Ok(())
}

pub fn worker(cfg: &ConfigFile, checkpoint: Option<PathBuf>, port: u16) -> CmdResult {
    let path = checkpoint.unwrap_or_else(|| cfg.output.checkpoint.clone());
    let model = match load_model(&path, Runtime::default())? {
        Loaded::Coded(m) => m,
        Loaded::Baseline(_) => return Err(Failure::usage("worker needs a coded checkpoint, not a baseline")),
    };
    let slice = model.worker_slice()?;
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let stop = AtomicBool::new(false);
    let current = Mutex::new(None);
    serve_worker(&slice, listener, &stop, &current)?;
    Ok(())
}

// ---------------------------------------------------------------------------

/// Relative error threshold printed by `lcc-demo`.
const DEMO_TOLERANCE: f64 = 1e-8;

pub fn lcc_demo(cfg: &ConfigFile, drop: usize, size: usize) -> CmdResult {
    let (k, n) = (cfg.scheme.group_size, cfg.scheme.workers);
    if size == 0 {
        return Err(Failure::usage("--size must be at least 1"));
    }
    if drop > n {
        return Err(Failure::usage(format!("cannot drop {drop} of {n} workers")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scheme.seed);
    let dataset: Vec<Tensor<f64>> =
        (0..k).map(|_| Tensor::from_fn(&[size, size], |_| rng.gen_range(-1.0..=1.0))).collect();
    let f = Gram;
    let expected: Vec<Tensor<f64>> = dataset.iter().map(|x| f.apply(x)).collect();
    println!("K={k} N={n} deg f=2 R={}", (k - 1) * 2 + 1);

    let mut worst = 0.0f64;
    let mut trials = 0usize;
    for dropped in (0..n).combinations(drop) {
        let outcome = lcc_reference_run(&dataset, &f, n, &dropped)?;
        let err = outcome
            .results
            .iter()
            .zip(&expected)
            .map(|(got, want)| {
                let diff = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                diff / want.max_abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max);
        println!("dropped {dropped:?} used {:?} rel_error {err:.3e}", outcome.used_workers);
        worst = worst.max(err);
        trials += 1;
    }
    if worst < DEMO_TOLERANCE {
        println!("max error < 1e-8 (worst {worst:.3e} over {trials} drop sets)");
        Ok(())
    } else {
        Err(Failure::runtime(format!("max error {worst:.3e} exceeds 1e-8")))
    }
}

pub fn gradcheck(cfg: &ConfigFile, tolerance: f64) -> CmdResult {
    let opts = GradcheckOptions { tolerance, seed: cfg.scheme.seed, ..GradcheckOptions::default() };
    let reports = op_suite(&opts)?;
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for (name, r) in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{name:<28} worst_rel_error {:.3e}  checked {:>5}  {verdict}", r.worst_rel_error, r.checked);
        worst = worst.max(r.worst_rel_error);
        if !r.passed() {
            failed.push(name.clone());
        }
    }
    println!("worst relative error {worst:.3e} (tolerance {tolerance:.1e})");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(format!("gradient mismatch in {}", failed.join(","))))
    }
}

pub fn params(cfg: &ConfigFile, baseline: Option<BaselineArg>) -> CmdResult {
    let entries: Vec<(String, ArchSpec)> = match baseline {
        Some(kind) => vec![("baseline".into(), baseline_spec(&cfg.scheme, kind))],
        None => SchemeNets::layout(&cfg.scheme).into_iter().map(|e| (e.name, e.spec)).collect(),
    };
    let mut total = 0;
    for (name, spec) in &entries {
        let count = spec.param_count();
        total += count;
        println!("{name:<14} {:<14} {count:>10}", format!("{:?}", spec.kind));
    }
    let pct = percent_of_reference(total);
    println!("total {total} parameters, {pct:.1}% of {REFERENCE_PARAM_COUNT} (≈{pct:.0}%)");
    if baseline.is_none() {
        println!("recovery threshold R = {}", cfg.scheme.recovery_threshold());
    }
    Ok(())
}
