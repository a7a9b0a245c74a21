//! Simulated `N`-worker inference with stragglers and failures.
//!
//! Latencies are sampled, not measured, so runs are reproducible; the
//! master decodes from the `R` survivors with the smallest sampled latency.
//! Workers run on scoped threads in-process, or behind loopback TCP
//! sockets ([`remote`]).

pub mod remote;
pub mod wire;

use std::io::Write;
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::lagrange::{dataset_betas, worker_alphas};
use crate::scheme::{decode, horner_share, CodedModel, EncodedShare, Placement, WorkerResult, WorkerSlice};
use crate::tensor::Tensor;

pub use remote::{serve_worker, spawn_worker, RemotePool, WorkerHandle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyDistribution {
    /// Worker `n` always takes `latencies[n % len]` (0 when empty).
    Deterministic,
    /// `Exp(rate)`.
    Exponential,
    /// `shift + Exp(rate)`.
    ShiftedExponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StragglerModel {
    pub distribution: LatencyDistribution,
    pub latencies: Vec<f64>,
    pub rate: f64,
    pub shift: f64,
    /// Per worker and batch, the chance that it never responds.
    pub failure_prob: f64,
    pub seed: u64,
}

impl Default for StragglerModel {
    fn default() -> Self {
        Self {
            distribution: LatencyDistribution::Deterministic,
            latencies: Vec::new(),
            rate: 1.0,
            shift: 0.0,
            failure_prob: 0.0,
            seed: 0,
        }
    }
}

impl StragglerModel {
    pub fn deterministic(latencies: Vec<f64>) -> Self {
        Self { latencies, ..Self::default() }
    }

    pub fn exponential(rate: f64, seed: u64) -> Self {
        Self { distribution: LatencyDistribution::Exponential, rate, seed, ..Self::default() }
    }

    pub fn shifted_exponential(shift: f64, rate: f64, seed: u64) -> Self {
        Self { distribution: LatencyDistribution::ShiftedExponential, shift, rate, seed, ..Self::default() }
    }

    pub fn with_failures(mut self, failure_prob: f64) -> Self {
        self.failure_prob = failure_prob;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.failure_prob) {
            return Err(Error::Config(format!("failure_prob must lie in [0, 1), got {}", self.failure_prob)));
        }
        match self.distribution {
            LatencyDistribution::Deterministic => {
                if self.latencies.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err(Error::Config("deterministic latencies must be finite and non-negative".into()));
                }
            }
            LatencyDistribution::Exponential | LatencyDistribution::ShiftedExponential => {
                if !(self.rate.is_finite() && self.rate > 0.0) {
                    return Err(Error::Config(format!("rate must be positive, got {}", self.rate)));
                }
                if !(self.shift.is_finite() && self.shift >= 0.0) {
                    return Err(Error::Config(format!("shift must be non-negative, got {}", self.shift)));
                }
            }
        }
        Ok(())
    }

    /// Latency of every worker for one batch; `None` for a failed worker.
    /// Each batch draws from its own stream, so the result does not depend on
    /// which batches were sampled before.
    pub fn sample(&self, batch: u64, workers: usize) -> Vec<Option<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(batch);
        let exp = Exp::new(self.rate.max(f64::MIN_POSITIVE)).expect("positive rate");
        (0..workers)
            .map(|n| {
                let failed = rng.gen::<f64>() < self.failure_prob;
                let latency = match self.distribution {
                    LatencyDistribution::Deterministic => {
                        if self.latencies.is_empty() {
                            0.0
                        } else {
                            self.latencies[n % self.latencies.len()]
                        }
                    }
                    LatencyDistribution::Exponential => exp.sample(&mut rng),
                    LatencyDistribution::ShiftedExponential => self.shift + exp.sample(&mut rng),
                };
                (!failed).then_some(latency)
            })
            .collect()
    }
}

/// The `r`-th smallest value (1-based), or `None` with fewer than `r`.
pub fn order_statistic(latencies: &[f64], r: usize) -> Option<f64> {
    if r == 0 || latencies.len() < r {
        return None;
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[r - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    /// Sampled latency per worker; `None` if it failed.
    pub latencies: Vec<Option<f64>>,
    /// Workers whose results reached the master.
    pub responding: Vec<usize>,
    /// The `R` results used for decoding, fastest first.
    pub chosen: Vec<usize>,
    /// `R`-th order statistic of the responding latencies.
    pub decode_latency: Option<f64>,
    /// Slowest responding worker.
    pub max_latency: Option<f64>,
    /// `labels[b][k]`, absent when the batch was unrecoverable.
    pub labels: Option<Vec<Vec<usize>>>,
    pub truth: Vec<Vec<usize>>,
    pub correct: usize,
}

impl BatchRecord {
    pub fn recovered(&self) -> bool {
        self.labels.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub batches: usize,
    pub unrecoverable_batches: usize,
    pub images: usize,
    pub correct: usize,
    /// Unrecovered images count as misses.
    pub accuracy: f64,
    pub mean_decode_latency: Option<f64>,
    pub p95_decode_latency: Option<f64>,
    /// Wall-clock time, left out of the serialized report so that seeded
    /// runs produce identical files.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub records: Vec<BatchRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum ReportLine<'a> {
    Batch(&'a BatchRecord),
    Summary(&'a RunSummary),
}

impl RunReport {
    /// Labels of every recovered batch, `None` for unrecovered ones.
    pub fn labels(&self) -> Vec<Option<Vec<Vec<usize>>>> {
        self.records.iter().map(|r| r.labels.clone()).collect()
    }

    /// One JSON object per batch, then one summary object.
    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        let line = |v: &ReportLine| serde_json::to_string(v).map_err(|e| Error::Input(e.to_string()));
        for r in &self.records {
            writeln!(w, "{}", line(&ReportLine::Batch(r))?)?;
        }
        writeln!(w, "{}", line(&ReportLine::Summary(&self.summary))?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    /// Groups of `K` images per batch.
    pub batch_groups: usize,
    pub max_batches: Option<usize>,
    pub placement: Placement,
}

impl SimOptions {
    pub fn new(batch_groups: usize, placement: Placement) -> Self {
        Self { batch_groups, max_batches: None, placement }
    }
}

pub enum Transport {
    InProcess,
    Socket(RemotePool),
}

fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Some(v[idx])
}

/// Worker outputs for the live workers of one batch, computed in-process.
fn run_in_process(
    model: &CodedModel<f32>,
    slice: &WorkerSlice<f32>,
    images: &Tensor<f32>,
    live: &[usize],
    placement: Placement,
) -> Result<Vec<Option<Tensor<f32>>>> {
    let alphas = worker_alphas(model.config().workers);
    match placement {
        Placement::MasterEncodes => {
            let coeffs = model.encoder_coefficients(images)?;
            let comp = model.computation_coefficients(images)?;
            let shares: Vec<EncodedShare<f32>> =
                live.iter().map(|&n| horner_share(&coeffs, n, alphas[n])).collect::<Result<_>>()?;
            thread::scope(|s| {
                let handles: Vec<_> = shares.iter().map(|sh| s.spawn(|| slice.compute(sh, comp.as_ref()))).collect();
                handles.into_iter().map(|h| h.join().expect("worker thread panicked").map(Some)).collect()
            })
        }
        Placement::WorkersEncode => thread::scope(|s| {
            let handles: Vec<_> = live
                .iter()
                .map(|&n| {
                    let alpha = alphas[n];
                    s.spawn(move || {
                        let coeffs = model.encoder_coefficients(images)?;
                        let comp = model.computation_coefficients(images)?;
                        let share = horner_share(&coeffs, n, alpha)?;
                        slice.compute(&share, comp.as_ref())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker thread panicked").map(Some)).collect()
        }),
    }
}

/// Classify `set` in batches through the simulated cluster.
pub fn run_inference(
    model: &CodedModel<f32>,
    set: &ImageSet,
    straggler: &StragglerModel,
    opts: &SimOptions,
    transport: &mut Transport,
) -> Result<RunReport> {
    run_inference_with(model, set, straggler, opts, transport, |_, _| {})
}

/// As [`run_inference`], calling `after_batch(index, transport)` after each
/// batch (used to inject faults mid-run).
pub fn run_inference_with(
    model: &CodedModel<f32>,
    set: &ImageSet,
    straggler: &StragglerModel,
    opts: &SimOptions,
    transport: &mut Transport,
    mut after_batch: impl FnMut(usize, &mut Transport),
) -> Result<RunReport> {
    let c = model.config().clone();
    straggler.validate()?;
    if opts.batch_groups == 0 {
        return Err(Error::Config("batch_groups must be at least 1".into()));
    }
    if let Transport::Socket(pool) = transport {
        if opts.placement == Placement::WorkersEncode {
            return Err(Error::Config("socket transport supports master-encodes placement only".into()));
        }
        if pool.len() != c.workers {
            return Err(Error::Config(format!("{} endpoints for N = {} workers", pool.len(), c.workers)));
        }
    }
    let r = c.recovery_threshold();
    let betas = dataset_betas(c.group_size);
    let alphas = worker_alphas(c.workers);
    let slice = model.worker_slice()?;
    let groups = set.sequential_groups(c.group_size)?;
    let start = Instant::now();
    let mut records = Vec::new();

    for (b, chunk) in groups.chunks(opts.batch_groups).enumerate() {
        if opts.max_batches.is_some_and(|m| b >= m) {
            break;
        }
        let (images, truth) = set.grouped(chunk)?;
        let latencies = straggler.sample(b as u64, c.workers);
        let live: Vec<usize> = (0..c.workers).filter(|&n| latencies[n].is_some()).collect();

        let outputs = match transport {
            Transport::InProcess => run_in_process(model, &slice, &images, &live, opts.placement)?,
            Transport::Socket(pool) => {
                let coeffs = model.encoder_coefficients(&images)?;
                let comp = model.computation_coefficients(&images)?;
                let shares: Vec<EncodedShare<f32>> =
                    live.iter().map(|&n| horner_share(&coeffs, n, alphas[n])).collect::<Result<_>>()?;
                let refs: Vec<&EncodedShare<f32>> = shares.iter().collect();
                pool.dispatch(b as u32, &refs, comp.as_ref(), c.classes)
            }
        };
        let results: Vec<WorkerResult> = live
            .iter()
            .zip(outputs)
            .filter_map(|(&n, out)| {
                out.map(|t| WorkerResult {
                    worker: n,
                    alpha: alphas[n],
                    output: t.cast(),
                    latency: latencies[n].expect("live worker"),
                })
            })
            .collect();
        let responding: Vec<usize> = results.iter().map(|r| r.worker).collect();
        let resp_lat: Vec<f64> = results.iter().map(|r| r.latency).collect();
        let max_latency = resp_lat.iter().copied().reduce(f64::max);

        let record = match decode(&results, &betas, r) {
            Ok(d) => {
                let correct = d
                    .labels
                    .iter()
                    .zip(&truth)
                    .map(|(p, t)| p.iter().zip(t).filter(|(a, b)| a == b).count())
                    .sum();
                BatchRecord {
                    batch: b,
                    latencies,
                    responding,
                    chosen: d.used_workers,
                    decode_latency: order_statistic(&resp_lat, r),
                    max_latency,
                    labels: Some(d.labels),
                    truth,
                    correct,
                }
            }
            Err(Error::Unrecoverable { .. }) => BatchRecord {
                batch: b,
                latencies,
                responding,
                chosen: Vec::new(),
                decode_latency: None,
                max_latency,
                labels: None,
                truth,
                correct: 0,
            },
            Err(e) => return Err(e),
        };
        records.push(record);
        after_batch(b, transport);
    }

    let images: usize = records.iter().map(|r| r.truth.len() * c.group_size).sum();
    let correct: usize = records.iter().map(|r| r.correct).sum();
    let decode_lat: Vec<f64> = records.iter().filter_map(|r| r.decode_latency).collect();
    let summary = RunSummary {
        batches: records.len(),
        unrecoverable_batches: records.iter().filter(|r| !r.recovered()).count(),
        images,
        correct,
        accuracy: if images == 0 { 0.0 } else { correct as f64 / images as f64 },
        mean_decode_latency: (!decode_lat.is_empty()).then(|| decode_lat.iter().sum::<f64>() / decode_lat.len() as f64),
        p95_decode_latency: percentile(&decode_lat, 0.95),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(RunReport { records, summary })
}
