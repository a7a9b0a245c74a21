//! The coded pipeline: encoder `E(α)`, the worker computations `H_S` and
//! `H_B`, the decoder, and the trainable model that ties them together.
//!
//! Worker computations:
//!
//! ```text
//! H_S(X̃) = Ω( V_0 + Σ_{p=1..P} V_p · X̃^{⊙p} )     V_p = Λ_p(X_1..X_K)
//! H_B(X̃) = activation-free stack applied to X̃ alone
//! ```
//!
//! Both keep `D(α) = H(E(α))` polynomial in `α`, of degree `G·P` and `G`.

mod train;

use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{CheckpointError, Error, Result};
use crate::lagrange::{EvalGrid, Interpolator};
use crate::nets::checkpoint::{self, Checkpoint, NetworkEntry};
use crate::nets::{ArchKind, ArchSpec, Network};
use crate::tensor::{Scalar, Tensor};

pub use train::{
    evaluate, evaluate_direct, train, BaselineModel, Classifier, EpochMetrics, TrainOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Learned matrix coefficients `V_p` from the dataset, degree `G·P`.
    Hs,
    /// Activation-free computation on the share only, degree `G`.
    Hb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchFamily {
    Mlp,
    Cl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    MasterEncodes,
    WorkersEncode,
}

/// How `V_p` meets `X̃^{⊙p}` in `H_S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combine {
    /// Standard matrix product.
    Matmul,
    /// Elementwise product (ablation).
    Hadamard,
}

fn parse_choice<T: Copy>(s: &str, what: &str, options: &[(&str, T)]) -> Result<T> {
    let key = s.trim().to_ascii_lowercase().replace('_', "-");
    options
        .iter()
        .find(|(name, _)| *name == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown {what} {s:?}; expected one of {}", names.join(", ")))
        })
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_choice(s, "variant", &[("hs", Variant::Hs), ("hb", Variant::Hb)])
    }
}

impl FromStr for ArchFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_choice(s, "architecture", &[("mlp", ArchFamily::Mlp), ("cl", ArchFamily::Cl), ("cnn", ArchFamily::Cl)])
    }
}

impl FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_choice(
            s,
            "placement",
            &[("master-encodes", Placement::MasterEncodes), ("workers-encode", Placement::WorkersEncode)],
        )
    }
}

/// Every tunable of a coded scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    /// Images per dataset (`K`).
    pub group_size: usize,
    /// Workers (`N`).
    pub workers: usize,
    /// Image side (`M`).
    pub image_side: usize,
    /// Classes (`V`).
    pub classes: usize,
    /// Encoder degree (`G`).
    pub encoder_degree: usize,
    /// Computation degree (`P`), used by `H_S` only.
    pub computation_degree: usize,
    pub variant: Variant,
    pub encoder_arch: ArchFamily,
    /// Architecture of the `Λ_p` nets (`H_S`) or of the worker stack (`H_B`).
    pub comp_arch: ArchFamily,
    pub placement: Placement,
    pub hidden_channels: usize,
    pub l1: usize,
    pub l2: usize,
    pub combine: Combine,
    /// Share all but the last layer among the nets of one coefficient bank.
    pub shared_trunk: bool,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            group_size: 2,
            workers: 3,
            image_side: 28,
            classes: 10,
            encoder_degree: 1,
            computation_degree: 1,
            variant: Variant::Hs,
            encoder_arch: ArchFamily::Mlp,
            comp_arch: ArchFamily::Mlp,
            placement: Placement::MasterEncodes,
            hidden_channels: crate::nets::DEFAULT_HIDDEN_CHANNELS,
            l1: crate::nets::DEFAULT_L1,
            l2: crate::nets::DEFAULT_L2,
            combine: Combine::Matmul,
            shared_trunk: false,
            seed: 0,
            epochs: 20,
            batch_size: 64,
            learning_rate: crate::optim::DEFAULT_LEARNING_RATE,
        }
    }
}

impl SchemeConfig {
    /// `R = G·P + 1` for `H_S`, `R = G + 1` for `H_B`.
    pub fn recovery_threshold(&self) -> usize {
        self.composite_degree() + 1
    }

    /// Degree in `α` of `D(α) = H(E(α))`.
    pub fn composite_degree(&self) -> usize {
        match self.variant {
            Variant::Hs => self.encoder_degree * self.computation_degree,
            Variant::Hb => self.encoder_degree,
        }
    }

    pub fn grid(&self) -> Result<EvalGrid> {
        EvalGrid::new(self.workers, self.group_size)
    }

    pub fn encoder_spec(&self) -> ArchSpec {
        let spec = match self.encoder_arch {
            ArchFamily::Mlp => ArchSpec::enc_mlp(self.group_size, self.image_side),
            ArchFamily::Cl => ArchSpec::enc_cl(self.group_size, self.image_side, self.hidden_channels),
        };
        ArchSpec { classes: self.classes, ..spec }
    }

    /// Architecture of the `Λ_p` (`H_S`) or the worker stack (`H_B`).
    pub fn computation_spec(&self) -> ArchSpec {
        let spec = match (self.variant, self.comp_arch) {
            (Variant::Hs, ArchFamily::Mlp) => ArchSpec::enc_mlp(self.group_size, self.image_side),
            (Variant::Hs, ArchFamily::Cl) => ArchSpec::enc_cl(self.group_size, self.image_side, self.hidden_channels),
            (Variant::Hb, ArchFamily::Mlp) => ArchSpec::hb_mlp(self.image_side, self.classes),
            (Variant::Hb, ArchFamily::Cl) => ArchSpec::hb_cnn(self.image_side, self.classes, self.hidden_channels),
        };
        ArchSpec { classes: self.classes, ..spec }.with_widths(self.l1, self.l2)
    }

    pub fn omega_spec(&self) -> ArchSpec {
        ArchSpec::base_mlp(self.image_side, self.classes).with_widths(self.l1, self.l2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.group_size == 0 {
            return bad("group_size (K) must be at least 1".into());
        }
        if self.workers == 0 || self.image_side == 0 || self.classes < 2 {
            return bad("workers, image_side must be positive and classes at least 2".into());
        }
        if self.encoder_degree == 0 {
            return bad("encoder_degree (G) must be at least 1".into());
        }
        if self.variant == Variant::Hs && self.computation_degree == 0 {
            return bad("computation_degree (P) must be at least 1 for H_S".into());
        }
        let r = self.recovery_threshold();
        if self.workers < r {
            return bad(format!("workers (N = {}) must be at least the recovery threshold R = {r}", self.workers));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        self.grid()?;
        self.encoder_spec().validate()?;
        self.computation_spec().validate()?;
        self.omega_spec().validate()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Network layout

/// `count` networks of one architecture producing `M×M` coefficients.
#[derive(Clone, Debug)]
pub struct CoefficientBank {
    trunk: Option<Network>,
    heads: Vec<Network>,
}

fn bank_layout(prefix: &str, spec: &ArchSpec, count: usize, shared: bool) -> Vec<NetworkEntry> {
    let layers = spec.layers().len();
    let mut out = Vec::new();
    let head_span = if shared && layers > 1 {
        out.push(NetworkEntry { name: format!("{prefix}.trunk"), spec: spec.clone(), span: [0, layers - 1] });
        [layers - 1, layers]
    } else {
        [0, layers]
    };
    for i in 0..count {
        out.push(NetworkEntry { name: format!("{prefix}.{i}"), spec: spec.clone(), span: head_span });
    }
    out
}

impl CoefficientBank {
    fn from_networks(nets: &mut std::vec::IntoIter<Network>, count: usize, shared: bool, layers: usize) -> Self {
        let trunk = if shared && layers > 1 { nets.next() } else { None };
        let heads = nets.take(count).collect();
        Self { trunk, heads }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    fn networks(&self) -> Vec<&Network> {
        self.trunk.iter().chain(self.heads.iter()).collect()
    }

    /// One `[B, M, M]` coefficient per head.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, images: Var) -> Result<Vec<Var>> {
        let h = match &self.trunk {
            Some(t) => t.forward(g, images)?,
            None => images,
        };
        self.heads.iter().map(|n| n.forward(g, h)).collect()
    }
}

#[derive(Clone, Debug)]
enum Computation {
    Hs { lambdas: CoefficientBank, omega: Network },
    Hb { net: Network },
}

/// The networks of one coded scheme; parameter values live in a separate
/// [`ParamStore`].
#[derive(Clone, Debug)]
pub struct SchemeNets {
    config: SchemeConfig,
    encoder: CoefficientBank,
    computation: Computation,
}

impl SchemeNets {
    /// Names, architectures and layer spans of every network, in build order.
    pub fn layout(config: &SchemeConfig) -> Vec<NetworkEntry> {
        let mut out = bank_layout("gamma", &config.encoder_spec(), config.encoder_degree + 1, config.shared_trunk);
        match config.variant {
            Variant::Hs => {
                out.extend(bank_layout(
                    "lambda",
                    &config.computation_spec(),
                    config.computation_degree + 1,
                    config.shared_trunk,
                ));
                let omega = config.omega_spec();
                let n = omega.layers().len();
                out.push(NetworkEntry { name: "omega".into(), spec: omega, span: [0, n] });
            }
            Variant::Hb => {
                let spec = config.computation_spec();
                let n = spec.layers().len();
                out.push(NetworkEntry { name: "hb".into(), spec, span: [0, n] });
            }
        }
        out
    }

    fn assemble(config: &SchemeConfig, nets: Vec<Network>) -> Self {
        let mut it = nets.into_iter();
        let enc_layers = config.encoder_spec().layers().len();
        let encoder =
            CoefficientBank::from_networks(&mut it, config.encoder_degree + 1, config.shared_trunk, enc_layers);
        let computation = match config.variant {
            Variant::Hs => {
                let layers = config.computation_spec().layers().len();
                let lambdas =
                    CoefficientBank::from_networks(&mut it, config.computation_degree + 1, config.shared_trunk, layers);
                Computation::Hs { lambdas, omega: it.next().expect("layout has omega") }
            }
            Variant::Hb => Computation::Hb { net: it.next().expect("layout has hb") },
        };
        Self { config: config.clone(), encoder, computation }
    }

    /// Fresh networks; each gets its own seed drawn from `config.seed`.
    pub fn build<T: Scalar>(config: &SchemeConfig, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
        let nets = Self::layout(config)
            .into_iter()
            .map(|e| Network::build_span(&e.spec, &e.name, e.span[0]..e.span[1], seeds.next_u64(), store))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(config, nets))
    }

    /// Bind to parameters already in `store`.
    pub fn attach<T: Scalar>(config: &SchemeConfig, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let nets = Self::layout(config)
            .into_iter()
            .map(|e| Network::attach(&e.spec, &e.name, e.span[0]..e.span[1], store))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(config, nets))
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn networks(&self) -> Vec<&Network> {
        let mut out = self.encoder.networks();
        match &self.computation {
            Computation::Hs { lambdas, omega } => {
                out.extend(lambdas.networks());
                out.push(omega);
            }
            Computation::Hb { net } => out.push(net),
        }
        out
    }

    pub fn encoder(&self) -> &CoefficientBank {
        &self.encoder
    }

    /// `Ω` for `H_S`, the worker stack for `H_B`.
    pub fn worker_network(&self) -> &Network {
        match &self.computation {
            Computation::Hs { omega, .. } => omega,
            Computation::Hb { net } => net,
        }
    }

    /// Check that `images` is `[B, K, M, M]` with finite pixels in `[0, 1]`.
    pub fn check_images<T: Scalar>(&self, images: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        let s = images.shape();
        if s.len() != 4 || s[1] != c.group_size || s[2] != c.image_side || s[3] != c.image_side || s[0] == 0 {
            return Err(Error::Input(format!(
                "expected images [B, {}, {}, {}], got {s:?}",
                c.group_size, c.image_side, c.image_side
            )));
        }
        if images.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Input("pixel values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `C_0..C_G` as graph nodes, each `[B, M, M]`.
    pub fn encoder_coefficients<T: Scalar>(&self, g: &mut Graph<'_, T>, images: Var) -> Result<Vec<Var>> {
        self.encoder.forward(g, images)
    }

    /// `V_0..V_P` for `H_S`; `None` for `H_B`.
    pub fn computation_coefficients<T: Scalar>(&self, g: &mut Graph<'_, T>, images: Var) -> Result<Option<Vec<Var>>> {
        match &self.computation {
            Computation::Hs { lambdas, .. } => lambdas.forward(g, images).map(Some),
            Computation::Hb { .. } => Ok(None),
        }
    }

    /// `E(α)` by Horner's rule.
    pub fn encode_at<T: Scalar>(&self, g: &mut Graph<'_, T>, coeffs: &[Var], alpha: f64) -> Result<Var> {
        horner_graph(g, coeffs, alpha)
    }

    /// `H(X̃)` on a batch of shares, `[B, M, M] -> [B, V]`.
    pub fn compute<T: Scalar>(&self, g: &mut Graph<'_, T>, share: Var, comp: Option<&[Var]>) -> Result<Var> {
        match &self.computation {
            Computation::Hs { omega, .. } => {
                let comp = comp.ok_or_else(|| Error::Config("H_S needs the V_p coefficients".into()))?;
                hs_graph(g, omega, share, comp, self.config.combine)
            }
            Computation::Hb { net } => net.forward(g, share),
        }
    }

    /// Logits `H(E(β_k))` for every `k`, each `[B, V]`.
    pub fn direct_logits<T: Scalar>(&self, g: &mut Graph<'_, T>, images: Var) -> Result<Vec<Var>> {
        let coeffs = self.encoder_coefficients(g, images)?;
        let comp = self.computation_coefficients(g, images)?;
        let betas = crate::lagrange::dataset_betas(self.config.group_size);
        betas
            .iter()
            .map(|&b| {
                let share = self.encode_at(g, &coeffs, b)?;
                self.compute(g, share, comp.as_deref())
            })
            .collect()
    }

    /// Training objective: mean over the batch of `Σ_k CE(H(E(β_k)), y_k)`.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, images: &Tensor<T>, labels: &[Vec<usize>]) -> Result<Var> {
        self.check_images(images)?;
        let k = self.config.group_size;
        if labels.len() != images.shape()[0] || labels.iter().any(|l| l.len() != k) {
            return Err(Error::Input(format!("labels must be [{}][{k}]", images.shape()[0])));
        }
        let x = g.input(images.clone())?;
        let logits = self.direct_logits(g, x)?;
        let mut total: Option<Var> = None;
        for (i, l) in logits.into_iter().enumerate() {
            let targets: Vec<usize> = labels.iter().map(|row| row[i]).collect();
            let ce = g.softmax_cross_entropy_labels(l, &targets)?;
            total = Some(match total {
                Some(t) => g.add(t, ce)?,
                None => ce,
            });
        }
        Ok(total.expect("K >= 1"))
    }
}

fn horner_graph<T: Scalar>(g: &mut Graph<'_, T>, coeffs: &[Var], alpha: f64) -> Result<Var> {
    let (&last, rest) = coeffs.split_last().ok_or_else(|| Error::Config("encoder has no coefficients".into()))?;
    let mut acc = last;
    for &c in rest.iter().rev() {
        acc = g.scale(acc, T::of(alpha))?;
        acc = g.add(acc, c)?;
    }
    Ok(acc)
}

fn hs_graph<T: Scalar>(g: &mut Graph<'_, T>, omega: &Network, share: Var, comp: &[Var], combine: Combine) -> Result<Var> {
    let (&bias, terms) = comp.split_first().ok_or_else(|| Error::Config("H_S needs V_0".into()))?;
    let mut s = bias;
    for (i, &v) in terms.iter().enumerate() {
        let p = i as u32 + 1;
        let power = if p == 1 { share } else { g.hadamard_power(share, p)? };
        let term = match combine {
            Combine::Matmul => g.bmm(v, power)?,
            Combine::Hadamard => g.mul(v, power)?,
        };
        s = g.add(s, term)?;
    }
    omega.forward(g, s)
}

// ---------------------------------------------------------------------------
// Messages between master and workers

/// A batch of encoded matrices for one worker, `[B, M, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedShare<T> {
    pub worker: usize,
    pub alpha: f64,
    pub matrix: Tensor<T>,
}

/// `V_0..V_P`, each `[B, M, M]` (`H_S` only).
#[derive(Clone, Debug, PartialEq)]
pub struct CompCoefficients<T> {
    pub matrices: Vec<Tensor<T>>,
}

/// One worker's output `D(α_n)` for a batch, `[B, V]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerResult {
    pub worker: usize,
    pub alpha: f64,
    pub output: Tensor<f64>,
    /// Simulated seconds until the master receives this result.
    pub latency: f64,
}

/// `E(α)` from precomputed coefficients, with the same arithmetic as the
/// training graph.
pub fn horner_share<T: Scalar>(coeffs: &[Tensor<T>], worker: usize, alpha: f64) -> Result<EncodedShare<T>> {
    let (last, rest) = coeffs.split_last().ok_or_else(|| Error::Config("encoder has no coefficients".into()))?;
    let a = T::of(alpha);
    let mut acc = last.clone();
    for c in rest.iter().rev() {
        if c.shape() != acc.shape() {
            return Err(Error::Shape(format!("coefficient shapes {:?} and {:?} differ", c.shape(), acc.shape())));
        }
        acc = acc.map(|v| v * a);
        acc.axpy(T::one(), c);
    }
    if !acc.is_finite() {
        return Err(Error::NonFinite { op: "encode" });
    }
    Ok(EncodedShare { worker, alpha, matrix: acc })
}

/// `H_S` on one share. `omega` must be an activation-free Base-MLP.
pub fn compute_hs<T: Scalar>(
    store: &ParamStore<T>,
    omega: &Network,
    share: &EncodedShare<T>,
    coeffs: Option<&CompCoefficients<T>>,
    combine: Combine,
) -> Result<Tensor<T>> {
    if omega.spec().kind != ArchKind::BaseMlp || omega.spec().activations_enabled {
        return Err(Error::Config(format!("H_S needs an activation-free base-mlp, got {:?}", omega.spec().kind)));
    }
    let coeffs = coeffs.ok_or_else(|| Error::Config("H_S needs the V_p coefficients".into()))?;
    let mut g = Graph::new(store);
    let x = g.input(share.matrix.clone())?;
    let comp = coeffs.matrices.iter().map(|m| g.input(m.clone())).collect::<Result<Vec<_>>>()?;
    let out = hs_graph(&mut g, omega, x, &comp, combine)?;
    Ok(g.value(out).clone())
}

/// `H_B` on one share; it sees nothing but the share.
pub fn compute_hb<T: Scalar>(store: &ParamStore<T>, hb: &Network, share: &EncodedShare<T>) -> Result<Tensor<T>> {
    if !matches!(hb.spec().kind, ArchKind::HbMlp | ArchKind::HbCnn) || hb.spec().activations_enabled {
        return Err(Error::Config(format!(
            "H_B needs an activation-free hb-mlp or hb-cnn, got {:?} (activations {})",
            hb.spec().kind,
            hb.spec().activations_enabled
        )));
    }
    let mut g = Graph::new(store);
    let x = g.input(share.matrix.clone())?;
    let out = hb.forward(&mut g, x)?;
    Ok(g.value(out).clone())
}

// ---------------------------------------------------------------------------
// Decoding

/// Decoder output for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoding {
    /// Workers whose results were interpolated, fastest first.
    pub used_workers: Vec<usize>,
    /// `D(β_k)` per `k`, each `[B, V]`.
    pub logits: Vec<Tensor<f64>>,
    /// Softmax of `logits`.
    pub probabilities: Vec<Tensor<f64>>,
    /// `labels[b][k]`.
    pub labels: Vec<Vec<usize>>,
}

fn softmax_rows(t: &Tensor<f64>) -> Tensor<f64> {
    let v = *t.shape().last().unwrap_or(&1);
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(v) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Interpolate `D` from the `threshold` fastest results (ties by worker
/// index) and classify at every `β`.
pub fn decode(results: &[WorkerResult], betas: &[f64], threshold: usize) -> Result<Decoding> {
    if results.len() < threshold {
        return Err(Error::Unrecoverable { required: threshold, available: results.len() });
    }
    let alphas: Vec<f64> = results.iter().map(|r| r.alpha).collect();
    crate::lagrange::check_distinct(&alphas).map_err(|e| Error::Input(format!("worker results: {e}")))?;
    let shape = results[0].output.shape().to_vec();
    if shape.len() != 2 || results.iter().any(|r| r.output.shape() != shape.as_slice()) {
        return Err(Error::Shape("worker outputs must all be [B, V]".into()));
    }
    if let Some(r) = results.iter().find(|r| !r.output.is_finite()) {
        return Err(Error::Input(format!("worker {} returned a non-finite output", r.worker)));
    }
    let mut order: Vec<&WorkerResult> = results.iter().collect();
    order.sort_by(|a, b| a.latency.total_cmp(&b.latency).then(a.worker.cmp(&b.worker)));
    order.truncate(threshold);

    let interp = Interpolator::new(&order.iter().map(|r| r.alpha).collect::<Vec<_>>())?;
    let values: Vec<&[f64]> = order.iter().map(|r| r.output.data()).collect();
    let logits: Vec<Tensor<f64>> =
        betas.iter().map(|&b| Tensor::new(shape.clone(), interp.eval(&values, b))).collect::<Result<_>>()?;
    let probabilities: Vec<Tensor<f64>> = logits.iter().map(softmax_rows).collect();
    let (batch, classes) = (shape[0], shape[1]);
    let labels = (0..batch)
        .map(|b| probabilities.iter().map(|p| argmax(&p.data()[b * classes..(b + 1) * classes])).collect())
        .collect();
    Ok(Decoding { used_workers: order.iter().map(|r| r.worker).collect(), logits, probabilities, labels })
}

// ---------------------------------------------------------------------------
// The model

/// A coded scheme with its parameters.
#[derive(Clone, Debug)]
pub struct CodedModel<T> {
    nets: SchemeNets,
    store: ParamStore<T>,
}

impl<T: Scalar> CodedModel<T> {
    pub fn new(config: &SchemeConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let nets = SchemeNets::build(config, &mut store)?;
        Ok(Self { nets, store })
    }

    pub fn from_parts(nets: SchemeNets, store: ParamStore<T>) -> Self {
        Self { nets, store }
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.nets.config
    }

    pub fn nets(&self) -> &SchemeNets {
        &self.nets
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Mutable parameters next to the (immutable) network structure.
    pub fn split_mut(&mut self) -> (&mut ParamStore<T>, &SchemeNets) {
        (&mut self.store, &self.nets)
    }

    pub fn cast<U: Scalar>(&self) -> CodedModel<U> {
        CodedModel { nets: self.nets.clone(), store: self.store.cast() }
    }

    pub fn param_count(&self) -> usize {
        crate::nets::count_params(&self.nets.networks(), &self.store).0
    }

    /// `C_0..C_G`, each `[B, M, M]`.
    pub fn encoder_coefficients(&self, images: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.nets.check_images(images)?;
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone())?;
        let c = self.nets.encoder_coefficients(&mut g, x)?;
        Ok(c.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Shares for the given worker indices, all from one set of `C_g`.
    pub fn encode(&self, images: &Tensor<T>, workers: &[usize]) -> Result<Vec<EncodedShare<T>>> {
        let alphas = crate::lagrange::worker_alphas(self.config().workers);
        if let Some(&bad) = workers.iter().find(|&&w| w >= alphas.len()) {
            return Err(Error::Input(format!("worker {bad} does not exist (N = {})", alphas.len())));
        }
        let coeffs = self.encoder_coefficients(images)?;
        workers.iter().map(|&w| horner_share(&coeffs, w, alphas[w])).collect()
    }

    /// `V_0..V_P` for `H_S`, `None` for `H_B`.
    pub fn computation_coefficients(&self, images: &Tensor<T>) -> Result<Option<CompCoefficients<T>>> {
        self.nets.check_images(images)?;
        if self.config().variant == Variant::Hb {
            return Ok(None);
        }
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone())?;
        let c = self.nets.computation_coefficients(&mut g, x)?.expect("H_S has coefficients");
        Ok(Some(CompCoefficients { matrices: c.into_iter().map(|v| g.value(v).clone()).collect() }))
    }

    /// What worker `share.worker` returns.
    pub fn worker_compute(&self, share: &EncodedShare<T>, comp: Option<&CompCoefficients<T>>) -> Result<Tensor<T>> {
        match &self.nets.computation {
            Computation::Hs { omega, .. } => compute_hs(&self.store, omega, share, comp, self.config().combine),
            Computation::Hb { net } => compute_hb(&self.store, net, share),
        }
    }

    /// `D(α) = H(E(α))` for an arbitrary `α`.
    pub fn composite(&self, images: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
        let coeffs = self.encoder_coefficients(images)?;
        let comp = self.computation_coefficients(images)?;
        let share = horner_share(&coeffs, usize::MAX, alpha)?;
        self.worker_compute(&share, comp.as_ref())
    }

    /// Training-path logits `H(E(β_k))`, one `[B, V]` tensor per `k`.
    pub fn direct_logits(&self, images: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.nets.check_images(images)?;
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone())?;
        let l = self.nets.direct_logits(&mut g, x)?;
        Ok(l.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Full inference path with every worker responding instantly; decodes
    /// from the `R` lowest-indexed workers.
    pub fn infer(&self, images: &Tensor<T>) -> Result<Decoding> {
        let c = self.config();
        let workers: Vec<usize> = (0..c.workers).collect();
        let shares = self.encode(images, &workers)?;
        let comp = self.computation_coefficients(images)?;
        let results = shares
            .iter()
            .map(|s| {
                Ok(WorkerResult {
                    worker: s.worker,
                    alpha: s.alpha,
                    output: self.worker_compute(s, comp.as_ref())?.cast(),
                    latency: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        decode(&results, &crate::lagrange::dataset_betas(c.group_size), c.recovery_threshold())
    }
}

/// The part of a model a worker needs: `Ω` for `H_S`, the stack for `H_B`.
#[derive(Clone, Debug)]
pub struct WorkerSlice<T> {
    config: SchemeConfig,
    net: Network,
    store: ParamStore<T>,
}

impl<T: Scalar> WorkerSlice<T> {
    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn compute(&self, share: &EncodedShare<T>, comp: Option<&CompCoefficients<T>>) -> Result<Tensor<T>> {
        match self.config.variant {
            Variant::Hs => compute_hs(&self.store, &self.net, share, comp, self.config.combine),
            Variant::Hb => compute_hb(&self.store, &self.net, share),
        }
    }
}

impl<T: Scalar> CodedModel<T> {
    /// Copy out the worker-side network and its parameters.
    pub fn worker_slice(&self) -> Result<WorkerSlice<T>> {
        let net = self.nets.worker_network();
        let mut store = ParamStore::new();
        for id in net.param_ids() {
            store.add(self.store.name(id), self.store.value(id).clone())?;
        }
        let span = net.span();
        let net = Network::attach(net.spec(), net.name(), span, &store)?;
        Ok(WorkerSlice { config: self.config().clone(), net, store })
    }
}

/// Metadata tag stored in checkpoint headers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckpointMeta {
    Coded { config: SchemeConfig },
    Baseline { spec: ArchSpec, seed: u64 },
}

impl CodedModel<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(CheckpointMeta::Coded { config: self.config().clone() })
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        checkpoint::save(path, meta, &self.nets.networks(), &self.store)
    }

    /// Rebuild from a checkpoint. With `config`, the stored architecture must
    /// match it exactly; without, the stored configuration is used.
    pub fn from_checkpoint(ckpt: Checkpoint, config: Option<&SchemeConfig>) -> Result<Self> {
        let stored = match serde_json::from_value::<CheckpointMeta>(ckpt.header.metadata.clone()) {
            Ok(CheckpointMeta::Coded { config }) => config,
            Ok(CheckpointMeta::Baseline { .. }) => {
                return Err(CheckpointError::ShapeMismatch("checkpoint holds a baseline, not a coded scheme".into()).into())
            }
            Err(e) => return Err(CheckpointError::Header(format!("metadata: {e}")).into()),
        };
        let config = config.unwrap_or(&stored);
        ckpt.expect_networks(&SchemeNets::layout(config))?;
        let nets = SchemeNets::attach(config, &ckpt.store)?;
        Ok(Self { nets, store: ckpt.store })
    }

    pub fn load(path: &Path, config: Option<&SchemeConfig>) -> Result<Self> {
        Self::from_checkpoint(checkpoint::load(path)?, config)
    }
}
