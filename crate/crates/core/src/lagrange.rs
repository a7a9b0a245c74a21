//! Lagrange interpolation over real evaluation points, and an exact Lagrange
//! coded computation (LCC) reference scheme.
//!
//! Decoding uses the second (true) barycentric form, which is backward stable
//! for evaluation; [`fit_coefficients`] exists for diagnostics only. All
//! arithmetic here is `f64` regardless of the precision used for training.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Minimum separation between evaluation points in a single interpolation.
pub const MIN_ALPHA_GAP: f64 = 1e-9;

/// Worker evaluation points `α_n = n / (N + 1)`, `n = 1..=N`.
pub fn worker_alphas(workers: usize) -> Vec<f64> {
    (1..=workers).map(|n| n as f64 / (workers + 1) as f64).collect()
}

/// Decode points `β_k = k / K`, `k = 1..=K`.
pub fn dataset_betas(datasets: usize) -> Vec<f64> {
    (1..=datasets).map(|k| k as f64 / datasets as f64).collect()
}

/// The fixed worker (α) and decode (β) grids of a deployment.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

impl EvalGrid {
    pub fn new(workers: usize, datasets: usize) -> Result<Self> {
        if workers == 0 || datasets == 0 {
            return Err(Error::Config(format!(
                "evaluation grid needs N >= 1 and K >= 1 (got N = {workers}, K = {datasets})"
            )));
        }
        let grid = Self { alphas: worker_alphas(workers), betas: dataset_betas(datasets) };
        check_distinct(&grid.alphas)?;
        check_distinct(&grid.betas)?;
        Ok(grid)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

/// Pairwise separation check (`>= MIN_ALPHA_GAP`) and finiteness.
pub fn check_distinct(points: &[f64]) -> Result<()> {
    if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::Input(format!("evaluation point {bad} is not finite")));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    for w in sorted.windows(2) {
        if w[1] - w[0] < MIN_ALPHA_GAP {
            return Err(Error::Input(format!(
                "evaluation points {} and {} are closer than {MIN_ALPHA_GAP:e}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Precomputed barycentric weights `w_j = 1 / Π_{i≠j} (α_j − α_i)`.
#[derive(Clone, Debug)]
pub struct Interpolator {
    alphas: Vec<f64>,
    weights: Vec<f64>,
}

impl Interpolator {
    pub fn new(alphas: &[f64]) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Input("interpolation needs at least one sample".into()));
        }
        check_distinct(alphas)?;
        let weights = alphas
            .iter()
            .enumerate()
            .map(|(j, &aj)| {
                let prod: f64 = alphas.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &ai)| aj - ai).product();
                1.0 / prod
            })
            .collect();
        Ok(Self { alphas: alphas.to_vec(), weights })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn degree(&self) -> usize {
        self.alphas.len() - 1
    }

    /// Lagrange basis values `ℓ_j(β)`; exactly the unit vector `e_j` when
    /// `β == α_j`.
    pub fn basis(&self, beta: f64) -> Vec<f64> {
        if let Some(j) = self.alphas.iter().position(|&a| a == beta) {
            let mut e = vec![0.0; self.alphas.len()];
            e[j] = 1.0;
            return e;
        }
        let terms: Vec<f64> = self.alphas.iter().zip(&self.weights).map(|(&a, &w)| w / (beta - a)).collect();
        let denom: f64 = terms.iter().sum();
        terms.into_iter().map(|t| t / denom).collect()
    }

    /// Evaluate the interpolant through `(α_j, values[j])` at `β`.
    pub fn eval(&self, values: &[&[f64]], beta: f64) -> Vec<f64> {
        assert_eq!(values.len(), self.alphas.len(), "one value per sample point");
        let basis = self.basis(beta);
        let mut out = vec![0.0; values[0].len()];
        for (l, v) in basis.iter().zip(values) {
            if *l == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(v.iter()) {
                *o += l * x;
            }
        }
        out
    }
}

/// `(α, value)` pair; values are vectors or matrices, all of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoint {
    pub alpha: f64,
    pub value: Tensor<f64>,
}

impl SamplePoint {
    pub fn new(alpha: f64, value: Tensor<f64>) -> Self {
        Self { alpha, value }
    }
}

fn validate_samples(samples: &[SamplePoint]) -> Result<Interpolator> {
    if samples.is_empty() {
        return Err(Error::Input("interpolation needs R >= 1 samples".into()));
    }
    let shape = samples[0].value.shape();
    if let Some(s) = samples.iter().find(|s| s.value.shape() != shape) {
        return Err(Error::Shape(format!(
            "sample values must share one shape: {shape:?} vs {:?}",
            s.value.shape()
        )));
    }
    let alphas: Vec<f64> = samples.iter().map(|s| s.alpha).collect();
    Interpolator::new(&alphas)
}

/// Value at `beta` of the unique degree-(R−1) polynomial through `samples`.
pub fn barycentric_eval(samples: &[SamplePoint], beta: f64) -> Result<Tensor<f64>> {
    let interp = validate_samples(samples)?;
    let values: Vec<&[f64]> = samples.iter().map(|s| s.value.data()).collect();
    Tensor::new(samples[0].value.shape().to_vec(), interp.eval(&values, beta))
}

/// Monomial coefficients `[c_0, …, c_{R−1}]` of the interpolant, via Newton
/// divided differences expanded into the power basis.
pub fn fit_coefficients(samples: &[SamplePoint]) -> Result<Vec<Tensor<f64>>> {
    validate_samples(samples)?;
    let r = samples.len();
    let shape = samples[0].value.shape().to_vec();
    let len = samples[0].value.len();
    let alphas: Vec<f64> = samples.iter().map(|s| s.alpha).collect();

    // Divided-difference table, computed in place column by column.
    let mut dd: Vec<Vec<f64>> = samples.iter().map(|s| s.value.data().to_vec()).collect();
    for order in 1..r {
        for i in (order..r).rev() {
            let denom = alphas[i] - alphas[i - order];
            for e in 0..len {
                dd[i][e] = (dd[i][e] - dd[i - 1][e]) / denom;
            }
        }
    }

    // Horner-style expansion of the Newton form.
    let mut poly: Vec<Vec<f64>> = vec![dd[r - 1].clone()];
    for j in (0..r - 1).rev() {
        let mut next = vec![vec![0.0; len]; poly.len() + 1];
        for (deg, c) in poly.iter().enumerate() {
            for e in 0..len {
                next[deg + 1][e] += c[e];
                next[deg][e] -= alphas[j] * c[e];
            }
        }
        for e in 0..len {
            next[0][e] += dd[j][e];
        }
        poly = next;
    }
    poly.into_iter().map(|c| Tensor::new(shape.clone(), c)).collect()
}

/// Horner evaluation of `Σ_g coeffs[g] x^g`.
pub fn horner(coeffs: &[Tensor<f64>], x: f64) -> Tensor<f64> {
    let mut acc = coeffs.last().expect("at least one coefficient").clone();
    for c in coeffs.iter().rev().skip(1) {
        for (a, &v) in acc.data_mut().iter_mut().zip(c.data()) {
            *a = *a * x + v;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Exact LCC reference
// ---------------------------------------------------------------------------

/// A polynomial map on square matrices, applied by LCC workers.
pub trait MatrixPolynomial {
    fn degree(&self) -> usize;
    fn apply(&self, x: &Tensor<f64>) -> Tensor<f64>;
}

/// `f(X) = Xᵀ X`, of degree 2.
#[derive(Clone, Copy, Debug, Default)]
pub struct Gram;

impl MatrixPolynomial for Gram {
    fn degree(&self) -> usize {
        2
    }

    fn apply(&self, x: &Tensor<f64>) -> Tensor<f64> {
        let m = x.shape()[0];
        let mut out = Tensor::zeros(&[m, m]);
        gemm(true, false, m, m, m, x.data(), x.data(), 0.0, out.data_mut());
        out
    }
}

#[derive(Clone, Debug)]
pub struct LccOutcome {
    /// Recovered `f(X_k)` for every `k`.
    pub results: Vec<Tensor<f64>>,
    /// Worker indices (0-based) whose outputs were interpolated.
    pub used_workers: Vec<usize>,
    pub recovery_threshold: usize,
}

/// Exact LCC: Lagrange-encode the dataset through `(β_k, X_k)`, let every
/// surviving worker apply `f` to its share `u(α_n)`, and decode from the first
/// `R = (K − 1)·deg f + 1` survivors.
pub fn lcc_reference_run(
    dataset: &[Tensor<f64>],
    f: &dyn MatrixPolynomial,
    workers: usize,
    dropped: &[usize],
) -> Result<LccOutcome> {
    let k = dataset.len();
    if k == 0 {
        return Err(Error::Input("LCC needs at least one input matrix".into()));
    }
    let shape = dataset[0].shape();
    if shape.len() != 2 || shape[0] != shape[1] || dataset.iter().any(|x| x.shape() != shape) {
        return Err(Error::Shape("LCC inputs must be square matrices of one size".into()));
    }
    if let Some(&bad) = dropped.iter().find(|&&d| d >= workers) {
        return Err(Error::Input(format!("dropped worker {bad} does not exist (N = {workers})")));
    }
    let required = (k - 1) * f.degree() + 1;
    let survivors: Vec<usize> = (0..workers).filter(|n| !dropped.contains(n)).collect();
    if survivors.len() < required {
        return Err(Error::Unrecoverable { required, available: survivors.len() });
    }

    let betas = dataset_betas(k);
    let alphas = worker_alphas(workers);
    let encoder = Interpolator::new(&betas)?;
    let inputs: Vec<&[f64]> = dataset.iter().map(|x| x.data()).collect();

    let used: Vec<usize> = survivors[..required].to_vec();
    let outputs: Vec<Tensor<f64>> = used
        .iter()
        .map(|&n| {
            let share = Tensor::new(shape.to_vec(), encoder.eval(&inputs, alphas[n]))?;
            Ok(f.apply(&share))
        })
        .collect::<Result<_>>()?;

    let used_alphas: Vec<f64> = used.iter().map(|&n| alphas[n]).collect();
    let decoder = Interpolator::new(&used_alphas)?;
    let values: Vec<&[f64]> = outputs.iter().map(|t| t.data()).collect();
    let out_shape = outputs[0].shape().to_vec();
    let results = betas
        .iter()
        .map(|&b| Tensor::new(out_shape.clone(), decoder.eval(&values, b)))
        .collect::<Result<_>>()?;
    Ok(LccOutcome { results, used_workers: used, recovery_threshold: required })
}
