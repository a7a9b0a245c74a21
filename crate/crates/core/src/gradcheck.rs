//! Central finite-difference check of backpropagated gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::Serialize;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::scheme::{ArchFamily, SchemeConfig, SchemeNets, Variant};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Central-difference step. Small enough that a probe rarely straddles
    /// a ReLU kink in the convolutional encoders.
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per parameter tensor; smaller tensors are checked exhaustively.
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { step: 1e-6, tolerance: 1e-4, samples_per_param: 16, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub worst_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub worst_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_error <= self.tolerance
    }
}

/// Compare backprop against `(L(p+h) - L(p-h)) / 2h` on sampled entries of
/// every parameter. Error per entry is `|analytic - fd| / max(1, |fd|)`.
///
/// `build` must construct the same scalar loss on each call.
pub fn gradcheck<F>(store: &mut ParamStore<f64>, build: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = grads.dense(id);
        let n = analytic.len();
        let entries: Vec<usize> = if n <= opts.samples_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.samples_per_param).into_vec()
        };
        let mut worst: f64 = 0.0;
        for &e in &entries {
            let original = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = original + opts.step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[e] = original - opts.step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[e] = original;
            let fd = (plus - minus) / (2.0 * opts.step);
            let err = (analytic.data()[e] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
        params.push(ParamCheck { name: store.name(id).to_string(), checked: entries.len(), worst_rel_error: worst });
    }
    Ok(GradcheckReport {
        worst_rel_error: params.iter().map(|p| p.worst_rel_error).fold(0.0, f64::max),
        checked: params.iter().map(|p| p.checked).sum(),
        tolerance: opts.tolerance,
        params,
    })
}

// ---------------------------------------------------------------------------
// Named checks over every differentiable op and the training pipeline

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let u = Uniform::new(lo, hi);
    Tensor::from_fn(shape, |_| u.sample(rng))
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output entry matters.
fn project(g: &mut Graph<'_, f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let n = g.value(out).len();
    let row = g.reshape(out, &[1, n])?;
    let w = g.input(weights.clone().reshape(&[n, 1])?)?;
    let b = g.input(Tensor::zeros(&[1]))?;
    let s = g.matmul_bias(row, w, b)?;
    g.reshape(s, &[])
}

type OpBuilder = Box<dyn Fn(&mut Graph<'_, f64>, &[ParamId]) -> Result<Var>>;

fn op_case(
    name: &str,
    operands: Vec<Tensor<f64>>,
    out_len: usize,
    op: OpBuilder,
    rng: &mut ChaCha8Rng,
    opts: &GradcheckOptions,
) -> Result<(String, GradcheckReport)> {
    let mut store = ParamStore::new();
    let ids: Vec<_> =
        operands.into_iter().enumerate().map(|(i, t)| store.add(format!("{name}.{i}"), t)).collect::<Result<_>>()?;
    let weights = random(&[out_len], rng, -1.0, 1.0);
    let report = gradcheck(
        &mut store,
        |g| {
            let out = op(g, &ids)?;
            project(g, out, &weights)
        },
        opts,
    )?;
    Ok((name.to_string(), report))
}

/// Gradcheck of every op type, then of the full training loss for small
/// `H_S` and `H_B` schemes (MLP at `M = 8`, convolutional at `M = 17`).
pub fn op_suite(opts: &GradcheckOptions) -> Result<Vec<(String, GradcheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let r = &mut rng;
    let mut out = Vec::new();

    let (x, w, b) = (random(&[3, 4], r, -1.0, 1.0), random(&[4, 5], r, -1.0, 1.0), random(&[5], r, -1.0, 1.0));
    out.push(op_case(
        "matmul_bias",
        vec![x, w, b],
        15,
        Box::new(|g, p| {
            let (x, w, b) = (g.param(p[0]), g.param(p[1]), g.param(p[2]));
            g.matmul_bias(x, w, b)
        }),
        r,
        opts,
    )?);
    for d in [1usize, 2] {
        let side = 2 * d + 3;
        let (x, k) = (random(&[2, 2, side, side], r, -1.0, 1.0), random(&[3, 2, 3, 3], r, -1.0, 1.0));
        out.push(op_case(
            &format!("conv2d_dilated(d={d})"),
            vec![x, k],
            2 * 3 * side * side,
            Box::new(move |g, p| {
                let (x, k) = (g.param(p[0]), g.param(p[1]));
                g.conv2d_dilated(x, k, d)
            }),
            r,
            opts,
        )?);
    }
    // keep entries away from the kink at 0
    let x = random(&[12], r, 0.1, 1.0).map(|v| if v > 0.55 { v } else { -v });
    out.push(op_case("relu", vec![x], 12, Box::new(|g, p| {
        let x = g.param(p[0]);
        g.relu(x)
    }), r, opts)?);
    out.push(op_case("hadamard_power", vec![random(&[2, 3, 3], r, -1.0, 1.0)], 18, Box::new(|g, p| {
        let x = g.param(p[0]);
        g.hadamard_power(x, 3)
    }), r, opts)?);
    out.push(op_case("mul", vec![random(&[6], r, -1.0, 1.0), random(&[6], r, -1.0, 1.0)], 6, Box::new(|g, p| {
        let (a, b) = (g.param(p[0]), g.param(p[1]));
        g.mul(a, b)
    }), r, opts)?);
    out.push(op_case("add", vec![random(&[6], r, -1.0, 1.0), random(&[6], r, -1.0, 1.0)], 6, Box::new(|g, p| {
        let (a, b) = (g.param(p[0]), g.param(p[1]));
        g.add(a, b)
    }), r, opts)?);
    out.push(op_case("scale", vec![random(&[6], r, -1.0, 1.0)], 6, Box::new(|g, p| {
        let x = g.param(p[0]);
        g.scale(x, -0.7)
    }), r, opts)?);
    out.push(op_case(
        "bmm",
        vec![random(&[2, 3, 4], r, -1.0, 1.0), random(&[2, 4, 2], r, -1.0, 1.0)],
        12,
        Box::new(|g, p| {
            let (a, b) = (g.param(p[0]), g.param(p[1]));
            g.bmm(a, b)
        }),
        r,
        opts,
    )?);
    out.push(op_case("reshape", vec![random(&[2, 3], r, -1.0, 1.0)], 6, Box::new(|g, p| {
        let x = g.param(p[0]);
        g.reshape(x, &[3, 2])
    }), r, opts)?);
    {
        let mut store = ParamStore::new();
        let id = store.add("logits", random(&[4, 5], r, -2.0, 2.0))?;
        let labels = [0usize, 3, 4, 1];
        let report = gradcheck(
            &mut store,
            |g| {
                let l = g.param(id);
                g.softmax_cross_entropy_labels(l, &labels)
            },
            opts,
        )?;
        out.push(("softmax_cross_entropy".to_string(), report));
    }

    let pipelines = [
        ("forward_train(hs, mlp, M=8)", Variant::Hs, ArchFamily::Mlp, 8, 2),
        ("forward_train(hb, mlp, M=8)", Variant::Hb, ArchFamily::Mlp, 8, 1),
        ("forward_train(hs, cl, M=17)", Variant::Hs, ArchFamily::Cl, 17, 2),
        ("forward_train(hb, cl, M=17)", Variant::Hb, ArchFamily::Cl, 17, 1),
    ];
    for (name, variant, arch, side, p) in pipelines {
        let config = SchemeConfig {
            group_size: 2,
            workers: 5,
            image_side: side,
            classes: 4,
            encoder_degree: 2,
            computation_degree: p,
            variant,
            encoder_arch: arch,
            comp_arch: arch,
            hidden_channels: 2,
            l1: 6,
            l2: 5,
            seed: opts.seed,
            ..SchemeConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let nets = SchemeNets::build(&config, &mut store)?;
        let images = random(&[2, 2, side, side], r, 0.0, 1.0);
        let labels = vec![vec![1, 3], vec![0, 2]];
        let report = gradcheck(&mut store, |g| nets.loss(g, &images, &labels), opts)?;
        out.push((name.to_string(), report));
    }
    Ok(out)
}
