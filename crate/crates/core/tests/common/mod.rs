//! Straight-line 64-bit reference implementations and small fixtures shared
//! by the integration tests. Nothing here calls the library's kernels.

#![allow(dead_code)]

use lcc_core::nets::{ArchSpec, LayerSpec};
use lcc_core::scheme::{ArchFamily, SchemeConfig, Variant};
use lcc_core::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Random pixels in `[0, 1]`, `[B, K, M, M]`.
pub fn images<T: lcc_core::Scalar>(seed: u64, batch: usize, k: usize, side: usize) -> Tensor<T> {
    let mut r = rng(seed);
    Tensor::from_fn(&[batch, k, side, side], |_| T::of(r.gen_range(0.0..=1.0)))
}

/// `max |a - b| / max(1e-300, max |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    diff / scale
}

/// Small MLP scheme with two more workers than its recovery threshold.
pub fn tiny_mlp(variant: Variant, k: usize, g: usize, p: usize) -> SchemeConfig {
    let mut c = SchemeConfig {
        group_size: k,
        workers: 6,
        image_side: 6,
        classes: 4,
        encoder_degree: g,
        computation_degree: p,
        variant,
        l1: 7,
        l2: 5,
        ..SchemeConfig::default()
    };
    c.workers = c.recovery_threshold() + 2;
    c
}

pub fn tiny_cl(variant: Variant, k: usize, g: usize, p: usize) -> SchemeConfig {
    SchemeConfig {
        image_side: 17,
        hidden_channels: 2,
        encoder_arch: ArchFamily::Cl,
        comp_arch: ArchFamily::Cl,
        ..tiny_mlp(variant, k, g, p)
    }
}

// ---------------------------------------------------------------------------
// Reference kernels, all on plain row-major `Vec<f64>`.

/// `x [b, i] · w [i, o] + bias [o]`.
pub fn dense(x: &[f64], b: usize, w: &[f64], i: usize, o: usize, bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; b * o];
    for r in 0..b {
        for c in 0..o {
            let mut acc = bias[c];
            for t in 0..i {
                acc += x[r * i + t] * w[t * o + c];
            }
            out[r * o + c] = acc;
        }
    }
    out
}

/// Zero-padded ("same") dilated 3x3 convolution by nested loops.
/// `x [b, cin, h, w]`, `k [cout, cin, 3, 3]`.
pub fn conv(x: &[f64], b: usize, cin: usize, h: usize, w: usize, k: &[f64], cout: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * cout * h * w];
    for n in 0..b {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + (ky as isize - 1) * d as isize;
                                let sx = xx as isize + (kx as isize - 1) * d as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xv = x[((n * cin + ci) * h + sy as usize) * w + sx as usize];
                                acc += xv * k[((co * cin + ci) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    out[((n * cout + co) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

/// `a [m, m] · b [m, m]` for each of `batch` pairs.
pub fn bmm(a: &[f64], b: &[f64], batch: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * m];
    for n in 0..batch {
        let off = n * m * m;
        for r in 0..m {
            for c in 0..m {
                let mut acc = 0.0;
                for t in 0..m {
                    acc += a[off + r * m + t] * b[off + t * m + c];
                }
                out[off + r * m + c] = acc;
            }
        }
    }
    out
}

fn param(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    let id = store.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    store.value(id).data().to_vec()
}

/// Forward pass of network `name` with architecture `spec`, reading weights
/// by their canonical names. Input is `batch` rows of whatever the first
/// layer expects; output is flat.
pub fn network(store: &ParamStore<f64>, name: &str, spec: &ArchSpec, input: &[f64], batch: usize) -> Vec<f64> {
    let layers = spec.layers();
    let side = spec.side;
    let mut x = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        x = match *layer {
            LayerSpec::Dense { inputs, outputs } => dense(
                &x,
                batch,
                &param(store, &format!("{name}.{i}.weight")),
                inputs,
                outputs,
                &param(store, &format!("{name}.{i}.bias")),
            ),
            LayerSpec::Conv { in_channels, out_channels, dilation } => conv(
                &x,
                batch,
                in_channels,
                side,
                side,
                &param(store, &format!("{name}.{i}.kernel")),
                out_channels,
                dilation,
            ),
        };
        if spec.activations_enabled && i + 1 < layers.len() {
            for v in &mut x {
                *v = v.max(0.0);
            }
        }
    }
    x
}

/// `Σ_j values_j Π_{m≠j} (x - a_m)/(a_j - a_m)`, the textbook Lagrange form.
pub fn lagrange(alphas: &[f64], values: &[Vec<f64>], x: f64) -> Vec<f64> {
    let mut out = vec![0.0; values[0].len()];
    for (j, vj) in values.iter().enumerate() {
        let mut l = 1.0;
        for (m, &am) in alphas.iter().enumerate() {
            if m != j {
                l *= (x - am) / (alphas[j] - am);
            }
        }
        for (o, v) in out.iter_mut().zip(vj) {
            *o += l * v;
        }
    }
    out
}
