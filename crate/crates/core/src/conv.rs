//! 3×3 dilated convolution kernels (im2col + GEMM) with "same" zero padding.
//!
//! Padding width equals the dilation, so an `H×W` input yields an `H×W`
//! output. Kernels carry no bias.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

pub const KERNEL: usize = 3;
pub const TAPS: usize = KERNEL * KERNEL;
pub const SUPPORTED_DILATIONS: [usize; 4] = [1, 2, 4, 8];

pub fn validate(dilation: usize, height: usize, width: usize) -> Result<()> {
    if !SUPPORTED_DILATIONS.contains(&dilation) {
        return Err(Error::Config(format!(
            "unsupported dilation {dilation}; expected one of {SUPPORTED_DILATIONS:?}"
        )));
    }
    let min = 2 * dilation + 1;
    if height < min || width < min {
        return Err(Error::Config(format!(
            "spatial size {height}x{width} too small for dilation {dilation} (need >= {min})"
        )));
    }
    Ok(())
}

/// Columns of `ox` for which `ox + shift` lands inside `0..len`.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfold one image `[cin, h, w]` into `[cin*9, h*w]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, d: usize, col: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(col.len(), cin * TAPS * hw);
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            let dy = (ky as isize - 1) * d as isize;
            for kx in 0..KERNEL {
                let dx = (kx as isize - 1) * d as isize;
                let row = &mut col[((ci * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                let (x_lo, x_hi) = valid_range(w, dx);
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    let out = &mut row[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    out[..x_lo].fill(T::zero());
                    out[x_hi..].fill(T::zero());
                    let s_lo = (x_lo as isize + dx) as usize;
                    out[x_lo..x_hi].copy_from_slice(&src[s_lo..s_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `[cin*9, h*w]` columns back into `[cin, h, w]`.
pub(crate) fn col2im_add<T: Scalar>(col: &[T], cin: usize, h: usize, w: usize, d: usize, dx_out: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dx_out[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            let dy = (ky as isize - 1) * d as isize;
            for kx in 0..KERNEL {
                let dxs = (kx as isize - 1) * d as isize;
                let row = &col[((ci * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                let (x_lo, x_hi) = valid_range(w, dxs);
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let s_lo = (x_lo as isize + dxs) as usize;
                    for (o, v) in dst[s_lo..s_lo + (x_hi - x_lo)].iter_mut().zip(&row[oy * w + x_lo..oy * w + x_hi]) {
                        *o = *o + *v;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn dims<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Result<ConvDims> {
    let (xs, ks) = (x.shape(), k.shape());
    if xs.len() != 4 || ks.len() != 4 || ks[2] != KERNEL || ks[3] != KERNEL || xs[1] != ks[1] {
        return Err(Error::Shape(format!(
            "conv2d_dilated expects x [B,Cin,H,W] and kernel [Cout,Cin,3,3]; got {xs:?} and {ks:?}"
        )));
    }
    Ok(ConvDims { batch: xs[0], cin: xs[1], cout: ks[0], h: xs[2], w: xs[3] })
}

pub(crate) fn forward<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, d: usize) -> Result<Tensor<T>> {
    let ConvDims { batch, cin, cout, h, w } = dims(x, k)?;
    validate(d, h, w)?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[batch, cout, h, w]);
    let mut col = vec![T::zero(); cin * TAPS * hw];
    for b in 0..batch {
        im2col(&x.data()[b * cin * hw..(b + 1) * cin * hw], cin, h, w, d, &mut col);
        let dst = &mut out.data_mut()[b * cout * hw..(b + 1) * cout * hw];
        gemm(false, false, cout, hw, cin * TAPS, k.data(), &col, T::zero(), dst);
    }
    Ok(out)
}

/// Returns `(dx, dk)`, each computed only when requested.
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    d: usize,
    grad: &Tensor<T>,
    need_dx: bool,
    need_dk: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let ConvDims { batch, cin, cout, h, w } = dims(x, k)?;
    let hw = h * w;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dk = need_dk.then(|| Tensor::zeros(k.shape()));
    let mut col = vec![T::zero(); cin * TAPS * hw];
    for b in 0..batch {
        let g = &grad.data()[b * cout * hw..(b + 1) * cout * hw];
        if let Some(dk) = dk.as_mut() {
            im2col(&x.data()[b * cin * hw..(b + 1) * cin * hw], cin, h, w, d, &mut col);
            gemm(false, true, cout, cin * TAPS, hw, g, &col, T::one(), dk.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            gemm(true, false, cin * TAPS, hw, cout, k.data(), g, T::zero(), &mut col);
            col2im_add(&col, cin, h, w, d, &mut dx.data_mut()[b * cin * hw..(b + 1) * cin * hw]);
        }
    }
    Ok((dx, dk))
}
