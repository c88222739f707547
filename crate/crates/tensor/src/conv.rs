//! Raw convolution kernels on NCHW buffers.
//!
//! Both directions go through im2col / col2im plus one GEMM over the whole
//! batch. Column matrices are laid out `[C*K*K, N*OH*OW]`.

use crate::error::{arg_err, shape_err, Result};
use crate::{Real, Tensor};

/// Geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// `floor((n + 2p - k) / s) + 1`.
    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// `(n - 1) * s - 2p + k`.
    pub fn deconv_out(&self, n: usize) -> Option<usize> {
        ((n.checked_sub(1)?) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

fn dims4(op: &'static str, t: &[usize]) -> Result<[usize; 4]> {
    match t {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        _ => arg_err(op, format!("expected a 4-D tensor, got shape {t:?}")),
    }
}

/// Gathers patches of `x` (`n×c×h×w`) into a `[c*k*k, n*oh*ow]` matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let k = g.kernel;
    let cols = n * oh * ow;
    let mut out = vec![T::zero(); c * k * k * cols];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let src = &x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut dst_row[(b * oh + oy) * ow..(b * oh + oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scatter-adds a column matrix back onto an `n×c×h×w` buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Real>(
    col: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let k = g.kernel;
    let cols = n * oh * ow;
    let mut x = vec![T::zero(); n * c * h * w];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &col[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let dst = &mut x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let src = &src_row[(b * oh + oy) * ow..(b * oh + oy + 1) * ow];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] = dst_row[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[n, c, p]` → `[c, n*p]`.
pub(crate) fn batch_to_channel_major<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * p];
    for b in 0..n {
        for ci in 0..c {
            out[ci * n * p + b * p..ci * n * p + (b + 1) * p]
                .copy_from_slice(&x[(b * c + ci) * p..(b * c + ci + 1) * p]);
        }
    }
    out
}

/// `[c, n*p]` → `[n, c, p]`.
pub(crate) fn channel_major_to_batch<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * p];
    for b in 0..n {
        for ci in 0..c {
            out[(b * c + ci) * p..(b * c + ci + 1) * p]
                .copy_from_slice(&x[ci * n * p + b * p..ci * n * p + (b + 1) * p]);
        }
    }
    out
}

/// Row-major `a · b` (`a: m×k`, `b: k×n`); `a_t` / `b_t` mean the stored
/// buffer is the transpose of the logical operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Real>(
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm_acc(a, a_t, b, b_t, m, k, n, T::zero(), &mut c);
    c
}

/// `c += a · b` with the same conventions as [`matmul`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_into<T: Real>(
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [T],
) {
    gemm_acc(a, a_t, b, b_t, m, k, n, T::one(), c);
}

#[allow(clippy::too_many_arguments)]
fn gemm_acc<T: Real>(
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let a_str = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let b_str = if b_t { (1, k as isize) } else { (n as isize, 1) };
    T::gemm(m, k, n, T::one(), a, a_str, b, b_str, beta, c, (n as isize, 1));
}

struct ConvShapes {
    n: usize,
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    oh: usize,
    ow: usize,
}

fn conv_shapes<T: Real>(x: &Tensor<T>, wt: &Tensor<T>, g: ConvGeom) -> Result<ConvShapes> {
    let [n, ic, h, w] = dims4("conv2d", x.shape())?;
    let [oc, wic, kh, kw] = dims4("conv2d", wt.shape())?;
    if wic != ic || kh != g.kernel || kw != g.kernel {
        return shape_err("conv2d", x.shape(), wt.shape());
    }
    let (Some(oh), Some(ow)) = (g.conv_out(h), g.conv_out(w)) else {
        return shape_err("conv2d", x.shape(), wt.shape());
    };
    Ok(ConvShapes {
        n,
        ic,
        h,
        w,
        oc,
        oh,
        ow,
    })
}

/// Cross-correlation, weights `[oc, ic, k, k]`, no bias.
pub fn conv2d<T: Real>(x: &Tensor<T>, wt: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
    let s = conv_shapes(x, wt, g)?;
    let kk = s.ic * g.kernel * g.kernel;
    let p = s.oh * s.ow;
    let col = im2col(x.data(), s.n, s.ic, s.h, s.w, g, s.oh, s.ow);
    let out = matmul(wt.data(), false, &col, false, s.oc, kk, s.n * p);
    Tensor::new(
        &[s.n, s.oc, s.oh, s.ow],
        channel_major_to_batch(&out, s.n, s.oc, p),
    )
}

/// Gradients of [`conv2d`] with respect to input and weights.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    dy: &Tensor<T>,
    g: ConvGeom,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = conv_shapes(x, wt, g)?;
    if dy.shape() != [s.n, s.oc, s.oh, s.ow] {
        return shape_err("conv2d_backward", dy.shape(), &[s.n, s.oc, s.oh, s.ow]);
    }
    let kk = s.ic * g.kernel * g.kernel;
    let p = s.oh * s.ow;
    let np = s.n * p;
    let dy_cm = batch_to_channel_major(dy.data(), s.n, s.oc, p);
    let col = im2col(x.data(), s.n, s.ic, s.h, s.w, g, s.oh, s.ow);
    // dW = dY · colᵀ
    let dw = matmul(&dy_cm, false, &col, true, s.oc, np, kk);
    // dcol = Wᵀ · dY
    let dcol = matmul(wt.data(), true, &dy_cm, false, kk, s.oc, np);
    let dx = col2im(&dcol, s.n, s.ic, s.h, s.w, g, s.oh, s.ow);
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(wt.shape(), dw)?,
    ))
}

fn deconv_shapes<T: Real>(x: &Tensor<T>, wt: &Tensor<T>, g: ConvGeom) -> Result<ConvShapes> {
    let [n, ic, h, w] = dims4("deconv2d", x.shape())?;
    let [wic, oc, kh, kw] = dims4("deconv2d", wt.shape())?;
    if wic != ic || kh != g.kernel || kw != g.kernel {
        return shape_err("deconv2d", x.shape(), wt.shape());
    }
    let (Some(oh), Some(ow)) = (g.deconv_out(h), g.deconv_out(w)) else {
        return shape_err("deconv2d", x.shape(), wt.shape());
    };
    // The transposed geometry must map back exactly.
    if g.conv_out(oh) != Some(h) || g.conv_out(ow) != Some(w) {
        return shape_err("deconv2d", x.shape(), wt.shape());
    }
    Ok(ConvShapes {
        n,
        ic,
        h,
        w,
        oc,
        oh,
        ow,
    })
}

/// Transposed convolution, weights `[ic, oc, k, k]`, no bias. Output spatial
/// size is `(h - 1) * s - 2p + k`.
pub fn deconv2d<T: Real>(x: &Tensor<T>, wt: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
    let s = deconv_shapes(x, wt, g)?;
    let okk = s.oc * g.kernel * g.kernel;
    let p_in = s.h * s.w;
    let x_cm = batch_to_channel_major(x.data(), s.n, s.ic, p_in);
    // col = Wᵀ · X, with W viewed as [ic, oc*k*k]
    let col = matmul(wt.data(), true, &x_cm, false, okk, s.ic, s.n * p_in);
    // Deconv output plays the role of the conv input; the deconv input grid is
    // the conv output grid.
    let y = col2im(&col, s.n, s.oc, s.oh, s.ow, g, s.h, s.w);
    Tensor::new(&[s.n, s.oc, s.oh, s.ow], y)
}

/// Gradients of [`deconv2d`] with respect to input and weights.
pub fn deconv2d_backward<T: Real>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    dy: &Tensor<T>,
    g: ConvGeom,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = deconv_shapes(x, wt, g)?;
    if dy.shape() != [s.n, s.oc, s.oh, s.ow] {
        return shape_err("deconv2d_backward", dy.shape(), &[s.n, s.oc, s.oh, s.ow]);
    }
    let okk = s.oc * g.kernel * g.kernel;
    let p_in = s.h * s.w;
    let np = s.n * p_in;
    let dcol = im2col(dy.data(), s.n, s.oc, s.oh, s.ow, g, s.h, s.w);
    let x_cm = batch_to_channel_major(x.data(), s.n, s.ic, p_in);
    // dX = W · dcol
    let dx_cm = matmul(wt.data(), false, &dcol, false, s.ic, okk, np);
    // dW = X · dcolᵀ
    let dw = matmul(&x_cm, false, &dcol, true, s.ic, np, okk);
    Ok((
        Tensor::new(x.shape(), channel_major_to_batch(&dx_cm, s.n, s.ic, p_in))?,
        Tensor::new(wt.shape(), dw)?,
    ))
}
