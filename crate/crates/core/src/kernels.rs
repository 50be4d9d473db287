//! Slice-level numeric kernels behind the tape primitives.
//!
//! Convolution runs as im2col followed by one GEMM per channel group. When a
//! convolution produces a single output pixel (point data, `1×1` spatial maps)
//! the whole batch is folded into the GEMM column dimension so tiny per-sample
//! products are avoided. Pointwise convolutions skip the im2col copy entirely
//! and hand strided views of the input to the GEMM.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Float, Strided};

/// Geometry of one grouped 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvPlan {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Output extent of a strided, zero-padded window, or `None` when the window
/// does not fit.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl ConvPlan {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize, groups: usize) -> Result<Self> {
        let (n, c_in, h, w) = match x_shape {
            &[n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::dim(format!("conv2d input must be N×C×H×W, got {x_shape:?}"))),
        };
        let (c_out, cig, kh, kw) = match w_shape {
            &[o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(Error::dim(format!("conv2d weight must be rank 4, got {w_shape:?}"))),
        };
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::config(format!("groups={groups} must divide c_in={c_in} and c_out={c_out}")));
        }
        if cig != c_in / groups {
            return Err(Error::dim(format!(
                "weight {w_shape:?} expects {cig} input channels per group, input has {} (C={c_in}, groups={groups})",
                c_in / groups
            )));
        }
        let ho = conv_out_extent(h, kh, stride, pad);
        let wo = conv_out_extent(w, kw, stride, pad);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok(ConvPlan { n, c_in, h, w, c_out, kh, kw, stride, pad, groups, ho, wo }),
            _ => Err(Error::dim(format!(
                "non-positive conv output extent for input {h}×{w}, kernel {kh}×{kw}, stride {stride}, pad {pad}"
            ))),
        }
    }

    fn cig(&self) -> usize {
        self.c_in / self.groups
    }

    fn cog(&self) -> usize {
        self.c_out / self.groups
    }

    /// Rows of the im2col matrix that belong to one group.
    fn group_rows(&self) -> usize {
        self.cig() * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Batch-folded mode: one output pixel per sample.
    fn folded(&self) -> bool {
        self.out_pixels() == 1
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.ho, self.wo]
    }

    pub fn macs(&self) -> u64 {
        (self.n * self.out_pixels() * self.c_out * self.group_rows()) as u64
    }
}

/// Writes the patches of sample `n` into `cols`: row `c·kh·kw + i·kw + j`,
/// column `col0 + p` at `row·ld + col0 + p`.
fn im2col<T: Float>(x: &[T], plan: &ConvPlan, n: usize, cols: &mut [T], ld: usize, col0: usize) {
    let (h, w) = (plan.h as isize, plan.w as isize);
    let base = n * plan.c_in * plan.h * plan.w;
    let mut row = 0;
    for c in 0..plan.c_in {
        let xc = &x[base + c * plan.h * plan.w..base + (c + 1) * plan.h * plan.w];
        for i in 0..plan.kh {
            for j in 0..plan.kw {
                let dst = &mut cols[row * ld + col0..];
                let mut p = 0;
                for oy in 0..plan.ho {
                    let iy = (oy * plan.stride + i) as isize - plan.pad as isize;
                    for ox in 0..plan.wo {
                        let ix = (ox * plan.stride + j) as isize - plan.pad as isize;
                        dst[p] =
                            if iy < 0 || ix < 0 || iy >= h || ix >= w { T::zero() } else { xc[(iy * w + ix) as usize] };
                        p += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into `dx`.
fn col2im<T: Float>(cols: &[T], plan: &ConvPlan, n: usize, dx: &mut [T], ld: usize, col0: usize) {
    let (h, w) = (plan.h as isize, plan.w as isize);
    let base = n * plan.c_in * plan.h * plan.w;
    let mut row = 0;
    for c in 0..plan.c_in {
        let dxc = &mut dx[base + c * plan.h * plan.w..base + (c + 1) * plan.h * plan.w];
        for i in 0..plan.kh {
            for j in 0..plan.kw {
                let src = &cols[row * ld + col0..];
                let mut p = 0;
                for oy in 0..plan.ho {
                    let iy = (oy * plan.stride + i) as isize - plan.pad as isize;
                    for ox in 0..plan.wo {
                        let ix = (ox * plan.stride + j) as isize - plan.pad as isize;
                        if iy >= 0 && ix >= 0 && iy < h && ix < w {
                            dxc[(iy * w + ix) as usize] += src[p];
                        }
                        p += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Output layout of a chunk of samples as a `c_out × columns` view.
fn out_view(plan: &ConvPlan, chunk: usize, g: usize) -> Strided {
    let cog = plan.cog();
    if plan.folded() {
        Strided { offset: g * cog, rs: 1, cs: plan.c_out }
    } else {
        let p = plan.out_pixels();
        Strided::row_major(chunk * plan.c_out * p + g * cog * p, p)
    }
}

/// Input of a pointwise convolution viewed as an im2col matrix.
fn pointwise_view(plan: &ConvPlan, chunk: usize) -> Strided {
    if plan.folded() {
        Strided { offset: 0, rs: 1, cs: plan.c_in }
    } else {
        let hw = plan.h * plan.w;
        Strided { offset: chunk * plan.c_in * hw, rs: hw, cs: 1 }
    }
}

/// Grouped convolution, im2col + GEMM.
pub fn conv2d_forward<T: Float>(x: &[T], weight: &[T], plan: &ConvPlan) -> Vec<T> {
    let [n, co, ho, wo] = plan.out_shape();
    let mut out = vec![T::zero(); n * co * ho * wo];
    let (cog, kk) = (plan.cog(), plan.group_rows());
    let (chunks, cols_per_chunk) = if plan.folded() { (1, n) } else { (n, plan.out_pixels()) };
    let mut scratch = Vec::new();
    if !plan.pointwise() {
        scratch = vec![T::zero(); plan.c_in * plan.kh * plan.kw * cols_per_chunk];
    }
    for chunk in 0..chunks {
        let (cols, base): (&[T], Strided) = if plan.pointwise() {
            (x, pointwise_view(plan, chunk))
        } else {
            if plan.folded() {
                for s in 0..n {
                    im2col(x, plan, s, &mut scratch, n, s);
                }
            } else {
                im2col(x, plan, chunk, &mut scratch, cols_per_chunk, 0);
            }
            (&scratch, Strided::row_major(0, cols_per_chunk))
        };
        for g in 0..plan.groups {
            let bv = Strided { offset: base.offset + g * kk * base.rs, ..base };
            gemm(
                cog,
                kk,
                cols_per_chunk,
                T::one(),
                weight,
                Strided::row_major(g * cog * kk, kk),
                cols,
                bv,
                T::zero(),
                &mut out,
                out_view(plan, chunk, g),
            );
        }
    }
    out
}

/// Adjoints of [`conv2d_forward`]. Returns `(dx, dw)`; either may be skipped.
pub fn conv2d_backward<T: Float>(
    x: &[T],
    weight: &[T],
    gy: &[T],
    plan: &ConvPlan,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let n = plan.n;
    let (cog, kk) = (plan.cog(), plan.group_rows());
    let (chunks, cols_per_chunk) = if plan.folded() { (1, n) } else { (n, plan.out_pixels()) };
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); weight.len()]);
    let rows = plan.c_in * plan.kh * plan.kw;
    let mut scratch = Vec::new();
    let mut dcols = Vec::new();
    if !plan.pointwise() {
        scratch = vec![T::zero(); rows * cols_per_chunk];
        if need_dx {
            dcols = vec![T::zero(); rows * cols_per_chunk];
        }
    }
    for chunk in 0..chunks {
        if let Some(dw) = dw.as_mut() {
            let (cols, base): (&[T], Strided) = if plan.pointwise() {
                (x, pointwise_view(plan, chunk))
            } else {
                if plan.folded() {
                    for s in 0..n {
                        im2col(x, plan, s, &mut scratch, n, s);
                    }
                } else {
                    im2col(x, plan, chunk, &mut scratch, cols_per_chunk, 0);
                }
                (&scratch, Strided::row_major(0, cols_per_chunk))
            };
            for g in 0..plan.groups {
                let bv = Strided { offset: base.offset + g * kk * base.rs, ..base };
                // dW_g += gY_g · cols_gᵀ
                gemm(
                    cog,
                    cols_per_chunk,
                    kk,
                    T::one(),
                    gy,
                    out_view(plan, chunk, g),
                    cols,
                    bv.t(),
                    T::one(),
                    dw,
                    Strided::row_major(g * cog * kk, kk),
                );
            }
        }
        if let Some(dx) = dx.as_mut() {
            for g in 0..plan.groups {
                let wv = Strided::row_major(g * cog * kk, kk).t();
                if plan.pointwise() {
                    // every dx element belongs to exactly one group row
                    let base = pointwise_view(plan, chunk);
                    let dv = Strided { offset: base.offset + g * kk * base.rs, ..base };
                    gemm(
                        kk,
                        cog,
                        cols_per_chunk,
                        T::one(),
                        weight,
                        wv,
                        gy,
                        out_view(plan, chunk, g),
                        T::zero(),
                        dx,
                        dv,
                    );
                } else {
                    gemm(
                        kk,
                        cog,
                        cols_per_chunk,
                        T::one(),
                        weight,
                        wv,
                        gy,
                        out_view(plan, chunk, g),
                        T::zero(),
                        &mut dcols,
                        Strided::row_major(g * kk * cols_per_chunk, cols_per_chunk),
                    );
                }
            }
            if !plan.pointwise() {
                if plan.folded() {
                    for s in 0..n {
                        col2im(&dcols, plan, s, dx, n, s);
                    }
                } else {
                    col2im(&dcols, plan, chunk, dx, cols_per_chunk, 0);
                }
            }
        }
    }
    (dx, dw)
}

/// Direct nested-loop grouped convolution. Slow; kept as the reference the
/// im2col path is checked against.
pub fn conv2d_direct<T: Float>(x: &[T], weight: &[T], plan: &ConvPlan) -> Vec<T> {
    let [n, co, ho, wo] = plan.out_shape();
    let (cig, cog) = (plan.cig(), plan.cog());
    let mut out = vec![T::zero(); n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            let g = o / cog;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for ci in 0..cig {
                        let c = g * cig + ci;
                        for i in 0..plan.kh {
                            for j in 0..plan.kw {
                                let iy = (oy * plan.stride + i) as isize - plan.pad as isize;
                                let ix = (ox * plan.stride + j) as isize - plan.pad as isize;
                                if iy < 0 || ix < 0 || iy >= plan.h as isize || ix >= plan.w as isize {
                                    continue;
                                }
                                let xv = x[((b * plan.c_in + c) * plan.h + iy as usize) * plan.w + ix as usize];
                                let wv = weight[((o * cig + ci) * plan.kh + i) * plan.kw + j];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Per-channel statistics of an `N×C×S` layout: biased mean and variance.
pub fn channel_moments<T: Float>(x: &[T], n: usize, c: usize, s: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * s) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * s;
            acc += x[off..off + s].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = acc / m;
        let mut sq = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * s;
            sq += x[off..off + s].iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn out_shape(&self, shape: &[usize]) -> Result<[usize; 4]> {
        let (n, c, h, w) = match shape {
            &[n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::dim(format!("pooling needs N×C×H×W, got {shape:?}"))),
        };
        match (conv_out_extent(h, self.window, self.stride, 0), conv_out_extent(w, self.window, self.stride, 0)) {
            (Some(ho), Some(wo)) if self.window > 0 => Ok([n, c, ho, wo]),
            _ => Err(Error::dim(format!("pool window {} stride {} does not fit {h}×{w}", self.window, self.stride))),
        }
    }
}

/// Pooling forward; for max pooling also returns the flat argmax per output.
pub fn pool_forward<T: Float>(x: &[T], shape: &[usize], spec: &PoolSpec) -> Result<(Vec<T>, Vec<usize>)> {
    let [n, c, ho, wo] = spec.out_shape(shape)?;
    let (h, w) = (shape[2], shape[3]);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::new();
    let inv = T::of(1.0 / (spec.window * spec.window) as f64);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let (y0, x0) = (oy * spec.stride, ox * spec.stride);
                match spec.kind {
                    PoolKind::Max => {
                        let mut best = base + y0 * w + x0;
                        for i in 0..spec.window {
                            for j in 0..spec.window {
                                let idx = base + (y0 + i) * w + x0 + j;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(x[best]);
                        arg.push(best);
                    }
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for i in 0..spec.window {
                            for j in 0..spec.window {
                                acc += x[base + (y0 + i) * w + x0 + j];
                            }
                        }
                        out.push(acc * inv);
                    }
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn pool_backward<T: Float>(gy: &[T], shape: &[usize], spec: &PoolSpec, argmax: &[usize]) -> Result<Vec<T>> {
    let [n, c, ho, wo] = spec.out_shape(shape)?;
    let (h, w) = (shape[2], shape[3]);
    let mut dx = vec![T::zero(); n * c * h * w];
    match spec.kind {
        PoolKind::Max => {
            for (g, &idx) in gy.iter().zip(argmax) {
                dx[idx] += *g;
            }
        }
        PoolKind::Avg => {
            let inv = T::of(1.0 / (spec.window * spec.window) as f64);
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = gy[(plane * ho + oy) * wo + ox] * inv;
                        for i in 0..spec.window {
                            for j in 0..spec.window {
                                dx[base + (oy * spec.stride + i) * w + ox * spec.stride + j] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}
