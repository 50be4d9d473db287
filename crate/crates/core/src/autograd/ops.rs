use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvPlan, PoolSpec};
use crate::tensor::{gemm, Float, Strided, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

/// A user-registered primitive. The tape calls `forward` when recording and
/// replaying, and `backward` to obtain one adjoint per input.
pub trait CustomOp<T: Float>: Send + Sync {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>>;
}

/// Discriminant of a recorded primitive, exposed for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sum,
    Mean,
    Conv2d,
    ChannelBias,
    BatchNormTrain,
    BatchNormEval,
    Pool,
    GlobalAvgPool,
    Linear,
    Reshape,
    SliceChannels,
    Mse,
    SoftmaxXent,
    Custom,
}

#[derive(Clone)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Sum,
    Mean,
    Conv2d(ConvGeom),
    ChannelBias,
    /// inputs: x, gamma, beta
    BatchNormTrain {
        eps: f64,
    },
    /// inputs: x, gamma, beta, running mean, running var
    BatchNormEval {
        eps: f64,
    },
    Pool(PoolSpec),
    GlobalAvgPool,
    /// inputs: x (N×in), weight (out×in), bias (out)
    Linear,
    Reshape(Vec<usize>),
    SliceChannels {
        start: usize,
        len: usize,
    },
    Mse,
    SoftmaxXent(Arc<Vec<usize>>),
    Custom(Arc<dyn CustomOp<T>>),
}

impl<T: Float> fmt::Debug for Op<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(c) => write!(f, "Custom({})", c.name()),
            Op::Conv2d(g) => write!(f, "Conv2d({g:?})"),
            Op::Pool(p) => write!(f, "Pool({p:?})"),
            Op::Reshape(s) => write!(f, "Reshape({s:?})"),
            Op::Scale(s) => write!(f, "Scale({s})"),
            other => write!(f, "{:?}", other.kind()),
        }
    }
}

impl<T: Float> Op<T> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul => OpKind::MatMul,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Scale(_) => OpKind::Scale,
            Op::Relu => OpKind::Relu,
            Op::Sum => OpKind::Sum,
            Op::Mean => OpKind::Mean,
            Op::Conv2d(_) => OpKind::Conv2d,
            Op::ChannelBias => OpKind::ChannelBias,
            Op::BatchNormTrain { .. } => OpKind::BatchNormTrain,
            Op::BatchNormEval { .. } => OpKind::BatchNormEval,
            Op::Pool(_) => OpKind::Pool,
            Op::GlobalAvgPool => OpKind::GlobalAvgPool,
            Op::Linear => OpKind::Linear,
            Op::Reshape(_) => OpKind::Reshape,
            Op::SliceChannels { .. } => OpKind::SliceChannels,
            Op::Mse => OpKind::Mse,
            Op::SoftmaxXent(_) => OpKind::SoftmaxXent,
            Op::Custom(_) => OpKind::Custom,
        }
    }

    pub(crate) fn name(&self) -> String {
        match self {
            Op::Custom(c) => c.name().to_string(),
            other => format!("{:?}", other.kind()),
        }
    }
}

/// Intermediates kept for an adjoint.
#[derive(Debug, Clone)]
pub(crate) struct Saved<T> {
    pub tensors: Vec<Tensor<T>>,
    pub indices: Vec<usize>,
}

impl<T> Default for Saved<T> {
    fn default() -> Self {
        Saved { tensors: Vec::new(), indices: Vec::new() }
    }
}

impl<T> Saved<T> {
    fn tensors(tensors: Vec<Tensor<T>>) -> Self {
        Saved { tensors, indices: Vec::new() }
    }
}

fn same_shape<T: Float>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn per_channel_vec<T: Float>(t: &Tensor<T>, c: usize, what: &str) -> Result<()> {
    if t.shape() != [c] {
        return Err(Error::dim(format!("{what}: expected shape [{c}], got {:?}", t.shape())));
    }
    Ok(())
}

/// `C[m×n] = A[m×k]·B[k×n]` with optional transposes given as views.
fn matmul_views<T: Float>(m: usize, k: usize, n: usize, a: &[T], av: Strided, b: &[T], bv: Strided) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm(m, k, n, T::one(), a, av, b, bv, T::zero(), &mut c, Strided::row_major(0, n));
    c
}

/// Evaluates a primitive. Returns the output and the intermediates its
/// adjoint needs. Used both when recording and when replaying.
pub(crate) fn forward<T: Float>(op: &Op<T>, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, Saved<T>)> {
    let none = Saved::default;
    Ok(match op {
        Op::Leaf => return Err(Error::Contract("leaves are not evaluated".into())),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, k2, n) = match (a.shape(), b.shape()) {
                (&[m, k], &[k2, n]) => (m, k, k2, n),
                _ => {
                    return Err(Error::dim(format!(
                        "matmul needs rank-2 operands, got {:?} and {:?}",
                        a.shape(),
                        b.shape()
                    )))
                }
            };
            if k != k2 {
                return Err(Error::dim(format!("matmul inner extents disagree: {:?} · {:?}", a.shape(), b.shape())));
            }
            let c = matmul_views(m, k, n, a.data(), Strided::row_major(0, k), b.data(), Strided::row_major(0, n));
            (Tensor::raw(vec![m, n], c), none())
        }
        Op::Add => {
            same_shape(inputs[0], inputs[1], "add")?;
            (inputs[0].zip_map(inputs[1], |a, b| a + b)?, none())
        }
        Op::Sub => {
            same_shape(inputs[0], inputs[1], "sub")?;
            (inputs[0].zip_map(inputs[1], |a, b| a - b)?, none())
        }
        Op::Mul => {
            same_shape(inputs[0], inputs[1], "mul")?;
            (inputs[0].zip_map(inputs[1], |a, b| a * b)?, none())
        }
        Op::Scale(s) => {
            let s = T::of(*s);
            (inputs[0].map(|v| v * s), none())
        }
        Op::Relu => (inputs[0].map(|v| if v > T::zero() { v } else { T::zero() }), none()),
        Op::Sum => (Tensor::scalar(inputs[0].sum()), none()),
        Op::Mean => (Tensor::scalar(inputs[0].sum() / T::of(inputs[0].numel() as f64)), none()),
        Op::Conv2d(g) => {
            let (x, w) = (inputs[0], inputs[1]);
            let plan = ConvPlan::new(x.shape(), w.shape(), g.stride, g.pad, g.groups)?;
            let out = kernels::conv2d_forward(x.data(), w.data(), &plan);
            (Tensor::raw(plan.out_shape().to_vec(), out), none())
        }
        Op::ChannelBias => {
            let (x, b) = (inputs[0], inputs[1]);
            let (n, c, s) = x.channel_layout()?;
            per_channel_vec(b, c, "channel bias")?;
            let mut out = x.data().to_vec();
            for bi in 0..n {
                for ch in 0..c {
                    let bv = b.data()[ch];
                    out[(bi * c + ch) * s..(bi * c + ch + 1) * s].iter_mut().for_each(|v| *v += bv);
                }
            }
            (Tensor::raw(x.shape().to_vec(), out), none())
        }
        Op::BatchNormTrain { eps } => {
            let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
            let (n, c, s) = x.channel_layout()?;
            per_channel_vec(gamma, c, "batchnorm gamma")?;
            per_channel_vec(beta, c, "batchnorm beta")?;
            if n * s < 2 {
                return Err(Error::Numerical(format!(
                    "degenerate batch: train-mode batchnorm over {:?} has a single value per channel",
                    x.shape()
                )));
            }
            let (mean, var) = kernels::channel_moments(x.data(), n, c, s);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); x.numel()];
            let mut out = vec![T::zero(); x.numel()];
            for bi in 0..n {
                for ch in 0..c {
                    let (mu, is) = (T::of(mean[ch]), T::of(inv_std[ch]));
                    let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
                    let off = (bi * c + ch) * s;
                    for i in off..off + s {
                        let h = (x.data()[i] - mu) * is;
                        xhat[i] = h;
                        out[i] = g * h + bt;
                    }
                }
            }
            let to_t = |v: &[f64]| Tensor::raw(vec![c], v.iter().map(|&u| T::of(u)).collect());
            (
                Tensor::raw(x.shape().to_vec(), out),
                Saved::tensors(vec![Tensor::raw(x.shape().to_vec(), xhat), to_t(&inv_std), to_t(&mean), to_t(&var)]),
            )
        }
        Op::BatchNormEval { eps } => {
            let (x, gamma, beta, rm, rv) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
            let (n, c, s) = x.channel_layout()?;
            for (t, what) in [(gamma, "gamma"), (beta, "beta"), (rm, "running mean"), (rv, "running var")] {
                per_channel_vec(t, c, what)?;
            }
            let mut out = vec![T::zero(); x.numel()];
            for ch in 0..c {
                let is = T::of(1.0 / (rv.data()[ch].as_f64() + eps).sqrt());
                let (g, bt, mu) = (gamma.data()[ch], beta.data()[ch], rm.data()[ch]);
                for bi in 0..n {
                    let off = (bi * c + ch) * s;
                    for i in off..off + s {
                        out[i] = g * ((x.data()[i] - mu) * is) + bt;
                    }
                }
            }
            (Tensor::raw(x.shape().to_vec(), out), none())
        }
        Op::Pool(spec) => {
            let x = inputs[0];
            let (out, arg) = kernels::pool_forward(x.data(), x.shape(), spec)?;
            let shape = spec.out_shape(x.shape())?.to_vec();
            (Tensor::raw(shape, out), Saved { tensors: vec![], indices: arg })
        }
        Op::GlobalAvgPool => {
            let x = inputs[0];
            let (n, c, h, w) = x.nchw()?;
            let s = h * w;
            let inv = T::of(1.0 / s as f64);
            let out = (0..n * c).map(|p| x.data()[p * s..(p + 1) * s].iter().copied().sum::<T>() * inv).collect();
            (Tensor::raw(vec![n, c], out), none())
        }
        Op::Linear => {
            let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
            let (n, fin, fout) = match (x.shape(), w.shape()) {
                (&[n, i], &[o, i2]) if i == i2 => (n, i, o),
                _ => {
                    return Err(Error::dim(format!(
                        "linear: input {:?} incompatible with weight {:?}",
                        x.shape(),
                        w.shape()
                    )))
                }
            };
            per_channel_vec(b, fout, "linear bias")?;
            let mut y = matmul_views(
                n,
                fin,
                fout,
                x.data(),
                Strided::row_major(0, fin),
                w.data(),
                Strided::row_major(0, fin).t(),
            );
            for row in y.chunks_mut(fout) {
                row.iter_mut().zip(b.data()).for_each(|(v, &bb)| *v += bb);
            }
            (Tensor::raw(vec![n, fout], y), none())
        }
        Op::Reshape(shape) => (inputs[0].reshape(shape.clone())?, none()),
        Op::SliceChannels { start, len } => {
            let x = inputs[0];
            let (n, c, s) = x.channel_layout()?;
            if *len == 0 || start + len > c {
                return Err(Error::dim(format!("channel slice {start}..{} out of range for C={c}", start + len)));
            }
            let mut out = Vec::with_capacity(n * len * s);
            for bi in 0..n {
                out.extend_from_slice(&x.data()[(bi * c + start) * s..(bi * c + start + len) * s]);
            }
            let mut shape = x.shape().to_vec();
            shape[1] = *len;
            (Tensor::raw(shape, out), none())
        }
        Op::Mse => {
            let (p, t) = (inputs[0], inputs[1]);
            same_shape(p, t, "mse")?;
            let acc: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
            (Tensor::scalar(T::of(acc / p.numel() as f64)), none())
        }
        Op::SoftmaxXent(labels) => {
            let z = inputs[0];
            let (n, k) = match z.shape() {
                &[n, k] => (n, k),
                s => return Err(Error::dim(format!("cross-entropy needs N×K logits, got {s:?}"))),
            };
            if labels.len() != n {
                return Err(Error::dim(format!("{} labels for {n} rows of logits", labels.len())));
            }
            let mut probs = vec![T::zero(); n * k];
            let mut loss = 0.0;
            for (i, &lab) in labels.iter().enumerate() {
                if lab >= k {
                    return Err(Error::Data(format!("label {lab} out of range for {k} classes")));
                }
                let row = &z.data()[i * k..(i + 1) * k];
                let mx = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - mx).exp()).collect();
                let tot: f64 = exps.iter().sum();
                for j in 0..k {
                    probs[i * k + j] = T::of(exps[j] / tot);
                }
                loss += tot.ln() + mx - row[lab].as_f64();
            }
            (Tensor::scalar(T::of(loss / n as f64)), Saved::tensors(vec![Tensor::raw(vec![n, k], probs)]))
        }
        Op::Custom(c) => (c.forward(inputs)?, none()),
    })
}

/// Adjoints of a primitive given the upstream gradient `g`. Entries for
/// inputs with `needs[i] == false` may be `None`.
pub(crate) fn backward<T: Float>(
    op: &Op<T>,
    inputs: &[&Tensor<T>],
    out: &Tensor<T>,
    saved: &Saved<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    Ok(match op {
        Op::Leaf => vec![],
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = want(0).then(|| {
                // dA = dC · Bᵀ
                let v =
                    matmul_views(m, n, k, g.data(), Strided::row_major(0, n), b.data(), Strided::row_major(0, n).t());
                Tensor::raw(vec![m, k], v)
            });
            let db = want(1).then(|| {
                // dB = Aᵀ · dC
                let v =
                    matmul_views(k, m, n, a.data(), Strided::row_major(0, k).t(), g.data(), Strided::row_major(0, n));
                Tensor::raw(vec![k, n], v)
            });
            vec![da, db]
        }
        Op::Add => vec![want(0).then(|| g.clone()), want(1).then(|| g.clone())],
        Op::Sub => vec![want(0).then(|| g.clone()), want(1).then(|| g.map(|v| -v))],
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![
                if want(0) { Some(g.zip_map(b, |u, v| u * v)?) } else { None },
                if want(1) { Some(g.zip_map(a, |u, v| u * v)?) } else { None },
            ]
        }
        Op::Scale(s) => {
            let s = T::of(*s);
            vec![Some(g.map(|v| v * s))]
        }
        Op::Relu => vec![Some(g.zip_map(inputs[0], |u, x| if x > T::zero() { u } else { T::zero() })?)],
        Op::Sum => {
            let gv = g.item();
            vec![Some(inputs[0].map(|_| gv))]
        }
        Op::Mean => {
            let gv = g.item() / T::of(inputs[0].numel() as f64);
            vec![Some(inputs[0].map(|_| gv))]
        }
        Op::Conv2d(geom) => {
            let (x, w) = (inputs[0], inputs[1]);
            let plan = ConvPlan::new(x.shape(), w.shape(), geom.stride, geom.pad, geom.groups)?;
            let (dx, dw) = kernels::conv2d_backward(x.data(), w.data(), g.data(), &plan, want(0), want(1));
            vec![dx.map(|v| Tensor::raw(x.shape().to_vec(), v)), dw.map(|v| Tensor::raw(w.shape().to_vec(), v))]
        }
        Op::ChannelBias => {
            let (n, c, s) = inputs[0].channel_layout()?;
            let db = want(1).then(|| {
                let mut acc = vec![T::zero(); c];
                for bi in 0..n {
                    for (ch, a) in acc.iter_mut().enumerate() {
                        *a += g.data()[(bi * c + ch) * s..(bi * c + ch + 1) * s].iter().copied().sum::<T>();
                    }
                }
                Tensor::raw(vec![c], acc)
            });
            vec![want(0).then(|| g.clone()), db]
        }
        Op::BatchNormTrain { .. } => {
            let (x, gamma) = (inputs[0], inputs[1]);
            let (n, c, s) = x.channel_layout()?;
            let (xhat, inv_std) = (&saved.tensors[0], &saved.tensors[1]);
            let m = (n * s) as f64;
            let mut dgamma = vec![0.0f64; c];
            let mut dbeta = vec![0.0f64; c];
            for bi in 0..n {
                for ch in 0..c {
                    let off = (bi * c + ch) * s;
                    for i in off..off + s {
                        let gv = g.data()[i].as_f64();
                        dbeta[ch] += gv;
                        dgamma[ch] += gv * xhat.data()[i].as_f64();
                    }
                }
            }
            let dx = want(0).then(|| {
                let mut dx = vec![T::zero(); x.numel()];
                for ch in 0..c {
                    let k = gamma.data()[ch].as_f64() * inv_std.data()[ch].as_f64() / m;
                    for bi in 0..n {
                        let off = (bi * c + ch) * s;
                        for i in off..off + s {
                            let v = m * g.data()[i].as_f64() - dbeta[ch] - xhat.data()[i].as_f64() * dgamma[ch];
                            dx[i] = T::of(k * v);
                        }
                    }
                }
                Tensor::raw(x.shape().to_vec(), dx)
            });
            let to_t = |v: &[f64]| Tensor::raw(vec![c], v.iter().map(|&u| T::of(u)).collect());
            vec![dx, want(1).then(|| to_t(&dgamma)), want(2).then(|| to_t(&dbeta))]
        }
        Op::BatchNormEval { eps } => {
            let (x, gamma, rm, rv) = (inputs[0], inputs[1], inputs[3], inputs[4]);
            let (n, c, s) = x.channel_layout()?;
            let mut dx = vec![T::zero(); x.numel()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for ch in 0..c {
                let is = T::of(1.0 / (rv.data()[ch].as_f64() + eps).sqrt());
                let gm = gamma.data()[ch];
                for bi in 0..n {
                    let off = (bi * c + ch) * s;
                    for i in off..off + s {
                        let gv = g.data()[i];
                        dx[i] = gv * gm * is;
                        dgamma[ch] += gv * (x.data()[i] - rm.data()[ch]) * is;
                        dbeta[ch] += gv;
                    }
                }
            }
            vec![
                want(0).then(|| Tensor::raw(x.shape().to_vec(), dx)),
                want(1).then(|| Tensor::raw(vec![c], dgamma)),
                want(2).then(|| Tensor::raw(vec![c], dbeta)),
                None,
                None,
            ]
        }
        Op::Pool(spec) => {
            let x = inputs[0];
            let dx = kernels::pool_backward(g.data(), x.shape(), spec, &saved.indices)?;
            vec![Some(Tensor::raw(x.shape().to_vec(), dx))]
        }
        Op::GlobalAvgPool => {
            let x = inputs[0];
            let (_, _, h, w) = x.nchw()?;
            let s = h * w;
            let inv = T::of(1.0 / s as f64);
            let mut dx = Vec::with_capacity(x.numel());
            for &gv in g.data() {
                dx.extend(std::iter::repeat(gv * inv).take(s));
            }
            vec![Some(Tensor::raw(x.shape().to_vec(), dx))]
        }
        Op::Linear => {
            let (x, w) = (inputs[0], inputs[1]);
            let (n, fin, fout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
            let dx = want(0).then(|| {
                let v = matmul_views(
                    n,
                    fout,
                    fin,
                    g.data(),
                    Strided::row_major(0, fout),
                    w.data(),
                    Strided::row_major(0, fin),
                );
                Tensor::raw(vec![n, fin], v)
            });
            let dw = want(1).then(|| {
                let v = matmul_views(
                    fout,
                    n,
                    fin,
                    g.data(),
                    Strided::row_major(0, fout).t(),
                    x.data(),
                    Strided::row_major(0, fin),
                );
                Tensor::raw(vec![fout, fin], v)
            });
            let db = want(2).then(|| {
                let mut acc = vec![T::zero(); fout];
                for row in g.data().chunks(fout) {
                    acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                Tensor::raw(vec![fout], acc)
            });
            vec![dx, dw, db]
        }
        Op::Reshape(_) => vec![Some(g.reshape(inputs[0].shape().to_vec())?)],
        Op::SliceChannels { start, len } => {
            let x = inputs[0];
            let (n, c, s) = x.channel_layout()?;
            let mut dx = vec![T::zero(); x.numel()];
            for bi in 0..n {
                dx[(bi * c + start) * s..(bi * c + start + len) * s]
                    .copy_from_slice(&g.data()[bi * len * s..(bi + 1) * len * s]);
            }
            vec![Some(Tensor::raw(x.shape().to_vec(), dx))]
        }
        Op::Mse => {
            let (p, t) = (inputs[0], inputs[1]);
            let k = g.item() * T::of(2.0 / p.numel() as f64);
            let dp = p.zip_map(t, |a, b| k * (a - b))?;
            let dt = want(1).then(|| dp.map(|v| -v));
            vec![want(0).then_some(dp), dt]
        }
        Op::SoftmaxXent(labels) => {
            let probs = &saved.tensors[0];
            let k = probs.shape()[1];
            let scale = g.item() / T::of(labels.len() as f64);
            let mut d = probs.data().to_vec();
            for (i, &lab) in labels.iter().enumerate() {
                d[i * k + lab] -= T::one();
            }
            d.iter_mut().for_each(|v| *v *= scale);
            vec![Some(Tensor::raw(probs.shape().to_vec(), d))]
        }
        Op::Custom(c) => {
            let grads = c.backward(inputs, out, g)?;
            if grads.len() != inputs.len() {
                return Err(Error::Contract(format!(
                    "custom op `{}` returned {} adjoints for {} inputs",
                    c.name(),
                    grads.len(),
                    inputs.len()
                )));
            }
            grads.into_iter().map(Some).collect()
        }
    })
}
