//! Reference computations shared by the integration tests. Nothing here
//! calls the library's kernels.
#![allow(dead_code)]

use mgic::mgic::TemplateInstance;
use mgic::nn::BatchNorm2d;
use mgic::params::ParamStore;
use mgic::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Six nested loops over `N×C×H×W` input and `O×(C/g)×k×k` weights.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, cig, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(cig * groups, c);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let opg = o / groups;
    let mut out = vec![0.0; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            let g = oc / opg;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..cig {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((b * c + g * cig + ic) * h + iy as usize) * wd + ix as usize;
                                let wi = ((oc * cig + ic) * kh + ky) * kw + kx;
                                acc += x.data()[xi] * w.data()[wi];
                            }
                        }
                    }
                    out[((b * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec([n, o, ho, wo], out).unwrap()
}

/// Eval-mode batch norm with the stored statistics, per channel.
pub fn naive_bn(x: &Tensor<f64>, bn: &BatchNorm2d, store: &ParamStore<f64>) -> Tensor<f64> {
    let (g, b) = (store.value(bn.gamma).data(), store.value(bn.beta).data());
    let (m, v) = (store.buffer(bn.running_mean).value.data(), store.buffer(bn.running_var).value.data());
    let (c, hw) = (x.shape()[1], x.shape()[2] * x.shape()[3]);
    let mut out = x.clone();
    for (i, val) in out.data_mut().iter_mut().enumerate() {
        let ch = (i / hw) % c;
        *val = (*val - m[ch]) / (v[ch] + bn.eps).sqrt() * g[ch] + b[ch];
    }
    out
}

pub fn relu(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| v.max(0.0))
}

pub fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    a.zip_map(b, |u, v| u + v).unwrap()
}

pub fn sub(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    a.zip_map(b, |u, v| u - v).unwrap()
}

pub fn jitter_norms(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.param(id).kind.is_norm() {
            let mut t = store.value(id).clone();
            t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
            store.set_value(id, t).unwrap();
        }
    }
    for i in 0..store.buffers().len() {
        let b = store.buffers()[i].clone();
        let id = store.find_buffer(&b.name).unwrap();
        let range = if b.name.ends_with("running_var") { 0.5..1.5 } else { -0.3..0.3 };
        let mut t = b.value.clone();
        t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(range.clone()));
        store.set_buffer(id, t).unwrap();
    }
}

/// Literal simple-conv template in eval mode: `x + K * relu(N(x))`.
pub fn simple_conv_oracle(inst: &TemplateInstance, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let TemplateInstance::SimpleConv { norm, conv } = inst else { panic!("simple-conv expected") };
    let h = relu(&naive_bn(x, norm, store));
    let pad = conv.spec.kernel / 2;
    add(x, &naive_conv(&h, store.value(conv.weight), 1, pad, conv.spec.groups))
}
