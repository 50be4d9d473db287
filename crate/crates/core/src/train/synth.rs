use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Correlated feature maps with `c/4` latent channels.
pub fn synth_feature_maps(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Result<Tensor<f32>> {
    synth_feature_maps_with_rank(n, c, h, w, (c / 4).max(1), seed)
}

/// `n` samples of `c` channels, each a fixed linear mix of `rank` smooth
/// random fields. The channel covariance therefore has rank `rank`.
pub fn synth_feature_maps_with_rank(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    rank: usize,
    seed: u64,
) -> Result<Tensor<f32>> {
    synth_feature_maps_with_spectrum(n, c, h, w, rank, 0.0, seed)
}

/// Like [`synth_feature_maps_with_rank`], with latent field `m` weighted by
/// `(m + 1)^(-decay / 2)` so its variance falls off as a power law.
pub fn synth_feature_maps_with_spectrum(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    rank: usize,
    decay: f64,
    seed: u64,
) -> Result<Tensor<f32>> {
    if n == 0 || c == 0 || h == 0 || w == 0 || rank == 0 {
        return Err(Error::config("feature-map corpus extents must be positive"));
    }
    if !decay.is_finite() || decay < 0.0 {
        return Err(Error::config(format!("spectral decay {decay} must be finite and non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = |m: usize| (m as f64 + 1.0).powf(-decay / 2.0);
    let total: f64 = (0..rank).map(|m| weight(m).powi(2)).sum();
    let mix: Vec<f64> = (0..c * rank)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * weight(i % rank) / total.sqrt()
        })
        .collect();
    let hw = h * w;
    let mut out = vec![0f32; n * c * hw];
    let mut fields = vec![0f64; rank * hw];
    for s in 0..n {
        for f in fields.chunks_mut(hw) {
            for v in f.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            smooth(f, h, w);
            smooth(f, h, w);
            standardize(f);
        }
        let sample = &mut out[s * c * hw..(s + 1) * c * hw];
        for (k, dst) in sample.chunks_mut(hw).enumerate() {
            for m in 0..rank {
                let a = mix[k * rank + m];
                for (d, &z) in dst.iter_mut().zip(&fields[m * hw..(m + 1) * hw]) {
                    *d += (a * z) as f32;
                }
            }
        }
    }
    Tensor::from_vec([n, c, h, w], out)
}

/// 3×3 box filter with clamped borders.
fn smooth(f: &mut [f64], h: usize, w: usize) {
    let src = f.to_vec();
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for di in [-1isize, 0, 1] {
                for dj in [-1isize, 0, 1] {
                    let y = (i as isize + di).clamp(0, h as isize - 1) as usize;
                    let x = (j as isize + dj).clamp(0, w as isize - 1) as usize;
                    acc += src[y * w + x];
                }
            }
            f[i * w + j] = acc / 9.0;
        }
    }
}

fn standardize(f: &mut [f64]) {
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    for v in f.iter_mut() {
        *v = (*v - mean) * inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_channels_are_proportional() {
        let t = synth_feature_maps_with_rank(2, 6, 5, 5, 1, 9).unwrap();
        let d = t.data();
        for s in 0..2 {
            let base = &d[s * 150..s * 150 + 25];
            for k in 1..6 {
                let ch = &d[s * 150 + k * 25..s * 150 + (k + 1) * 25];
                let ratio = ch[0] / base[0];
                for (a, b) in ch.iter().zip(base) {
                    assert!((a - ratio * b).abs() < 1e-4 * (1.0 + a.abs()));
                }
            }
        }
    }

    #[test]
    fn seeded_and_deterministic() {
        let a = synth_feature_maps(3, 8, 4, 4, 1).unwrap();
        assert!(a.bit_eq(&synth_feature_maps(3, 8, 4, 4, 1).unwrap()));
        assert!(!a.bit_eq(&synth_feature_maps(3, 8, 4, 4, 2).unwrap()));
    }
}
