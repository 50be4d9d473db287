//! Handwriting-like digit images in the IDX layout, for running the
//! classifier without downloading a dataset.
//!
//! Each digit is drawn from seven-segment strokes with random size, offset,
//! slant, stroke width and endpoint jitter, then blurred into 8-bit pixels
//! with additive noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::idx::IdxArray;
use crate::error::{Error, Result};

pub const DIGIT_SIDE: usize = 28;

// bit k set = segment k lit, segments ordered a b c d e f g
const CODES: [u8; 10] = [0x3F, 0x06, 0x5B, 0x4F, 0x66, 0x6D, 0x7D, 0x07, 0x7F, 0x6F];

// endpoints in a unit box, y pointing down
const SEGMENTS: [[(f64, f64); 2]; 7] = [
    [(0.0, 0.0), (1.0, 0.0)],
    [(1.0, 0.0), (1.0, 0.5)],
    [(1.0, 0.5), (1.0, 1.0)],
    [(0.0, 1.0), (1.0, 1.0)],
    [(0.0, 0.5), (0.0, 1.0)],
    [(0.0, 0.0), (0.0, 0.5)],
    [(0.0, 0.5), (1.0, 0.5)],
];

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

fn render<R: Rng + ?Sized>(digit: usize, rng: &mut R, noise: &Normal<f64>, out: &mut [u8]) {
    let w = rng.gen_range(8.0..13.0);
    let h = rng.gen_range(14.0..19.0);
    let cx = 14.0 + rng.gen_range(-2.0..2.0);
    let cy = 14.0 + rng.gen_range(-2.0..2.0);
    let slant = rng.gen_range(-0.3..0.3);
    let sigma: f64 = rng.gen_range(0.8..1.4);
    let mut strokes = Vec::with_capacity(7);
    for (k, seg) in SEGMENTS.iter().enumerate() {
        if CODES[digit] >> k & 1 == 0 {
            continue;
        }
        let mut map = |(u, v): (f64, f64)| {
            let u = u + rng.gen_range(-0.08..0.08);
            let v = v + rng.gen_range(-0.06..0.06);
            let y = cy + (v - 0.5) * h;
            (cx + (u - 0.5) * w - slant * (y - cy), y)
        };
        strokes.push((map(seg[0]), map(seg[1])));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (i, px) in out.iter_mut().enumerate() {
        let p = ((i % DIGIT_SIDE) as f64 + 0.5, (i / DIGIT_SIDE) as f64 + 0.5);
        let d2 = strokes.iter().map(|&(a, b)| seg_dist2(p, a, b)).fold(f64::INFINITY, f64::min);
        let v = 255.0 * (-d2 * inv).exp() + noise.sample(rng);
        *px = v.round().clamp(0.0, 255.0) as u8;
    }
}

/// `n` images (`n×28×28` ubyte) and balanced labels (`n` ubyte).
pub fn synth_digits(n: usize, seed: u64) -> Result<(IdxArray, IdxArray)> {
    if n == 0 {
        return Err(Error::config("digit count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, 10.0).expect("valid sigma");
    let px = DIGIT_SIDE * DIGIT_SIDE;
    let mut images = vec![0u8; n * px];
    for (img, &l) in images.chunks_mut(px).zip(&labels) {
        render(l as usize, &mut rng, &noise, img);
    }
    Ok((IdxArray::new(vec![n, DIGIT_SIDE, DIGIT_SIDE], images)?, IdxArray::new(vec![n], labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let (img, lab) = synth_digits(50, 3).unwrap();
        assert_eq!(img.dims, vec![50, 28, 28]);
        let labels = lab.labels().unwrap();
        for d in 0..10 {
            assert_eq!(labels.iter().filter(|&&l| l == d).count(), 5);
        }
        let (img2, _) = synth_digits(50, 3).unwrap();
        assert_eq!(img.data, img2.data);
    }

    #[test]
    fn strokes_are_visible() {
        let (img, _) = synth_digits(10, 0).unwrap();
        for im in img.data.chunks(784) {
            assert!(im.iter().filter(|&&p| p > 128).count() > 10);
        }
    }
}
