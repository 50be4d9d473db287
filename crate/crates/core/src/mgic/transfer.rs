use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Float, Tensor};

/// Restriction and prolongation between level `j` (width `c_j`) and `j+1`.
#[derive(Debug, Clone)]
pub struct TransferPair {
    pub level: usize,
    /// Grouped 1×1 conv `c_j → c_j/2`; each group maps `s → s/2`.
    pub restrict: Conv2d,
    /// Grouped 1×1 conv `c_j/2 → c_j`; each group maps `s/2 → s`.
    pub prolong: Conv2d,
}

/// Positive weights, each output row normalized to sum to one. Entries with
/// `local(o, i)` (indices within the group, `o < group_out`) dominate; the
/// rest of the group gets a small positive background.
fn row_stochastic<T: Float, R: Rng + ?Sized>(
    shape: [usize; 4],
    group_out: usize,
    local: impl Fn(usize, usize) -> bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let row = shape[1] * shape[2] * shape[3];
    let taps = shape[2] * shape[3];
    let mut w = Tensor::uniform(shape, 0.5, 1.5, rng)?;
    let bg = Tensor::<T>::uniform(shape, 0.0, 0.1, rng)?;
    for (o, r) in w.data_mut().chunks_mut(row).enumerate() {
        for (i, v) in r.iter_mut().enumerate() {
            if !local(o % group_out, i / taps) {
                *v = bg.data()[o * row + i];
            }
        }
        let s = r.iter().fold(T::zero(), |a, &v| a + v);
        for v in r.iter_mut() {
            *v /= s;
        }
    }
    Ok(w)
}

pub fn init_transfer<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    level: usize,
    c_j: usize,
    s: usize,
    rng: &mut R,
) -> Result<TransferPair> {
    if s == 0 || s % 2 != 0 {
        return Err(Error::config(format!("transfer group size {s} at level {level} cannot be halved")));
    }
    if c_j % s != 0 {
        return Err(Error::config(format!("group size {s} does not divide level {level} width {c_j}")));
    }
    let groups = c_j / s;
    let restrict = Conv2d::with_weight(
        store,
        &format!("{name}/restrict"),
        ConvSpec::pointwise(c_j, c_j / 2, groups),
        ParamKind::Transfer,
        |shape| row_stochastic(shape, s / 2, |o, i| i / 2 == o, rng),
    )?;
    let prolong = Conv2d::with_weight(
        store,
        &format!("{name}/prolong"),
        ConvSpec::pointwise(c_j / 2, c_j, groups),
        ParamKind::Transfer,
        |shape| row_stochastic(shape, s, |o, i| o / 2 == i, rng),
    )?;
    Ok(TransferPair { level, restrict, prolong })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::infer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_are_positive_and_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let t = init_transfer(&mut store, "t", 0, 16, 4, &mut rng).unwrap();
        for (conv, row) in [(&t.restrict, 4), (&t.prolong, 2)] {
            let w = store.value(conv.weight);
            for r in w.data().chunks(row) {
                assert!(r.iter().all(|&v| v > 0.0));
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(store.value(t.restrict.weight).shape(), &[8, 4, 1, 1]);
        assert_eq!(store.value(t.prolong.weight).shape(), &[16, 2, 1, 1]);
    }

    #[test]
    fn constants_survive_restriction_and_prolongation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let t = init_transfer(&mut store, "t", 0, 8, 4, &mut rng).unwrap();
        let x = Tensor::full([2, 8, 3, 3], 2.5).unwrap();
        let r = infer(&t.restrict, &store, &x).unwrap();
        assert!(r.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        let p = infer(&t.prolong, &store, &r).unwrap();
        assert!(p.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn odd_group_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f32>::new();
        assert!(init_transfer(&mut store, "t", 0, 12, 3, &mut rng).is_err());
    }
}
