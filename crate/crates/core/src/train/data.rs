use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// What a dataset's samples are labelled with.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Regression targets, leading extent `N`.
    Values(Tensor<f32>),
    /// Class indices.
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Samples along the leading extent.
    pub inputs: Tensor<f32>,
    pub targets: Targets,
}

fn gather(t: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let row = t.numel() / t.shape()[0];
    let mut out = Vec::with_capacity(row * idx.len());
    for &i in idx {
        out.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_vec(shape, out)
}

impl Dataset {
    pub fn new(inputs: Tensor<f32>, targets: Targets) -> Result<Self> {
        let n = inputs.shape()[0];
        let m = match &targets {
            Targets::Values(t) => t.shape()[0],
            Targets::Labels(l) => l.len(),
        };
        if n != m {
            return Err(Error::Data(format!("{n} inputs but {m} targets")));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The samples at `idx`, in that order.
    pub fn batch(&self, idx: &[usize]) -> Result<Dataset> {
        let inputs = gather(&self.inputs, idx)?;
        let targets = match &self.targets {
            Targets::Values(t) => Targets::Values(gather(t, idx)?),
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        };
        Ok(Dataset { inputs, targets })
    }

    /// The first `n` samples and the rest.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::config(format!("cannot split {} samples at {n}", self.len())));
        }
        let a: Vec<usize> = (0..n).collect();
        let b: Vec<usize> = (n..self.len()).collect();
        Ok((self.batch(&a)?, self.batch(&b)?))
    }
}

/// The surface `f(x, y) = cos(x)·sin(20y)`.
pub fn surface(x: f64, y: f64) -> f64 {
    x.cos() * (20.0 * y).sin()
}

/// `n` uniform points of `[0,1]²` as `N×2×1×1` inputs with `N×1×1×1`
/// targets from [`surface`].
pub fn sample_function_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y): (f64, f64) = (rng.gen(), rng.gen());
        xs.push(x as f32);
        xs.push(y as f32);
        ys.push(surface(x, y) as f32);
    }
    Dataset::new(Tensor::from_vec([n, 2, 1, 1], xs)?, Targets::Values(Tensor::from_vec([n, 1, 1, 1], ys)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_values() {
        assert_eq!(surface(0.0, 0.0), 0.0);
        assert!((surface(0.5, 0.25) + 0.84153).abs() < 1e-5);
        assert!((surface(1.0, std::f64::consts::PI / 40.0) - 0.54030).abs() < 1e-5);
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_function_dataset(50, 3).unwrap();
        assert_eq!(a, sample_function_dataset(50, 3).unwrap());
        assert_ne!(a, sample_function_dataset(50, 4).unwrap());
        assert!(a.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn batches_gather_rows() {
        let d = Dataset::new(
            Tensor::from_vec([3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(),
            Targets::Labels(vec![7, 8, 9]),
        )
        .unwrap();
        let b = d.batch(&[2, 0]).unwrap();
        assert_eq!(b.inputs.data(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(b.targets, Targets::Labels(vec![9, 7]));
        assert!(Dataset::new(Tensor::zeros([2, 1]).unwrap(), Targets::Labels(vec![1])).is_err());
    }
}
