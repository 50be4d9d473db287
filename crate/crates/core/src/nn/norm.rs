use super::{Ctx, Mode, Module, StatUpdate};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{BufferId, ParamId, ParamKind, ParamStore};
use crate::tensor::{Float, Tensor};

/// Per-channel batch normalization over (N, H, W).
///
/// Train mode normalizes with the biased batch variance and schedules a
/// running-stat update using the unbiased one; eval mode is a fixed affine
/// map per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Self::with_affine(store, name, channels, 1.0, 0.0)
    }

    pub fn with_affine<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        gamma: f64,
        beta: f64,
    ) -> Result<Self> {
        Ok(BatchNorm2d {
            channels,
            gamma: store.add_param(
                format!("{name}/gamma"),
                ParamKind::NormScale,
                Tensor::full([channels], T::of(gamma))?,
            )?,
            beta: store.add_param(
                format!("{name}/beta"),
                ParamKind::NormShift,
                Tensor::full([channels], T::of(beta))?,
            )?,
            running_mean: store.add_buffer(format!("{name}/running_mean"), Tensor::zeros([channels])?)?,
            running_var: store.add_buffer(format!("{name}/running_var"), Tensor::full([channels], T::one())?)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    /// Sets both affine parameters to zero so the layer outputs zeros.
    pub fn zero_affine<T: Float>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.set_value(self.gamma, Tensor::zeros([self.channels])?)?;
        store.set_value(self.beta, Tensor::zeros([self.channels])?)
    }
}

impl<T: Float> Module<T> for BatchNorm2d {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = cx.tape.shape(x).to_vec();
        if shape.len() < 2 || shape[1] != self.channels {
            return Err(Error::dim(format!("batchnorm over {} channels got input {shape:?}", self.channels)));
        }
        let (g, b) = (cx.param(self.gamma), cx.param(self.beta));
        match cx.mode() {
            Mode::Train => {
                let y = cx.tape.batchnorm_train(x, g, b, self.eps)?;
                let (mean, var) = cx.tape.batch_stats(y).expect("train-mode batchnorm node");
                let m = (shape.iter().product::<usize>() / self.channels) as f64;
                let unbiased = T::of(m / (m - 1.0));
                let update = StatUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    batch_mean: mean.clone(),
                    batch_var: var.map(|v| v * unbiased),
                    momentum: self.momentum,
                };
                cx.push_stats(update);
                Ok(y)
            }
            Mode::Eval => {
                let (rm, rv) = (cx.buffer(self.running_mean), cx.buffer(self.running_var));
                cx.tape.batchnorm_eval(x, g, b, rm, rv, self.eps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::apply_stat_updates;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(
        store: &ParamStore<f64>,
        bn: &BatchNorm2d,
        x: &Tensor<f64>,
        mode: Mode,
    ) -> (Tensor<f64>, Vec<StatUpdate<f64>>) {
        let mut cx = Ctx::new(store, mode);
        let xv = cx.input(x.clone());
        let y = bn.forward(&mut cx, xv).unwrap();
        let out = cx.value(y).clone();
        let (_, stats) = cx.finish();
        (out, stats)
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 3).unwrap();
        let (y, _) = run(&store, &bn, &Tensor::zeros([2, 3, 2, 2]).unwrap(), Mode::Train);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn([4, 2, 3, 3], &mut rng).unwrap().map(|v| 3.0 * v + 1.0);
        let (y, _) = run(&store, &bn, &x, Mode::Train);
        let (mean, var) = crate::kernels::channel_moments(y.data(), 4, 2, 9);
        for c in 0..2 {
            assert!(mean[c].abs() < 1e-12);
            assert!((var[c] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn two_sample_channel_hand_value() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1).unwrap();
        let x = Tensor::from_f64([2, 1], &[1.0, 3.0]).unwrap();
        let (y, _) = run(&store, &bn, &x, Mode::Train);
        // biased variance 1, so ±1/sqrt(1 + eps)
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!((y.data()[1] - expect).abs() < 1e-12);
        assert!((expect - 0.99999).abs() < 1e-5);
    }

    #[test]
    fn single_value_batch_is_degenerate() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let mut cx = Ctx::new(&store, Mode::Train);
        let xv = cx.input(Tensor::zeros([1, 2, 1, 1]).unwrap());
        assert!(bn.forward(&mut cx, xv).is_err());
    }

    #[test]
    fn running_stats_use_unbiased_variance() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1).unwrap();
        let x = Tensor::from_f64([2, 1], &[1.0, 3.0]).unwrap();
        let (_, stats) = run(&store, &bn, &x, Mode::Train);
        apply_stat_updates(&mut store, &stats).unwrap();
        // mean 2, unbiased var 2
        assert!((store.buffer(bn.running_mean).value.data()[0] - 0.2).abs() < 1e-12);
        assert!((store.buffer(bn.running_var).value.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_is_a_pure_function() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn([2, 3, 2, 2], &mut rng).unwrap();
        let (_, stats) = run(&store, &bn, &x, Mode::Train);
        apply_stat_updates(&mut store, &stats).unwrap();
        let (a, s1) = run(&store, &bn, &x, Mode::Eval);
        let (b, _) = run(&store, &bn, &x, Mode::Eval);
        assert!(a.bit_eq(&b));
        assert!(s1.is_empty());
    }
}
