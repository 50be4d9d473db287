use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Ctx, Module};
use crate::params::ParamStore;
use crate::tensor::Float;

pub(crate) fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Cheap width/resolution adapter placed in front of a block: a bias-free
/// convolution with `gcd(c_in, c_out)` groups and stride 1 or 2.
#[derive(Debug, Clone)]
pub struct ChannelShortcut {
    pub conv: Conv2d,
}

impl ChannelShortcut {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_kernel(store, name, c_in, c_out, stride, 3, rng)
    }

    pub fn with_kernel<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return Err(Error::config(format!("shortcut stride must be 1 or 2, got {stride}")));
        }
        if kernel % 2 == 0 {
            return Err(Error::config(format!("shortcut kernel {kernel} must be odd")));
        }
        let spec = ConvSpec::same(c_in, c_out, kernel, gcd(c_in, c_out)).with_stride(stride);
        Ok(ChannelShortcut { conv: Conv2d::new(store, name, spec, rng)? })
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
    }
}

impl<T: Float> Module<T> for ChannelShortcut {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.conv.forward(cx, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::infer;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn widening_with_stride_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let s = ChannelShortcut::new(&mut store, "sc", 16, 32, 2, &mut rng).unwrap();
        assert_eq!(s.param_count(), 288);
        assert_eq!(store.count(), 288);
        let y = infer(&s, &store, &Tensor::zeros([2, 16, 8, 8]).unwrap()).unwrap();
        assert_eq!(y.shape(), &[2, 32, 4, 4]);
    }

    #[test]
    fn centre_tap_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let s = ChannelShortcut::new(&mut store, "sc", 6, 6, 1, &mut rng).unwrap();
        let mut w = Tensor::zeros([6, 1, 3, 3]).unwrap();
        for c in 0..6 {
            w.data_mut()[c * 9 + 4] = 1.0;
        }
        store.set_value(s.conv.weight, w).unwrap();
        let x = Tensor::randn([1, 6, 5, 4], &mut rng).unwrap();
        assert!(infer(&s, &store, &x).unwrap().bit_eq(&x));
    }

    #[test]
    fn stride_three_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        assert!(ChannelShortcut::new(&mut store, "sc", 4, 8, 3, &mut rng).is_err());
        assert_eq!(gcd(12, 18), 6);
    }
}
