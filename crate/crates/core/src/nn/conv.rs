use rand::Rng;

use super::{kaiming_bound, Ctx, Module};
use crate::autograd::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::kernels::conv_out_extent;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Float, Tensor};

/// Shape of a square-kernel grouped convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride-1 convolution keeping the spatial size (odd kernels).
    pub fn same(c_in: usize, c_out: usize, kernel: usize, groups: usize) -> Self {
        ConvSpec { c_in, c_out, kernel, stride: 1, pad: (kernel - 1) / 2, groups, bias: false }
    }

    pub fn pointwise(c_in: usize, c_out: usize, groups: usize) -> Self {
        ConvSpec::same(c_in, c_out, 1, groups)
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.kernel == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::config(format!("conv extents must be positive: {self:?}")));
        }
        if self.c_in % self.groups != 0 || self.c_out % self.groups != 0 {
            return Err(Error::config(format!(
                "groups={} must divide c_in={} and c_out={}",
                self.groups, self.c_in, self.c_out
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in / self.groups, self.kernel, self.kernel]
    }

    /// `c_out·(c_in/g)·k² (+ c_out with bias)`.
    pub fn param_count(&self) -> usize {
        self.c_out * (self.c_in / self.groups) * self.kernel * self.kernel + if self.bias { self.c_out } else { 0 }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_out_extent(h, self.kernel, self.stride, self.pad)?,
            conv_out_extent(w, self.kernel, self.stride, self.pad)?,
        ))
    }

    pub fn geom(&self) -> ConvGeom {
        ConvGeom { stride: self.stride, pad: self.pad, groups: self.groups }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    /// Registers a convolution with fan-in scaled uniform weights.
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = (spec.c_in / spec.groups.max(1)) * spec.kernel * spec.kernel;
        let b = kaiming_bound(fan_in.max(1));
        Self::with_weight(store, name, spec, ParamKind::Weight, |shape| Tensor::uniform(shape, -b, b, rng))
    }

    /// Registers a convolution whose weight tensor comes from `init`.
    pub fn with_weight<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        kind: ParamKind,
        init: impl FnOnce([usize; 4]) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        spec.validate()?;
        let w = init(spec.weight_shape())?;
        let weight = store.add_param(format!("{name}/weight"), kind, w)?;
        let bias = if spec.bias {
            Some(store.add_param(format!("{name}/bias"), ParamKind::Bias, Tensor::zeros([spec.c_out])?)?)
        } else {
            None
        };
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}

impl<T: Float> Module<T> for Conv2d {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = cx.tape.shape(x);
        if shape.len() != 4 || shape[1] != self.spec.c_in {
            return Err(Error::dim(format!("conv expects {} input channels, got input {shape:?}", self.spec.c_in)));
        }
        let w = cx.param(self.weight);
        let y = cx.tape.conv2d(x, w, self.spec.geom())?;
        match self.bias {
            Some(b) => {
                let bv = cx.param(b);
                cx.tape.channel_bias(y, bv)
            }
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{infer, Mode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_worked_values() {
        // level-0 relaxation with group size 8 at width 64
        assert_eq!(ConvSpec::same(64, 64, 3, 8).param_count(), 4608);
        assert_eq!(ConvSpec::same(64, 64, 3, 64).param_count(), 576);
        assert_eq!(ConvSpec::pointwise(64, 64, 1).param_count(), 4096);
    }

    #[test]
    fn identity_pointwise_conv_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::with_weight(&mut store, "id", ConvSpec::pointwise(3, 3, 1), ParamKind::Weight, |s| {
            let mut w = Tensor::zeros(s)?;
            for c in 0..3 {
                w.data_mut()[c * 3 + c] = 1.0;
            }
            Ok(w)
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::randn([2, 3, 4, 4], &mut rng).unwrap();
        let y = infer(&conv, &store, &x).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn depthwise_ones_kernel_sums_neighbourhood() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::with_weight(&mut store, "dw", ConvSpec::same(4, 4, 3, 4), ParamKind::Weight, |s| {
            Tensor::full(s, 1.0)
        })
        .unwrap();
        let x = Tensor::full([1, 4, 5, 5], 1.0).unwrap();
        let y = infer(&conv, &store, &x).unwrap();
        for c in 0..4 {
            for i in 1..4 {
                for j in 1..4 {
                    assert_eq!(y.data()[(c * 5 + i) * 5 + j], 9.0);
                }
            }
        }
        // corner sees four taps
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn weight_shape_enumerates_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (ci, co, k, g, bias) in [(8, 16, 3, 4, true), (6, 6, 1, 3, false), (12, 4, 5, 2, true)] {
            let mut store = ParamStore::<f32>::new();
            let spec = ConvSpec::same(ci, co, k, g).with_bias(bias);
            Conv2d::new(&mut store, "c", spec, &mut rng).unwrap();
            assert_eq!(store.count(), spec.param_count());
        }
    }

    #[test]
    fn misconfigured_groups_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f32>::new();
        assert!(Conv2d::new(&mut store, "c", ConvSpec::same(6, 6, 3, 4), &mut rng).is_err());
        let _ = Mode::Eval;
    }
}
