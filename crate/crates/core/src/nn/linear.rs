use rand::Rng;

use super::{Ctx, Module};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Float, Tensor};

/// Fully connected layer `y = x·Wᵀ + b` on `N×in` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let b = 1.0 / (fan_in as f64).sqrt();
        Ok(Linear {
            fan_in,
            fan_out,
            weight: store.add_param(
                format!("{name}/weight"),
                ParamKind::Weight,
                Tensor::uniform([fan_out, fan_in], -b, b, rng)?,
            )?,
            bias: store.add_param(format!("{name}/bias"), ParamKind::Bias, Tensor::uniform([fan_out], -b, b, rng)?)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }
}

impl<T: Float> Module<T> for Linear {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = cx.tape.shape(x).to_vec();
        let x = match shape[..] {
            [_, f] if f == self.fan_in => x,
            [n, c, h, w] if c * h * w == self.fan_in => cx.tape.reshape(x, &[n, c * h * w])?,
            _ => return Err(Error::dim(format!("linear layer expects {} features, got input {shape:?}", self.fan_in))),
        };
        let (w, b) = (cx.param(self.weight), cx.param(self.bias));
        cx.tape.linear(x, w, b)
    }
}
