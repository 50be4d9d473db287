use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Divide the rate by `divisor` every `every` epochs.
    Step {
        #[serde(default = "default_every")]
        every: usize,
        #[serde(default = "default_divisor")]
        divisor: f64,
    },
}

fn default_every() -> usize {
    30
}

fn default_divisor() -> f64 {
    10.0
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_schedule() -> Schedule {
    Schedule::Constant
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SgdConfig {
    pub fn new(lr: f64, epochs: usize, batch_size: usize) -> Self {
        SgdConfig {
            lr,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            schedule: Schedule::Constant,
            epochs,
            batch_size,
            seed: 0,
        }
    }

    /// A zero rate is accepted so that a run can leave the model untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if let Schedule::Step { every, divisor } = self.schedule {
            if every == 0 || !(divisor > 0.0) {
                return Err(Error::config("step schedule needs every > 0 and divisor > 0"));
            }
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (0-based).
pub fn lr_at(epoch: usize, config: &SgdConfig) -> f64 {
    match config.schedule {
        Schedule::Constant => config.lr,
        Schedule::Step { every, divisor } => config.lr / divisor.powi((epoch / every) as i32),
    }
}

/// One momentum step on raw slices:
/// `v ← μ·v + (g + λ·w)`, `w ← w − η·v`.
pub fn sgd_update<T: Float>(w: &mut [T], g: &[T], v: &mut [T], lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v + (g + wd * *w);
        *w -= lr * *v;
    }
}

/// Momentum SGD over a parameter store. Weight decay applies to
/// [`ParamKind::Weight`] only.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn from_config(config: &SgdConfig) -> Self {
        Sgd::new(config.momentum, config.weight_decay)
    }

    /// Applies the stored gradients. Fails without touching the store if any
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for p in store.params() {
            if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    param: p.name.clone(),
                    detail: format!("non-finite gradient at element {i}"),
                });
            }
        }
        self.velocity.resize(store.len(), None);
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.param_mut(id);
            let wd = if p.kind == ParamKind::Weight { self.weight_decay } else { 0.0 };
            let v = self.velocity[id.index()]
                .get_or_insert_with(|| Tensor::raw(p.value.shape().to_vec(), vec![T::zero(); p.value.numel()]));
            sgd_update(p.value.data_mut(), p.grad.data(), v.data_mut(), lr, self.momentum, wd);
            if let Some(i) = p.value.data().iter().position(|w| !w.is_finite()) {
                return Err(Error::Divergence {
                    param: p.name.clone(),
                    detail: format!("non-finite value at element {i}"),
                });
            }
        }
        Ok(())
    }
}
