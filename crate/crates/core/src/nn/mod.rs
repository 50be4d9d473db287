//! Layers: grouped convolution, batch normalization, linear maps, pooling,
//! activations and losses.

mod conv;
mod linear;
mod norm;

use std::collections::HashMap;

pub use conv::{Conv2d, ConvSpec};
pub use linear::Linear;
pub use norm::BatchNorm2d;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::kernels::PoolSpec;
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    SoftmaxCrossEntropy,
}

/// A running-statistics update produced by a train-mode batchnorm.
#[derive(Debug, Clone)]
pub struct StatUpdate<T> {
    pub mean: BufferId,
    pub var: BufferId,
    pub batch_mean: Tensor<T>,
    /// Unbiased batch variance.
    pub batch_var: Tensor<T>,
    pub momentum: f64,
}

/// Forward-pass context: the tape being recorded, read access to the
/// parameters, and the train/eval switch.
pub struct Ctx<'a, T> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    leaves: HashMap<ParamId, Var>,
    buffer_leaves: HashMap<BufferId, Var>,
    stats: Vec<StatUpdate<T>>,
}

impl<'a, T: Float> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Ctx::with_tape(Tape::new(), store, mode)
    }

    pub fn with_tape(tape: Tape<T>, store: &'a ParamStore<T>, mode: Mode) -> Self {
        Ctx { tape, store, mode, leaves: HashMap::new(), buffer_leaves: HashMap::new(), stats: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    /// The tape leaf holding parameter `id`, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.leaves.get(&id) {
            return v;
        }
        let v = self.tape.param_leaf(self.store.value(id).clone(), id);
        self.leaves.insert(id, v);
        v
    }

    pub fn buffer(&mut self, id: BufferId) -> Var {
        if let Some(&v) = self.buffer_leaves.get(&id) {
            return v;
        }
        let v = self.tape.leaf(self.store.buffer(id).value.clone(), false);
        self.buffer_leaves.insert(id, v);
        v
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub(crate) fn push_stats(&mut self, update: StatUpdate<T>) {
        self.stats.push(update);
    }

    /// Runs `f` inside a named tape scope.
    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.tape.push_scope(name);
        let r = f(self);
        self.tape.pop_scope();
        r
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.tape.relu(x)
    }

    pub fn pool(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        self.tape.pool(x, spec)
    }

    pub fn loss(&mut self, pred: Var, target: LossTarget<'_, T>) -> Result<Var> {
        match target {
            LossTarget::Values(t) => {
                let tv = self.input(t.clone());
                self.tape.mse(pred, tv)
            }
            LossTarget::Labels(l) => self.tape.softmax_cross_entropy(pred, l),
        }
    }

    /// Finishes the pass, returning the tape and the pending running-stat
    /// updates.
    pub fn finish(self) -> (Tape<T>, Vec<StatUpdate<T>>) {
        (self.tape, self.stats)
    }
}

/// Target of a loss evaluation.
pub enum LossTarget<'t, T> {
    Values(&'t Tensor<T>),
    Labels(&'t [usize]),
}

/// Folds running-statistics updates into the store's buffers.
pub fn apply_stat_updates<T: Float>(store: &mut ParamStore<T>, updates: &[StatUpdate<T>]) -> Result<()> {
    for u in updates {
        let m = T::of(u.momentum);
        let one = T::one();
        let mean = store.buffer(u.mean).value.zip_map(&u.batch_mean, |r, b| (one - m) * r + m * b)?;
        let var = store.buffer(u.var).value.zip_map(&u.batch_var, |r, b| (one - m) * r + m * b)?;
        store.set_buffer(u.mean, mean)?;
        store.set_buffer(u.var, var)?;
    }
    Ok(())
}

/// Anything with a forward pass over the tape.
pub trait Module<T: Float> {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var>;
}

/// Runs a module in eval mode on a plain tensor and returns its output.
pub fn infer<T: Float, M: Module<T> + ?Sized>(module: &M, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut cx = Ctx::new(store, Mode::Eval);
    let xv = cx.input(x.clone());
    let y = module.forward(&mut cx, xv)?;
    Ok(cx.value(y).clone())
}

pub(crate) fn kaiming_bound(fan_in: usize) -> f64 {
    // uniform(-b, b) with b = gain·sqrt(3/fan_in), gain = sqrt(2) for relu
    (6.0 / fan_in as f64).sqrt()
}
