//! Named learnable parameters and non-learnable buffers of a network.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl BufferId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a parameter is used for. Drives weight decay and the split between
/// convolution weights and normalization parameters in the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Convolution or linear-layer weight.
    Weight,
    Bias,
    /// Restriction / prolongation weights of the channel hierarchy.
    Transfer,
    NormScale,
    NormShift,
}

impl ParamKind {
    pub fn is_conv_weight(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Transfer)
    }

    pub fn is_norm(self) -> bool {
        matches!(self, ParamKind::NormScale | ParamKind::NormShift)
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, usize>,
    buffer_names: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new(), names: HashMap::new(), buffer_names: HashMap::new() }
    }

    pub fn add_param(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(value.shape().to_vec())?;
        let id = self.params.len();
        self.names.insert(name.clone(), id);
        self.params.push(Parameter { name, kind, value, grad });
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        if self.buffer_names.contains_key(&name) {
            return Err(Error::config(format!("duplicate buffer name `{name}`")));
        }
        let id = self.buffers.len();
        self.buffer_names.insert(name.clone(), id);
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(id))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn set_buffer(&mut self, id: BufferId, value: Tensor<T>) -> Result<()> {
        let b = &mut self.buffers[id.0];
        if b.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "buffer `{}` has shape {:?}, got {:?}",
                b.name,
                b.value.shape(),
                value.shape()
            )));
        }
        b.value = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).map(|&i| ParamId(i))
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        self.buffer_names.get(name).map(|&i| BufferId(i))
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn count_where(&self, pred: impl Fn(&Parameter<T>) -> bool) -> usize {
        self.params.iter().filter(|p| pred(p)).map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `grad` into the accumulated gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.shape() != grad.shape() {
            return Err(Error::dim(format!(
                "gradient for `{}` has shape {:?}, expected {:?}",
                p.name,
                grad.shape(),
                p.grad.shape()
            )));
        }
        for (g, d) in p.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += *d;
        }
        Ok(())
    }

    /// Converts every parameter and buffer to another element type, keeping
    /// ids and names. Gradients are reset.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        let params = self
            .params
            .iter()
            .map(|p| Parameter {
                name: p.name.clone(),
                kind: p.kind,
                value: p.value.cast(),
                grad: p.grad.map(|_| T::zero()).cast(),
            })
            .collect();
        let buffers = self.buffers.iter().map(|b| Buffer { name: b.name.clone(), value: b.value.cast() }).collect();
        ParamStore { params, buffers, names: self.names.clone(), buffer_names: self.buffer_names.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        let t = Tensor::zeros([2]).unwrap();
        s.add_param("a/w", ParamKind::Weight, t.clone()).unwrap();
        assert!(s.add_param("a/w", ParamKind::Weight, t).is_err());
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_param("w", ParamKind::Weight, Tensor::zeros([3]).unwrap()).unwrap();
        let g = Tensor::full([3], 1.5).unwrap();
        s.accumulate_grad(id, &g).unwrap();
        s.accumulate_grad(id, &g).unwrap();
        assert_eq!(s.param(id).grad.data(), &[3.0, 3.0, 3.0]);
        s.zero_grad();
        assert_eq!(s.param(id).grad.data(), &[0.0, 0.0, 0.0]);
    }
}
