use std::sync::Arc;

use super::ops::{self, ConvGeom, CustomOp, Op, OpKind, Saved};
use crate::error::{Error, Result};
use crate::kernels::PoolSpec;
use crate::params::ParamId;
use crate::tensor::{Float, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<usize>,
    saved: Saved<T>,
    requires_grad: bool,
    param: Option<ParamId>,
    scope: Arc<str>,
}

/// Read-only description of one recorded node.
#[derive(Debug, Clone)]
pub struct NodeInfo<'a> {
    pub index: usize,
    pub kind: OpKind,
    pub name: String,
    pub inputs: &'a [usize],
    pub input_shapes: Vec<&'a [usize]>,
    pub shape: &'a [usize],
    pub param: Option<ParamId>,
    pub scope: &'a str,
    /// Stride/pad/groups of a convolution node.
    pub conv: Option<ConvGeom>,
    pub pool: Option<PoolSpec>,
}

/// An append-only record of primitive evaluations. Nodes are stored in
/// evaluation order, so every node's inputs precede it.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    scopes: Vec<String>,
    scope: Arc<str>,
    min_relu_margin: f64,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), scopes: Vec::new(), scope: Arc::from(""), min_relu_margin: f64::INFINITY }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Enters a named scope; nodes recorded until the matching
    /// [`Tape::pop_scope`] are labelled with the joined path.
    pub fn push_scope(&mut self, name: &str) {
        self.scopes.push(name.to_string());
        self.scope = Arc::from(self.scopes.join("/"));
    }

    pub fn pop_scope(&mut self) {
        self.scopes.pop();
        self.scope = Arc::from(self.scopes.join("/"));
    }

    /// Smallest `|x|` fed to any relu so far. Finite-difference checks use it
    /// to stay away from kinks.
    pub fn min_relu_margin(&self) -> f64 {
        self.min_relu_margin
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(value, Op::Leaf, vec![], Saved::default(), requires_grad, None)
    }

    pub fn param_leaf(&mut self, value: Tensor<T>, id: ParamId) -> Var {
        self.push_node(value, Op::Leaf, vec![], Saved::default(), true, Some(id))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_node(
        &mut self,
        value: Tensor<T>,
        op: Op<T>,
        inputs: Vec<usize>,
        saved: Saved<T>,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        self.nodes.push(Node { value, op, inputs, saved, requires_grad, param, scope: self.scope.clone() });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::Contract(format!("variable {bad} is not on this tape")));
        }
        if matches!(op, Op::Relu) {
            let m = self.nodes[idx[0]].value.data().iter().map(|v| v.as_f64().abs()).fold(f64::INFINITY, f64::min);
            self.min_relu_margin = self.min_relu_margin.min(m);
        }
        let (value, saved) = {
            let vals: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
            ops::forward(&op, &vals).map_err(|e| self.in_scope(e))?
        };
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_node(value, op, idx, saved, requires_grad, None))
    }

    fn in_scope(&self, e: Error) -> Error {
        if self.scope.is_empty() {
            return e;
        }
        match e {
            Error::Dimension(m) => Error::Dimension(format!("{} (in `{}`)", m, self.scope)),
            Error::Config(m) => Error::Config(format!("{} (in `{}`)", m, self.scope)),
            other => other,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::Scale(s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Mean, &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        self.record(Op::Conv2d(geom), &[x, w])
    }

    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.record(Op::ChannelBias, &[x, b])
    }

    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.record(Op::BatchNormTrain { eps }, &[x, gamma, beta])
    }

    /// Batch mean and biased variance computed by a train-mode batchnorm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&Tensor<T>, &Tensor<T>)> {
        let n = &self.nodes[v.0];
        match n.op {
            Op::BatchNormTrain { .. } => Some((&n.saved.tensors[2], &n.saved.tensors[3])),
            _ => None,
        }
    }

    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: Var, var: Var, eps: f64) -> Result<Var> {
        self.record(Op::BatchNormEval { eps }, &[x, gamma, beta, mean, var])
    }

    pub fn pool(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        self.record(Op::Pool(spec), &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.record(Op::GlobalAvgPool, &[x])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.record(Op::Linear, &[x, w, b])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape(shape.to_vec()), &[x])
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.record(Op::SliceChannels { start, len }, &[x])
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.record(Op::Mse, &[pred, target])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.record(Op::SoftmaxXent(Arc::new(labels.to_vec())), &[logits])
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp<T>>, inputs: &[Var]) -> Result<Var> {
        self.record(Op::Custom(op), inputs)
    }

    pub fn node(&self, index: usize) -> NodeInfo<'_> {
        let n = &self.nodes[index];
        NodeInfo {
            index,
            kind: n.op.kind(),
            name: n.op.name(),
            inputs: &n.inputs,
            input_shapes: n.inputs.iter().map(|&i| self.nodes[i].value.shape()).collect(),
            shape: n.value.shape(),
            param: n.param,
            scope: &n.scope,
            conv: match n.op {
                Op::Conv2d(g) => Some(g),
                _ => None,
            },
            pool: match n.op {
                Op::Pool(p) => Some(p),
                _ => None,
            },
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeInfo<'_>> {
        (0..self.nodes.len()).map(move |i| self.node(i))
    }

    /// Re-evaluates every non-leaf node from the recorded leaves and returns
    /// all node values in tape order.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let v = match n.op {
                Op::Leaf => n.value.clone(),
                _ => {
                    let ins: Vec<&Tensor<T>> = n.inputs.iter().map(|&i| &values[i]).collect();
                    ops::forward(&n.op, &ins)?.0
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract(format!("variable {} is not on this tape", loss.0)))?;
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one())?);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let adj = ops::backward(&node.op, &ins, &node.value, &node.saved, &g, &needs)?;
            for (&j, a) in node.inputs.iter().zip(adj) {
                let Some(a) = a else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                if a.shape() != self.nodes[j].value.shape() {
                    return Err(Error::Contract(format!(
                        "adjoint of `{}` for input {j} has shape {:?}, expected {:?}",
                        node.op.name(),
                        a.shape(),
                        self.nodes[j].value.shape()
                    )));
                }
                grads[j] = Some(match grads[j].take() {
                    None => a,
                    Some(prev) => prev.zip_map(&a, |u, v| u + v)?,
                });
            }
            // keep the gradient of non-leaf nodes only if someone asks via wrt
            grads[i] = Some(g);
        }
        let params = self.nodes.iter().enumerate().filter_map(|(i, n)| n.param.map(|p| (p, i))).collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss or does not require gradients.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients, one entry per parameter leaf on the tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor<T>>)> {
        self.params.iter().map(|&(p, i)| (p, self.grads[i].as_ref()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]), false);
        let b = tape.leaf(t(&[2, 2], &[5., 6., 7., 8.]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let mut tape = Tape::new();
        let i3 = tape.leaf(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]), false);
        let b = tape.leaf(t(&[3, 2], &[1., -2., 3., 0.5, 7., 9.]), false);
        let c = tape.matmul(i3, b).unwrap();
        assert_eq!(tape.value(c), tape.value(b));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros([2, 3]).unwrap(), false);
        let b = tape.leaf(Tensor::zeros([2, 3]).unwrap(), false);
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn disconnected_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let p = tape.leaf(t(&[2], &[3.0, 4.0]), true);
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(p).is_none());
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-2.0, 0.0, 3.0]), true);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 3.0]);
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[0.1, -0.4, 2.0, 1.5, -1.0, 0.3]), true);
        let w = tape.leaf(t(&[3, 2], &[0.2, 0.7, -0.3, 0.9, 1.1, -0.5]), true);
        let y = tape.matmul(x, w).unwrap();
        let r = tape.relu(y).unwrap();
        let s = tape.mean(r).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert!(v.bit_eq(tape.value(Var(i))));
        }
        assert!(replayed[s.0].bit_eq(tape.value(s)));
    }
}
