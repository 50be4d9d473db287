//! Parameter, MAC and activation-memory accounting.
//!
//! Costs are read off a recorded forward pass, so any network built from the
//! layers in this crate is covered. One MAC is one multiply-accumulate per
//! kernel tap per output element; `flops = 2·macs`. Batch normalization costs
//! one MAC per element, average pooling one per window tap, global average
//! pooling one per input element. Additions, bias, relu and max pooling are
//! free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{OpKind, Var};
use crate::error::{Error, Result};
use crate::kernels::PoolKind;
use crate::mgic::level_widths;
use crate::nn::{Ctx, Mode, Module};
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    /// Elements produced by the layer's nodes.
    pub activation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    /// Convolution, linear and transfer weights only; norm and bias
    /// parameters excluded.
    pub weight_params: u64,
    pub macs: u64,
    pub flops: u64,
    /// Elements of every retained feature map, input included.
    pub train_activation: u64,
    /// Largest set of simultaneously live maps during an inference pass.
    pub infer_activation: u64,
    pub per_layer: Vec<LayerCost>,
}

pub fn count_params<T: Float>(store: &ParamStore<T>) -> u64 {
    store.count() as u64
}

/// Parameters in the scope of the closed form: every convolution, linear
/// and transfer weight.
pub fn count_weight_params<T: Float>(store: &ParamStore<T>) -> u64 {
    store.count_where(|p| p.kind.is_conv_weight()) as u64
}

/// Convolution weights of a bias-free simple-conv MGIC block, in closed form.
///
/// Each non-coarsest level of width `c_j` holds a grouped `d×d` relaxation
/// (`s_g·c_j·d²`) and two transfers (`s_g·c_j/2` each); the coarsest level
/// of width `c_n` holds a dense `d×d` convolution (`c_n²·d²`).
pub fn closed_form_mgic_params(c: usize, s_g: usize, s_c: usize, d: usize) -> Result<u64> {
    if s_g == 0 || s_g % 2 != 0 && c >= 2 * s_c {
        return Err(Error::config(format!("group size {s_g} cannot be halved")));
    }
    let widths = level_widths(c, s_c)?;
    let (coarse, fine) = widths.split_last().expect("non-empty widths");
    let mut total = 0u64;
    for (j, &cj) in fine.iter().enumerate() {
        if cj % s_g != 0 {
            return Err(Error::config(format!("s_g={s_g} does not divide level {j} width {cj}")));
        }
        total += (s_g * cj * (d * d + 1)) as u64;
    }
    Ok(total + (coarse * coarse * d * d) as u64)
}

/// Upper bound `2·s_g·c·(d²+1) + s_c²·d²` on the closed form when the
/// coarsest width equals `s_c`.
pub fn closed_form_bound(c: usize, s_g: usize, s_c: usize, d: usize) -> u64 {
    (2 * s_g * c * (d * d + 1) + s_c * s_c * d * d) as u64
}

/// Feature-map elements of the channel hierarchy relative to the input map.
pub fn hierarchy_ratio(widths: &[usize]) -> f64 {
    widths.iter().sum::<usize>() as f64 / widths[0] as f64
}

/// Traces `f` on a zero input of `input_shape` in eval mode and accounts for
/// every recorded node.
pub fn trace_cost<T: Float>(
    store: &ParamStore<T>,
    input_shape: &[usize],
    f: impl FnOnce(&mut Ctx<'_, T>, Var) -> Result<Var>,
) -> Result<CostReport> {
    let mut cx = Ctx::new(store, Mode::Eval);
    let x = cx.input(Tensor::zeros(input_shape.to_vec())?);
    let y = f(&mut cx, x)?;
    let (tape, _) = cx.finish();

    let n = tape.len();
    let mut last_use = vec![0usize; n];
    let mut is_map = vec![false; n];
    let mut size = vec![0u64; n];
    let mut layers: BTreeMap<String, LayerCost> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut macs_total = 0u64;

    for node in tape.nodes() {
        let i = node.index;
        for &inp in node.inputs {
            last_use[inp] = i;
        }
        let out = node.shape.iter().product::<usize>() as u64;
        size[i] = out;
        let macs = match node.kind {
            OpKind::Conv2d => {
                let w = node.input_shapes[1];
                out * (w[1] * w[2] * w[3]) as u64
            }
            OpKind::Linear => out * node.input_shapes[0][1] as u64,
            OpKind::MatMul => out * node.input_shapes[0][1] as u64,
            OpKind::BatchNormTrain | OpKind::BatchNormEval => out,
            OpKind::Pool => match node.pool {
                Some(p) if p.kind == PoolKind::Avg => out * (p.window * p.window) as u64,
                _ => 0,
            },
            OpKind::GlobalAvgPool => node.input_shapes[0].iter().product::<usize>() as u64,
            _ => 0,
        };
        macs_total += macs;
        // the input leaf and every computed map count; parameters, buffers and
        // reshaped views do not
        is_map[i] =
            (node.kind == OpKind::Leaf && i == x.index()) || !matches!(node.kind, OpKind::Leaf | OpKind::Reshape);
        let entry = layers.entry(node.scope.to_string()).or_insert_with(|| {
            order.push(node.scope.to_string());
            LayerCost { name: node.scope.to_string(), params: 0, macs: 0, activation: 0 }
        });
        entry.macs += macs;
        if let Some(p) = node.param {
            entry.params += store.value(p).numel() as u64;
        }
        if is_map[i] && node.kind != OpKind::Leaf {
            entry.activation += out;
        }
    }

    let train_activation = (0..n).filter(|&i| is_map[i]).map(|i| size[i]).sum();
    // liveness: a map is allocated when produced and freed after its last reader
    last_use[y.index()] = n;
    let mut live = 0u64;
    let mut peak = 0u64;
    let mut frees: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for i in 0..n {
        if is_map[i] {
            frees[last_use[i].max(i)].push(i);
        }
    }
    for i in 0..n {
        if is_map[i] {
            live += size[i];
        }
        peak = peak.max(live);
        for &k in &frees[i] {
            live -= size[k];
        }
    }

    let per_layer = order.into_iter().map(|k| layers.remove(&k).expect("recorded scope")).collect();
    Ok(CostReport {
        params: count_params(store),
        weight_params: count_weight_params(store),
        macs: macs_total,
        flops: 2 * macs_total,
        train_activation,
        infer_activation: peak,
        per_layer,
    })
}

pub fn cost_report<T: Float, M: Module<T> + ?Sized>(
    module: &M,
    store: &ParamStore<T>,
    input_shape: &[usize],
) -> Result<CostReport> {
    trace_cost(store, input_shape, |cx, x| module.forward(cx, x))
}
