//! Central-difference verification of recorded adjoints.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `max (|a − n| − r)⁺ / (|a| + |n| + 1e-12)` over all checked
    /// coordinates, where `r` is the rounding floor of the central difference.
    pub max_rel_err: f64,
    /// Coordinate where the maximum occurred, and the parameter name for
    /// parameter checks.
    pub worst: usize,
    pub worst_param: Option<String>,
    pub coords: usize,
    /// Smallest relu input seen while evaluating at the unperturbed point.
    pub relu_margin: f64,
}

/// Rounding error of a central difference of `f` with step `eps`. Without
/// it an exactly-zero adjoint compares as relative error 1 against the
/// noise the difference produces.
fn rounding_floor(f: f64, eps: f64) -> f64 {
    32.0 * f64::EPSILON * f.abs().max(1.0) / eps
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    ((a - n).abs() - floor).max(0.0) / (a.abs() + n.abs() + 1e-12)
}

fn eval_scalar(tape: &Tape<f64>, v: Var, coord: usize) -> Result<f64> {
    let val = tape.value(v);
    if val.numel() != 1 {
        return Err(Error::Contract(format!("checked map must be scalar, got {:?}", val.shape())));
    }
    let x = val.item();
    if !x.is_finite() {
        return Err(Error::Numerical(format!("non-finite value {x} at coordinate {coord}")));
    }
    Ok(x)
}

/// Compares the tape's adjoint of the scalar map `f` at `point` against
/// central differences with step `eps`.
pub fn finite_difference_check<F>(f: F, point: &Tensor<f64>, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    let floor = rounding_floor(eval_scalar(&tape, y, 0)?, eps);
    let relu_margin = tape.min_relu_margin();
    let grads = tape.backward(y)?;
    let analytic = grads.wrt(x).map(|g| g.to_f64_vec()).unwrap_or_else(|| vec![0.0; point.numel()]);

    let mut out = GradCheck { max_rel_err: 0.0, worst: 0, worst_param: None, coords: point.numel(), relu_margin };
    for i in 0..point.numel() {
        let probe = |delta: f64| -> Result<f64> {
            let mut p = point.clone();
            p.data_mut()[i] += delta;
            let mut t = Tape::new();
            let xv = t.leaf(p, false);
            let yv = f(&mut t, xv)?;
            eval_scalar(&t, yv, i)
        };
        let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
        if !analytic[i].is_finite() {
            return Err(Error::Numerical(format!("non-finite adjoint at coordinate {i}")));
        }
        let e = rel_err(analytic[i], numeric, floor);
        if e > out.max_rel_err {
            out.max_rel_err = e;
            out.worst = i;
        }
    }
    Ok(out)
}

impl GradCheck {
    /// Same comparison over every element of every parameter in `store`.
    /// `f` must register the parameters it reads as parameter leaves.
    pub fn params<F>(store: &ParamStore<f64>, f: F, eps: f64) -> Result<GradCheck>
    where
        F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let y = f(store, &mut tape)?;
        let floor = rounding_floor(eval_scalar(&tape, y, 0)?, eps);
        let relu_margin = tape.min_relu_margin();
        let grads = tape.backward(y)?;
        let mut analytic: Vec<Option<Vec<f64>>> = vec![None; store.len()];
        for (id, g) in grads.params() {
            if let Some(g) = g {
                let slot = analytic[id.index()].get_or_insert_with(|| vec![0.0; g.numel()]);
                slot.iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
            }
        }

        let mut out = GradCheck { max_rel_err: 0.0, worst: 0, worst_param: None, coords: 0, relu_margin };
        let mut probe_store = store.clone();
        for id in store.ids() {
            let n = store.value(id).numel();
            for i in 0..n {
                let base = store.value(id).clone();
                let mut eval_at = |delta: f64| -> Result<f64> {
                    let mut p = base.clone();
                    p.data_mut()[i] += delta;
                    probe_store.set_value(id, p)?;
                    let mut t = Tape::new();
                    let yv = f(&probe_store, &mut t)?;
                    eval_scalar(&t, yv, i)
                };
                let numeric = (eval_at(eps)? - eval_at(-eps)?) / (2.0 * eps);
                probe_store.set_value(id, base)?;
                let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[i]);
                let e = rel_err(a, numeric, floor);
                out.coords += 1;
                if e > out.max_rel_err {
                    out.max_rel_err = e;
                    out.worst = i;
                    out.worst_param = Some(store.param(id).name.clone());
                }
            }
        }
        Ok(out)
    }
}
