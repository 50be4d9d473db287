//! Finite-difference verification of every registered primitive and of
//! complete MGIC blocks, at 64-bit.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::output::{num, write_json, Table};
use super::RunOptions;
use crate::autograd::{ConvGeom, CustomOp, GradCheck, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{PoolKind, PoolSpec};
use crate::mgic::{build_mgic_block, BlockTemplate, MgicConfig};
use crate::nn::{Ctx, Mode, Module};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Random points per primitive.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Random points per composite block.
    #[serde(default = "default_block_points")]
    pub block_points: usize,
    /// Points whose smallest relu input is closer to the kink than this are
    /// redrawn.
    #[serde(default = "default_margin")]
    pub min_relu_margin: f64,
    /// Adds a custom op with a wrong adjoint, which must be reported.
    #[serde(default)]
    pub corrupt_fixture: bool,
}

fn default_eps() -> f64 {
    1e-6
}

fn default_tolerance() -> f64 {
    1e-4
}

fn default_points() -> usize {
    10
}

fn default_block_points() -> usize {
    3
}

fn default_margin() -> f64 {
    1e-3
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: default_eps(),
            tolerance: default_tolerance(),
            points: default_points(),
            block_points: default_block_points(),
            min_relu_margin: default_margin(),
            corrupt_fixture: false,
        }
    }
}

pub type Objective = Box<dyn Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>>;

/// A scalar objective over the parameters in `store`.
pub struct Case {
    pub store: ParamStore<f64>,
    pub f: Objective,
}

/// A named family of random cases.
pub struct Probe {
    pub name: String,
    pub composite: bool,
    pub build: Box<dyn Fn(&mut ChaCha8Rng) -> Result<Case>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub name: String,
    pub points: usize,
    pub coords: usize,
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub results: Vec<ProbeResult>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ProbeResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

type OpFn = Arc<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn leaves(store: &ParamStore<f64>, tape: &mut Tape<f64>) -> Vec<Var> {
    store.ids().map(|id| tape.param_leaf(store.value(id).clone(), id)).collect()
}

/// `Σ w ⊙ y` with fixed random weights, so every output element matters
/// with a different sign and size.
fn weighted(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = tape.leaf(w.clone(), false);
    let m = tape.mul(y, wv)?;
    tape.sum(m)
}

fn op_case(rng: &mut ChaCha8Rng, inputs: &[(&str, Vec<usize>)], op: OpFn) -> Result<Case> {
    let mut store = ParamStore::new();
    for (name, shape) in inputs {
        store.add_param(*name, ParamKind::Weight, Tensor::randn(shape.clone(), rng)?)?;
    }
    let mut probe = Tape::new();
    let xs = leaves(&store, &mut probe);
    let y = op(&mut probe, &xs)?;
    let w = Tensor::randn(probe.shape(y).to_vec(), rng)?;
    let f: Objective = Box::new(move |store, tape| {
        let xs = leaves(store, tape);
        let y = op(tape, &xs)?;
        weighted(tape, y, &w)
    });
    Ok(Case { store, f })
}

fn primitive(name: &str, inputs: Vec<(&'static str, Vec<usize>)>, op: OpFn) -> Probe {
    Probe { name: name.to_string(), composite: false, build: Box::new(move |rng| op_case(rng, &inputs, op.clone())) }
}

fn conv_probe(name: &str, x: [usize; 4], w: [usize; 4], geom: ConvGeom) -> Probe {
    primitive(name, vec![("x", x.to_vec()), ("w", w.to_vec())], Arc::new(move |t, v| t.conv2d(v[0], v[1], geom)))
}

/// `x ↦ x²` with an optionally wrong adjoint.
struct Square {
    corrupt: bool,
}

impl CustomOp<f64> for Square {
    fn name(&self) -> &str {
        if self.corrupt {
            "square-corrupted"
        } else {
            "square"
        }
    }

    fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(inputs[0].map(|v| v * v))
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let k = if self.corrupt { 3.0 } else { 2.0 };
        Ok(vec![inputs[0].zip_map(grad, |x, g| k * x * g)?])
    }
}

/// The custom-op probe; `corrupt` selects the broken adjoint.
pub fn custom_probe(corrupt: bool) -> Probe {
    let op = Arc::new(Square { corrupt });
    let name = format!("custom/{}", op.name());
    primitive(&name, vec![("x", vec![3, 4])], Arc::new(move |t, v| t.custom(op.clone(), &[v[0]])))
}

/// An MGIC block in training mode, checked against its input and every
/// parameter.
pub fn block_probe(
    name: &str,
    c: usize,
    s_g: usize,
    s_c: usize,
    template: BlockTemplate,
    x_shape: [usize; 4],
) -> Probe {
    Probe {
        name: name.to_string(),
        composite: true,
        build: Box::new(move |rng| {
            let mut store = ParamStore::new();
            let cfg = MgicConfig::new(s_g, s_c, template.clone());
            let block = build_mgic_block(&mut store, "block", c, &cfg, rng)?;
            // move the norms off their trivial initialisation
            for id in store.ids().collect::<Vec<_>>() {
                if store.param(id).kind.is_norm() {
                    let v = store.value(id).clone();
                    let shape = v.shape().to_vec();
                    let jitter = Tensor::uniform(shape, -0.3, 0.3, rng)?;
                    store.set_value(id, v.zip_map(&jitter, |a, b| a + b)?)?;
                }
            }
            let x = store.add_param("input", ParamKind::Weight, Tensor::randn(x_shape.to_vec(), rng)?)?;
            let w = Tensor::randn(x_shape.to_vec(), rng)?;
            let f: Objective = Box::new(move |store, tape| {
                let mut cx = Ctx::with_tape(std::mem::take(tape), store, Mode::Train);
                let xv = cx.param(x);
                let y = block.forward(&mut cx, xv);
                let (t, _) = cx.finish();
                *tape = t;
                weighted(tape, y?, &w)
            });
            Ok(Case { store, f })
        }),
    }
}

/// Every primitive with a registered adjoint, plus two full blocks.
pub fn registered_probes(config: &GradcheckConfig) -> Vec<Probe> {
    let g = |stride, pad, groups| ConvGeom { stride, pad, groups };
    let mut probes = vec![
        primitive("matmul", vec![("a", vec![3, 4]), ("b", vec![4, 5])], Arc::new(|t, v| t.matmul(v[0], v[1]))),
        primitive("add", vec![("a", vec![2, 3, 4]), ("b", vec![2, 3, 4])], Arc::new(|t, v| t.add(v[0], v[1]))),
        primitive("sub", vec![("a", vec![2, 3, 4]), ("b", vec![2, 3, 4])], Arc::new(|t, v| t.sub(v[0], v[1]))),
        primitive("mul", vec![("a", vec![2, 3, 4]), ("b", vec![2, 3, 4])], Arc::new(|t, v| t.mul(v[0], v[1]))),
        primitive("scale", vec![("x", vec![7])], Arc::new(|t, v| t.scale(v[0], -1.7))),
        primitive("relu", vec![("x", vec![4, 6])], Arc::new(|t, v| t.relu(v[0]))),
        primitive(
            "sum",
            vec![("x", vec![2, 3])],
            Arc::new(|t, v| {
                let s = t.sum(v[0])?;
                t.mul(s, s)
            }),
        ),
        primitive(
            "mean",
            vec![("x", vec![2, 3])],
            Arc::new(|t, v| {
                let s = t.mean(v[0])?;
                t.mul(s, s)
            }),
        ),
        conv_probe("conv2d", [2, 4, 5, 5], [6, 2, 3, 3], g(2, 1, 2)),
        conv_probe("conv2d/dense", [2, 3, 4, 4], [5, 3, 3, 3], g(1, 1, 1)),
        conv_probe("conv2d/depthwise", [2, 4, 4, 4], [4, 1, 3, 3], g(1, 1, 4)),
        conv_probe("conv2d/pointwise", [2, 6, 2, 3], [3, 2, 1, 1], g(1, 0, 3)),
        primitive(
            "channel_bias",
            vec![("x", vec![2, 3, 2, 2]), ("b", vec![3])],
            Arc::new(|t, v| t.channel_bias(v[0], v[1])),
        ),
        primitive(
            "batchnorm_train",
            vec![("x", vec![4, 3, 2, 2]), ("gamma", vec![3]), ("beta", vec![3])],
            Arc::new(|t, v| t.batchnorm_train(v[0], v[1], v[2], 1e-5)),
        ),
        primitive(
            "batchnorm_eval",
            vec![("x", vec![3, 3, 2, 2]), ("gamma", vec![3]), ("beta", vec![3])],
            Arc::new(|t, v| {
                let mean = t.leaf(Tensor::from_vec([3], vec![0.1, -0.4, 0.7])?, false);
                let var = t.leaf(Tensor::from_vec([3], vec![0.5, 1.3, 2.0])?, false);
                t.batchnorm_eval(v[0], v[1], v[2], mean, var, 1e-5)
            }),
        ),
        primitive(
            "pool/max",
            vec![("x", vec![2, 2, 4, 4])],
            Arc::new(|t, v| t.pool(v[0], PoolSpec { kind: PoolKind::Max, window: 2, stride: 2 })),
        ),
        primitive(
            "pool/avg",
            vec![("x", vec![2, 2, 4, 4])],
            Arc::new(|t, v| t.pool(v[0], PoolSpec { kind: PoolKind::Avg, window: 2, stride: 1 })),
        ),
        primitive("global_avg_pool", vec![("x", vec![2, 3, 3, 2])], Arc::new(|t, v| t.global_avg_pool(v[0]))),
        primitive(
            "linear",
            vec![("x", vec![3, 4]), ("w", vec![5, 4]), ("b", vec![5])],
            Arc::new(|t, v| t.linear(v[0], v[1], v[2])),
        ),
        primitive("reshape", vec![("x", vec![2, 3, 4])], Arc::new(|t, v| t.reshape(v[0], &[6, 4]))),
        primitive("slice_channels", vec![("x", vec![2, 5, 2, 2])], Arc::new(|t, v| t.slice_channels(v[0], 1, 3))),
        primitive(
            "mse",
            vec![("pred", vec![4, 2, 1, 1]), ("target", vec![4, 2, 1, 1])],
            Arc::new(|t, v| t.mse(v[0], v[1])),
        ),
        primitive(
            "softmax_cross_entropy",
            vec![("logits", vec![4, 5])],
            Arc::new(|t, v| t.softmax_cross_entropy(v[0], &[0, 3, 1, 4])),
        ),
        custom_probe(false),
        block_probe("mgic-block/simple-conv", 16, 4, 4, BlockTemplate::SimpleConv { d: 3 }, [2, 16, 3, 3]),
        block_probe("mgic-block/bottleneck", 16, 4, 4, BlockTemplate::bottleneck(3, 2, 1), [2, 16, 2, 2]),
    ];
    if config.corrupt_fixture {
        probes.push(custom_probe(true));
    }
    probes
}

fn check_probe(probe: &Probe, points: usize, config: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<ProbeResult> {
    let mut res = ProbeResult {
        name: probe.name.clone(),
        points: 0,
        coords: 0,
        max_rel_err: 0.0,
        worst_param: None,
        passed: true,
        error: None,
    };
    for _ in 0..points {
        let mut case = None;
        for _ in 0..50 {
            let c = (probe.build)(rng)?;
            let mut t = Tape::new();
            (c.f)(&c.store, &mut t)?;
            if t.min_relu_margin() >= config.min_relu_margin {
                case = Some(c);
                break;
            }
        }
        let case = case.ok_or_else(|| Error::Numerical("no point away from relu kinks in 50 draws".into()))?;
        let r = GradCheck::params(&case.store, |s, t| (case.f)(s, t), config.eps)?;
        res.points += 1;
        res.coords += r.coords;
        if r.max_rel_err >= res.max_rel_err {
            res.max_rel_err = r.max_rel_err;
            res.worst_param = r.worst_param;
        }
    }
    res.passed = res.max_rel_err < config.tolerance;
    Ok(res)
}

/// Runs `probes`; failures are recorded, never raised.
pub fn run_probes(probes: &[Probe], config: &GradcheckConfig, seed: u64) -> GradcheckReport {
    let results = probes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let points = if p.composite { config.block_points } else { config.points };
            check_probe(p, points, config, &mut rng).unwrap_or_else(|e| ProbeResult {
                name: p.name.clone(),
                points: 0,
                coords: 0,
                max_rel_err: f64::NAN,
                worst_param: None,
                passed: false,
                error: Some(e.to_string()),
            })
        })
        .collect();
    GradcheckReport { tolerance: config.tolerance, results }
}

pub fn run(config: &GradcheckConfig, opts: &RunOptions) -> Result<GradcheckReport> {
    if !(config.eps > 0.0) || !(config.tolerance > 0.0) || config.points == 0 {
        return Err(Error::config("eps, tolerance and points must be positive"));
    }
    let report = run_probes(&registered_probes(config), config, opts.seed);
    for r in &report.results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let detail = match (&r.error, &r.worst_param) {
            (Some(e), _) => format!("  error: {e}"),
            (None, Some(p)) if !r.passed => format!("  worst at `{p}`"),
            _ => String::new(),
        };
        println!("{status} {:<28} max rel err {:.3e} over {} coords{detail}", r.name, r.max_rel_err, r.coords);
    }
    if let Some(dir) = &opts.out {
        let mut t = Table::new(&["op", "points", "coords", "max_rel_err", "passed"]);
        for r in &report.results {
            t.push(vec![
                r.name.clone(),
                r.points.to_string(),
                r.coords.to_string(),
                num(r.max_rel_err),
                r.passed.to_string(),
            ]);
        }
        t.write(dir, "gradcheck.csv", &opts.provenance().with("eps", config.eps).with("tolerance", config.tolerance))?;
        write_json(dir, "gradcheck.json", &report)?;
    }
    Ok(report)
}
