use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::output::{num, write_json, Table};
use super::RunOptions;
use crate::checkpoint::load_checkpoint;
use crate::cost::{closed_form_mgic_params, cost_report, hierarchy_ratio, CostReport};
use crate::error::{Error, Result};
use crate::mgic::{level_widths, BlockTemplate, GroupClamp};
use crate::models::{build_network, dense_counterpart, ArchSpec, BlockChoice};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Analyze this network instead of the width sweep.
    #[serde(default)]
    pub arch: Option<ArchSpec>,
    /// Analyze the network stored in a checkpoint.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default = "default_group")]
    pub s_g: usize,
    #[serde(default = "default_group")]
    pub s_c: usize,
    #[serde(default = "default_template")]
    pub template: BlockTemplate,
    #[serde(default)]
    pub clamp: GroupClamp,
    #[serde(default = "default_hw")]
    pub hw: [usize; 2],
}

fn default_channels() -> Vec<usize> {
    vec![64]
}

fn default_group() -> usize {
    8
}

fn default_template() -> BlockTemplate {
    BlockTemplate::SimpleConv { d: 3 }
}

fn default_hw() -> [usize; 2] {
    [1, 1]
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            arch: None,
            checkpoint: None,
            channels: default_channels(),
            s_g: default_group(),
            s_c: default_group(),
            template: default_template(),
            clamp: GroupClamp::default(),
            hw: default_hw(),
        }
    }
}

/// One width of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct WidthAnalysis {
    pub channels: usize,
    pub widths: Vec<usize>,
    pub mgic: CostReport,
    pub baseline: CostReport,
    /// Closed-form weight count; simple-conv templates only.
    pub closed_form: Option<u64>,
    pub weight_ratio: f64,
    pub param_ratio: f64,
    pub hierarchy_ratio: f64,
    /// Weight count relative to the previous width of the sweep.
    pub mgic_growth: Option<f64>,
    pub baseline_growth: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetworkAnalysis {
    pub arch: ArchSpec,
    pub cost: CostReport,
    /// The same network with every block fully coupled.
    pub baseline: Option<CostReport>,
    pub param_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum AnalyzeReport {
    Sweep(Vec<WidthAnalysis>),
    Network(NetworkAnalysis),
}

fn network_cost(arch: &ArchSpec) -> Result<CostReport> {
    let mut store = ParamStore::<f32>::new();
    let net = build_network(arch, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let [c, h, w] = arch.input_shape();
    cost_report(&net, &store, &[1, c, h, w])
}

fn with_dense_blocks(arch: &ArchSpec) -> Option<ArchSpec> {
    let mut out = arch.clone();
    match &mut out {
        ArchSpec::Block { block, .. } | ArchSpec::Approx { block, .. } | ArchSpec::Classify { block, .. } => {
            *block = dense_counterpart(block);
            Some(out)
        }
        ArchSpec::Reconstruct { .. } => None,
    }
}

pub fn analyze_network(arch: &ArchSpec) -> Result<NetworkAnalysis> {
    let cost = network_cost(arch)?;
    let baseline = with_dense_blocks(arch).map(|a| network_cost(&a)).transpose()?;
    let param_ratio = baseline.as_ref().map(|b| cost.params as f64 / b.params as f64);
    Ok(NetworkAnalysis { arch: arch.clone(), cost, baseline, param_ratio })
}

pub fn analyze_width(config: &AnalyzeConfig, c: usize) -> Result<WidthAnalysis> {
    let block =
        BlockChoice::Mgic { s_g: config.s_g, s_c: config.s_c, template: config.template.clone(), clamp: config.clamp };
    let arch = ArchSpec::Block { channels: c, hw: config.hw, block: block.clone() };
    let mgic = network_cost(&arch)?;
    let baseline = network_cost(&ArchSpec::Block { channels: c, hw: config.hw, block: dense_counterpart(&block) })?;
    let closed_form = match config.template {
        BlockTemplate::SimpleConv { d } => closed_form_mgic_params(c, config.s_g, config.s_c, d).ok(),
        _ => None,
    };
    let widths = level_widths(c, config.s_c)?;
    Ok(WidthAnalysis {
        channels: c,
        hierarchy_ratio: hierarchy_ratio(&widths),
        widths,
        weight_ratio: mgic.weight_params as f64 / baseline.weight_params as f64,
        param_ratio: mgic.params as f64 / baseline.params as f64,
        mgic,
        baseline,
        closed_form,
        mgic_growth: None,
        baseline_growth: None,
    })
}

pub fn analyze_sweep(config: &AnalyzeConfig) -> Result<Vec<WidthAnalysis>> {
    if config.channels.is_empty() {
        return Err(Error::config("channels sweep is empty"));
    }
    let mut out: Vec<WidthAnalysis> = Vec::with_capacity(config.channels.len());
    for &c in &config.channels {
        let mut a = analyze_width(config, c)?;
        if let Some(prev) = out.last() {
            a.mgic_growth = Some(a.mgic.weight_params as f64 / prev.mgic.weight_params as f64);
            a.baseline_growth = Some(a.baseline.weight_params as f64 / prev.baseline.weight_params as f64);
        }
        out.push(a);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn run(config: &AnalyzeConfig, opts: &RunOptions) -> Result<AnalyzeReport> {
    let arch = match (&config.arch, &config.checkpoint) {
        (Some(_), Some(_)) => return Err(Error::config("give either `arch` or `checkpoint`, not both")),
        (Some(a), None) => Some(a.clone()),
        (None, Some(path)) => Some(load_checkpoint(path)?.0.arch),
        (None, None) => None,
    };
    let prov = opts.provenance();
    let report = match arch {
        Some(arch) => {
            let a = analyze_network(&arch)?;
            println!("{:<40} {:>10} {:>14} {:>12}", "layer", "params", "macs", "activation");
            for l in &a.cost.per_layer {
                println!("{:<40} {:>10} {:>14} {:>12}", l.name, l.params, l.macs, l.activation);
            }
            println!(
                "total params {} (weights {}), macs {}, flops {}, train activation {}, inference peak {}",
                a.cost.params,
                a.cost.weight_params,
                a.cost.macs,
                a.cost.flops,
                a.cost.train_activation,
                a.cost.infer_activation
            );
            if let (Some(b), Some(r)) = (&a.baseline, a.param_ratio) {
                println!("fully coupled counterpart: params {}, macs {}; ratio {:.4}", b.params, b.macs, r);
            }
            if let Some(dir) = &opts.out {
                let mut t = Table::new(&["layer", "params", "macs", "activation"]);
                for l in &a.cost.per_layer {
                    t.push(vec![l.name.clone(), l.params.to_string(), l.macs.to_string(), l.activation.to_string()]);
                }
                t.write(dir, "analyze.csv", &prov)?;
            }
            AnalyzeReport::Network(a)
        }
        None => {
            let rows = analyze_sweep(config)?;
            let mut t = Table::new(&[
                "channels",
                "mgic_weights",
                "closed_form",
                "baseline_weights",
                "weight_ratio",
                "mgic_params",
                "baseline_params",
                "mgic_macs",
                "baseline_macs",
                "mgic_growth",
                "baseline_growth",
                "hierarchy_ratio",
                "train_activation",
                "infer_activation",
            ]);
            println!(
                "{:>8} {:>12} {:>12} {:>14} {:>8} {:>8} {:>8}",
                "c", "mgic", "closed form", "fully coupled", "ratio", "growth", "(base)"
            );
            for r in &rows {
                println!(
                    "{:>8} {:>12} {:>12} {:>14} {:>8.4} {:>8} {:>8}",
                    r.channels,
                    r.mgic.weight_params,
                    r.closed_form.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                    r.baseline.weight_params,
                    r.weight_ratio,
                    r.mgic_growth.map(|g| format!("{g:.3}")).unwrap_or_else(|| "-".into()),
                    r.baseline_growth.map(|g| format!("{g:.3}")).unwrap_or_else(|| "-".into()),
                );
                t.push(vec![
                    r.channels.to_string(),
                    r.mgic.weight_params.to_string(),
                    r.closed_form.map(|v| v.to_string()).unwrap_or_default(),
                    r.baseline.weight_params.to_string(),
                    num(r.weight_ratio),
                    r.mgic.params.to_string(),
                    r.baseline.params.to_string(),
                    r.mgic.macs.to_string(),
                    r.baseline.macs.to_string(),
                    opt(r.mgic_growth),
                    opt(r.baseline_growth),
                    num(r.hierarchy_ratio),
                    r.mgic.train_activation.to_string(),
                    r.mgic.infer_activation.to_string(),
                ]);
            }
            if let Some(dir) = &opts.out {
                t.write(dir, "analyze.csv", &prov)?;
            }
            AnalyzeReport::Sweep(rows)
        }
    };
    if let Some(dir) = &opts.out {
        write_json(dir, "analyze.json", &report)?;
    }
    Ok(report)
}
