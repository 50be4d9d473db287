use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::approx::{self, ApproxConfig, Baseline};
use super::classify::{self, ClassifyConfig};
use super::output::{num, write_json, Table};
use super::RunOptions;
use crate::cost::cost_report;
use crate::error::{Error, Result};
use crate::mgic::{BlockTemplate, GroupClamp};
use crate::models::{build_network, ArchSpec, BlockChoice};
use crate::params::ParamStore;

/// What each grid cell evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AblateTask {
    /// Cost of a single block; no training.
    Cost {
        channels: usize,
        #[serde(default = "default_template")]
        template: BlockTemplate,
        #[serde(default = "default_hw")]
        hw: [usize; 2],
    },
    /// Final eval MSE of the function approximator.
    Approx(ApproxConfig),
    /// Final test accuracy of the classifier.
    Classify(ClassifyConfig),
}

fn default_template() -> BlockTemplate {
    BlockTemplate::SimpleConv { d: 3 }
}

fn default_hw() -> [usize; 2] {
    [1, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub s_g: Vec<usize>,
    pub s_c: Vec<usize>,
    pub task: AblateTask,
}

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub s_g: usize,
    pub s_c: usize,
    pub params: Option<u64>,
    pub macs: Option<u64>,
    pub metric: Option<f64>,
    pub error: Option<String>,
}

fn mgic(s_g: usize, s_c: usize, template: BlockTemplate) -> BlockChoice {
    BlockChoice::Mgic { s_g, s_c, template, clamp: GroupClamp::default() }
}

fn arch_cost(arch: &ArchSpec) -> Result<(u64, u64)> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let net = build_network(arch, &mut store, &mut rng)?;
    let [c, h, w] = arch.input_shape();
    let r = cost_report(&net, &store, &[1, c, h, w])?;
    Ok((r.params, r.macs))
}

fn eval_cell(task: &AblateTask, s_g: usize, s_c: usize, opts: &RunOptions) -> Result<(u64, u64, Option<f64>)> {
    let quiet = RunOptions { out: None, ..opts.clone() };
    match task {
        AblateTask::Cost { channels, template, hw } => {
            let (p, m) =
                arch_cost(&ArchSpec::Block { channels: *channels, hw: *hw, block: mgic(s_g, s_c, template.clone()) })?;
            Ok((p, m, None))
        }
        AblateTask::Approx(base) => {
            let cfg = ApproxConfig {
                block: mgic(s_g, s_c, base.block.template().clone()),
                baseline: Baseline::None,
                ..base.clone()
            };
            let (p, m) = arch_cost(&cfg.arch(&cfg.block, opts.head_width.unwrap_or(cfg.head_width)))?;
            let r = approx::run(&cfg, &quiet)?;
            Ok((p, m, Some(r.model.final_eval_mse)))
        }
        AblateTask::Classify(base) => {
            let cfg =
                ClassifyConfig { block: mgic(s_g, s_c, base.block.template().clone()), control: false, ..base.clone() };
            let r = classify::run(&cfg, &quiet)?;
            let (_, m) = arch_cost(&cfg.arch(&cfg.block, r.image))?;
            Ok((r.model.params, m, Some(r.model.final_accuracy)))
        }
    }
}

/// Evaluates every `(s_g, s_c)` cell in row-major grid order. A failing
/// cell is recorded and the grid continues.
pub fn run(config: &AblateConfig, opts: &RunOptions) -> Result<Vec<Cell>> {
    if config.s_g.is_empty() || config.s_c.is_empty() {
        return Err(Error::config("ablation grid has an empty axis"));
    }
    let mut cells = Vec::with_capacity(config.s_g.len() * config.s_c.len());
    for &s_g in &config.s_g {
        for &s_c in &config.s_c {
            let cell = match eval_cell(&config.task, s_g, s_c, opts) {
                Ok((p, m, metric)) => Cell { s_g, s_c, params: Some(p), macs: Some(m), metric, error: None },
                Err(e) => Cell { s_g, s_c, params: None, macs: None, metric: None, error: Some(e.to_string()) },
            };
            if opts.verbose {
                eprintln!("[ablate] s_g={s_g} s_c={s_c}: {:?}", cell);
            }
            cells.push(cell);
        }
    }
    if let Some(dir) = &opts.out {
        let mut t = Table::new(&["s_g", "s_c", "params", "macs", "metric", "error"]);
        let o = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
        for c in &cells {
            let err = c.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            t.push(vec![
                c.s_g.to_string(),
                c.s_c.to_string(),
                o(c.params),
                o(c.macs),
                c.metric.map(num).unwrap_or_default(),
                err,
            ]);
        }
        t.write(dir, "ablate.csv", &opts.provenance())?;
        write_json(dir, "ablate.json", &cells)?;
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost_grid(s_g: Vec<usize>, s_c: Vec<usize>) -> Vec<Cell> {
        let cfg = AblateConfig {
            s_g,
            s_c,
            task: AblateTask::Cost { channels: 64, template: default_template(), hw: [1, 1] },
        };
        run(&cfg, &RunOptions::default()).unwrap()
    }

    #[test]
    fn params_grow_along_both_axes() {
        let cells = cost_grid(vec![2, 4, 8], vec![8, 16, 32]);
        let p = |g, c| cells.iter().find(|x| x.s_g == g && x.s_c == c).unwrap().params.unwrap();
        for c in [8, 16, 32] {
            assert!(p(2, c) < p(4, c) && p(4, c) < p(8, c));
        }
        for g in [2, 4, 8] {
            assert!(p(g, 8) < p(g, 16) && p(g, 16) < p(g, 32));
        }
    }

    #[test]
    fn bad_cells_are_recorded() {
        // s_c below s_g is rejected
        let cells = cost_grid(vec![16, 8], vec![8]);
        assert!(cells[0].error.is_some());
        assert!(cells[1].params.is_some());
    }

    #[test]
    fn parses_with_an_embedded_task() {
        let cfg: AblateConfig =
            crate::cli::parse_config(r#"{"s_g":[4],"s_c":[4],"task":{"kind":"approx","n_train":10,"n_eval":5}}"#)
                .unwrap();
        assert!(matches!(cfg.task, AblateTask::Approx(ref a) if a.n_train == 10));
        let err =
            crate::cli::parse_config::<AblateConfig>(r#"{"s_g":[4],"s_c":[4],"task":{"kind":"approx","bogus":1}}"#);
        assert!(err.is_err());
    }
}
