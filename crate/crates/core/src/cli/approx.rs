use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::output::{num, write_json, Table};
use super::RunOptions;
use crate::checkpoint::save_checkpoint;
use crate::cost::count_params;
use crate::error::{Error, Result};
use crate::mgic::BlockTemplate;
use crate::mgic::MgicConfig;
use crate::models::{build_network, matched_group_size, mgic_block_params, ArchSpec, BlockChoice, Network};
use crate::params::ParamStore;
use crate::train::{sample_function_dataset, train_loop, EpochRecord, SgdConfig, Streams};

/// How the comparison model is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Grouped-only template with the group size whose block parameter count
    /// is closest to the MGIC block's.
    Matched,
    /// A user-chosen block.
    Custom(BlockChoice),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ApproxConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_block")]
    pub block: BlockChoice,
    #[serde(default = "default_baseline")]
    pub baseline: Baseline,
    #[serde(default = "default_head")]
    pub head_width: usize,
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_eval")]
    pub n_eval: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: SgdConfig,
}

fn default_alpha() -> f64 {
    0.6
}

fn default_block() -> BlockChoice {
    BlockChoice::mgic(&MgicConfig::new(8, 8, BlockTemplate::bottleneck(1, 2, 1)))
}

fn default_baseline() -> Baseline {
    Baseline::Matched
}

fn default_head() -> usize {
    2
}

fn default_train() -> usize {
    10_000
}

fn default_eval() -> usize {
    2_000
}

fn default_optimizer() -> SgdConfig {
    SgdConfig { weight_decay: 0.0, ..SgdConfig::new(1e-4, 200, 128) }
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            alpha: default_alpha(),
            block: default_block(),
            baseline: default_baseline(),
            head_width: default_head(),
            n_train: default_train(),
            n_eval: default_eval(),
            optimizer: default_optimizer(),
        }
    }
}

/// Training outcome of one model.
#[derive(Debug, Clone, Serialize)]
pub struct ApproxRun {
    pub block: BlockChoice,
    pub params: u64,
    pub epoch0_eval_mse: f64,
    pub final_eval_mse: f64,
    pub final_train_mse: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApproxReport {
    pub seed: u64,
    pub alpha: f64,
    pub head_width: usize,
    pub model: ApproxRun,
    pub baseline: Option<ApproxRun>,
}

impl ApproxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::config("n_train and n_eval must be positive"));
        }
        self.optimizer.validate()
    }

    /// The block filling the baseline network, if any.
    pub fn baseline_block(&self) -> Result<Option<BlockChoice>> {
        Ok(match &self.baseline {
            Baseline::None => None,
            Baseline::Custom(b) => Some(b.clone()),
            Baseline::Matched => {
                let width = ArchSpec::approx_width(self.alpha);
                let target = match &self.block {
                    BlockChoice::Mgic { s_g, s_c, template, clamp } => {
                        mgic_block_params(&MgicConfig::new(*s_g, *s_c, template.clone()).with_clamp(*clamp), width)?
                    }
                    other => {
                        return Err(Error::config(format!("a matched baseline needs an mgic block, got {other:?}")))
                    }
                };
                let template = self.block.template().clone();
                let s = matched_group_size(&template, width, target)?;
                Some(BlockChoice::Grouped { s, template })
            }
        })
    }

    pub fn arch(&self, block: &BlockChoice, head_width: usize) -> ArchSpec {
        ArchSpec::Approx { alpha: self.alpha, block: block.clone(), head_width }
    }
}

/// Trains one approximator. All models of a run share the same data and
/// shuffle order.
pub fn train_approx_model(
    arch: &ArchSpec,
    config: &ApproxConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ApproxRun, Network, ParamStore<f32>)> {
    let mut streams = Streams::new(seed);
    let data_seed = rand::Rng::gen::<u64>(&mut streams.data);
    let all = sample_function_dataset(config.n_train + config.n_eval, data_seed)?;
    let (train, eval) = all.split(config.n_train)?;
    let mut store = ParamStore::<f32>::new();
    let net = build_network(arch, &mut store, &mut streams.init)?;
    let history =
        train_loop(&net, &mut store, &train, &eval, &config.optimizer, &mut streams.shuffle, |r| on_epoch(r))?;
    let block = match arch {
        ArchSpec::Approx { block, .. } => block.clone(),
        _ => unreachable!("approx architecture"),
    };
    let last = history.last().expect("epoch-0 record");
    let run = ApproxRun {
        block,
        params: count_params(&store),
        epoch0_eval_mse: history[0].eval_metric,
        final_eval_mse: last.eval_metric,
        final_train_mse: last.train_loss,
        history,
    };
    Ok((run, net, store))
}

fn history_table(h: &[EpochRecord]) -> Table {
    let mut t = Table::new(&["epoch", "train_mse", "eval_mse"]);
    for r in h {
        t.push(vec![r.epoch.to_string(), num(r.train_loss), num(r.eval_metric)]);
    }
    t
}

pub fn run(config: &ApproxConfig, opts: &RunOptions) -> Result<ApproxReport> {
    config.validate()?;
    let head_width = opts.head_width.unwrap_or(config.head_width);
    let prov = opts
        .provenance()
        .with("head-width", head_width)
        .with("lr", config.optimizer.lr)
        .with("epochs", config.optimizer.epochs)
        .with("n-train", config.n_train);

    let log = |tag: &'static str| {
        move |r: &EpochRecord| {
            if opts.verbose && (r.epoch % 10 == 0) {
                eprintln!("[{tag}] epoch {:>4}  train {:.6}  eval {:.6}", r.epoch, r.train_loss, r.eval_metric);
            }
        }
    };
    let arch = config.arch(&config.block, head_width);
    let (model, net, store) = train_approx_model(&arch, config, opts.seed, log("mgic"))?;
    let baseline = match config.baseline_block()? {
        Some(b) => Some(train_approx_model(&config.arch(&b, head_width), config, opts.seed, log("baseline"))?.0),
        None => None,
    };

    if let Some(dir) = &opts.out {
        history_table(&model.history).write(dir, "approx.csv", &prov)?;
        if let Some(b) = &baseline {
            history_table(&b.history).write(dir, "approx_baseline.csv", &prov)?;
        }
        save_checkpoint(dir.join("approx.ckpt"), &net, &store)?;
    }
    let report = ApproxReport { seed: opts.seed, alpha: config.alpha, head_width, model, baseline };
    if let Some(dir) = &opts.out {
        write_json(dir, "approx.json", &summary(&report))?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    block: &'a BlockChoice,
    params: u64,
    epoch0_eval_mse: f64,
    final_eval_mse: f64,
    final_train_mse: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    alpha: f64,
    head_width: usize,
    model: RunSummary<'a>,
    baseline: Option<RunSummary<'a>>,
}

fn summary(r: &ApproxReport) -> Summary<'_> {
    fn s(run: &ApproxRun) -> RunSummary<'_> {
        RunSummary {
            block: &run.block,
            params: run.params,
            epoch0_eval_mse: run.epoch0_eval_mse,
            final_eval_mse: run.final_eval_mse,
            final_train_mse: run.final_train_mse,
        }
    }
    Summary {
        seed: r.seed,
        alpha: r.alpha,
        head_width: r.head_width,
        model: s(&r.model),
        baseline: r.baseline.as_ref().map(s),
    }
}
