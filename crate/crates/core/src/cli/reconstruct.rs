use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::output::{num, write_json, Table};
use super::RunOptions;
use crate::cost::count_params;
use crate::error::{Error, Result};
use crate::models::{build_network, ArchSpec};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{evaluate, synth_feature_maps_with_spectrum, train_loop, Dataset, SgdConfig, Streams, Targets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_s_c")]
    pub s_c: usize,
    #[serde(default = "default_sweep")]
    pub s_g: Vec<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_hw")]
    pub hw: [usize; 2],
    /// Latent channel rank of the corpus; full (`channels`) when absent.
    #[serde(default)]
    pub rank: Option<usize>,
    /// Power-law falloff of the latent variances; 0 makes them equal.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: SgdConfig,
}

fn default_channels() -> usize {
    64
}

fn default_s_c() -> usize {
    8
}

fn default_sweep() -> Vec<usize> {
    vec![4, 8, 16, 32]
}

fn default_samples() -> usize {
    256
}

fn default_hw() -> [usize; 2] {
    [4, 4]
}

fn default_decay() -> f64 {
    2.0
}

fn default_optimizer() -> SgdConfig {
    SgdConfig { weight_decay: 0.0, ..SgdConfig::new(0.1, 200, 16) }
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            channels: default_channels(),
            s_c: default_s_c(),
            s_g: default_sweep(),
            samples: default_samples(),
            hw: default_hw(),
            rank: None,
            decay: default_decay(),
            optimizer: default_optimizer(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructRow {
    pub s_g: usize,
    pub params: u64,
    pub initial_mse: f64,
    pub final_mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructReport {
    pub seed: u64,
    pub input_variance: f64,
    pub rows: Vec<ReconstructRow>,
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_g.is_empty() {
            return Err(Error::config("s_g sweep is empty"));
        }
        for &s in &self.s_g {
            if s < 2 || s % 2 != 0 || self.channels % s != 0 {
                return Err(Error::config(format!(
                    "s_g={s} is incompatible with {} corpus channels (needs an even divisor)",
                    self.channels
                )));
            }
        }
        if self.samples == 0 {
            return Err(Error::config("samples must be positive"));
        }
        self.optimizer.validate()
    }

    pub fn corpus(&self, seed: u64) -> Result<Tensor<f32>> {
        let rank = self.rank.unwrap_or(self.channels);
        synth_feature_maps_with_spectrum(self.samples, self.channels, self.hw[0], self.hw[1], rank, self.decay, seed)
    }
}

fn variance(t: &Tensor<f32>) -> f64 {
    let n = t.numel() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Trains the transfer-only chain for every `s_g` on the same corpus and
/// reports the final reconstruction MSE.
pub fn run(config: &ReconstructConfig, opts: &RunOptions) -> Result<ReconstructReport> {
    config.validate()?;
    let mut streams = Streams::new(opts.seed);
    let corpus_seed = rand::Rng::gen::<u64>(&mut streams.data);
    let corpus = config.corpus(corpus_seed)?;
    let data = Dataset::new(corpus.clone(), Targets::Values(corpus.clone()))?;
    let mut rows = Vec::with_capacity(config.s_g.len());
    for &s_g in &config.s_g {
        let arch = ArchSpec::Reconstruct { channels: config.channels, s_g, s_c: config.s_c, hw: config.hw };
        // every sweep point starts from the same streams
        let mut run_streams = Streams::new(opts.seed);
        let mut store = ParamStore::<f32>::new();
        let net = build_network(&arch, &mut store, &mut run_streams.init)?;
        let history = train_loop(&net, &mut store, &data, &data, &config.optimizer, &mut run_streams.shuffle, |r| {
            if opts.verbose && r.epoch % 20 == 0 {
                eprintln!("[s_g={s_g}] epoch {:>4}  mse {:.6}", r.epoch, r.eval_metric);
            }
        })?;
        let final_mse = evaluate(&net, &store, &data, config.optimizer.batch_size)?.0;
        rows.push(ReconstructRow { s_g, params: count_params(&store), initial_mse: history[0].eval_metric, final_mse });
    }
    let report = ReconstructReport { seed: opts.seed, input_variance: variance(&corpus), rows };
    if let Some(dir) = &opts.out {
        let mut t = Table::new(&["s_g", "param_count", "final_mse"]);
        for r in &report.rows {
            t.push(vec![r.s_g.to_string(), r.params.to_string(), num(r.final_mse)]);
        }
        let prov = opts
            .provenance()
            .with("s_c", config.s_c)
            .with("channels", config.channels)
            .with("lr", config.optimizer.lr)
            .with("momentum", config.optimizer.momentum)
            .with("epochs", config.optimizer.epochs)
            .with("rank", config.rank.unwrap_or(config.channels))
            .with("decay", config.decay)
            .with("input-variance", report.input_variance);
        t.write(dir, "reconstruct.csv", &prov)?;
        write_json(dir, "reconstruct.json", &report)?;
    }
    Ok(report)
}
