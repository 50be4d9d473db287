use std::path::PathBuf;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::output::{num, write_json, Table};
use super::RunOptions;
use crate::cost::count_params;
use crate::error::{Error, Result};
use crate::mgic::{BlockTemplate, MgicConfig};
use crate::models::{build_network, dense_counterpart, ArchSpec, BlockChoice, StageSpec};
use crate::params::ParamStore;
use crate::train::{
    load_idx, synth_digits, train_loop, write_idx, Dataset, EpochRecord, IdxArray, Schedule, SgdConfig, Streams,
    Targets,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Generated digits; written as IDX files next to the results when an
    /// output directory is given.
    SyntheticDigits {
        #[serde(default = "default_synth_train")]
        train: usize,
        #[serde(default = "default_synth_test")]
        test: usize,
    },
}

fn default_synth_train() -> usize {
    6000
}

fn default_synth_test() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    #[serde(default = "default_data")]
    pub data: DataSource,
    /// Use only the first `n` training / test items.
    #[serde(default)]
    pub limit_train: Option<usize>,
    #[serde(default)]
    pub limit_test: Option<usize>,
    #[serde(default = "default_stem")]
    pub stem: usize,
    #[serde(default = "default_stages")]
    pub stages: Vec<StageSpec>,
    #[serde(default = "default_block")]
    pub block: BlockChoice,
    /// Also train the fully coupled control (first).
    #[serde(default = "yes")]
    pub control: bool,
    #[serde(default = "default_optimizer")]
    pub optimizer: SgdConfig,
}

fn default_data() -> DataSource {
    DataSource::SyntheticDigits { train: default_synth_train(), test: default_synth_test() }
}

fn default_stem() -> usize {
    16
}

fn default_stages() -> Vec<StageSpec> {
    vec![StageSpec { width: 32, stride: 2, blocks: 1 }, StageSpec { width: 64, stride: 2, blocks: 1 }]
}

fn default_block() -> BlockChoice {
    BlockChoice::mgic(&MgicConfig::new(8, 8, BlockTemplate::SimpleConv { d: 3 }))
}

fn yes() -> bool {
    true
}

fn default_optimizer() -> SgdConfig {
    SgdConfig { schedule: Schedule::Constant, ..SgdConfig::new(0.05, 3, 64) }
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            data: default_data(),
            limit_train: None,
            limit_test: None,
            stem: default_stem(),
            stages: default_stages(),
            block: default_block(),
            control: true,
            optimizer: default_optimizer(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyRun {
    pub block: BlockChoice,
    pub params: u64,
    pub final_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyReport {
    pub seed: u64,
    pub classes: usize,
    pub image: [usize; 2],
    pub model: ClassifyRun,
    pub control: Option<ClassifyRun>,
}

impl ClassifyReport {
    /// Model parameters over control parameters.
    pub fn param_ratio(&self) -> Option<f64> {
        self.control.as_ref().map(|c| self.model.params as f64 / c.params as f64)
    }

    /// Model accuracy minus control accuracy, in percentage points.
    pub fn accuracy_gap(&self) -> Option<f64> {
        self.control.as_ref().map(|c| 100.0 * (self.model.final_accuracy - c.final_accuracy))
    }
}

/// Images and labels with matching counts.
fn idx_dataset(images: &IdxArray, labels: &IdxArray, limit: Option<usize>, classes: usize) -> Result<Dataset> {
    if images.dims.len() != 3 || labels.dims.len() != 1 {
        return Err(Error::Data(format!(
            "expected N×H×W images and N labels, got {:?} and {:?}",
            images.dims, labels.dims
        )));
    }
    let labs = labels.labels()?;
    if let Some(&bad) = labs.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} is outside 0..{classes}")));
    }
    let data = Dataset::new(images.images()?, Targets::Labels(labs))?;
    match limit {
        Some(n) if n < data.len() => data.batch(&(0..n).collect::<Vec<_>>()),
        _ => Ok(data),
    }
}

fn load_data(config: &ClassifyConfig, opts: &RunOptions, data_seed: u64) -> Result<(Dataset, Dataset, [usize; 2])> {
    let (tri, trl, tei, tel) = match &config.data {
        DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
            (load_idx(train_images)?, load_idx(train_labels)?, load_idx(test_images)?, load_idx(test_labels)?)
        }
        DataSource::SyntheticDigits { train, test } => {
            let (tri, trl) = synth_digits(*train, data_seed)?;
            let (tei, tel) = synth_digits(*test, data_seed.wrapping_add(1))?;
            if let Some(dir) = &opts.out {
                std::fs::create_dir_all(dir)?;
                write_idx(dir.join("train-images-idx3-ubyte"), &tri)?;
                write_idx(dir.join("train-labels-idx1-ubyte"), &trl)?;
                write_idx(dir.join("t10k-images-idx3-ubyte"), &tei)?;
                write_idx(dir.join("t10k-labels-idx1-ubyte"), &tel)?;
            }
            (tri, trl, tei, tel)
        }
    };
    if tri.dims.len() != 3 || tri.dims[1..] != tei.dims[1..] {
        return Err(Error::Data(format!("train images {:?} and test images {:?} disagree", tri.dims, tei.dims)));
    }
    let image = [tri.dims[1], tri.dims[2]];
    Ok((idx_dataset(&tri, &trl, config.limit_train, 10)?, idx_dataset(&tei, &tel, config.limit_test, 10)?, image))
}

impl ClassifyConfig {
    pub fn arch(&self, block: &BlockChoice, image: [usize; 2]) -> ArchSpec {
        ArchSpec::Classify {
            in_channels: 1,
            image,
            classes: 10,
            stem: self.stem,
            stages: self.stages.clone(),
            block: block.clone(),
        }
    }
}

fn train_one(
    arch: &ArchSpec,
    train: &Dataset,
    test: &Dataset,
    config: &ClassifyConfig,
    seed: u64,
    opts: &RunOptions,
    tag: &str,
) -> Result<ClassifyRun> {
    let mut streams = Streams::new(seed);
    let mut store = ParamStore::<f32>::new();
    let net = build_network(arch, &mut store, &mut streams.init)?;
    let history = train_loop(&net, &mut store, train, test, &config.optimizer, &mut streams.shuffle, |r| {
        if opts.verbose {
            eprintln!("[{tag}] epoch {}  loss {:.4}  acc {:.4}", r.epoch, r.train_loss, r.eval_metric);
        }
    })?;
    let block = match arch {
        ArchSpec::Classify { block, .. } => block.clone(),
        _ => unreachable!("classifier architecture"),
    };
    let final_accuracy = history.last().expect("epoch-0 record").eval_metric;
    Ok(ClassifyRun { block, params: count_params(&store), final_accuracy, history })
}

fn history_table(h: &[EpochRecord]) -> Table {
    let mut t = Table::new(&["epoch", "train_loss", "test_accuracy"]);
    for r in h {
        t.push(vec![r.epoch.to_string(), num(r.train_loss), num(r.eval_metric)]);
    }
    t
}

pub fn run(config: &ClassifyConfig, opts: &RunOptions) -> Result<ClassifyReport> {
    config.optimizer.validate()?;
    let mut streams = Streams::new(opts.seed);
    let data_seed = rand::Rng::gen::<u64>(&mut streams.data);
    let (train, test, image) = load_data(config, opts, data_seed)?;
    let control = if config.control {
        let arch = config.arch(&dense_counterpart(&config.block), image);
        Some(train_one(&arch, &train, &test, config, opts.seed, opts, "control")?)
    } else {
        None
    };
    let model = train_one(&config.arch(&config.block, image), &train, &test, config, opts.seed, opts, "model")?;
    let report = ClassifyReport { seed: opts.seed, classes: 10, image, model, control };
    if let Some(dir) = &opts.out {
        let prov = opts
            .provenance()
            .with("lr", config.optimizer.lr)
            .with("epochs", config.optimizer.epochs)
            .with("n-train", train.len())
            .with("n-test", test.len());
        history_table(&report.model.history).write(dir, "classify.csv", &prov)?;
        if let Some(c) = &report.control {
            history_table(&c.history).write(dir, "classify_control.csv", &prov)?;
        }
        write_json(
            dir,
            "classify.json",
            &serde_json::json!({
                "seed": report.seed,
                "model": { "block": report.model.block, "params": report.model.params, "final_accuracy": report.model.final_accuracy },
                "control": report.control.as_ref().map(|c| serde_json::json!({
                    "block": c.block, "params": c.params, "final_accuracy": c.final_accuracy
                })),
                "param_ratio": report.param_ratio(),
                "accuracy_gap_points": report.accuracy_gap(),
            }),
        )?;
    }
    Ok(report)
}
