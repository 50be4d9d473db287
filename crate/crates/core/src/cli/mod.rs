//! Command-line experiments. Each command reads one JSON config, and its
//! results depend only on that config, the input files and the seed.

pub mod ablate;
pub mod analyze;
pub mod approx;
pub mod classify;
pub mod config;
pub mod gradcheck;
pub mod output;
pub mod reconstruct;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub use config::{config_hash, parse_config};
pub use output::{Provenance, Table};

/// Settings shared by every command.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub head_width: Option<usize>,
    pub config_hash: String,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl RunOptions {
    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.seed, self.config_hash.clone())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mgic", version, about = "Multigrid-in-channels blocks: cost analysis and desk-scale experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON config; every key is optional and defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for CSV/JSON results.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Width of the approximator's output layer (overrides the config).
    #[arg(long)]
    pub head_width: Option<usize>,
    /// Print progress to stderr.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter, MAC and memory counts against a fully coupled baseline.
    Analyze(CommonArgs),
    /// Fit cos(x)·sin(20y) with an MGIC network and a grouped-only baseline.
    Approx(CommonArgs),
    /// Channel-space autoencoding with transfer operators only, swept over s_g.
    Reconstruct(CommonArgs),
    /// Image classification on IDX data against a fully coupled control.
    Classify(CommonArgs),
    /// Finite-difference check of every primitive and of full blocks.
    Gradcheck(CommonArgs),
    /// Grid over (s_g, s_c).
    Ablate(CommonArgs),
}

impl Command {
    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Analyze(a)
            | Command::Approx(a)
            | Command::Reconstruct(a)
            | Command::Classify(a)
            | Command::Gradcheck(a)
            | Command::Ablate(a) => a,
        }
    }
}

fn load<T: DeserializeOwned>(args: &CommonArgs) -> Result<(T, RunOptions)> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => "{}".to_string(),
    };
    let config = parse_config(&text)?;
    let opts = RunOptions {
        seed: args.seed,
        out: args.out.clone(),
        head_width: args.head_width,
        config_hash: config_hash(&text),
        verbose: args.verbose,
    };
    Ok((config, opts))
}

/// Runs a parsed command; the returned value is the process exit code.
pub fn execute(command: &Command) -> Result<i32> {
    let args = command.args();
    if args.head_width == Some(0) {
        return Err(Error::config("--head-width must be at least 1"));
    }
    match command {
        Command::Analyze(_) => {
            let (cfg, opts) = load::<analyze::AnalyzeConfig>(args)?;
            analyze::run(&cfg, &opts)?;
        }
        Command::Approx(_) => {
            let (cfg, opts) = load::<approx::ApproxConfig>(args)?;
            let r = approx::run(&cfg, &opts)?;
            println!(
                "mgic: {} params, eval mse {:.6} -> {:.6}",
                r.model.params, r.model.epoch0_eval_mse, r.model.final_eval_mse
            );
            if let Some(b) = &r.baseline {
                println!("baseline: {} params, eval mse {:.6} -> {:.6}", b.params, b.epoch0_eval_mse, b.final_eval_mse);
            }
        }
        Command::Reconstruct(_) => {
            let (cfg, opts) = load::<reconstruct::ReconstructConfig>(args)?;
            let r = reconstruct::run(&cfg, &opts)?;
            println!("input variance {:.6}", r.input_variance);
            for row in &r.rows {
                println!("s_g {:>3}  params {:>6}  final mse {:.6}", row.s_g, row.params, row.final_mse);
            }
        }
        Command::Classify(_) => {
            let (cfg, opts) = load::<classify::ClassifyConfig>(args)?;
            let r = classify::run(&cfg, &opts)?;
            println!("model: {} params, accuracy {:.4}", r.model.params, r.model.final_accuracy);
            if let (Some(c), Some(ratio)) = (&r.control, r.param_ratio()) {
                println!("control: {} params, accuracy {:.4}; param ratio {:.3}", c.params, c.final_accuracy, ratio);
            }
        }
        Command::Gradcheck(_) => {
            let (cfg, opts) = load::<gradcheck::GradcheckConfig>(args)?;
            let r = gradcheck::run(&cfg, &opts)?;
            if !r.all_passed() {
                let names: Vec<_> = r.failures().map(|f| f.name.as_str()).collect();
                eprintln!("gradient check failed for: {}", names.join(", "));
                return Ok(2);
            }
        }
        Command::Ablate(_) => {
            let (cfg, opts) = load::<ablate::AblateConfig>(args)?;
            for c in ablate::run(&cfg, &opts)? {
                match &c.error {
                    Some(e) => println!("s_g {:>3} s_c {:>3}  error: {e}", c.s_g, c.s_c),
                    None => println!(
                        "s_g {:>3} s_c {:>3}  params {:>8}  macs {:>10}  metric {}",
                        c.s_g,
                        c.s_c,
                        c.params.unwrap_or(0),
                        c.macs.unwrap_or(0),
                        c.metric.map(|m| format!("{m:.6}")).unwrap_or_else(|| "-".into())
                    ),
                }
            }
        }
    }
    Ok(0)
}
