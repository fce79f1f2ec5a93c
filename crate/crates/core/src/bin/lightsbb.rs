//! Command-line runner for training, inference, evaluation and the benchmark presets.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lightsbb::eval;
use lightsbb::experiment::{self, ExperimentConfig, RunOptions, SinkhornExperimentConfig, Tier};
use lightsbb::rng::{self, streams};
use lightsbb::sampler;
use lightsbb::{Error, Result, SampleBatch, SbbModel};

#[derive(Parser)]
#[command(name = "lightsbb", version, about = "Schrödinger–Bass bridge training and evaluation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Output root (default: $LIGHTSBB_OUT, then ./results).
    #[arg(long, global = true, env = experiment::OUT_ENV)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the config's list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum number of seeds trained at once.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    deterministic: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            seeds: self.seed.map(|s| vec![s]),
            workers: self.workers,
            deterministic: self.deterministic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and score every seed of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Push source points through a saved model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// CSV of source points (header x0, x1, ...).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Simulate the Y-process with this many Euler steps instead of sampling the coupling.
        #[arg(long)]
        sde_steps: Option<usize>,
        /// Also export Euler trajectories for the first N points.
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// Exact or subsampled W₂ between two CSV samples (KS distance too in 1D).
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 2048)]
        n_sub: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// β sweep over an experiment config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated β values; `inf` selects the plain bridge-matching path.
        #[arg(long, value_delimiter = ',', default_values_t = ["1".to_string(), "10".into(), "50".into(), "100".into(), "1000".into(), "inf".into()])]
        betas: Vec<String>,
    },
    /// Grid-based solver for one-dimensional problems.
    Sinkhorn1d {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write scatter, ECDF and trajectory CSVs for a finished experiment.
    EmitPlots { id: String },
    /// Run a benchmark preset: table1, table4, fig1 or appendix-pilot.
    Reproduce {
        target: String,
        #[arg(long, default_value = "paper")]
        tier: String,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_beta(s: &str) -> Result<Option<f64>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "∞" | "null" => Ok(None),
        t => t
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("betas: `{s}` is not a number or `inf`"))),
    }
}

fn infer(model: &Path, input: &Path, output: &Path, sde_steps: Option<usize>, trajectories: Option<usize>, seed: u64) -> Result<()> {
    let model = SbbModel::load(model)?;
    let x0 = SampleBatch::read_csv(input)?;
    let mut rng = rng::stream(seed, streams::INFERENCE);
    let needs_paths = sde_steps.is_some() || trajectories.is_some();
    let y0 = if needs_paths {
        let mut y0 = SampleBatch::with_capacity(x0.dim(), x0.len());
        for x in x0.rows() {
            y0.push(&model.map_source(x)?)?;
        }
        Some(y0)
    } else {
        None
    };
    let generated = match (sde_steps, &y0) {
        (Some(steps), Some(y0)) => {
            let trajs = sampler::simulate_batch(&model, y0, steps, seed)?;
            let rows: Vec<&[f64]> = trajs.iter().map(|t| t.x_last()).collect();
            SampleBatch::from_rows(&rows)?
        }
        _ => sampler::infer(&model, &x0, &mut rng)?,
    };
    generated.write_csv(output)?;
    if let (Some(n), Some(y0)) = (trajectories, &y0) {
        let idx: Vec<usize> = (0..n.min(y0.len())).collect();
        let steps = sde_steps.unwrap_or(sampler::DEFAULT_SDE_STEPS);
        let trajs = sampler::simulate_batch(&model, &y0.select(&idx), steps, seed)?;
        sampler::export_trajectories(&trajs, &output.with_extension("trajectories.csv"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    w2: eval::W2Result,
    ks: Option<f64>,
}

fn evaluate(generated: &Path, reference: &Path, n_sub: usize, repeats: usize, seed: u64) -> Result<EvalReport> {
    let a = SampleBatch::read_csv(generated)?;
    let b = SampleBatch::read_csv(reference)?;
    let n = a.len().min(b.len());
    let w2 = if a.len() == b.len() && n <= n_sub {
        eval::w2_exact(&a, &b)?
    } else {
        eval::w2_subsampled(&a, &b, n_sub.min(n), repeats, &mut rng::stream(seed, streams::METRIC))?
    };
    let ks = if a.dim() == 1 {
        Some(eval::ecdf_distance(a.as_slice(), b.as_slice())?)
    } else {
        None
    };
    Ok(EvalReport { w2, ks })
}

/// Returns whether every seed completed.
fn run(cli: Cli) -> Result<bool> {
    let opts = cli.common.options();
    let seed = cli.common.seed.unwrap_or(0);
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = experiment::run_experiment(&cfg, &opts)?;
            print_json(&s)?;
            Ok(s.all_completed())
        }
        Command::Infer {
            model,
            input,
            output,
            sde_steps,
            trajectories,
        } => {
            infer(&model, &input, &output, sde_steps, trajectories, seed)?;
            Ok(true)
        }
        Command::Eval {
            generated,
            reference,
            n_sub,
            repeats,
        } => {
            print_json(&evaluate(&generated, &reference, n_sub, repeats, seed)?)?;
            Ok(true)
        }
        Command::Sweep { config, betas } => {
            let cfg = ExperimentConfig::load(&config)?;
            let betas = betas.iter().map(|b| parse_beta(b)).collect::<Result<Vec<_>>>()?;
            let s = experiment::run_beta_sweep(&cfg, &betas, &opts)?;
            print_json(&s)?;
            Ok(s.rows.iter().all(|r| r.failed == 0))
        }
        Command::Sinkhorn1d { config } => {
            let cfg = SinkhornExperimentConfig::load(&config)?;
            print_json(&experiment::run_sinkhorn_experiment(&cfg, &opts)?)?;
            Ok(true)
        }
        Command::EmitPlots { id } => {
            let dir = experiment::emit_plot_data(&opts.out_root(None), &id)?;
            println!("{}", dir.display());
            Ok(true)
        }
        Command::Reproduce { target, tier } => {
            let tier: Tier = tier.parse()?;
            match target.as_str() {
                "table1" => {
                    let rows = experiment::reproduce_table1(tier, &opts)?;
                    print_json(&rows)?;
                    Ok(rows.iter().all(|r| r.w2_mean.is_some()))
                }
                "table4" => {
                    let sweeps = experiment::reproduce_table4(tier, &opts)?;
                    print_json(&sweeps)?;
                    Ok(true)
                }
                "fig1" => {
                    let s = experiment::reproduce_fig1(tier, &opts)?;
                    print_json(&s)?;
                    Ok(s.iter().all(|s| s.all_completed()))
                }
                "appendix-pilot" => {
                    print_json(&experiment::reproduce_pilot(tier, &opts)?)?;
                    Ok(true)
                }
                other => Err(Error::Unknown {
                    kind: "reproduce target",
                    name: other.into(),
                    known: experiment::REPRODUCE_TARGETS.join(", "),
                }),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some runs did not complete; see the summary");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
