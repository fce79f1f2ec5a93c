//! Experiment configs, the results ledger, and the benchmark presets.
//!
//! An experiment is one TOML file: a source and a target dataset, a training
//! config, metric settings and a list of seeds. Every run appends its metrics
//! to a JSON-lines ledger and writes a summary next to per-seed artifacts.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::DatasetSpec;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::SbbModel;
use crate::points::SampleBatch;
use crate::rng::{self, streams};
use crate::sampler;
use crate::sinkhorn1d::{self, SinkhornConfig};
use crate::trainer::{self, beta_serde, SbbConfig, TrainReport};

pub const SCHEMA_VERSION: u32 = 1;
/// Overrides the default output root.
pub const OUT_ENV: &str = "LIGHTSBB_OUT";
pub const DEFAULT_OUT: &str = "results";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const TABLE4_BETAS: [Option<f64>; 6] = [Some(1.0), Some(10.0), Some(50.0), Some(100.0), Some(1000.0), None];

/// SHA-256 of the canonical JSON form (object keys sorted), hex-encoded.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).map(|v| v.to_string()).unwrap_or_default();
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Fresh source points pushed through the model for evaluation.
    #[serde(default = "n_eval")]
    pub n_eval: usize,
    #[serde(default = "n_sub")]
    pub n_sub: usize,
    #[serde(default = "repeats")]
    pub repeats: usize,
}

fn n_eval() -> usize {
    10_000
}
fn n_sub() -> usize {
    2048
}
fn repeats() -> usize {
    5
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            n_eval: n_eval(),
            n_sub: n_sub(),
            repeats: repeats(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub source: DatasetSpec,
    pub target: DatasetSpec,
    pub model: SbbConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Parses TOML, reporting the key path of the first schema violation.
pub(crate) fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        if path == "." || path.is_empty() {
            Error::Config(msg)
        } else {
            Error::Config(format!("{path}: {msg}"))
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "schema_version: expected {SCHEMA_VERSION}, got {version}"
        )));
    }
    Ok(())
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') {
        return Err(Error::Config(format!(
            "id: `{id}` must be nonempty and use only letters, digits, `_`, `-` or `.`"
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    /// Checks cross-field constraints; returns trainer warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        check_schema(self.schema_version)?;
        check_id(&self.id)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: must list at least one seed".into()));
        }
        fn prefix(key: &'static str) -> impl Fn(Error) -> Error {
            move |e| Error::Config(format!("{key}: {e}"))
        }
        self.source.dist.validate().map_err(prefix("source"))?;
        self.target.dist.validate().map_err(prefix("target"))?;
        if self.source.dist.dim() != self.target.dist.dim() {
            return Err(Error::Config(format!(
                "target: dimension {} differs from source dimension {}",
                self.target.dist.dim(),
                self.source.dist.dim()
            )));
        }
        if self.source.n == 0 || self.target.n == 0 {
            return Err(Error::Config("source.n and target.n must be at least 1".into()));
        }
        let m = &self.metric;
        if m.n_eval == 0 || m.repeats == 0 || m.n_sub == 0 || m.n_sub > m.n_eval {
            return Err(Error::Config(
                "metric: need n_eval ≥ n_sub ≥ 1 and repeats ≥ 1".into(),
            ));
        }
        if m.n_sub > eval::DEFAULT_EXACT_CAP {
            return Err(Error::Config(format!(
                "metric.n_sub: {} exceeds the exact assignment cap {}",
                m.n_sub,
                eval::DEFAULT_EXACT_CAP
            )));
        }
        self.model.validate().map_err(prefix("model"))
    }

    /// Hash of everything that determines a seed's results. The seed list and
    /// output location are excluded, since ledger records carry the seed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.seeds.clear();
        config_hash(&c)
    }

    pub fn dataset_label(&self) -> String {
        format!("{}_to_{}", self.source.dist.name(), self.target.dist.name())
    }

    /// Training and evaluation samples for one seed. The dataset seed field
    /// offsets the run seed so two datasets with the same law stay independent.
    pub fn data_for_seed(&self, seed: u64) -> Result<SeedData> {
        let draw = |spec: &DatasetSpec, n: usize, stream: u64| {
            spec.dist
                .sample(n, &mut rng::stream(spec.seed.wrapping_add(seed), stream))
                .map(|b| b.tagged(Default::default(), Some(seed)))
        };
        Ok(SeedData {
            train_source: draw(&self.source, self.source.n, streams::DATA_SOURCE)?,
            train_target: draw(&self.target, self.target.n, streams::DATA_TARGET)?,
            eval_source: draw(&self.source, self.metric.n_eval, streams::DATA_EVAL_SOURCE)?,
            eval_target: draw(&self.target, self.metric.n_eval, streams::DATA_EVAL_TARGET)?,
        })
    }
}

pub struct SeedData {
    pub train_source: SampleBatch,
    pub train_target: SampleBatch,
    pub eval_source: SampleBatch,
    pub eval_target: SampleBatch,
}

/// One immutable ledger line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub wall_clock_seconds: f64,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

/// Append-only JSON-lines file of metric records.
#[derive(Clone, Debug)]
pub struct ResultsLedger {
    path: PathBuf,
}

impl ResultsLedger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends records in one write; existing lines are never touched.
    pub fn append(&self, records: &[LedgerRecord]) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r)?);
            buf.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn read_all(&self) -> Result<Vec<LedgerRecord>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let f = fs::File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

pub fn now_rfc3339() -> String {
    humantime::format_rfc3339_millis(SystemTime::now()).to_string()
}

/// Where and how a run executes.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Output root; falls back to the config, then `LIGHTSBB_OUT`, then `results`.
    pub out: Option<PathBuf>,
    /// Replaces the config's seed list.
    pub seeds: Option<Vec<u64>>,
    /// Maximum concurrent seeds; 0 means the rayon default.
    pub workers: usize,
    /// Runs seeds one at a time.
    pub deterministic: bool,
}

impl RunOptions {
    pub fn out_root(&self, config_out: Option<&Path>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config_out.map(Path::to_path_buf))
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let threads = if self.deterministic { 1 } else { self.workers };
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub status: SeedStatus,
    pub w2: Option<f64>,
    /// Std over subsample repeats.
    pub w2_subsample_std: Option<f64>,
    pub train_seconds: f64,
    pub final_dsm_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: String,
    pub config_hash: String,
    pub dataset: String,
    #[serde(with = "beta_serde")]
    pub beta: Option<f64>,
    pub seeds: Vec<SeedResult>,
    /// Mean and population std over completed seeds.
    pub w2_mean: Option<f64>,
    pub w2_std: Option<f64>,
    pub completed: usize,
    pub failed: usize,
    pub out_dir: PathBuf,
}

impl ExperimentSummary {
    pub fn all_completed(&self) -> bool {
        self.failed == 0
    }

    pub fn w2_values(&self) -> Vec<f64> {
        self.seeds.iter().filter_map(|s| s.w2).collect()
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn write_losses(report: &TrainReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "phase", "step", "loss"])?;
    for it in &report.iterations {
        for (i, l) in it.dsm_losses.iter().enumerate() {
            w.write_record([it.iteration.to_string(), "theta".into(), i.to_string(), l.to_string()])?;
        }
        for (i, l) in it.transport_losses.iter().enumerate() {
            w.write_record([it.iteration.to_string(), "transport".into(), i.to_string(), l.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

/// Trains one seed, evaluates it, and writes its artifacts.
fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<(SeedResult, TrainReport)> {
    let data = cfg.data_for_seed(seed)?;
    let model_cfg = SbbConfig {
        seed,
        ..cfg.model.clone()
    };
    let started = Instant::now();
    let (model, report) = trainer::train_with(&model_cfg, &data.train_source, &data.train_target, &mut |_| Ok(()))?;
    let train_seconds = started.elapsed().as_secs_f64();
    let generated = sampler::infer(&model, &data.eval_source, &mut rng::stream(seed, streams::INFERENCE))?;
    let w2 = eval::w2_subsampled(
        &generated,
        &data.eval_target,
        cfg.metric.n_sub,
        cfg.metric.repeats,
        &mut rng::stream(seed, streams::METRIC),
    )?;
    create_dir(dir)?;
    model.save(&dir.join("model.json"))?;
    write_json(&dir.join("report.json"), &report)?;
    write_losses(&report, &dir.join("losses.csv"))?;
    data.eval_source.write_csv(&dir.join("eval_source.csv"))?;
    data.eval_target.write_csv(&dir.join("eval_target.csv"))?;
    generated.write_csv(&dir.join("generated.csv"))?;
    let result = SeedResult {
        seed,
        status: SeedStatus::Completed,
        w2: Some(w2.value),
        w2_subsample_std: w2.subsample_stats.map(|s| s.std),
        train_seconds,
        final_dsm_loss: report.last_dsm_loss(),
        error: None,
    };
    Ok((result, report))
}

fn records_for(cfg: &ExperimentConfig, hash: &str, r: &SeedResult) -> Vec<LedgerRecord> {
    let ts = now_rfc3339();
    let rec = |metric: &str, value: f64| LedgerRecord {
        experiment_id: cfg.id.clone(),
        config_hash: hash.to_string(),
        seed: r.seed,
        metric: metric.to_string(),
        value,
        wall_clock_seconds: r.train_seconds,
        timestamp: ts.clone(),
    };
    let mut out = Vec::new();
    match r.status {
        SeedStatus::Completed => {
            out.extend(r.w2.map(|v| rec("w2", v)));
            out.extend(r.w2_subsample_std.map(|v| rec("w2_subsample_std", v)));
            out.extend(r.final_dsm_loss.map(|v| rec("final_dsm_loss", v)));
        }
        SeedStatus::Failed => out.push(rec("failed", 1.0)),
    }
    out
}

/// Trains and scores every seed, then writes `summary.json`, `seeds.csv` and
/// ledger records. A failed seed is recorded and the others still run.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    let mut cfg = cfg.clone();
    if let Some(seeds) = &opts.seeds {
        cfg.seeds = seeds.clone();
    }
    for w in cfg.validate()? {
        log::warn!("{}: {w}", cfg.id);
    }
    let root = opts.out_root(cfg.out_dir.as_deref());
    let out_dir = root.join(&cfg.id);
    create_dir(&out_dir)?;
    let hash = cfg.hash();
    write_json(&out_dir.join("config.json"), &cfg)?;
    let ledger = ResultsLedger::new(root.join(LEDGER_FILE));
    let ledger_lock = std::sync::Mutex::new(());

    let results: Vec<SeedResult> = opts.pool()?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let started = Instant::now();
                let result = match run_seed(&cfg, seed, &seed_dir(&out_dir, seed)) {
                    Ok((r, _)) => r,
                    Err(e) => {
                        log::error!("{} seed {seed}: {e}", cfg.id);
                        SeedResult {
                            seed,
                            status: SeedStatus::Failed,
                            w2: None,
                            w2_subsample_std: None,
                            train_seconds: started.elapsed().as_secs_f64(),
                            final_dsm_loss: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                // Single writer: seeds finish in any order but never interleave lines.
                let _guard = ledger_lock.lock().unwrap_or_else(|p| p.into_inner());
                if let Err(e) = ledger.append(&records_for(&cfg, &hash, &result)) {
                    log::error!("ledger append failed: {e}");
                }
                result
            })
            .collect()
    });

    let w2s: Vec<f64> = results.iter().filter_map(|r| r.w2).collect();
    let (w2_mean, w2_std) = mean_std(&w2s);
    let failed = results.iter().filter(|r| r.status == SeedStatus::Failed).count();
    let summary = ExperimentSummary {
        id: cfg.id.clone(),
        config_hash: hash,
        dataset: cfg.dataset_label(),
        beta: cfg.model.beta,
        completed: results.len() - failed,
        failed,
        seeds: results,
        w2_mean,
        w2_std,
        out_dir: out_dir.clone(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_seed_csv(&summary, &out_dir.join("seeds.csv"))?;
    Ok(summary)
}

fn write_seed_csv(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "status", "w2", "w2_subsample_std", "train_seconds", "final_dsm_loss"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in &summary.seeds {
        let status = match s.status {
            SeedStatus::Completed => "completed",
            SeedStatus::Failed => "failed",
        };
        w.write_record([
            s.seed.to_string(),
            status.to_string(),
            opt(s.w2),
            opt(s.w2_subsample_std),
            s.train_seconds.to_string(),
            opt(s.final_dsm_loss),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn beta_label(beta: Option<f64>) -> String {
    beta.map(|b| b.to_string()).unwrap_or_else(|| "inf".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(with = "beta_serde")]
    pub beta: Option<f64>,
    pub dataset: String,
    pub w2_mean: Option<f64>,
    pub w2_std: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub id: String,
    pub rows: Vec<SweepRow>,
    /// Lowest mean W₂ among β values with at least one completed seed.
    #[serde(with = "beta_serde::option")]
    pub best_beta: Option<Option<f64>>,
}

impl SweepSummary {
    pub fn row(&self, beta: Option<f64>) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.beta == beta)
    }
}

/// Best β by mean W₂; rows without a completed seed are skipped.
pub fn best_beta(rows: &[SweepRow]) -> Option<Option<f64>> {
    rows.iter()
        .filter_map(|r| r.w2_mean.map(|m| (r.beta, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(b, _)| b)
}

/// One experiment per β, written under `<id>_beta_<β>`, plus `sweep.csv`.
pub fn run_beta_sweep(base: &ExperimentConfig, betas: &[Option<f64>], opts: &RunOptions) -> Result<SweepSummary> {
    if betas.is_empty() {
        return Err(Error::Config("sweep needs at least one beta".into()));
    }
    let root = opts.out_root(base.out_dir.as_deref());
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut cfg = base.clone();
        cfg.id = format!("{}_beta_{}", base.id, beta_label(beta));
        cfg.model.beta = beta;
        cfg.out_dir = Some(root.clone());
        let s = run_experiment(&cfg, opts)?;
        rows.push(SweepRow {
            beta,
            dataset: s.dataset,
            w2_mean: s.w2_mean,
            w2_std: s.w2_std,
            completed: s.completed,
            failed: s.failed,
        });
    }
    let summary = SweepSummary {
        id: base.id.clone(),
        best_beta: best_beta(&rows),
        rows,
    };
    let dir = root.join(format!("{}_sweep", base.id));
    create_dir(&dir)?;
    write_sweep_csv(&summary.rows, &dir.join("sweep.csv"))?;
    write_json(&dir.join("sweep.json"), &summary)?;
    Ok(summary)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["beta", "dataset", "w2_mean", "w2_std"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([beta_label(r.beta), r.dataset.clone(), opt(r.w2_mean), opt(r.w2_std)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// 1D Sinkhorn experiments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornExperimentConfig {
    pub schema_version: u32,
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub source: DatasetSpec,
    pub target: DatasetSpec,
    pub sinkhorn: SinkhornConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl SinkhornExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        check_schema(cfg.schema_version)?;
        check_id(&cfg.id)?;
        for (key, spec) in [("source", &cfg.source), ("target", &cfg.target)] {
            spec.dist.validate().map_err(|e| Error::Config(format!("{key}: {e}")))?;
            if spec.dist.dim() != 1 {
                return Err(Error::Config(format!("{key}: the grid solver is one-dimensional")));
            }
        }
        cfg.sinkhorn.validate().map_err(|e| Error::Config(format!("sinkhorn: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornSummary {
    pub id: String,
    pub config_hash: String,
    pub iterations: usize,
    /// Controls at time 0 averaged over the source sample.
    pub alpha0: f64,
    pub sigma0: f64,
    /// Controls averaged over the simulated paths and time grid.
    pub alpha_path_mean: f64,
    pub sigma_path_mean: f64,
    pub terminal_mean: f64,
    pub terminal_var: f64,
    pub terminal_ks: f64,
    pub all_finite: bool,
    pub seconds: f64,
    pub out_dir: PathBuf,
}

/// Runs the grid solver and writes state, controls, trajectories and ECDFs.
pub fn run_sinkhorn_experiment(cfg: &SinkhornExperimentConfig, opts: &RunOptions) -> Result<SinkhornSummary> {
    let mut cfg = cfg.clone();
    if let Some(&seed) = opts.seeds.as_ref().and_then(|s| s.first()) {
        cfg.sinkhorn.seed = seed;
    }
    let seed = cfg.sinkhorn.seed;
    let root = opts.out_root(cfg.out_dir.as_deref());
    let out_dir = root.join(&cfg.id);
    create_dir(&out_dir)?;
    let draw = |spec: &DatasetSpec, stream: u64| {
        spec.dist
            .sample(spec.n, &mut rng::stream(spec.seed.wrapping_add(seed), stream))
            .map(SampleBatch::into_vec)
    };
    let mu0 = draw(&cfg.source, streams::DATA_SOURCE)?;
    let mu_t = draw(&cfg.target, streams::DATA_TARGET)?;
    let started = Instant::now();
    let run = sinkhorn1d::run_sinkhorn_sbb(&mu0, &mu_t, &cfg.sinkhorn)?;
    let seconds = started.elapsed().as_secs_f64();

    let controls = sinkhorn1d::extract_controls(&run.state);
    let c0 = controls.at(0.0)?;
    let (mut a0, mut s0) = (0.0, 0.0);
    for &x in &mu0 {
        a0 += c0.alpha(x)?;
        s0 += c0.sigma(x)?;
    }
    let n0 = mu0.len() as f64;
    let (mut ap, mut sp, mut np) = (0.0, 0.0, 0usize);
    let mut slices = Vec::new();
    if let Some(first) = run.trajectories.first() {
        for (i, &t) in first.times.iter().enumerate() {
            let slice = controls.at(t)?;
            for tr in &run.trajectories {
                let x = tr.x_at(i)[0];
                ap += slice.alpha(x)?;
                sp += slice.sigma(x)?;
                np += 1;
            }
            slices.push(t);
        }
    }
    let terminal = run.terminal();
    let tb = SampleBatch::new(1, terminal.clone())?;
    let terminal_ks = eval::ecdf_distance(&terminal, &mu_t)?;

    sinkhorn1d::write_state_csv(&run.state.phi, &run.state.log_h0, &out_dir.join("state.csv"))?;
    let (lo, hi) = (run.state.phi.lo(), run.state.phi.hi());
    let xs: Vec<f64> = (0..=100).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect();
    sinkhorn1d::write_controls_csv(&controls, &slices, &xs, &out_dir.join("controls.csv"))?;
    sampler::export_trajectories(&run.trajectories, &out_dir.join("trajectories.csv"))?;
    write_ecdf_table(&[("generated", &terminal), ("target", &mu_t)], &out_dir.join("ecdf.csv"))?;
    write_history(&run.history, &out_dir.join("history.csv"))?;

    let summary = SinkhornSummary {
        id: cfg.id.clone(),
        config_hash: config_hash(&cfg.sinkhorn),
        iterations: run.state.iteration,
        alpha0: a0 / n0,
        sigma0: s0 / n0,
        alpha_path_mean: if np > 0 { ap / np as f64 } else { f64::NAN },
        sigma_path_mean: if np > 0 { sp / np as f64 } else { f64::NAN },
        terminal_mean: tb.mean()[0],
        terminal_var: tb.variance()[0],
        terminal_ks,
        all_finite: terminal.iter().all(|v| v.is_finite()),
        seconds,
        out_dir: out_dir.clone(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    let hash = summary.config_hash.clone();
    let ledger = ResultsLedger::new(root.join(LEDGER_FILE));
    let ts = now_rfc3339();
    let recs: Vec<LedgerRecord> = [
        ("alpha0", summary.alpha0),
        ("sigma0", summary.sigma0),
        ("terminal_ks", summary.terminal_ks),
    ]
    .into_iter()
    .filter(|(_, v)| v.is_finite())
    .map(|(m, v)| LedgerRecord {
        experiment_id: cfg.id.clone(),
        config_hash: hash.clone(),
        seed,
        metric: m.to_string(),
        value: v,
        wall_clock_seconds: seconds,
        timestamp: ts.clone(),
    })
    .collect();
    ledger.append(&recs)?;
    Ok(summary)
}

fn write_history(history: &[sinkhorn1d::IterationLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "phi_sup_norm", "boundary_hits", "uncovered_points", "kde_mass"])?;
    for h in history {
        w.write_record([
            h.iteration.to_string(),
            h.phi_sup_norm.to_string(),
            h.boundary_hits.to_string(),
            h.uncovered_points.to_string(),
            h.kde_mass.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long-format ECDF table: `(sample, value, ecdf)` per sorted point.
pub fn write_ecdf_table(samples: &[(&str, &[f64])], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample", "value", "ecdf"])?;
    for (name, values) in samples {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        for (i, x) in v.iter().enumerate() {
            w.write_record([name.to_string(), x.to_string(), ((i + 1) as f64 / n).to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Plot bundles

/// Trajectories exported per plot bundle.
pub const PLOT_TRAJECTORIES: usize = 64;

/// Experiment ids under `root` that have a summary.
pub fn known_experiments(root: &Path) -> Vec<String> {
    let Ok(entries) = fs::read_dir(root) else {
        return Vec::new();
    };
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("summary.json").is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    ids.sort();
    ids
}

/// Writes scatter, ECDF and trajectory CSVs for a finished experiment into
/// `<root>/<id>/plots`. Re-emission is byte-identical.
pub fn emit_plot_data(root: &Path, id: &str) -> Result<PathBuf> {
    let dir = root.join(id);
    if !dir.join("summary.json").is_file() {
        let known = known_experiments(root);
        return Err(Error::Unknown {
            kind: "experiment",
            name: id.to_string(),
            known: if known.is_empty() { "none".into() } else { known.join(", ") },
        });
    }
    let plots = dir.join("plots");
    create_dir(&plots)?;
    if dir.join("state.csv").is_file() {
        // Grid-solver runs already carry their bundle.
        for f in ["trajectories.csv", "ecdf.csv", "controls.csv", "state.csv"] {
            let src = dir.join(f);
            if !src.is_file() {
                return Err(Error::MissingArtifact(src));
            }
            fs::copy(&src, plots.join(f)).map_err(|e| Error::io(&src, e))?;
        }
        return Ok(plots);
    }
    let summary: ExperimentSummary = read_json(&dir.join("summary.json"))?;
    let seed = summary
        .seeds
        .iter()
        .find(|s| s.status == SeedStatus::Completed)
        .map(|s| s.seed)
        .ok_or_else(|| Error::MissingArtifact(dir.join("seed_*")))?;
    let sd = seed_dir(&dir, seed);
    let need = |name: &str| {
        let p = sd.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    };
    let model = SbbModel::load(&need("model.json")?)?;
    let source = SampleBatch::read_csv(&need("eval_source.csv")?)?;
    let target = SampleBatch::read_csv(&need("eval_target.csv")?)?;
    let generated = SampleBatch::read_csv(&need("generated.csv")?)?;

    write_scatter(&[("source", &source), ("target", &target), ("generated", &generated)], &plots.join("scatter.csv"))?;
    if source.dim() == 1 {
        write_ecdf_table(
            &[("generated", generated.as_slice()), ("target", target.as_slice())],
            &plots.join("ecdf.csv"),
        )?;
    }
    let n = PLOT_TRAJECTORIES.min(source.len());
    let idx: Vec<usize> = (0..n).collect();
    let y0 = map_batch(&model, &source.select(&idx))?;
    let trajs = sampler::simulate_batch(&model, &y0, sampler::DEFAULT_SDE_STEPS, seed)?;
    sampler::export_trajectories(&trajs, &plots.join("trajectories.csv"))?;
    Ok(plots)
}

fn map_batch(model: &SbbModel, x0: &SampleBatch) -> Result<SampleBatch> {
    let mut out = SampleBatch::with_capacity(x0.dim(), x0.len());
    for x in x0.rows() {
        out.push(&model.map_source(x)?)?;
    }
    Ok(out)
}

/// Long-format scatter table with a `role` column (source, target, generated).
pub fn write_scatter(parts: &[(&str, &SampleBatch)], path: &Path) -> Result<()> {
    let d = parts.first().map(|p| p.1.dim()).unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["role".to_string()];
    header.extend((0..d).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (role, batch) in parts {
        for r in batch.rows() {
            let mut rec = vec![role.to_string()];
            rec.extend(r.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Presets

/// Shipped configs, embedded so that `reproduce` works from any directory.
pub mod presets {
    pub const N_TO_GAUSS8: &str = include_str!("../../../configs/paper/n_to_gauss8.toml");
    pub const MOONS_TO_GAUSS8: &str = include_str!("../../../configs/paper/moons_to_gauss8.toml");
    pub const N_TO_MOONS: &str = include_str!("../../../configs/paper/n_to_moons.toml");
    pub const GAUSS_TO_GAUSS: &str = include_str!("../../../configs/paper/gauss_to_gauss.toml");
    pub const DIRAC_TO_T2: &str = include_str!("../../../configs/paper/dirac_to_t2.toml");
    pub const PILOT: &str = include_str!("../../../configs/paper/appendix_pilot.toml");

    pub const SMOKE_N_TO_GAUSS8: &str = include_str!("../../../configs/smoke/n_to_gauss8.toml");
    pub const SMOKE_MOONS_TO_GAUSS8: &str = include_str!("../../../configs/smoke/moons_to_gauss8.toml");
    pub const SMOKE_N_TO_MOONS: &str = include_str!("../../../configs/smoke/n_to_moons.toml");
    pub const SMOKE_GAUSS_TO_GAUSS: &str = include_str!("../../../configs/smoke/gauss_to_gauss.toml");
    pub const SMOKE_DIRAC_TO_T2: &str = include_str!("../../../configs/smoke/dirac_to_t2.toml");
    pub const SMOKE_PILOT: &str = include_str!("../../../configs/smoke/appendix_pilot.toml");
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Paper,
    Smoke,
}

impl std::str::FromStr for Tier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Tier::Paper),
            "smoke" => Ok(Tier::Smoke),
            _ => Err(Error::Unknown {
                kind: "tier",
                name: s.into(),
                known: "paper, smoke".into(),
            }),
        }
    }
}

pub const REPRODUCE_TARGETS: &[&str] = &["table1", "table4", "fig1", "appendix-pilot"];

/// The three 2D benchmark configs.
pub fn table_configs(tier: Tier) -> Result<Vec<ExperimentConfig>> {
    let texts = match tier {
        Tier::Paper => [presets::N_TO_GAUSS8, presets::MOONS_TO_GAUSS8, presets::N_TO_MOONS],
        Tier::Smoke => [presets::SMOKE_N_TO_GAUSS8, presets::SMOKE_MOONS_TO_GAUSS8, presets::SMOKE_N_TO_MOONS],
    };
    texts.iter().map(|t| ExperimentConfig::parse(t)).collect()
}

pub fn fig1_configs(tier: Tier) -> Result<Vec<ExperimentConfig>> {
    let texts = match tier {
        Tier::Paper => [presets::GAUSS_TO_GAUSS, presets::DIRAC_TO_T2],
        Tier::Smoke => [presets::SMOKE_GAUSS_TO_GAUSS, presets::SMOKE_DIRAC_TO_T2],
    };
    texts.iter().map(|t| ExperimentConfig::parse(t)).collect()
}

pub fn pilot_config(tier: Tier) -> Result<SinkhornExperimentConfig> {
    SinkhornExperimentConfig::parse(match tier {
        Tier::Paper => presets::PILOT,
        Tier::Smoke => presets::SMOKE_PILOT,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub dataset: String,
    pub method: String,
    #[serde(with = "beta_serde")]
    pub beta: Option<f64>,
    pub w2_mean: Option<f64>,
    pub w2_std: Option<f64>,
}

/// SBB at each task's configured β next to the β = ∞ baseline.
pub fn reproduce_table1(tier: Tier, opts: &RunOptions) -> Result<Vec<Table1Row>> {
    let root = opts.out_root(None);
    let mut rows = Vec::new();
    for cfg in table_configs(tier)? {
        for (method, beta) in [("sbb", cfg.model.beta), ("lightsb_m", None)] {
            let mut c = cfg.clone();
            c.id = format!("table1_{}_{method}", cfg.id);
            c.model.beta = beta;
            c.out_dir = Some(root.clone());
            let s = run_experiment(&c, opts)?;
            rows.push(Table1Row {
                dataset: s.dataset,
                method: method.into(),
                beta,
                w2_mean: s.w2_mean,
                w2_std: s.w2_std,
            });
        }
    }
    let dir = root.join("table1");
    create_dir(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("table1.csv"))?;
    w.write_record(["dataset", "method", "beta", "w2_mean", "w2_std"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &rows {
        w.write_record([r.dataset.clone(), r.method.clone(), beta_label(r.beta), opt(r.w2_mean), opt(r.w2_std)])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("table1.csv"), e))?;
    write_json(&dir.join("summary.json"), &rows)?;
    Ok(rows)
}

pub fn reproduce_table4(tier: Tier, opts: &RunOptions) -> Result<Vec<SweepSummary>> {
    let root = opts.out_root(None);
    let mut out = Vec::new();
    for mut cfg in table_configs(tier)? {
        cfg.id = format!("table4_{}", cfg.id);
        cfg.out_dir = Some(root.clone());
        out.push(run_beta_sweep(&cfg, &TABLE4_BETAS, opts)?);
    }
    let dir = root.join("table4");
    create_dir(&dir)?;
    let rows: Vec<SweepRow> = out.iter().flat_map(|s| s.rows.clone()).collect();
    write_sweep_csv(&rows, &dir.join("table4.csv"))?;
    write_json(&dir.join("summary.json"), &out)?;
    Ok(out)
}

/// Runs both 1D toys and emits their plot bundles.
pub fn reproduce_fig1(tier: Tier, opts: &RunOptions) -> Result<Vec<ExperimentSummary>> {
    let root = opts.out_root(None);
    let mut out = Vec::new();
    for mut cfg in fig1_configs(tier)? {
        cfg.out_dir = Some(root.clone());
        let s = run_experiment(&cfg, opts)?;
        if s.completed > 0 {
            emit_plot_data(&root, &cfg.id)?;
        }
        out.push(s);
    }
    Ok(out)
}

pub fn reproduce_pilot(tier: Tier, opts: &RunOptions) -> Result<SinkhornSummary> {
    let root = opts.out_root(None);
    let mut cfg = pilot_config(tier)?;
    cfg.out_dir = Some(root.clone());
    let s = run_sinkhorn_experiment(&cfg, opts)?;
    emit_plot_data(&root, &cfg.id)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
id = "tiny"

[source]
name = "gaussian1d"
mean = 1.0
var = 2.0
n = 64

[target]
name = "gaussian1d"
mean = 0.0
var = 1.0
n = 64

[model]
beta = 10.0
epsilon = 1.0
"#;

    #[test]
    fn hash_ignores_key_order_and_out_dir() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let reordered = MINIMAL.replace("beta = 10.0\nepsilon = 1.0", "epsilon = 1.0\nbeta = 10.0");
        let mut b = ExperimentConfig::parse(&reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.model.beta = None;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn missing_beta_is_named() {
        let e = ExperimentConfig::parse(&MINIMAL.replace("beta = 10.0\n", "")).unwrap_err().to_string();
        assert!(e.contains("model") && e.contains("beta"), "{e}");
    }

    #[test]
    fn unknown_key_reports_path() {
        let e = ExperimentConfig::parse(&MINIMAL.replace("epsilon = 1.0", "epsilon = 1.0\nbta = 2"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("model") && e.contains("bta"), "{e}");
    }

    #[test]
    fn schema_and_seed_checks() {
        assert!(ExperimentConfig::parse(&MINIMAL.replace("schema_version = 1", "schema_version = 2")).is_err());
        assert!(ExperimentConfig::parse(&MINIMAL.replace("id = \"tiny\"", "id = \"tiny\"\nseeds = []")).is_err());
        assert_eq!(ExperimentConfig::parse(MINIMAL).unwrap().seeds, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn best_beta_skips_failed_rows() {
        let row = |beta, m| SweepRow {
            beta,
            dataset: "d".into(),
            w2_mean: m,
            w2_std: None,
            completed: 1,
            failed: 0,
        };
        let rows = [row(Some(1.0), None), row(Some(10.0), Some(0.3)), row(None, Some(0.2))];
        assert_eq!(best_beta(&rows), Some(None));
        assert_eq!(best_beta(&rows[..2]), Some(Some(10.0)));
        assert_eq!(best_beta(&rows[..1]), None);
    }

    #[test]
    fn shipped_configs_parse() {
        for tier in [Tier::Paper, Tier::Smoke] {
            assert_eq!(table_configs(tier).unwrap().len(), 3);
            assert_eq!(fig1_configs(tier).unwrap().len(), 2);
            pilot_config(tier).unwrap();
        }
    }
}
