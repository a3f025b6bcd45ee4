//! `distdf` command line: experiment config, the seven commands and their
//! on-disk artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{offdiag_exceedance, partial_correlation};
use crate::data::{chronological_split, generate_ar_variables, load_csv, make_windows, standardize, write_csv, ArSpec, Series, Split};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::oracle::{run_oracle, Suite};
use crate::output::{fmt17, write_json, write_jsonl, Sig17};
use crate::train::{alpha_sweep, evaluate, fit, format_sweep_table, time_loss, SplitData, TrainConfig, DEFAULT_ALPHA_GRID};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        ar: ArSpec,
        #[serde(default = "one")]
        variables: usize,
    },
    Csv {
        path: PathBuf,
        /// Subset of columns to keep, in order; all numeric columns when unset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns: Option<Vec<String>>,
    },
}

fn one() -> usize {
    1
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            ar: ArSpec {
                coefficients: vec![0.8],
                noise_std: 1.0,
                length: 10_000,
                seed: 2024,
            },
            variables: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: DEFAULT_ALPHA_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub threshold: f64,
    pub variable: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            threshold: 0.1,
            variable: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub history: usize,
    pub horizons: Vec<usize>,
    pub variables: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_size: 128,
            history: 96,
            horizons: vec![96, 192, 336, 720],
            variables: 21,
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub suites: Vec<Suite>,
    pub convergence_samples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            suites: Suite::ALL.to_vec(),
            convergence_samples: 2048,
        }
    }
}

/// One experiment: data, window shape, split and training settings plus
/// per-command options. TOML or JSON; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub history: usize,
    pub horizon: usize,
    pub data: DataConfig,
    pub split: Split,
    /// Per-variable z-scoring fitted on the training segment.
    pub standardize: bool,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub analyze: AnalyzeConfig,
    pub bench: BenchConfig,
    pub oracle: OracleConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            history: 24,
            horizon: 24,
            data: DataConfig::default(),
            split: Split::default(),
            standardize: true,
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            analyze: AnalyzeConfig::default(),
            bench: BenchConfig::default(),
            oracle: OracleConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file ends in `.json`, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // routed through a TOML value: tagged enums and exact-number JSON
        // do not mix in serde_json
        let json: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        serde_path_to_error::deserialize(json_to_toml(json, "")?).map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::config("history", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        match &self.data {
            DataConfig::Synthetic { ar, variables } => {
                ar.validate().map_err(at("data.ar"))?;
                if *variables == 0 {
                    return Err(Error::config("data.variables", "must be >= 1"));
                }
            }
            DataConfig::Csv { columns, .. } => {
                if columns.as_ref().is_some_and(|c| c.is_empty()) {
                    return Err(Error::config("data.columns", "must not be empty"));
                }
            }
        }
        if let Split::Ratios { .. } = self.split {
            self.split.lengths(1000).map_err(at("split"))?;
        }
        self.train.validate().map_err(at("train"))?;
        if self.sweep.alphas.is_empty() {
            return Err(Error::config("sweep.alphas", "must not be empty"));
        }
        if let Some(a) = self.sweep.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::config("sweep.alphas", format!("{a} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.analyze.threshold) {
            return Err(Error::config("analyze.threshold", "must lie in [0, 1]"));
        }
        let b = &self.bench;
        if b.batch_size < 2 {
            return Err(Error::config("bench.batch_size", "must be >= 2"));
        }
        if b.history == 0 || b.variables == 0 || b.horizons.is_empty() || b.horizons.contains(&0) {
            return Err(Error::config("bench", "history, variables and every horizon must be >= 1"));
        }
        if b.repeats < 3 {
            return Err(Error::config("bench.repeats", "must be >= 3"));
        }
        if self.oracle.convergence_samples < 2 {
            return Err(Error::config("oracle.convergence_samples", "must be >= 2"));
        }
        Ok(())
    }

    /// The full series named by `data`.
    pub fn load_series(&self) -> Result<Series> {
        match &self.data {
            DataConfig::Synthetic { ar, variables } => generate_ar_variables(ar, *variables),
            DataConfig::Csv { path, columns } => {
                let s = load_csv(path)?;
                match columns {
                    None => Ok(s),
                    Some(cols) => select_columns(&s, cols),
                }
            }
        }
    }

    /// Chronological split, standardized on the training segment when enabled.
    pub fn split_data(&self) -> Result<SplitData> {
        let series = self.load_series()?;
        let [tr, va, te] = chronological_split(&series, &self.split, self.history + self.horizon)?;
        if !self.standardize {
            return Ok(SplitData {
                train: tr,
                val: va,
                test: te,
            });
        }
        let (_, train, rest) = standardize(&tr, &[va, te])?;
        let [val, test]: [Series; 2] = rest.try_into().expect("two segments");
        Ok(SplitData { train, val, test })
    }
}

fn json_to_toml(v: serde_json::Value, path: &str) -> Result<toml::Value> {
    use serde_json::Value as J;
    Ok(match v {
        J::Null => return Err(Error::config(path, "null is not allowed; omit the key instead")),
        J::Bool(b) => toml::Value::Boolean(b),
        J::Number(n) => match n.as_i64() {
            Some(i) => toml::Value::Integer(i),
            None => toml::Value::Float(
                n.as_f64()
                    .ok_or_else(|| Error::config(path, format!("number {n} out of range")))?,
            ),
        },
        J::String(s) => toml::Value::String(s),
        J::Array(a) => toml::Value::Array(
            a.into_iter()
                .enumerate()
                .map(|(i, x)| json_to_toml(x, &format!("{path}[{i}]")))
                .collect::<Result<_>>()?,
        ),
        J::Object(m) => toml::Value::Table(
            m.into_iter()
                .map(|(k, x)| {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    json_to_toml(x, &p).map(|t| (k, t))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

fn select_columns(s: &Series, cols: &[String]) -> Result<Series> {
    let idx = cols
        .iter()
        .map(|c| {
            s.names
                .iter()
                .position(|n| n == c)
                .ok_or_else(|| Error::config("data.columns", format!("no column named `{c}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let values = crate::linalg::Matrix::from_fn(s.len(), idx.len(), |r, c| s.values[(r, idx[c])]);
    Series::new(values, cols.to_vec(), s.timestamps.clone())
}

#[derive(Debug, Parser)]
#[command(name = "distdf", version, about = "Joint-distribution forecast training and its verification tools")]
pub struct Cli {
    /// Experiment config (TOML, or JSON by extension); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed` (initialization, shuffling, oracle and bench draws).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset as CSV.
    Generate,
    /// Fit a model; write checkpoint, epoch log and summary.
    Train,
    /// Test-split MSE/MAE of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// One fit per α; write the α/MSE/MAE table.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Partial correlation of label steps given the history window.
    Analyze {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Property checks of the transport and discrepancy code.
    Oracle {
        #[arg(long = "suite", value_enum)]
        suites: Vec<Suite>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Loss forward/backward timing per horizon.
    Bench {
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        history: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long)]
        variables: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Artifacts written but a check failed (oracle).
    Failed,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolves config and overrides, then dispatches.
pub fn run(cli: Cli) -> Result<Status> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(d) = cli.out_dir {
        cfg.output_dir = d;
    }
    match cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
            cmd_eval(&cfg, &path)
        }
        Command::Sweep { alphas } => {
            if let Some(a) = alphas {
                cfg.sweep.alphas = a;
            }
            cfg.validate()?;
            cmd_sweep(&cfg)
        }
        Command::Analyze { threshold } => {
            if let Some(t) = threshold {
                cfg.analyze.threshold = t;
            }
            cfg.validate()?;
            cmd_analyze(&cfg)
        }
        Command::Oracle { suites, samples } => {
            if !suites.is_empty() {
                cfg.oracle.suites = suites;
            }
            if let Some(n) = samples {
                cfg.oracle.convergence_samples = n;
            }
            cfg.validate()?;
            cmd_oracle(&cfg)
        }
        Command::Bench {
            batch_size,
            history,
            horizons,
            variables,
            repeats,
        } => {
            let b = &mut cfg.bench;
            b.batch_size = batch_size.unwrap_or(b.batch_size);
            b.history = history.unwrap_or(b.history);
            b.horizons = horizons.unwrap_or(std::mem::take(&mut b.horizons));
            b.variables = variables.unwrap_or(b.variables);
            b.repeats = repeats.unwrap_or(b.repeats);
            cfg.validate()?;
            cmd_bench(&cfg)
        }
    }
}

/// Process entry point: logs, runs, maps the outcome to an exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_manifest(cfg: &ExperimentConfig) -> Result<()> {
    write_json(&cfg.output_dir.join("manifest.json"), cfg)
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Status> {
    let DataConfig::Synthetic { .. } = cfg.data else {
        return Err(Error::config("data.source", "generate needs a synthetic data source"));
    };
    let series = cfg.load_series()?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("data.csv");
    write_csv(&path, &series)?;
    write_manifest(cfg)?;
    println!("wrote {} rows to {}", series.len(), path.display());
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    test_mse: Sig17,
    test_mae: Sig17,
    best_epoch: usize,
    alpha: Sig17,
    best_validation: Sig17,
    stopped_epoch: usize,
    stopped_early: bool,
    test_windows: usize,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Status> {
    let data = cfg.split_data()?;
    let (model, mut record) = fit(&data, cfg.history, cfg.horizon, &cfg.train)?;
    let test = evaluate(&model, &data.test, cfg.history, cfg.horizon)?;
    create_dir(&cfg.output_dir)?;
    write_manifest(cfg)?;
    Checkpoint {
        model,
        seed: cfg.train.seed,
    }
    .write(&cfg.output_dir.join(CHECKPOINT_FILE))?;
    record.checkpoint = Some(CHECKPOINT_FILE.into());
    write_jsonl(&cfg.output_dir.join("train_record.jsonl"), &record.epochs)?;
    let summary = TrainSummary {
        test_mse: Sig17(test.mse),
        test_mae: Sig17(test.mae),
        best_epoch: record.best_epoch,
        alpha: Sig17(cfg.train.loss.alpha),
        best_validation: Sig17(record.best_validation),
        stopped_epoch: record.stopped_epoch,
        stopped_early: record.stopped_early,
        test_windows: test.windows,
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    println!(
        "test mse {} mae {} (best epoch {})",
        fmt17(test.mse),
        fmt17(test.mae),
        record.best_epoch
    );
    Ok(Status::Ok)
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Status> {
    let ck = Checkpoint::read(checkpoint)?;
    if ck.model.history() != cfg.history || ck.model.horizon() != cfg.horizon {
        return Err(Error::dim(
            "eval (checkpoint H, T vs config)",
            format!("({}, {})", cfg.history, cfg.horizon),
            format!("({}, {})", ck.model.history(), ck.model.horizon()),
        ));
    }
    let data = cfg.split_data()?;
    let m = evaluate(&ck.model, &data.test, cfg.history, cfg.horizon)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("eval.json"), &m)?;
    println!("{}", crate::output::to_json_string(&m)?);
    Ok(Status::Ok)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Status> {
    let data = cfg.split_data()?;
    let rows = alpha_sweep(&data, cfg.history, cfg.horizon, &cfg.train, &cfg.sweep.alphas)?;
    create_dir(&cfg.output_dir)?;
    write_manifest(cfg)?;
    let mut csv = String::from("alpha,mse,mae,best_epoch\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", fmt17(r.alpha), fmt17(r.mse), fmt17(r.mae), r.best_epoch));
    }
    write_text(&cfg.output_dir.join("sweep.csv"), &csv)?;
    let table = format_sweep_table(&rows);
    write_text(&cfg.output_dir.join("sweep.md"), &table)?;
    print!("{table}");
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
struct AnalyzeSummary {
    exceedance: Sig17,
    threshold: Sig17,
    history: usize,
    horizon: usize,
    variable: String,
    samples: usize,
    degenerate_steps: Vec<usize>,
}

pub fn cmd_analyze(cfg: &ExperimentConfig) -> Result<Status> {
    let data = cfg.split_data()?;
    let v = cfg.analyze.variable;
    if v >= data.train.num_variables() {
        return Err(Error::config(
            "analyze.variable",
            format!("index {v} but the data has {} variables", data.train.num_variables()),
        ));
    }
    let windows = make_windows(&data.train, cfg.history, cfg.horizon, 1)?;
    let w = &windows[v];
    let pc = partial_correlation(&w.history, &w.label)?;
    let exceedance = offdiag_exceedance(&pc, cfg.analyze.threshold);
    create_dir(&cfg.output_dir)?;
    pc.write_csv(&cfg.output_dir.join("partial_correlation.csv"))?;
    let summary = AnalyzeSummary {
        exceedance: Sig17(exceedance),
        threshold: Sig17(cfg.analyze.threshold),
        history: cfg.history,
        horizon: cfg.horizon,
        variable: data.train.names[v].clone(),
        samples: pc.sample_count,
        degenerate_steps: pc.degenerate.iter().map(|s| s + 1).collect(),
    };
    write_json(&cfg.output_dir.join("analyze.json"), &summary)?;
    println!("exceedance at {}: {}", cfg.analyze.threshold, fmt17(exceedance));
    Ok(Status::Ok)
}

pub fn cmd_oracle(cfg: &ExperimentConfig) -> Result<Status> {
    let report = run_oracle(&cfg.oracle.suites, cfg.train.seed, cfg.oracle.convergence_samples)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("oracle.json"), &report)?;
    for c in &report.checks {
        println!(
            "{} {}: worst {} (tolerance {}, {} cases)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            fmt17(c.worst),
            c.tolerance,
            c.cases
        );
    }
    Ok(if report.passed { Status::Ok } else { Status::Failed })
}

pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<Status> {
    let b = &cfg.bench;
    let mut csv = String::from("T,forward_ms,backward_ms\n");
    for &t in &b.horizons {
        let timing = time_loss(b.batch_size, b.history, t, b.variables, b.repeats, &cfg.train.loss, cfg.train.seed)?;
        log::info!("T={t}: forward {:.3} ms, backward {:.3} ms", timing.forward_ms, timing.backward_ms);
        csv.push_str(&format!("{t},{},{}\n", fmt17(timing.forward_ms), fmt17(timing.backward_ms)));
    }
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(Status::Ok)
}
