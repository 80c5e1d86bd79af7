//! Command-line front end.
//!
//! Every command reads one JSON config with the optional sections
//! `filter`, `statistics`, `experiment` and `sweep`, and writes plot-ready
//! CSV (or JSON) tables into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Deserializer};

use crate::analysis::{self, ConvergencePrediction, DecayModel, EigenStats};
use crate::error::{Error, Result};
use crate::filter::FilterSpec;
use crate::simulation::{self, ExperimentConfig};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Closed-form predictions for one configuration.
    Predict,
    /// Ensemble learning curves, one file per (D, L) pair.
    Run,
    /// Simulated versus analytic stability bound.
    Sweep,
    /// Estimated and simulated misadjustment and slope for the twelve reference rows.
    Table2,
    /// Slope factor at the optimal step size over a (D, L) grid.
    FigAlpha,
    /// Analytic critical and optimal step sizes over a (D, L) grid.
    FigBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Parsed command line.
#[derive(Debug, Clone, Parser)]
#[command(name = "dblms", version, about = "Delayed block LMS analysis and simulation")]
pub struct RunManifest {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON config file.
    #[arg(long = "config")]
    pub config_path: PathBuf,
    /// Output directory, created if absent.
    #[arg(long = "out")]
    pub output_dir: PathBuf,
    /// Replaces `experiment.seed`.
    #[arg(long = "seed")]
    pub seed_override: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

/// Effective step size: a number or `"opt"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepSetting {
    #[default]
    Optimal,
    Value(f64),
}

impl<'de> Deserialize<'de> for StepSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(StepSetting::Value(v)),
            Raw::Text(s) if s == "opt" => Ok(StepSetting::Optimal),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "effective_step must be a number or \"opt\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub n_taps: usize,
    #[serde(default)]
    pub delay: usize,
    #[serde(default = "one")]
    pub block_size: usize,
    #[serde(default)]
    pub effective_step: StepSetting,
    /// `(D, L)` pairs for `run`; falls back to `(delay, block_size)`.
    #[serde(default)]
    pub pairs: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsSection {
    #[serde(default = "unit")]
    pub sigma2: f64,
    #[serde(default = "unit")]
    pub rho: f64,
    #[serde(default = "gaussian_kurtosis")]
    pub kurtosis: f64,
    /// Overrides the minimum MSE used by `predict` (defaults to the noise power).
    #[serde(default)]
    pub min_mse: Option<f64>,
}

impl Default for StatisticsSection {
    fn default() -> Self {
        Self {
            sigma2: 1.0,
            rho: 1.0,
            kurtosis: 3.0,
            min_mse: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub plant_taps: Option<usize>,
    /// `null` for a noiseless experiment.
    #[serde(default = "default_noise_db")]
    pub noise_power_db: Option<f64>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window")]
    pub steady_state_window: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            plant_taps: None,
            noise_power_db: default_noise_db(),
            n_trials: default_trials(),
            n_samples: None,
            seed: 0,
            steady_state_window: default_window(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Delay,
    BlockSize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    /// Fixed values of the other parameter; one output table each.
    pub companions: Vec<usize>,
    #[serde(default = "default_sweep_trials")]
    pub n_trials: usize,
    #[serde(default = "default_grid_fraction")]
    pub grid_fraction: f64,
    #[serde(default)]
    pub n_samples: Option<usize>,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn gaussian_kurtosis() -> f64 {
    3.0
}
fn default_noise_db() -> Option<f64> {
    Some(-60.0)
}
fn default_trials() -> usize {
    500
}
fn default_sweep_trials() -> usize {
    100
}
fn default_window() -> f64 {
    0.2
}
fn default_grid_fraction() -> f64 {
    simulation::DEFAULT_GRID_FRACTION
}

/// Whole config document.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub filter: Option<FilterSection>,
    #[serde(default)]
    pub statistics: StatisticsSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Config = serde_json::from_str(text)?;
        config.stats()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn stats(&self) -> Result<EigenStats> {
        let s = &self.statistics;
        EigenStats::new(s.sigma2, s.rho, s.kurtosis)
    }

    fn filter(&self) -> Result<&FilterSection> {
        self.filter
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `filter` section".into()))
    }

    fn sweep(&self) -> Result<&SweepSection> {
        self.sweep
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `sweep` section".into()))
    }

    fn noise_power_db(&self) -> f64 {
        self.experiment.noise_power_db.unwrap_or(f64::NEG_INFINITY)
    }

    /// Effective step for `(n, d, l)`; rejects steps at or past the bound.
    fn step(&self, n: usize, d: usize, l: usize) -> Result<f64> {
        let stats = self.stats()?;
        let bound = analysis::critical_step_size(n, d, l, &stats);
        let step = match self.filter()?.effective_step {
            StepSetting::Optimal => analysis::optimal_step_size(n, d, l, &stats),
            StepSetting::Value(v) => v,
        };
        if !(step.is_finite() && step > 0.0 && step < bound) {
            return Err(Error::OutOfBound { step, bound });
        }
        Ok(step)
    }

    /// Experiment for one `(D, L)` pair at effective step `mu_hat`.
    pub fn experiment(&self, n: usize, d: usize, l: usize, mu_hat: f64) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        let filter = FilterSpec::with_effective_step(n, d, l, mu_hat)?;
        let config = ExperimentConfig {
            filter,
            plant_taps: e.plant_taps.unwrap_or(n),
            noise_power_db: self.noise_power_db(),
            n_trials: e.n_trials,
            n_samples: e.n_samples.unwrap_or_else(|| default_run_samples(n, (d + 1) * l)),
            seed: e.seed,
            steady_state_window: e.steady_state_window,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Sample count long enough for the transient to finish before the
/// steady-state window: 4000 for N = 32, S = 32.
pub fn default_run_samples(n_taps: usize, speedup: usize) -> usize {
    (40 * (n_taps + 2 * speedup)).max(4000)
}

/// Minimum sweep run length: ten delay-block periods.
pub fn default_sweep_samples(speedup: usize) -> usize {
    (10 * speedup).max(1000)
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::Num(v.unwrap_or(f64::NAN))
    }
}

/// A named output table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: impl Into<String>, columns: Vec<&'static str>) -> Self {
        Self {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(v) => v.to_string(),
                    Cell::Num(v) => format_sig9(*v),
                    Cell::Text(s) => s.clone(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        use serde_json::{json, Value};
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Array(
                    row.iter()
                        .map(|c| match c {
                            Cell::Int(v) => json!(v),
                            Cell::Num(v) if v.is_finite() => {
                                json!(format_sig9(*v).parse::<f64>().expect("formatted float parses"))
                            }
                            Cell::Num(_) => Value::Null,
                            Cell::Text(s) => json!(s),
                        })
                        .collect(),
                )
            })
            .collect();
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "artifact": self.name,
            "columns": self.columns,
            "rows": rows,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("json value serializes");
        text.push('\n');
        text
    }
}

/// Nine significant digits in the style of `%.9g`; ties round to even.
pub fn format_sig9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let rounded: f64 = sci.parse().expect("scientific parses");
        trim_zeros(format!("{rounded:.decimals$}"))
    } else {
        let mut s = trim_zeros(mantissa.to_string());
        let _ = write!(s, "e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
        s
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Runs a command and returns the tables it produced (nothing is written).
pub fn execute(command: Command, config: &Config) -> Result<Vec<Table>> {
    match command {
        Command::Predict => cmd_predict(config).map(|t| vec![t]),
        Command::Run => cmd_run(config),
        Command::Sweep => cmd_sweep(config),
        Command::Table2 => cmd_table2(config).map(|t| vec![t]),
        Command::FigAlpha => cmd_fig_alpha(config),
        Command::FigBound => cmd_fig_bound(config),
    }
}

/// Parses the config, runs the command and writes the files. Returns the paths written.
pub fn run(manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    let mut config = Config::load(&manifest.config_path)?;
    if let Some(seed) = manifest.seed_override {
        config.experiment.seed = seed;
    }
    let tables = execute(manifest.command, &config)?;
    fs::create_dir_all(&manifest.output_dir)?;
    let mut written = Vec::with_capacity(tables.len());
    for table in &tables {
        let (ext, body) = match manifest.format {
            Format::Csv => ("csv", table.to_csv()),
            Format::Json => ("json", table.to_json()),
        };
        let path = manifest.output_dir.join(format!("{}.{ext}", table.name));
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_predict(config: &Config) -> Result<Table> {
    let f = config.filter()?;
    let stats = config.stats()?;
    let mu_hat = config.step(f.n_taps, f.delay, f.block_size)?;
    let spec = FilterSpec::with_effective_step(f.n_taps, f.delay, f.block_size, mu_hat)?;
    let noise = 10f64.powf(config.noise_power_db() / 10.0);
    let min_mse = config.statistics.min_mse.unwrap_or(noise);
    let p = ConvergencePrediction::predict(&spec, &stats, min_mse, 0.0)?;
    let mut table = Table::new(
        "prediction",
        vec![
            "kind",
            "n_taps",
            "delay",
            "block_size",
            "speedup",
            "mu_hat",
            "mu_hat_crit",
            "mu_hat_opt",
            "misadjustment",
            "excess_mse",
            "min_mse",
            "alpha",
            "tau_samples",
            "slope_db_per_sample",
        ],
    );
    table.push(vec![
        Cell::Text(spec.kind().to_string()),
        f.n_taps.into(),
        f.delay.into(),
        f.block_size.into(),
        spec.speedup().into(),
        p.mu_hat.into(),
        p.mu_hat_crit.into(),
        p.mu_hat_opt.into(),
        p.misadjustment.into(),
        p.excess_mse.into(),
        p.min_mse.into(),
        p.alpha.into(),
        p.tau_samples.into(),
        p.slope_db_per_sample.into(),
    ]);
    Ok(table)
}

pub fn cmd_run(config: &Config) -> Result<Vec<Table>> {
    let f = config.filter()?;
    let stats = config.stats()?;
    let pairs = f.pairs.clone().unwrap_or_else(|| vec![(f.delay, f.block_size)]);
    let mut tables = Vec::with_capacity(pairs.len());
    for (d, l) in pairs {
        let mu_hat = config.step(f.n_taps, d, l)?;
        let experiment = config.experiment(f.n_taps, d, l, mu_hat)?;
        let result = simulation::run_ensemble(&experiment)?;
        let plant = simulation::make_plant(experiment.plant_taps, experiment.seed);
        let predicted = analysis::predict_mse_curve_with(
            &experiment.filter,
            &stats,
            result.min_mse,
            0.0,
            result.min_mse + analysis::initial_excess_mse(&plant, &stats),
            experiment.n_samples,
            DecayModel::Envelope,
        )?;
        let mut table = Table::new(
            format!("curve_D{d}_L{l}"),
            vec![
                "sample_index",
                "simulated_mse_db",
                "predicted_mse_db",
                "steady_state_db",
                "convergence_marker",
            ],
        );
        for (i, (sim, pred)) in result.mse_curve_db.iter().zip(&predicted).enumerate() {
            let marker = usize::from(result.convergence_sample == Some(i));
            table.push(vec![
                i.into(),
                (*sim).into(),
                simulation::to_db(*pred).into(),
                result.steady_state_mse_db.into(),
                marker.into(),
            ]);
        }
        tables.push(table);
    }
    Ok(tables)
}

pub fn cmd_sweep(config: &Config) -> Result<Vec<Table>> {
    let n = config.filter()?.n_taps;
    let stats = config.stats()?;
    let sweep = config.sweep()?;
    let mut tables = Vec::with_capacity(sweep.companions.len());
    for &companion in &sweep.companions {
        let mut table = Table::new(
            sweep_name("sweep", sweep.axis, companion),
            vec![
                "axis_value",
                "analytic_bound",
                "simulated_bound_noiseless",
                "simulated_bound_noisy",
            ],
        );
        for &value in &sweep.values {
            let (d, l) = axis_pair(sweep.axis, value, companion);
            let mut experiment = config.experiment(n, d, l, analysis::optimal_step_size(n, d, l, &stats))?;
            experiment.n_trials = sweep.n_trials;
            experiment.n_samples = sweep.n_samples.unwrap_or_else(|| default_sweep_samples((d + 1) * l));
            let quiet = simulation::stability_sweep_with(&experiment, false, sweep.grid_fraction, &stats)?;
            let noisy = simulation::stability_sweep_with(&experiment, true, sweep.grid_fraction, &stats)?;
            table.push(vec![
                value.into(),
                quiet.analytic_bound.into(),
                quiet.simulated_bound.into(),
                noisy.simulated_bound.into(),
            ]);
        }
        tables.push(table);
    }
    Ok(tables)
}

/// The twelve `(N, D, L)` rows of the reference misadjustment table.
pub const TABLE2_ROWS: [(usize, usize, usize); 12] = [
    (32, 0, 32),
    (32, 1, 16),
    (32, 3, 8),
    (32, 7, 4),
    (32, 15, 2),
    (32, 31, 1),
    (16, 0, 12),
    (16, 1, 6),
    (16, 2, 4),
    (16, 3, 3),
    (16, 5, 2),
    (16, 11, 1),
];

/// Sample count per table row unless `experiment.n_samples` is set.
pub const TABLE2_SAMPLES: usize = 4000;

pub fn cmd_table2(config: &Config) -> Result<Table> {
    let stats = config.stats()?;
    let mut table = Table::new(
        "table2",
        vec![
            "n_taps",
            "speedup",
            "delay",
            "block_size",
            "estimated_misadjustment",
            "simulated_misadjustment",
            "estimated_slope_db_per_sample",
            "simulated_slope_db_per_sample",
        ],
    );
    for (n, d, l) in TABLE2_ROWS {
        let mu_hat = analysis::optimal_step_size(n, d, l, &stats);
        let mut experiment = config.experiment(n, d, l, mu_hat)?;
        experiment.n_samples = config.experiment.n_samples.unwrap_or(TABLE2_SAMPLES);
        let result = simulation::run_ensemble(&experiment)?;
        table.push(vec![
            n.into(),
            ((d + 1) * l).into(),
            d.into(),
            l.into(),
            analysis::misadjustment(mu_hat, n, d, l, &stats)?.into(),
            result.simulated_misadjustment.into(),
            analysis::slope(d, l, mu_hat, &stats).into(),
            result.measured_slope_db_per_sample.into(),
        ]);
    }
    Ok(table)
}

pub fn cmd_fig_alpha(config: &Config) -> Result<Vec<Table>> {
    let n = config.filter()?.n_taps;
    let stats = config.stats()?;
    let sweep = config.sweep()?;
    Ok(sweep
        .companions
        .iter()
        .map(|&companion| {
            let mut table = Table::new(
                sweep_name("alpha", sweep.axis, companion),
                vec!["axis_value", "mu_hat_opt", "alpha"],
            );
            for &value in &sweep.values {
                let (d, l) = axis_pair(sweep.axis, value, companion);
                let mu = analysis::optimal_step_size(n, d, l, &stats);
                table.push(vec![
                    value.into(),
                    mu.into(),
                    analysis::slope_factor(d, l, mu, &stats).into(),
                ]);
            }
            table
        })
        .collect())
}

pub fn cmd_fig_bound(config: &Config) -> Result<Vec<Table>> {
    let n = config.filter()?.n_taps;
    let stats = config.stats()?;
    let sweep = config.sweep()?;
    Ok(sweep
        .companions
        .iter()
        .map(|&companion| {
            let mut table = Table::new(
                sweep_name("bound", sweep.axis, companion),
                vec!["axis_value", "analytic_bound", "mu_hat_opt"],
            );
            for &value in &sweep.values {
                let (d, l) = axis_pair(sweep.axis, value, companion);
                table.push(vec![
                    value.into(),
                    analysis::critical_step_size(n, d, l, &stats).into(),
                    analysis::optimal_step_size(n, d, l, &stats).into(),
                ]);
            }
            table
        })
        .collect())
}

fn axis_pair(axis: SweepAxis, value: usize, companion: usize) -> (usize, usize) {
    match axis {
        SweepAxis::Delay => (value, companion),
        SweepAxis::BlockSize => (companion, value),
    }
}

fn sweep_name(prefix: &str, axis: SweepAxis, companion: usize) -> String {
    match axis {
        SweepAxis::Delay => format!("{prefix}_vs_D_L{companion}"),
        SweepAxis::BlockSize => format!("{prefix}_vs_L_D{companion}"),
    }
}

/// Process exit code for an error: 3 for instability, 4 when every trial
/// diverged, 2 for bad input, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::OutOfBound { .. } | Error::PredictedDivergence { .. } => 3,
        Error::AllDiverged(_) => 4,
        Error::Config(_) | Error::Json(_) => 2,
        _ => 1,
    }
}
