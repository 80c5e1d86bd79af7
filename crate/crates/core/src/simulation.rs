//! Monte Carlo system identification.
//!
//! A unit-norm Gaussian plant is driven by white Gaussian input; its output
//! plus white Gaussian noise is the desired signal for the adaptive filter.
//! Each trial records the current (undelayed) squared error per sample and
//! the ensemble averages the trials in a fixed order, so results do not
//! depend on how many worker threads ran them.
//!
//! Random streams are keyed by `(seed, trial, role)`: a ChaCha8 generator is
//! seeded with `seed` and positioned on stream `4 * trial + role`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, EigenStats};
use crate::error::{Error, Result};
use crate::filter::{AdaptStatus, FilterSpec, FilterState};

/// Squared-error value recorded after a trial has diverged.
pub const DIVERGED_SENTINEL: f64 = f64::INFINITY;

/// Default sweep increment, as a fraction of the analytic bound.
pub const DEFAULT_GRID_FRACTION: f64 = 0.0265;

/// The sweep gives up above this multiple of the analytic bound.
pub const SWEEP_LIMIT: f64 = 1.5;

/// Tolerance band around the steady state that defines convergence.
pub const CONVERGENCE_BAND_DB: f64 = 1.0;

/// Predicted time constants each sweep run spends before its steady-state
/// window. Shorter runs leave slow, stable steps near their initial MSE of 1,
/// where ensemble noise alone crosses the unity threshold.
pub const SWEEP_SETTLE_TAUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StreamRole {
    Plant = 0,
    Input = 1,
    Noise = 2,
}

fn stream_rng(seed: u64, index: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(4).wrapping_add(role as u64));
    rng
}

/// Gaussian plant scaled to unit Euclidean norm.
pub fn make_plant(n_taps: usize, seed: u64) -> Vec<f64> {
    assert!(n_taps >= 1, "plant needs at least one tap");
    let mut rng = stream_rng(seed, 0, StreamRole::Plant);
    loop {
        let w: Vec<f64> = (0..n_taps).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return w.into_iter().map(|v| v / norm).collect();
        }
    }
}

fn default_trials() -> usize {
    500
}

fn default_noise_db() -> f64 {
    -60.0
}

fn default_window() -> f64 {
    0.2
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub filter: FilterSpec,
    pub plant_taps: usize,
    /// Noise power in dB; `-inf` (or `None` in JSON) for a noiseless run.
    #[serde(default = "default_noise_db", with = "noise_db")]
    pub noise_power_db: f64,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Trailing fraction of samples averaged for the steady state.
    #[serde(default = "default_window")]
    pub steady_state_window: f64,
}

mod noise_db {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

impl ExperimentConfig {
    /// Matched-order experiment with the defaults of the system
    /// identification setup: -60 dB noise, 500 trials, 20 % window.
    pub fn new(filter: FilterSpec, n_samples: usize, seed: u64) -> Self {
        Self {
            filter,
            plant_taps: filter.n_taps(),
            noise_power_db: default_noise_db(),
            n_trials: default_trials(),
            n_samples,
            seed,
            steady_state_window: default_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.plant_taps == 0 {
            return Err(Error::Config("plant_taps must be at least 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if !(self.steady_state_window > 0.0 && self.steady_state_window <= 0.5) {
            return Err(Error::Config(format!(
                "steady_state_window must be in (0, 0.5], got {}",
                self.steady_state_window
            )));
        }
        if self.noise_power_db.is_nan() || self.noise_power_db == f64::INFINITY {
            return Err(Error::Config("noise_power_db must be finite or -inf".into()));
        }
        Ok(())
    }

    /// Linear noise variance.
    pub fn noise_variance(&self) -> f64 {
        if self.noise_power_db == f64::NEG_INFINITY {
            0.0
        } else {
            10f64.powf(self.noise_power_db / 10.0)
        }
    }

    /// First sample of the steady-state window.
    pub fn window_start(&self) -> usize {
        let len = (self.steady_state_window * self.n_samples as f64).ceil() as usize;
        self.n_samples - len.clamp(1, self.n_samples)
    }
}

/// Minimum MSE of the Wiener solution for the experiment's plant, white
/// unit-power input and noise.
pub fn experiment_min_mse(config: &ExperimentConfig, plant: &[f64]) -> Result<f64> {
    let n = config.filter.n_taps();
    let l = config.filter.block_size() as f64;
    let r = DMatrix::<f64>::identity(n, n) * l;
    let p = DVector::from_iterator(n, (0..n).map(|i| plant.get(i).copied().unwrap_or(0.0) * l));
    let energy = l * (plant.iter().map(|w| w * w).sum::<f64>() + config.noise_variance());
    let solution = analysis::wiener_and_min_mse(&r, &p, energy, config.filter.block_size())?;
    // Exact zero floor for noiseless matched runs rather than rounding residue.
    Ok(solution.min_mse.max(0.0))
}

/// Per-sample squared errors of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub squared_error: Vec<f64>,
    pub diverged: bool,
}

/// Early stop for the sweep: once any sample at or after `from` reaches
/// `threshold`, the trial is reported as crossing and abandoned.
#[derive(Debug, Clone, Copy)]
struct CrossingCheck {
    from: usize,
    threshold: f64,
}

struct Trial<'a> {
    config: &'a ExperimentConfig,
    plant: &'a [f64],
    noise_std: f64,
}

impl Trial<'_> {
    fn run(&self, trial_index: u64, check: Option<CrossingCheck>) -> Result<(TrialOutcome, bool)> {
        let config = self.config;
        let spec = config.filter;
        let l = spec.block_size();
        let plant_spec = FilterSpec::new(config.plant_taps, 0, l, 0.0)?;
        let mut plant = FilterState::with_coefficients(plant_spec, self.plant.to_vec())?;
        let mut adaptive = FilterState::new(spec);

        let mut input_rng = stream_rng(config.seed, trial_index, StreamRole::Input);
        let mut noise_rng = stream_rng(config.seed, trial_index, StreamRole::Noise);

        let mut x = vec![0.0; l];
        let mut d = vec![0.0; l];
        let mut z = vec![0.0; l];
        let mut y = vec![0.0; l];
        let mut e = vec![0.0; l];
        let mut squared = Vec::with_capacity(config.n_samples);
        let mut diverged = false;
        let mut crossed = false;

        'blocks: while squared.len() < config.n_samples {
            for v in x.iter_mut() {
                *v = StandardNormal.sample(&mut input_rng);
            }
            if self.noise_std > 0.0 {
                for v in z.iter_mut() {
                    *v = self.noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut noise_rng);
                }
            }
            plant.filter_into(&x, &mut d)?;
            let status = adaptive.adapt_into(&x, &d, &z, &mut y, &mut e)?;
            for &err in &e {
                if squared.len() == config.n_samples {
                    break;
                }
                let value = if err.is_finite() { err * err } else { DIVERGED_SENTINEL };
                if let Some(c) = check {
                    if squared.len() >= c.from && value >= c.threshold {
                        crossed = true;
                    }
                }
                squared.push(value);
            }
            if status == AdaptStatus::Diverged {
                diverged = true;
                break 'blocks;
            }
            if crossed {
                break 'blocks;
            }
        }
        if diverged {
            squared.resize(config.n_samples, DIVERGED_SENTINEL);
            crossed = crossed || check.is_some();
        }
        Ok((
            TrialOutcome {
                squared_error: squared,
                diverged,
            },
            crossed,
        ))
    }
}

/// Runs one trial of the experiment; deterministic in `(seed, trial_index)`.
/// A diverged trial has the remaining samples set to [`DIVERGED_SENTINEL`].
pub fn run_trial(config: &ExperimentConfig, trial_index: u64) -> Result<TrialOutcome> {
    config.validate()?;
    let plant = make_plant(config.plant_taps, config.seed);
    let trial = Trial {
        config,
        plant: &plant,
        noise_std: config.noise_variance().sqrt(),
    };
    Ok(trial.run(trial_index, None)?.0)
}

/// Ensemble-averaged learning curve with its steady-state and transient estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    /// Averaged squared error per sample (linear).
    pub mse_curve: Vec<f64>,
    pub mse_curve_db: Vec<f64>,
    /// Centred moving average of `mse_curve` over `2L` samples, in dB.
    pub smoothed_curve_db: Vec<f64>,
    pub steady_state_mse: f64,
    pub steady_state_mse_db: f64,
    pub min_mse: f64,
    pub excess_mse: f64,
    pub simulated_misadjustment: f64,
    pub measured_slope_db_per_sample: f64,
    pub slope_region: Option<(usize, usize)>,
    pub convergence_sample: Option<usize>,
    /// True when the convergence point lies before the steady-state window.
    pub settled_before_window: bool,
    pub diverged_fraction: f64,
    pub trials_used: usize,
}

/// Runs every trial and reduces them in trial order.
pub fn run_ensemble(config: &ExperimentConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let plant = make_plant(config.plant_taps, config.seed);
    let trial = Trial {
        config,
        plant: &plant,
        noise_std: config.noise_variance().sqrt(),
    };
    let outcomes = (0..config.n_trials as u64)
        .into_par_iter()
        .map(|t| trial.run(t, None).map(|(o, _)| o))
        .collect::<Result<Vec<_>>>()?;

    let mut sum = vec![0.0; config.n_samples];
    let mut used = 0usize;
    for outcome in outcomes.iter().filter(|o| !o.diverged) {
        for (s, v) in sum.iter_mut().zip(&outcome.squared_error) {
            *s += v;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllDiverged(config.n_trials));
    }
    let mse_curve: Vec<f64> = sum.into_iter().map(|s| s / used as f64).collect();
    let min_mse = experiment_min_mse(config, &plant)?;
    summarize(config, mse_curve, min_mse, used)
}

fn summarize(
    config: &ExperimentConfig,
    mse_curve: Vec<f64>,
    min_mse: f64,
    used: usize,
) -> Result<EnsembleResult> {
    let window_start = config.window_start();
    let tail = &mse_curve[window_start..];
    let steady_state_mse = tail.iter().sum::<f64>() / tail.len() as f64;
    let steady_state_mse_db = to_db(steady_state_mse);

    let mse_curve_db: Vec<f64> = mse_curve.iter().copied().map(to_db).collect();
    let smoothed_curve_db: Vec<f64> = moving_average(&mse_curve, 2 * config.filter.block_size())
        .into_iter()
        .map(to_db)
        .collect();

    let convergence = convergence_sample(&smoothed_curve_db, steady_state_mse_db, CONVERGENCE_BAND_DB);
    let region = convergence.and_then(default_slope_region);
    let measured_slope = match region {
        Some(r) => measure_slope(&smoothed_curve_db, r)?,
        None => f64::NAN,
    };
    let excess = steady_state_mse - min_mse;

    Ok(EnsembleResult {
        mse_curve,
        mse_curve_db,
        smoothed_curve_db,
        steady_state_mse,
        steady_state_mse_db,
        min_mse,
        excess_mse: excess,
        simulated_misadjustment: if min_mse > 0.0 { excess / min_mse } else { f64::NAN },
        measured_slope_db_per_sample: measured_slope,
        slope_region: region,
        convergence_sample: convergence,
        settled_before_window: convergence.is_some_and(|c| c < window_start),
        diverged_fraction: (config.n_trials - used) as f64 / config.n_trials as f64,
        trials_used: used,
    })
}

/// `10 log10(v)` of a power quantity.
pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Centred moving average; the window shrinks at the edges.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    if window <= 1 || n == 0 {
        return values.to_vec();
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    let before = window / 2;
    let after = window - 1 - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// First sample from which the curve stays within `band_db` of `steady_db`.
pub fn convergence_sample(curve_db: &[f64], steady_db: f64, band_db: f64) -> Option<usize> {
    if !steady_db.is_finite() {
        return None;
    }
    let inside = |v: f64| (v - steady_db).abs() <= band_db;
    let mut first = None;
    for (i, &v) in curve_db.iter().enumerate().rev() {
        if inside(v) {
            first = Some(i);
        } else {
            break;
        }
    }
    first
}

/// `[10 %, 60 %]` of the way from the first sample to the convergence point.
pub fn default_slope_region(convergence: usize) -> Option<(usize, usize)> {
    let a = (0.1 * convergence as f64).round() as usize;
    let b = (0.6 * convergence as f64).round() as usize;
    (b > a).then_some((a, b))
}

/// Two-point slope `(b2 - b1) / (a2 - a1)` in dB per sample.
pub fn measure_slope(curve_db: &[f64], region: (usize, usize)) -> Result<f64> {
    let (a1, a2) = region;
    if a1 >= a2 || a2 >= curve_db.len() {
        return Err(Error::Range {
            start: a1,
            end: a2,
            len: curve_db.len(),
        });
    }
    Ok((curve_db[a2] - curve_db[a1]) / (a2 - a1) as f64)
}

/// Outcome of the empirical stability search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilitySweepResult {
    pub analytic_bound: f64,
    /// First grid step size at which the averaged steady-state MSE reached 1;
    /// `None` if no divergence up to the sweep limit.
    pub simulated_bound: Option<f64>,
    pub grid_fraction: f64,
    pub with_noise: bool,
    pub steps_run: usize,
}

/// Sweeps `mu_hat = j * 0.0265 * mu_hat_crit` for `j = 1, 2, ...` up to
/// `1.5 mu_hat_crit`, using the structure and step of `config.filter` only for
/// `N`, `D`, `L`. `config.n_samples` is the minimum run length; slow steps
/// run longer, see [`sweep_run_length`].
pub fn stability_sweep(config: &ExperimentConfig, with_noise: bool) -> Result<StabilitySweepResult> {
    stability_sweep_with(config, with_noise, DEFAULT_GRID_FRACTION, &EigenStats::white(1.0))
}

pub fn stability_sweep_with(
    config: &ExperimentConfig,
    with_noise: bool,
    grid_fraction: f64,
    stats: &EigenStats,
) -> Result<StabilitySweepResult> {
    config.validate()?;
    if !(grid_fraction > 0.0 && grid_fraction < 1.0) {
        return Err(Error::Config(format!(
            "grid_fraction must be in (0, 1), got {grid_fraction}"
        )));
    }
    let (n, d, l) = (config.filter.n_taps(), config.filter.delay(), config.filter.block_size());
    let analytic = analysis::critical_step_size(n, d, l, stats);
    let max_steps = (SWEEP_LIMIT / grid_fraction + 1e-9).floor() as usize;

    let mut run = config.clone();
    if !with_noise {
        run.noise_power_db = f64::NEG_INFINITY;
    }
    let plant = make_plant(run.plant_taps, run.seed);

    let mut steps_run = 0;
    let mut length = config.n_samples;
    for j in 1..=max_steps {
        steps_run = j;
        let mu_hat = j as f64 * grid_fraction * analytic;
        run.filter = FilterSpec::with_effective_step(n, d, l, mu_hat)?;
        // Past the predicted bound the time constant is meaningless; keep the last length.
        if let Some(len) = sweep_run_length(&run, stats) {
            length = len;
        }
        run.n_samples = length;
        if averaged_tail_crosses_unity(&run, &plant)? {
            return Ok(StabilitySweepResult {
                analytic_bound: analytic,
                simulated_bound: Some(mu_hat),
                grid_fraction,
                with_noise,
                steps_run,
            });
        }
    }
    Ok(StabilitySweepResult {
        analytic_bound: analytic,
        simulated_bound: None,
        grid_fraction,
        with_noise,
        steps_run,
    })
}

/// Whether any steady-state sample of the ensemble-averaged curve (all trials,
/// diverged ones included) is `>= 1`.
///
/// Trials run in fixed-size chunks whose partial sums are added in trial
/// order; since every term is non-negative, a partial average that already
/// reaches 1 decides the answer and the remaining trials are skipped.
/// Run length whose steady-state window starts [`SWEEP_SETTLE_TAUS`]
/// predicted time constants in, never below `config.n_samples`. `None` when
/// the predicted transient does not decay.
pub fn sweep_run_length(config: &ExperimentConfig, stats: &EigenStats) -> Option<usize> {
    let f = &config.filter;
    let tau = analysis::time_constant(f.delay(), f.block_size(), f.effective_step(), stats);
    let rate = 1.0 - 2.0 * f.effective_step() * stats.sigma2 * f.block_size() as f64
        * analysis::slope_factor(f.delay(), f.block_size(), f.effective_step(), stats);
    if !(tau.is_finite() && tau > 0.0 && rate > 0.0 && rate < 1.0) {
        return None;
    }
    let settle = SWEEP_SETTLE_TAUS * tau / (1.0 - config.steady_state_window);
    Some((settle.ceil() as usize).max(config.n_samples))
}

fn averaged_tail_crosses_unity(config: &ExperimentConfig, plant: &[f64]) -> Result<bool> {
    const CHUNK: usize = 16;
    let trial = Trial {
        config,
        plant,
        noise_std: config.noise_variance().sqrt(),
    };
    let start = config.window_start();
    let count = config.n_trials as f64;
    let check = CrossingCheck {
        from: start,
        threshold: count,
    };
    let mut tail_sum = vec![0.0; config.n_samples - start];
    let trials: Vec<u64> = (0..config.n_trials as u64).collect();
    for chunk in trials.chunks(CHUNK) {
        let outcomes = chunk
            .par_iter()
            .map(|&t| trial.run(t, Some(check)))
            .collect::<Result<Vec<_>>>()?;
        for (outcome, crossed) in outcomes {
            if crossed {
                return Ok(true);
            }
            for (s, v) in tail_sum.iter_mut().zip(&outcome.squared_error[start..]) {
                *s += v;
            }
        }
        if tail_sum.iter().any(|s| s / count >= 1.0) {
            return Ok(true);
        }
    }
    Ok(false)
}
