//! Closed-form convergence predictors for the delayed-block LMS filter.
//!
//! All formulas take the *per-sample* input correlation statistics
//! ([`EigenStats`]) and the effective step size `mu_hat = mu / L`. The scaled
//! step `x = mu_hat * sigma2 * L` drives the transient quantities through the
//! `D x D` mapping matrix and its determinant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterSpec;

/// `10 log10(e)`, the dB per neper factor used by the slope.
const DB_PER_NEPER: f64 = 4.342_944_819_032_518;

/// Condition number above which the normal equations are rejected.
const MAX_CONDITION: f64 = 1e12;

/// Second- and fourth-order statistics of the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenStats {
    /// Mean eigenvalue of the per-sample correlation matrix (input power for white input).
    pub sigma2: f64,
    /// Mean squared eigenvalue.
    pub lambda_rms2: f64,
    /// Fourth-moment ratio of the input; 3 for Gaussian.
    pub kurtosis: f64,
}

impl EigenStats {
    /// White Gaussian input of power `sigma2` (`rho = 1`, `nu = 3`).
    pub fn white(sigma2: f64) -> Self {
        Self {
            sigma2,
            lambda_rms2: sigma2 * sigma2,
            kurtosis: 3.0,
        }
    }

    /// Builds the statistics from an eigenvalue spread `rho = lambda_rms^2 / sigma^4`.
    pub fn new(sigma2: f64, rho: f64, kurtosis: f64) -> Result<Self> {
        let stats = Self {
            sigma2,
            lambda_rms2: rho * sigma2 * sigma2,
            kurtosis,
        };
        stats.validate()?;
        Ok(stats)
    }

    /// Statistics of a correlation matrix with the given eigenvalues.
    pub fn from_eigenvalues(eigenvalues: &[f64], kurtosis: f64) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Config("no eigenvalues given".into()));
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("eigenvalues must be positive and finite".into()));
        }
        let n = eigenvalues.len() as f64;
        let sigma2 = eigenvalues.iter().sum::<f64>() / n;
        let lambda_rms2 = eigenvalues.iter().map(|l| l * l).sum::<f64>() / n;
        let stats = Self {
            sigma2,
            lambda_rms2,
            kurtosis,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.kurtosis > 0.0) || !self.kurtosis.is_finite() {
            return Err(Error::Config(format!(
                "kurtosis must be positive, got {}",
                self.kurtosis
            )));
        }
        // Cauchy-Schwarz: mean of squares >= square of mean.
        if !(self.rho() >= 1.0 - 1e-12) {
            return Err(Error::Config(format!("rho must be >= 1, got {}", self.rho())));
        }
        Ok(())
    }

    /// `rho = lambda_rms^2 / sigma^4`; 1 iff all eigenvalues are equal.
    pub fn rho(&self) -> f64 {
        self.lambda_rms2 / (self.sigma2 * self.sigma2)
    }

    /// `P = N + (nu - 1) L`.
    pub fn p_factor(&self, n_taps: usize, block_size: usize) -> f64 {
        n_taps as f64 + (self.kurtosis - 1.0) * block_size as f64
    }
}

impl Default for EigenStats {
    fn default() -> Self {
        Self::white(1.0)
    }
}

/// `rho P + 2 D L`, the step-size coefficient in every steady-state denominator.
/// With `nu = 3` this is `rho N + 2 (D + rho) L`.
fn bound_coefficient(n_taps: usize, delay: usize, block_size: usize, stats: &EigenStats) -> f64 {
    stats.rho() * stats.p_factor(n_taps, block_size) + 2.0 * (delay * block_size) as f64
}

/// Effective critical step size `mu_hat_crit = 2 / ((rho P + 2 D L) sigma2)`.
pub fn critical_step_size(n_taps: usize, delay: usize, block_size: usize, stats: &EigenStats) -> f64 {
    2.0 / (bound_coefficient(n_taps, delay, block_size, stats) * stats.sigma2)
}

/// Optimum effective step size, exactly half the critical one.
pub fn optimal_step_size(n_taps: usize, delay: usize, block_size: usize, stats: &EigenStats) -> f64 {
    critical_step_size(n_taps, delay, block_size, stats) / 2.0
}

/// Returns `2 - x (rho P + 2 D L)` with `x = mu_hat sigma2`, or an
/// out-of-bound error when it is not positive.
fn stable_denominator(
    mu_hat: f64,
    n_taps: usize,
    delay: usize,
    block_size: usize,
    stats: &EigenStats,
) -> Result<f64> {
    if !(mu_hat >= 0.0) || !mu_hat.is_finite() {
        return Err(Error::Config(format!(
            "effective step size must be finite and non-negative, got {mu_hat}"
        )));
    }
    let coefficient = bound_coefficient(n_taps, delay, block_size, stats);
    let denominator = 2.0 - mu_hat * stats.sigma2 * coefficient;
    if denominator <= 0.0 {
        return Err(Error::OutOfBound {
            step: mu_hat,
            bound: critical_step_size(n_taps, delay, block_size, stats),
        });
    }
    Ok(denominator)
}

/// Steady-state excess MSE.
///
/// `noise_var` is additive measurement noise *not* already contained in
/// `min_mse`; pass 0 when `min_mse` is the full Wiener floor.
#[allow(clippy::too_many_arguments)]
pub fn excess_mse(
    mu_hat: f64,
    n_taps: usize,
    delay: usize,
    block_size: usize,
    stats: &EigenStats,
    min_mse: f64,
    noise_var: f64,
) -> Result<f64> {
    let denominator = stable_denominator(mu_hat, n_taps, delay, block_size, stats)?;
    let x = mu_hat * stats.sigma2;
    Ok(stats.rho() * n_taps as f64 * x * (min_mse + noise_var) / denominator)
}

/// Misadjustment `M = rho N x / (2 - (rho P + 2 D L) x)`.
pub fn misadjustment(
    mu_hat: f64,
    n_taps: usize,
    delay: usize,
    block_size: usize,
    stats: &EigenStats,
) -> Result<f64> {
    let denominator = stable_denominator(mu_hat, n_taps, delay, block_size, stats)?;
    let x = mu_hat * stats.sigma2;
    Ok(stats.rho() * n_taps as f64 * x / denominator)
}

/// Inverse of [`misadjustment`]: the effective step that yields `target_m`.
pub fn step_size_for_misadjustment(
    target_m: f64,
    n_taps: usize,
    delay: usize,
    block_size: usize,
    stats: &EigenStats,
) -> Result<f64> {
    if !(target_m > 0.0) {
        return Err(Error::Config(format!(
            "target misadjustment must be positive, got {target_m}"
        )));
    }
    let n = n_taps as f64;
    let l = block_size as f64;
    let k = stats.rho() * (n * (1.0 + 1.0 / target_m) + (stats.kurtosis - 1.0) * l);
    Ok(2.0 / ((k + 2.0 * (delay * block_size) as f64) * stats.sigma2))
}

/// The `D x D` matrix relating the delayed cross excess-MSE terms to the
/// current one: identity, a `-1` sub-diagonal, plus `scale` on the
/// anti-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix {
    order: usize,
    scale: f64,
    entries: Vec<f64>,
}

impl MappingMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Entry at zero-based `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.order + col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .chunks(self.order.max(1))
            .take(self.order)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> f64 {
        let n = self.order;
        let mut a = self.entries.clone();
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .expect("non-empty range");
            if a[pivot * n + col] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for c in 0..n {
                    a.swap(pivot * n + c, col * n + c);
                }
                det = -det;
            }
            let p = a[col * n + col];
            det *= p;
            for r in col + 1..n {
                let factor = a[r * n + col] / p;
                if factor != 0.0 {
                    for c in col..n {
                        a[r * n + c] -= factor * a[col * n + c];
                    }
                }
            }
        }
        det
    }
}

/// Builds the mapping matrix of order `delay` for scaled step `scale`.
///
/// Row `s` (1-based) reads `-xi_{s-1} + xi_s + scale * xi_{D-s+1} = 0`, so
/// odd orders carry `1 + scale` at the centre and even orders carry
/// `-1 + scale` just below it. `delay = 0` gives the empty matrix.
pub fn mapping_matrix(delay: usize, scale: f64) -> MappingMatrix {
    let n = delay;
    let mut entries = vec![0.0; n * n];
    for row in 0..n {
        entries[row * n + row] += 1.0;
        if row > 0 {
            entries[row * n + row - 1] -= 1.0;
        }
        entries[row * n + (n - 1 - row)] += scale;
    }
    MappingMatrix {
        order: n,
        scale,
        entries,
    }
}

/// How [`det_mapping`] evaluates the determinant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetMethod {
    /// `|S_{x,D}| = |S_{x,D-2}| + x |S_{-x,D-1}|`.
    Recursion,
    /// Signed binomial polynomial in `x`.
    ClosedForm,
    /// Numerical determinant of the constructed matrix.
    Direct,
}

/// Determinant `|S_{x,D}|` of the mapping matrix.
pub fn det_mapping(delay: usize, scale: f64, method: DetMethod) -> f64 {
    match method {
        DetMethod::Recursion => det_recursion(delay, scale).0,
        DetMethod::ClosedForm => det_closed_form(delay, scale),
        DetMethod::Direct => mapping_matrix(delay, scale).determinant(),
    }
}

/// Returns `(|S_{x,D}|, |S_{-x,D}|)`; the two sign branches feed each other.
fn det_recursion(delay: usize, x: f64) -> (f64, f64) {
    // (pos, neg) for orders D-2 and D-1.
    let mut prev2 = (1.0, 1.0);
    let mut prev1 = (1.0 + x, 1.0 - x);
    match delay {
        0 => return prev2,
        1 => return prev1,
        _ => {}
    }
    for _ in 2..=delay {
        let pos = prev2.0 + x * prev1.1;
        let neg = prev2.1 - x * prev1.0;
        prev2 = prev1;
        prev1 = (pos, neg);
    }
    prev1
}

fn det_closed_form(delay: usize, x: f64) -> f64 {
    let mut sum = 0.0;
    let mut power = 1.0;
    for m in 0..=delay {
        let coefficient = binomial((delay + m) / 2, m);
        if coefficient != 0.0 {
            let sign = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * coefficient * power;
        }
        power *= x;
    }
    sum
}

/// `C(n, k)`, exact in integers while it fits in `u128`.
fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut exact: Option<u128> = Some(1);
    let mut approx = 1.0_f64;
    for i in 0..k {
        exact = exact
            .and_then(|c| c.checked_mul((n - i) as u128))
            .map(|c| c / (i as u128 + 1));
        approx = approx * (n - i) as f64 / (i + 1) as f64;
    }
    match exact {
        Some(c) => c as f64,
        None => approx,
    }
}

/// Slope factor `alpha = |S_{-x,D-1}| / |S_{x,D}|` with `x = mu_hat sigma2 L`;
/// exactly 1 when `D = 0`.
pub fn slope_factor(delay: usize, block_size: usize, mu_hat: f64, stats: &EigenStats) -> f64 {
    if delay == 0 {
        return 1.0;
    }
    let x = mu_hat * stats.sigma2 * block_size as f64;
    let numerator = det_recursion(delay - 1, x).1;
    let denominator = det_recursion(delay, x).0;
    numerator / denominator
}

/// Time constant of the MSE envelope, in samples: `1 / (4 mu_hat sigma2 alpha)`.
pub fn time_constant(delay: usize, block_size: usize, mu_hat: f64, stats: &EigenStats) -> f64 {
    let alpha = slope_factor(delay, block_size, mu_hat, stats);
    1.0 / (4.0 * mu_hat * stats.sigma2 * alpha)
}

/// Transient slope in dB per sample, `-10 log10(e) / (2 tau)`.
pub fn slope(delay: usize, block_size: usize, mu_hat: f64, stats: &EigenStats) -> f64 {
    -DB_PER_NEPER / (2.0 * time_constant(delay, block_size, mu_hat, stats))
}

/// Every predictor for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePrediction {
    pub mu_hat: f64,
    pub mu_hat_crit: f64,
    pub mu_hat_opt: f64,
    pub misadjustment: f64,
    pub excess_mse: f64,
    pub min_mse: f64,
    pub alpha: f64,
    pub tau_samples: f64,
    pub slope_db_per_sample: f64,
}

impl ConvergencePrediction {
    /// Predicts at the effective step size of `spec`.
    pub fn predict(spec: &FilterSpec, stats: &EigenStats, min_mse: f64, noise_var: f64) -> Result<Self> {
        let (n, d, l) = (spec.n_taps(), spec.delay(), spec.block_size());
        let mu_hat = spec.effective_step();
        Ok(Self {
            mu_hat,
            mu_hat_crit: critical_step_size(n, d, l, stats),
            mu_hat_opt: optimal_step_size(n, d, l, stats),
            misadjustment: misadjustment(mu_hat, n, d, l, stats)?,
            excess_mse: excess_mse(mu_hat, n, d, l, stats, min_mse, noise_var)?,
            min_mse,
            alpha: slope_factor(d, l, mu_hat, stats),
            tau_samples: time_constant(d, l, mu_hat, stats),
            slope_db_per_sample: slope(d, l, mu_hat, stats),
        })
    }
}

/// Shape of the predicted transient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// `(1 - 2 x alpha)^floor(n / L)`, one factor per block iteration.
    #[default]
    Geometric,
    /// `exp(-n / (2 tau))` with `tau` in samples.
    Envelope,
}

/// Predicted per-sample MSE with the geometric block decay.
pub fn predict_mse_curve(
    spec: &FilterSpec,
    stats: &EigenStats,
    min_mse: f64,
    noise_var: f64,
    initial_excess: f64,
    n_samples: usize,
) -> Result<Vec<f64>> {
    predict_mse_curve_with(
        spec,
        stats,
        min_mse,
        noise_var,
        initial_excess,
        n_samples,
        DecayModel::Geometric,
    )
}

/// Predicted per-sample MSE, decaying from `min_mse + noise_var + initial_excess`
/// to the steady state `min_mse + noise_var + excess`.
pub fn predict_mse_curve_with(
    spec: &FilterSpec,
    stats: &EigenStats,
    min_mse: f64,
    noise_var: f64,
    initial_excess: f64,
    n_samples: usize,
    model: DecayModel,
) -> Result<Vec<f64>> {
    let (n, d, l) = (spec.n_taps(), spec.delay(), spec.block_size());
    let mu_hat = spec.effective_step();
    let steady_excess = excess_mse(mu_hat, n, d, l, stats, min_mse, noise_var)?;
    let floor = min_mse + noise_var + steady_excess;
    let alpha = slope_factor(d, l, mu_hat, stats);
    let ratio = 1.0 - 2.0 * mu_hat * stats.sigma2 * l as f64 * alpha;
    let transient = initial_excess - steady_excess;
    let curve = match model {
        DecayModel::Geometric => {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::PredictedDivergence { ratio });
            }
            (0..n_samples)
                .map(|i| floor + transient * ratio.powi((i / l) as i32))
                .collect::<Vec<_>>()
        }
        DecayModel::Envelope => {
            let tau = time_constant(d, l, mu_hat, stats);
            // Per-sample decay factor of the envelope.
            let per_sample = (-1.0 / (2.0 * tau)).exp();
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::PredictedDivergence { ratio: per_sample });
            }
            (0..n_samples)
                .map(|i| floor + transient * (-(i as f64) / (2.0 * tau)).exp())
                .collect()
        }
    };
    Ok(curve.into_iter().map(|v| v.max(floor)).collect())
}

/// Initial excess MSE `sigma2 |w_o|^2` for zero initial coefficients and white input.
pub fn initial_excess_mse(plant: &[f64], stats: &EigenStats) -> f64 {
    stats.sigma2 * plant.iter().map(|w| w * w).sum::<f64>()
}

/// Wiener coefficients and minimum delayed-block MSE.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerSolution {
    pub coefficients: Vec<f64>,
    pub min_mse: f64,
    pub condition: f64,
}

/// Solves `R w = p` for the block correlation matrix `R = E[X^T X]` and
/// cross-correlation `p = E[X^T d]`, and returns
/// `min_mse = (desired_energy - p^T w) / L` where
/// `desired_energy = E[d^T d]` over one block (noise included).
pub fn wiener_and_min_mse(
    autocorrelation: &DMatrix<f64>,
    cross_correlation: &DVector<f64>,
    desired_energy: f64,
    block_size: usize,
) -> Result<WienerSolution> {
    let n = autocorrelation.nrows();
    if autocorrelation.ncols() != n || cross_correlation.len() != n || n == 0 {
        return Err(Error::Config(format!(
            "autocorrelation is {}x{} but cross-correlation has {} entries",
            autocorrelation.nrows(),
            autocorrelation.ncols(),
            cross_correlation.len()
        )));
    }
    if block_size == 0 {
        return Err(Error::Config("block_size must be at least 1".into()));
    }
    let asymmetry = (autocorrelation - autocorrelation.transpose()).amax();
    if asymmetry > 1e-12 * autocorrelation.amax().max(1.0) {
        return Err(Error::Config("autocorrelation matrix is not symmetric".into()));
    }
    let eigen = autocorrelation.clone().symmetric_eigen();
    let largest = eigen.eigenvalues.max();
    let smallest = eigen.eigenvalues.min();
    let condition = if smallest > 0.0 { largest / smallest } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let chol = autocorrelation
        .clone()
        .cholesky()
        .ok_or(Error::Singular { condition })?;
    let w = chol.solve(cross_correlation);
    let min_mse = (desired_energy - cross_correlation.dot(&w)) / block_size as f64;
    Ok(WienerSolution {
        coefficients: w.iter().copied().collect(),
        min_mse,
        condition,
    })
}
