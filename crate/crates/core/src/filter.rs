//! Delayed-block LMS engine.
//!
//! One code path covers LMS, DLMS, BLMS and DBLMS. A block iteration `k`
//! consumes `L` input samples, produces `L` outputs with the coefficients
//! held fixed, and updates the coefficients with the input/error block from
//! `D` iterations earlier:
//!
//! ```text
//! y_k     = X_k w_k
//! e_k     = d_k + z_k - y_k
//! w_{k+1} = w_k + (mu / L) X_{k-D}^T e_{k-D}
//! ```
//!
//! Row `j` of `X_k` holds the `N` most recent inputs ending at sample `j` of
//! the block. Inputs before the first sample are zero.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient magnitude beyond which the engine reports divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Structural parameters and step size of a delayed-block LMS filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    n_taps: usize,
    delay: usize,
    block_size: usize,
    step_size: f64,
}

impl FilterSpec {
    /// Builds a spec from the raw step size `mu`; the effective step is `mu / L`.
    ///
    /// A zero step size is accepted and freezes the coefficients.
    pub fn new(n_taps: usize, delay: usize, block_size: usize, step_size: f64) -> Result<Self> {
        if n_taps == 0 {
            return Err(Error::Config("n_taps must be at least 1".into()));
        }
        if block_size == 0 {
            return Err(Error::Config("block_size must be at least 1".into()));
        }
        if !step_size.is_finite() || step_size < 0.0 {
            return Err(Error::Config(format!(
                "step_size must be finite and non-negative, got {step_size}"
            )));
        }
        Ok(Self {
            n_taps,
            delay,
            block_size,
            step_size,
        })
    }

    /// Builds a spec from the effective step size `mu_hat = mu / L`.
    pub fn with_effective_step(
        n_taps: usize,
        delay: usize,
        block_size: usize,
        effective_step: f64,
    ) -> Result<Self> {
        Self::new(n_taps, delay, block_size, effective_step * block_size as f64)
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// `mu / L`.
    pub fn effective_step(&self) -> f64 {
        self.step_size / self.block_size as f64
    }

    /// `S = (D + 1) L`.
    pub fn speedup(&self) -> usize {
        (self.delay + 1) * self.block_size
    }

    pub fn kind(&self) -> AlgorithmKind {
        specialize(self)
    }
}

/// Which classical algorithm a configuration reduces to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AlgorithmKind {
    Lms,
    Dlms,
    Blms,
    Dblms,
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AlgorithmKind::Lms => "LMS",
            AlgorithmKind::Dlms => "DLMS",
            AlgorithmKind::Blms => "BLMS",
            AlgorithmKind::Dblms => "DBLMS",
        };
        f.write_str(name)
    }
}

/// Tags the configuration; the engine itself does not branch on it.
pub fn specialize(spec: &FilterSpec) -> AlgorithmKind {
    match (spec.delay, spec.block_size) {
        (0, 1) => AlgorithmKind::Lms,
        (_, 1) => AlgorithmKind::Dlms,
        (0, _) => AlgorithmKind::Blms,
        _ => AlgorithmKind::Dblms,
    }
}

/// Outcome of one adaptation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptStatus {
    /// An update was applied (or the pipeline is still filling).
    Active,
    /// Coefficients left the finite range; the state is frozen.
    Diverged,
}

/// One pipeline slot: the input segment that formed `X_k` and the error `e_k`.
#[derive(Debug, Clone)]
struct PendingBlock {
    segment: Vec<f64>,
    error: Vec<f64>,
}

/// Mutable state of one filter instance.
#[derive(Debug, Clone)]
pub struct FilterState {
    spec: FilterSpec,
    coefficients: Vec<f64>,
    // Current block followed by the last N-1 samples of history, newest
    // first (L+N-1), so every row of X_k is a contiguous forward slice.
    segment: Vec<f64>,
    pending: VecDeque<PendingBlock>,
    spare: Option<PendingBlock>,
    block_counter: u64,
    diverged: bool,
}

impl FilterState {
    /// Zero coefficients and zero input pre-history.
    pub fn new(spec: FilterSpec) -> Self {
        Self::with_coefficients(spec, vec![0.0; spec.n_taps]).expect("length matches n_taps")
    }

    pub fn with_coefficients(spec: FilterSpec, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != spec.n_taps {
            return Err(Error::Config(format!(
                "initial coefficient vector has length {}, expected {}",
                coefficients.len(),
                spec.n_taps
            )));
        }
        Ok(Self {
            spec,
            coefficients,
            segment: vec![0.0; spec.n_taps - 1 + spec.block_size],
            pending: VecDeque::with_capacity(spec.delay + 1),
            spare: None,
            block_counter: 0,
            diverged: false,
        })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Block iterations completed so far (`k`).
    pub fn block_counter(&self) -> u64 {
        self.block_counter
    }

    /// Absolute index of the next input sample.
    pub fn sample_index(&self) -> u64 {
        self.block_counter * self.spec.block_size as u64
    }

    /// Number of blocks waiting in the delay pipeline.
    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged
    }

    /// Filters one block with the current coefficients and advances the
    /// input history. Coefficients are not touched.
    pub fn filter_block(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.spec.block_size];
        self.filter_into(input, &mut out)?;
        Ok(out)
    }

    /// Slice-based form of [`filter_block`](Self::filter_block).
    pub fn filter_into(&mut self, input: &[f64], output: &mut [f64]) -> Result<()> {
        self.check_len("input", input.len())?;
        self.check_len("output", output.len())?;
        self.load_block(input);
        self.compute_output(output);
        self.block_counter += 1;
        Ok(())
    }

    /// Runs one block iteration: output and current error with the current
    /// coefficients, then the update from the `D`-delayed block.
    pub fn adapt_block(
        &mut self,
        input: &[f64],
        desired: &[f64],
        noise: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, AdaptStatus)> {
        let l = self.spec.block_size;
        let mut output = vec![0.0; l];
        let mut error = vec![0.0; l];
        let status = self.adapt_into(input, desired, noise, &mut output, &mut error)?;
        Ok((output, error, status))
    }

    /// Slice-based form of [`adapt_block`](Self::adapt_block). `error`
    /// receives the current, undelayed error `d + z - y`.
    pub fn adapt_into(
        &mut self,
        input: &[f64],
        desired: &[f64],
        noise: &[f64],
        output: &mut [f64],
        error: &mut [f64],
    ) -> Result<AdaptStatus> {
        self.check_len("input", input.len())?;
        self.check_len("desired", desired.len())?;
        self.check_len("noise", noise.len())?;
        self.check_len("output", output.len())?;
        self.check_len("error", error.len())?;

        self.load_block(input);
        self.compute_output(output);
        for (((e, &d), &z), &y) in error.iter_mut().zip(desired).zip(noise).zip(output.iter()) {
            *e = d + z - y;
        }
        self.block_counter += 1;

        if self.diverged {
            return Ok(AdaptStatus::Diverged);
        }

        let mut slot = self.spare.take().unwrap_or_else(|| PendingBlock {
            segment: vec![0.0; self.segment.len()],
            error: vec![0.0; self.spec.block_size],
        });
        slot.segment.copy_from_slice(&self.segment);
        slot.error.copy_from_slice(error);
        self.pending.push_back(slot);

        if self.pending.len() > self.spec.delay {
            let delayed = self.pending.pop_front().expect("pipeline is non-empty");
            self.apply_update(&delayed);
            self.spare = Some(delayed);
        }

        if self.diverged {
            Ok(AdaptStatus::Diverged)
        } else {
            Ok(AdaptStatus::Active)
        }
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.spec.block_size {
            return Err(Error::Config(format!(
                "{what} block has {len} samples, expected {}",
                self.spec.block_size
            )));
        }
        Ok(())
    }

    fn load_block(&mut self, input: &[f64]) {
        let l = self.spec.block_size;
        let keep = self.spec.n_taps - 1;
        self.segment.copy_within(0..keep, l);
        for (slot, &x) in self.segment[..l].iter_mut().zip(input.iter().rev()) {
            *slot = x;
        }
    }

    /// Row `j` of `X_k`: `x_j, x_{j-1}, ..., x_{j-N+1}`.
    fn row(segment: &[f64], block_size: usize, n_taps: usize, j: usize) -> &[f64] {
        let start = block_size - 1 - j;
        &segment[start..start + n_taps]
    }

    fn compute_output(&self, output: &mut [f64]) {
        let (n, l) = (self.spec.n_taps, self.spec.block_size);
        for (j, y) in output.iter_mut().enumerate() {
            *y = dot(&self.coefficients, Self::row(&self.segment, l, n, j));
        }
    }

    fn apply_update(&mut self, block: &PendingBlock) {
        let n = self.spec.n_taps;
        let gain = self.spec.effective_step();
        if gain == 0.0 {
            return;
        }
        let l = self.spec.block_size;
        for (j, &e) in block.error.iter().enumerate() {
            let scaled = gain * e;
            let row = Self::row(&block.segment, l, n, j);
            for (w, x) in self.coefficients.iter_mut().zip(row) {
                *w += scaled * x;
            }
        }
        if self
            .coefficients
            .iter()
            .any(|w| !w.is_finite() || w.abs() > DIVERGENCE_LIMIT)
        {
            self.diverged = true;
        }
    }
}

/// Dot product with independent lane accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let b = &b[..a.len()];
    let mut acc = [0.0; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        let x: &[f64; LANES] = x.try_into().expect("chunk length");
        let y: &[f64; LANES] = y.try_into().expect("chunk length");
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let half = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (half[0] + half[2]) + (half[1] + half[3]) + tail
}
