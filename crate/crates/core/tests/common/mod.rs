//! Plain per-sample reference filters and signal helpers shared by the
//! integration tests.
#![allow(dead_code)]

use dblms::{FilterSpec, FilterState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Signals {
    pub input: Vec<f64>,
    pub desired: Vec<f64>,
    pub noise: Vec<f64>,
}

/// White Gaussian input through a random FIR plant, plus scaled noise.
pub fn signals(n_taps: usize, len: usize, noise_std: f64, seed: u64) -> Signals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let plant: Vec<f64> = (0..n_taps).map(|_| gauss() / (n_taps as f64).sqrt()).collect();
    let input: Vec<f64> = (0..len).map(|_| gauss()).collect();
    let noise: Vec<f64> = (0..len).map(|_| noise_std * gauss()).collect();
    let desired = (0..len).map(|n| dot_history(&plant, &input, n)).collect();
    Signals { input, desired, noise }
}

/// `sum_i w[i] x[n - i]`, zero before the first sample.
pub fn dot_history(w: &[f64], x: &[f64], n: usize) -> f64 {
    w.iter()
        .enumerate()
        .filter(|&(i, _)| i <= n)
        .map(|(i, wi)| wi * x[n - i])
        .sum()
}

fn regressor(x: &[f64], n: usize, n_taps: usize) -> Vec<f64> {
    (0..n_taps).map(|i| if i <= n { x[n - i] } else { 0.0 }).collect()
}

/// Scalar LMS; returns the coefficients after every sample.
pub fn reference_lms(n_taps: usize, mu: f64, s: &Signals) -> Vec<Vec<f64>> {
    reference_dlms(n_taps, 0, mu, s)
}

/// Scalar DLMS: `w_{n+1} = w_n + mu e_{n-D} x_{n-D}`.
pub fn reference_dlms(n_taps: usize, delay: usize, mu: f64, s: &Signals) -> Vec<Vec<f64>> {
    let mut w = vec![0.0; n_taps];
    let mut errors = Vec::with_capacity(s.input.len());
    let mut trace = Vec::with_capacity(s.input.len());
    for n in 0..s.input.len() {
        let e = s.desired[n] + s.noise[n] - dot_history(&w, &s.input, n);
        errors.push(e);
        if n >= delay {
            let m = n - delay;
            for (wi, xi) in w.iter_mut().zip(regressor(&s.input, m, n_taps)) {
                *wi += mu * errors[m] * xi;
            }
        }
        trace.push(w.clone());
    }
    trace
}

/// Delayed block LMS written directly from the block equations; returns the
/// coefficients after every block.
pub fn reference_dblms(n_taps: usize, delay: usize, block: usize, mu: f64, s: &Signals) -> Vec<Vec<f64>> {
    let blocks = s.input.len() / block;
    let mut w = vec![0.0; n_taps];
    let mut errors = vec![0.0; blocks * block];
    let mut trace = Vec::with_capacity(blocks);
    for k in 0..blocks {
        for j in 0..block {
            let n = k * block + j;
            errors[n] = s.desired[n] + s.noise[n] - dot_history(&w, &s.input, n);
        }
        if k >= delay {
            let mut grad = vec![0.0; n_taps];
            for j in 0..block {
                let m = (k - delay) * block + j;
                for (g, xi) in grad.iter_mut().zip(regressor(&s.input, m, n_taps)) {
                    *g += errors[m] * xi;
                }
            }
            for (wi, g) in w.iter_mut().zip(grad) {
                *wi += mu / block as f64 * g;
            }
        }
        trace.push(w.clone());
    }
    trace
}

/// Runs the engine over the signals; returns the coefficients after every block.
pub fn engine_trace(spec: FilterSpec, s: &Signals) -> Vec<Vec<f64>> {
    let l = spec.block_size();
    let mut state = FilterState::new(spec);
    s.input
        .chunks_exact(l)
        .zip(s.desired.chunks_exact(l))
        .zip(s.noise.chunks_exact(l))
        .map(|((x, d), z)| {
            state.adapt_block(x, d, z).unwrap();
            state.coefficients().to_vec()
        })
        .collect()
}

pub fn max_deviation(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}
