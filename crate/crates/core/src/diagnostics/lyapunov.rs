use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ks::{KsConfig, KsSolver};

#[derive(Clone, Debug)]
pub struct LyapunovOptions {
    /// Euclidean size of the twin separation after each renormalization.
    pub perturbation: f64,
    pub renormalize_every: f64,
    pub transient: f64,
    pub averaging_time: f64,
    pub seed: u64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            perturbation: 1e-8,
            renormalize_every: 10.0,
            transient: 500.0,
            averaging_time: 2000.0,
            seed: 0,
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Leading exponent from a perturbed twin trajectory renormalized at a
/// fixed interval. A non-positive value is logged, not rejected.
pub fn lyapunov_exponent(config: &KsConfig, opts: &LyapunovOptions) -> Result<f64> {
    if !(opts.perturbation > 0.0 && opts.renormalize_every > 0.0 && opts.averaging_time >= opts.renormalize_every) {
        return Err(Error::Config("perturbation, interval and averaging time must be positive".into()));
    }
    let mut base = KsSolver::new(config.clone())?;
    base.advance(opts.transient)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let u = base.values();
    let mut dir: Vec<f64> = (0..u.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mean = dir.iter().sum::<f64>() / dir.len() as f64;
    dir.iter_mut().for_each(|v| *v -= mean);
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let start: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + opts.perturbation * d / norm).collect();
    let mut twin = KsSolver::from_values(config.clone(), &start)?;
    let steps = (opts.renormalize_every / config.dt).round() as usize;
    let interval = steps as f64 * config.dt;
    let n = (opts.averaging_time / interval).round() as usize;
    let mut log_growth = 0.0;
    for _ in 0..n {
        base.advance_steps(steps)?;
        twin.advance_steps(steps)?;
        let (a, b) = (base.values(), twin.values());
        let d = distance(&a, &b);
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NonFinite(format!("twin separation {d}")));
        }
        log_growth += (d / opts.perturbation).ln();
        let rescaled: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + (y - x) * opts.perturbation / d).collect();
        twin.set_values(&rescaled)?;
    }
    let lambda = log_growth / (n as f64 * interval);
    if lambda <= 0.0 {
        log::warn!("non-positive leading Lyapunov exponent {lambda:e} at L = {}", config.domain_length);
    }
    Ok(lambda)
}

/// Time, in Lyapunov times `1/λ`, until the RMS error of `predicted`
/// against `truth` first exceeds `threshold` times the climatological RMS
/// (standard deviation) of `truth`. Returns the full length when it never
/// does.
pub fn tracking_horizon(predicted: &[Vec<f64>], truth: &[Vec<f64>], interval: f64, lambda: f64, threshold: f64) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(truth.len(), predicted.len()));
    }
    let values: Vec<f64> = truth.iter().flatten().copied().collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let clim = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    for (t, (p, u)) in predicted.iter().zip(truth).enumerate() {
        if p.len() != u.len() {
            return Err(Error::shape(u.len(), p.len()));
        }
        let rms = (p.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / u.len() as f64).sqrt();
        if !(rms <= threshold * clim) {
            return Ok(t as f64 * interval * lambda);
        }
    }
    Ok(truth.len() as f64 * interval * lambda)
}
