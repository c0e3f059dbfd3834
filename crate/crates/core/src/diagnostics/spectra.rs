use crate::error::{Error, Result};
use crate::spectral::{FilterParams, SpectralPlan};

/// Time-mean one-sided power spectrum `|F[U]|²/n²` over wavenumbers
/// `0..=n/2`, interior modes doubled so that the sum equals the time-mean
/// of `Σ U²/n`.
pub fn zonal_psd(frames: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = frames
        .first()
        .map(|f| f.len())
        .ok_or_else(|| Error::Config("power spectrum of an empty trajectory".into()))?;
    let plan = SpectralPlan::new_1d(n, 1.0, FilterParams::Off)?;
    let mut psd = vec![0.0; n / 2 + 1];
    for f in frames {
        if f.len() != n {
            return Err(Error::shape(n, f.len()));
        }
        let modes = plan.forward(f)?;
        for (k, m) in modes.iter().enumerate() {
            let interior = k > 0 && !(n % 2 == 0 && k == n / 2);
            let w = if interior { 2.0 } else { 1.0 };
            psd[k] += w * m.norm_sqr() / (n * n) as f64;
        }
    }
    let t = frames.len() as f64;
    psd.iter_mut().for_each(|v| *v /= t);
    Ok(psd)
}
