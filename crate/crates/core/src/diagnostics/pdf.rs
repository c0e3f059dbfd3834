use crate::error::{Error, Result};
use crate::spectral::{FilterParams, SpectralPlan};
use crate::trajectory::{Trajectory, TrajectoryMeta};

/// `(u, ∂ₓu, ∂ₜu)` at every point of every interior frame.
///
/// `∂ₓ` is spectral on each frame, `∂ₜ` a centered difference at the
/// snapshot interval; the first and last frames only serve as neighbours.
pub fn derivative_samples(traj: &Trajectory) -> Result<Vec<[f64; 3]>> {
    if traj.len() < 3 {
        return Err(Error::Config(format!(
            "joint statistics need at least 3 frames, got {}",
            traj.len()
        )));
    }
    if traj.meta.dims != 1 {
        return Err(Error::Config("joint statistics are defined for 1D fields".into()));
    }
    let n = traj.frame_len();
    let plan = SpectralPlan::new_1d(n, traj.meta.domain_length[0], FilterParams::Off)?;
    let dt = traj.meta.snapshot_interval;
    let mut out = Vec::with_capacity((traj.len() - 2) * n);
    for t in 1..traj.len() - 1 {
        let u = &traj.frames[t];
        let mut modes = plan.forward(u)?;
        plan.differentiate_modes(&mut modes, 1, 0)?;
        let ux = plan.inverse(&modes)?;
        for x in 0..n {
            let ut = (traj.frames[t + 1][x] - traj.frames[t - 1][x]) / (2.0 * dt);
            out.push([u[x], ux[x], ut]);
        }
    }
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trajectory contains non-finite values".into()));
    }
    Ok(out)
}

/// Bin edges per axis, uniform in each.
#[derive(Clone, Debug, PartialEq)]
pub struct Binning {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub bins: [usize; 3],
}

impl Binning {
    /// `n_bins` per axis spanning mean ± 4 std of each variable. A variable
    /// with zero spread gets a unit-width range around its mean.
    pub fn from_samples(samples: &[[f64; 3]], n_bins: usize) -> Result<Self> {
        if samples.is_empty() || n_bins == 0 {
            return Err(Error::Config("binning needs samples and at least one bin".into()));
        }
        let n = samples.len() as f64;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            let mean = samples.iter().map(|s| s[a]).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s[a] - mean).powi(2)).sum::<f64>() / n;
            let half = if var > 0.0 { 4.0 * var.sqrt() } else { 0.5 };
            lo[a] = mean - half;
            hi[a] = mean + half;
        }
        Ok(Self {
            lo,
            hi,
            bins: [n_bins; 3],
        })
    }

    pub fn edges(&self, axis: usize) -> Vec<f64> {
        let n = self.bins[axis];
        (0..=n)
            .map(|i| self.lo[axis] + (self.hi[axis] - self.lo[axis]) * i as f64 / n as f64)
            .collect()
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.bins[axis] as f64
    }

    /// Values outside the range fall into the edge bins.
    pub fn index(&self, axis: usize, v: f64) -> usize {
        let f = ((v - self.lo[axis]) / self.width(axis)).floor();
        if f <= 0.0 {
            0
        } else {
            (f as usize).min(self.bins[axis] - 1)
        }
    }

    pub fn n_cells(&self) -> usize {
        self.bins.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram3D {
    pub binning: Binning,
    /// Row-major over `(u, ∂ₓu, ∂ₜu)`.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram3D {
    pub fn from_samples(samples: &[[f64; 3]], binning: Binning) -> Self {
        let mut counts = vec![0u64; binning.n_cells()];
        let [_, n1, n2] = binning.bins;
        for s in samples {
            let (i, j, k) = (binning.index(0, s[0]), binning.index(1, s[1]), binning.index(2, s[2]));
            counts[(i * n1 + j) * n2 + k] += 1;
        }
        Self {
            binning,
            counts,
            total: samples.len() as u64,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Probability density; integrates to one over the binned box.
    pub fn density(&self) -> Vec<f64> {
        let vol: f64 = (0..3).map(|a| self.binning.width(a)).product();
        self.probabilities().into_iter().map(|p| p / vol).collect()
    }

    /// Probabilities summed over `axis`, row-major over the other two.
    pub fn marginal_2d(&self, axis: usize) -> Vec<f64> {
        let [n0, n1, n2] = self.binning.bins;
        let p = self.probabilities();
        let (a, b) = match axis {
            0 => (n1, n2),
            1 => (n0, n2),
            _ => (n0, n1),
        };
        let mut out = vec![0.0; a * b];
        for i in 0..n0 {
            for j in 0..n1 {
                for k in 0..n2 {
                    let v = p[(i * n1 + j) * n2 + k];
                    let cell = match axis {
                        0 => j * n2 + k,
                        1 => i * n2 + k,
                        _ => i * n1 + j,
                    };
                    out[cell] += v;
                }
            }
        }
        out
    }

    pub fn occupied(&self) -> Vec<[usize; 3]> {
        let [_, n1, n2] = self.binning.bins;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, _)| [i / (n1 * n2), (i / n2) % n1, i % n2])
            .collect()
    }
}

impl Histogram3D {
    /// Density as a single `dims = 3` frame. The axis ranges are stored as
    /// `lo_*`/`hi_*` parameters and the sample count as `samples`.
    pub fn to_trajectory(&self) -> Trajectory {
        let mut parameters = std::collections::BTreeMap::new();
        for (a, name) in ["u", "ux", "ut"].iter().enumerate() {
            parameters.insert(format!("lo_{name}"), self.binning.lo[a]);
            parameters.insert(format!("hi_{name}"), self.binning.hi[a]);
        }
        parameters.insert("samples".into(), self.total as f64);
        let meta = TrajectoryMeta {
            equation: "histogram3d".into(),
            parameters,
            dims: 3,
            n_points: self.binning.bins.to_vec(),
            domain_length: (0..3).map(|a| self.binning.hi[a] - self.binning.lo[a]).collect(),
            dt: 0.0,
            snapshot_interval: 0.0,
            start_time: 0.0,
            seed: 0,
            creation: Default::default(),
        };
        Trajectory {
            meta,
            frames: vec![self.density()],
        }
    }
}

/// Joint histogram of `(u, ∂ₓu, ∂ₜu)`. Without `binning`, edges come from
/// the trajectory itself.
pub fn joint_pdf(traj: &Trajectory, n_bins: usize, binning: Option<&Binning>) -> Result<Histogram3D> {
    let samples = derivative_samples(traj)?;
    let binning = match binning {
        Some(b) => b.clone(),
        None => Binning::from_samples(&samples, n_bins)?,
    };
    Ok(Histogram3D::from_samples(&samples, binning))
}

/// `√(½ Σ (√p − √q)²)` over matching probability vectors.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Config(format!("binning mismatch: {} vs {} cells", p.len(), q.len())));
    }
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    Ok((0.5 * s).sqrt().min(1.0))
}

impl Histogram3D {
    pub fn hellinger(&self, other: &Histogram3D) -> Result<f64> {
        if self.binning != other.binning {
            return Err(Error::Config("histograms use different binning".into()));
        }
        hellinger(&self.probabilities(), &other.probabilities())
    }
}
