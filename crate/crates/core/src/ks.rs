//! Kuramoto–Sivashinsky equation `u_t + u u_x + u_xx + u_xxxx = 0` on a
//! periodic domain, integrated pseudo-spectrally with ETDRK4.
//!
//! In mode space the equation reads `v_t = 𝓛 v + N(v)` with
//! `𝓛_k = k² − k⁴` and `N(v) = −(ik/2) F[(F⁻¹ v)²]`. The φ-function weights
//! are evaluated by averaging over points on a circle around each `h𝓛_k`,
//! which avoids the cancellation in the closed forms when `h𝓛_k → 0`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{make_plan, FilterParams, SpectralPlan};
use crate::trajectory::{CreationInfo, Trajectory, TrajectoryMeta};

pub const DEFAULT_DT: f64 = 2.5e-2;
pub const DEFAULT_WARMUP: f64 = 500.0;
pub const CONTOUR_POINTS: usize = 32;

/// Grid size used for a domain of length `L`: `2·⌈1.25 L⌉`.
///
/// Gives 56, 90, 120, 160, 246, 320 and 500 points for
/// L = 22, 36, 48, 64, 98, 128 and 200.
pub fn grid_size(domain_length: f64) -> usize {
    2 * (1.25 * domain_length).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsConfig {
    pub domain_length: f64,
    pub n_points: usize,
    pub dt: f64,
    pub snapshot_interval: f64,
    pub warmup_time: f64,
    pub seed: u64,
    /// Standard deviation of the initial random field.
    pub init_std: f64,
    pub dealias: bool,
    pub filter: FilterParams,
}

impl KsConfig {
    pub fn for_length(domain_length: f64) -> Self {
        Self {
            domain_length,
            n_points: grid_size(domain_length),
            dt: DEFAULT_DT,
            snapshot_interval: 1.0,
            warmup_time: DEFAULT_WARMUP,
            seed: 0,
            init_std: 0.1,
            dealias: true,
            filter: FilterParams::Off,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Inner steps per snapshot.
    pub fn steps_per_snapshot(&self) -> usize {
        (self.snapshot_interval / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let ratio = self.snapshot_interval / self.dt;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9 * ratio) {
            return Err(Error::Config(format!(
                "snapshot interval {} is not an integer multiple of dt {}",
                self.snapshot_interval, self.dt
            )));
        }
        if self.warmup_time < 0.0 {
            return Err(Error::Config("warmup time must be non-negative".into()));
        }
        let unstable = self.domain_length / (2.0 * std::f64::consts::PI);
        if (self.n_points / 2) as f64 <= unstable {
            return Err(Error::Config(format!(
                "{} points cannot resolve the {unstable:.1} unstable modes of L = {}",
                self.n_points, self.domain_length
            )));
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<SpectralPlan> {
        make_plan(1, self.n_points, self.domain_length, self.filter)
    }
}

/// Per-mode ETDRK4 coefficients for one step size.
#[derive(Clone, Debug)]
pub struct EtdRk4Tables {
    pub dt: f64,
    /// `𝓛_k = k² − k⁴`.
    pub linear: Vec<f64>,
    pub e: Vec<f64>,
    pub e2: Vec<f64>,
    pub q: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub f3: Vec<f64>,
    /// `−ik/2`, zeroed outside the dealiased band and at Nyquist.
    nonlinear: Vec<Complex64>,
}

impl EtdRk4Tables {
    pub fn new(plan: &SpectralPlan, dt: f64, dealias: bool) -> Self {
        let ax = plan.x_axis();
        let n_modes = ax.indices.len();
        let contour: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| {
                Complex64::from_polar(
                    1.0,
                    2.0 * std::f64::consts::PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64,
                )
            })
            .collect();

        let mut t = Self {
            dt,
            linear: Vec::with_capacity(n_modes),
            e: Vec::with_capacity(n_modes),
            e2: Vec::with_capacity(n_modes),
            q: Vec::with_capacity(n_modes),
            f1: Vec::with_capacity(n_modes),
            f2: Vec::with_capacity(n_modes),
            f3: Vec::with_capacity(n_modes),
            nonlinear: Vec::with_capacity(n_modes),
        };
        for (idx, &k) in ax.wavenumbers.iter().enumerate() {
            let lin = k * k - k * k * k * k;
            let z = dt * lin;
            let [q, f1, f2, f3] = contour_weights(z, &contour);
            t.linear.push(lin);
            t.e.push(z.exp());
            t.e2.push((z / 2.0).exp());
            t.q.push(dt * q);
            t.f1.push(dt * f1);
            t.f2.push(dt * f2);
            t.f3.push(dt * f3);

            let keep = !dealias || plan.dealias_mask()[idx];
            let nyquist = ax.indices[idx] == ax.nyquist_index();
            t.nonlinear.push(if keep && !nyquist {
                Complex64::new(0.0, -0.5 * k)
            } else {
                Complex64::new(0.0, 0.0)
            });
        }
        t
    }
}

/// Contour means of `(e^{z/2} − 1)/z` and the three ETDRK4 φ-combinations.
fn contour_weights(z: f64, contour: &[Complex64]) -> [f64; 4] {
    let mut acc = [Complex64::new(0.0, 0.0); 4];
    for r in contour {
        let lr = z + r;
        let ex = lr.exp();
        let lr3 = lr * lr * lr;
        acc[0] += ((lr / 2.0).exp() - 1.0) / lr;
        acc[1] += (-4.0 - lr + ex * (4.0 - 3.0 * lr + lr * lr)) / lr3;
        acc[2] += (2.0 + lr + ex * (lr - 2.0)) / lr3;
        acc[3] += (-4.0 - 3.0 * lr - lr * lr + ex * (4.0 - lr)) / lr3;
    }
    let m = contour.len() as f64;
    acc.map(|a| a.re / m)
}

pub fn build_tables(config: &KsConfig, plan: &SpectralPlan) -> EtdRk4Tables {
    EtdRk4Tables::new(plan, config.dt, config.dealias)
}

fn nonlinear_term(v: &[Complex64], tables: &EtdRk4Tables, plan: &SpectralPlan) -> Vec<Complex64> {
    let u = plan.inverse(v).expect("mode count fixed by plan");
    let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
    let mut out = plan.forward(&sq).expect("length fixed by plan");
    for (o, g) in out.iter_mut().zip(&tables.nonlinear) {
        *o *= g;
    }
    out
}

/// Advances the mode array by one ETDRK4 step.
pub fn step(modes: &[Complex64], tables: &EtdRk4Tables, plan: &SpectralPlan) -> Vec<Complex64> {
    let n = modes.len();
    let nv = nonlinear_term(modes, tables, plan);
    let a: Vec<Complex64> = (0..n).map(|i| modes[i] * tables.e2[i] + nv[i] * tables.q[i]).collect();
    let na = nonlinear_term(&a, tables, plan);
    let b: Vec<Complex64> = (0..n).map(|i| modes[i] * tables.e2[i] + na[i] * tables.q[i]).collect();
    let nb = nonlinear_term(&b, tables, plan);
    let c: Vec<Complex64> = (0..n)
        .map(|i| a[i] * tables.e2[i] + (nb[i] * 2.0 - nv[i]) * tables.q[i])
        .collect();
    let nc = nonlinear_term(&c, tables, plan);
    let mut out: Vec<Complex64> = (0..n)
        .map(|i| {
            modes[i] * tables.e[i]
                + nv[i] * tables.f1[i]
                + (na[i] + nb[i]) * (2.0 * tables.f2[i])
                + nc[i] * tables.f3[i]
        })
        .collect();
    plan.apply_filter(&mut out);
    out
}

/// One KS integration: owns its plan, tables and state.
#[derive(Clone, Debug)]
pub struct KsSolver {
    config: KsConfig,
    plan: SpectralPlan,
    tables: EtdRk4Tables,
    modes: Vec<Complex64>,
    time: f64,
    steps: usize,
}

impl KsSolver {
    /// Starts from the seeded random initial field (zero mean).
    pub fn new(config: KsConfig) -> Result<Self> {
        let u0 = random_initial_field(&config);
        Self::from_values(config, &u0)
    }

    pub fn from_values(config: KsConfig, u0: &[f64]) -> Result<Self> {
        config.validate()?;
        let plan = config.plan()?;
        let tables = build_tables(&config, &plan);
        let modes = plan.forward(u0)?;
        Ok(Self {
            config,
            plan,
            tables,
            modes,
            time: 0.0,
            steps: 0,
        })
    }

    pub fn config(&self) -> &KsConfig {
        &self.config
    }

    pub fn plan(&self) -> &SpectralPlan {
        &self.plan
    }

    pub fn tables(&self) -> &EtdRk4Tables {
        &self.tables
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn modes(&self) -> &[Complex64] {
        &self.modes
    }

    pub fn values(&self) -> Vec<f64> {
        self.plan.inverse(&self.modes).expect("mode count fixed by plan")
    }

    pub fn set_values(&mut self, u: &[f64]) -> Result<()> {
        self.modes = self.plan.forward(u)?;
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        let next = step(&self.modes, &self.tables, &self.plan);
        self.steps += 1;
        if next.iter().any(|m| !(m.re.is_finite() && m.im.is_finite())) {
            return Err(Error::Diverged {
                step: self.steps,
                time: self.time + self.config.dt,
                detail: "non-finite KS mode".into(),
            });
        }
        self.modes = next;
        self.time = self.steps as f64 * self.config.dt;
        Ok(())
    }

    pub fn advance_steps(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    /// Integrates for `duration` (rounded to whole steps).
    pub fn advance(&mut self, duration: f64) -> Result<()> {
        self.advance_steps((duration / self.config.dt).round() as usize)
    }
}

/// `u(x, 0) ~ N(0, init_std²)` pointwise, with the sample mean removed.
pub fn random_initial_field(config: &KsConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).expect("finite std");
    let mut u: Vec<f64> = (0..config.n_points).map(|_| normal.sample(&mut rng)).collect();
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|v| *v -= mean);
    u
}

pub fn trajectory_meta(config: &KsConfig, start_time: f64) -> TrajectoryMeta {
    let mut parameters = BTreeMap::new();
    parameters.insert("L".to_string(), config.domain_length);
    parameters.insert("warmup_time".to_string(), config.warmup_time);
    parameters.insert("init_std".to_string(), config.init_std);
    TrajectoryMeta {
        equation: "ks".into(),
        parameters,
        dims: 1,
        n_points: vec![config.n_points],
        domain_length: vec![config.domain_length],
        dt: config.dt,
        snapshot_interval: config.snapshot_interval,
        start_time,
        seed: config.seed,
        creation: CreationInfo::default(),
    }
}

/// Integrates through the warm-up, then records `n_snapshots` frames at the
/// snapshot interval. The first frame is the state at the end of warm-up.
pub fn generate_dataset(config: &KsConfig, n_snapshots: usize) -> Result<Trajectory> {
    let mut solver = KsSolver::new(config.clone())?;
    solver.advance(config.warmup_time).map_err(|e| annotate(e, 0))?;
    let mut traj = Trajectory::new(trajectory_meta(config, solver.time()));
    let per = config.steps_per_snapshot();
    for i in 0..n_snapshots {
        if i > 0 {
            solver.advance_steps(per).map_err(|e| annotate(e, i))?;
        }
        traj.push(solver.values())?;
    }
    Ok(traj)
}

fn annotate(err: Error, recorded: usize) -> Error {
    match err {
        Error::Diverged { step, time, detail } => Error::Diverged {
            step,
            time,
            detail: format!("{detail}; {recorded} snapshots recorded before divergence"),
        },
        other => other,
    }
}
