//! Stochastically forced barotropic vorticity on a doubly periodic beta-plane,
//!
//! `∂t ζ + u·∇ζ + β ∂x ψ = ξ − μ ζ − ν (−∇²)^n ζ`,  `∇²ψ = ζ`,  `u = (−∂y ψ, ∂x ψ)`,
//!
//! on `[0, 2π]²`. Deterministic terms are advanced with classical RK4; the
//! white-in-time forcing `ξ` is added once per step (Euler–Maruyama) and the
//! exponential wavenumber filter is applied at the end of every step.
//!
//! The forcing acts only on eddy modes (`kx ≠ 0`) inside a thin annulus
//! around `k_f`, so the zonal mean `U(y)` is driven purely by the Reynolds
//! stress `⟨ζ′v′⟩`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{make_plan, FilterParams, SpectralPlan};
use crate::trajectory::{CreationInfo, Trajectory, TrajectoryMeta};

pub const DOMAIN_LENGTH: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperviscosity {
    pub coefficient: f64,
    pub order: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaConfig {
    pub beta: f64,
    pub mu: f64,
    /// Energy injection rate; 0 switches the forcing off.
    pub epsilon: f64,
    pub k_f: f64,
    pub delta_k: f64,
    pub dt: f64,
    pub n_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub hyperviscosity: Option<Hyperviscosity>,
    pub filter: FilterParams,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            beta: 0.9,
            mu: 4e-2,
            epsilon: 1e-4,
            k_f: 16.0,
            delta_k: 1.0,
            dt: 4e-2,
            n_points: 64,
            seed: 0,
            hyperviscosity: None,
            filter: FilterParams::exponential(),
        }
    }
}

impl BetaConfig {
    /// Strongly anisotropic regime with persistent jets at n = 64
    /// (3–4 jets with occasional nucleation and coalescence).
    pub fn jet_regime() -> Self {
        Self {
            beta: 10.0,
            mu: 1e-2,
            epsilon: 1e-3,
            k_f: 14.0,
            delta_k: 3.0,
            ..Self::default()
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.dt > 0.0 && self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "need mu > 0, dt > 0 and epsilon >= 0 (mu = {}, dt = {}, epsilon = {})",
                self.mu, self.dt, self.epsilon
            )));
        }
        if self.k_f + self.delta_k >= self.n_points as f64 / 3.0 {
            return Err(Error::Config(format!(
                "forcing annulus k_f + δk = {} outside the dealiased band of n = {}",
                self.k_f + self.delta_k,
                self.n_points
            )));
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<SpectralPlan> {
        make_plan(2, self.n_points, DOMAIN_LENGTH, self.filter)
    }

    pub fn steps_for(&self, duration: f64) -> usize {
        (duration / self.dt).round() as usize
    }
}

/// Annulus modes (half-complex slots) and the per-mode forcing amplitude.
#[derive(Clone, Debug)]
pub struct ForcingSpectrum {
    pub modes: Vec<usize>,
    /// `|ξ̂_k| · √dt`, identical for every annulus mode.
    pub amplitude: f64,
}

impl ForcingSpectrum {
    /// Modes with `kx > 0` and `|κ − k_f| ≤ δk/2`, normalized so that the
    /// expected energy input per unit time equals `epsilon`.
    pub fn new(config: &BetaConfig, plan: &SpectralPlan) -> Result<Self> {
        let mut modes = Vec::new();
        let mut inv_k2 = 0.0;
        for idx in 0..plan.n_modes() {
            let (ky, kx) = plan.wavenumber(idx);
            let kappa = (kx * kx + ky * ky).sqrt();
            if kx > 0.0 && (kappa - config.k_f).abs() <= config.delta_k / 2.0 {
                modes.push(idx);
                inv_k2 += 1.0 / (kappa * kappa);
            }
        }
        if modes.is_empty() {
            return Err(Error::Config(format!(
                "forcing annulus around k_f = {} with δk = {} contains no modes",
                config.k_f, config.delta_k
            )));
        }
        // E = (1/2N⁴) Σ_full |ζ̂|²/|k|², each half-plane slot counted twice:
        // E[ΔE] = a²·dt·Σ_half 1/|k|² / N⁴ = ε·dt.
        let n4 = (plan.n_points() as f64).powi(2);
        let amplitude = (config.epsilon * n4 / inv_k2).sqrt();
        Ok(Self { modes, amplitude })
    }
}

/// One forcing realization `ξ̂` with uniform random phases on the annulus,
/// scaled by `1/√dt` (white in time).
pub fn draw_forcing(
    config: &BetaConfig,
    plan: &SpectralPlan,
    spectrum: &ForcingSpectrum,
    rng: &mut ChaCha8Rng,
) -> Vec<Complex64> {
    let mut xi = vec![Complex64::new(0.0, 0.0); plan.n_modes()];
    let scale = spectrum.amplitude / config.dt.sqrt();
    for &idx in &spectrum.modes {
        let phase = rng.random::<f64>() * 2.0 * PI;
        xi[idx] = Complex64::from_polar(scale, phase);
    }
    xi
}

#[derive(Clone, Debug)]
pub struct BetaState {
    pub zeta_modes: Vec<Complex64>,
    pub time: f64,
    pub steps: usize,
    pub rng: ChaCha8Rng,
}

impl BetaState {
    pub fn at_rest(config: &BetaConfig, plan: &SpectralPlan) -> Self {
        Self {
            zeta_modes: vec![Complex64::new(0.0, 0.0); plan.n_modes()],
            time: 0.0,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }
}

/// Kinetic energy per unit area, `½⟨u² + v²⟩`.
pub fn energy(plan: &SpectralPlan, zeta_modes: &[Complex64]) -> f64 {
    let n4 = (plan.n_points() as f64).powi(2);
    let mut e = 0.0;
    for (idx, z) in zeta_modes.iter().enumerate() {
        let (ky, kx) = plan.wavenumber(idx);
        let k2 = kx * kx + ky * ky;
        if k2 > 0.0 {
            e += plan.multiplicity(idx) * z.norm_sqr() / k2;
        }
    }
    e / (2.0 * n4)
}

/// `ψ̂ = −ζ̂/|k|²` with the mean mode excluded.
pub fn streamfunction(plan: &SpectralPlan, zeta_modes: &[Complex64]) -> Vec<Complex64> {
    zeta_modes
        .iter()
        .enumerate()
        .map(|(idx, z)| {
            let (ky, kx) = plan.wavenumber(idx);
            let k2 = kx * kx + ky * ky;
            if k2 > 0.0 {
                -z / k2
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// Physical `(u, v, ζ)` of a vorticity mode array.
pub fn velocity_and_vorticity(plan: &SpectralPlan, zeta_modes: &[Complex64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let psi = streamfunction(plan, zeta_modes);
    let mut uh = Vec::with_capacity(psi.len());
    let mut vh = Vec::with_capacity(psi.len());
    for (idx, p) in psi.iter().enumerate() {
        let (ky, kx) = plan.wavenumber(idx);
        uh.push(-Complex64::new(0.0, ky) * p);
        vh.push(Complex64::new(0.0, kx) * p);
    }
    let inv = |m: &[Complex64]| plan.inverse(m).expect("mode count fixed by plan");
    (inv(&uh), inv(&vh), inv(zeta_modes))
}

/// Deterministic tendency `−u·∇ζ − β v − μ ζ − ν(−∇²)^n ζ` in mode space.
fn tendency(config: &BetaConfig, plan: &SpectralPlan, zeta: &[Complex64]) -> Vec<Complex64> {
    let psi = streamfunction(plan, zeta);
    let n = zeta.len();
    let mut uh = Vec::with_capacity(n);
    let mut vh = Vec::with_capacity(n);
    let mut zxh = Vec::with_capacity(n);
    let mut zyh = Vec::with_capacity(n);
    for idx in 0..n {
        let (ky, kx) = plan.wavenumber(idx);
        let ikx = Complex64::new(0.0, kx);
        let iky = Complex64::new(0.0, ky);
        uh.push(-iky * psi[idx]);
        vh.push(ikx * psi[idx]);
        zxh.push(ikx * zeta[idx]);
        zyh.push(iky * zeta[idx]);
    }
    let inv = |m: &[Complex64]| plan.inverse(m).expect("mode count fixed by plan");
    let (u, v, zx, zy) = (inv(&uh), inv(&vh), inv(&zxh), inv(&zyh));
    let adv: Vec<f64> = (0..u.len()).map(|i| u[i] * zx[i] + v[i] * zy[i]).collect();
    let mut out = plan.forward(&adv).expect("length fixed by plan");
    plan.dealias(&mut out);
    for idx in 0..n {
        let (ky, kx) = plan.wavenumber(idx);
        let mut damp = config.mu;
        if let Some(h) = config.hyperviscosity {
            damp += h.coefficient * (kx * kx + ky * ky).powi(h.order as i32);
        }
        out[idx] = -out[idx] - vh[idx] * config.beta - zeta[idx] * damp;
    }
    out[0] = Complex64::new(0.0, 0.0);
    out
}

fn axpy(y: &[Complex64], a: f64, x: &[Complex64]) -> Vec<Complex64> {
    y.iter().zip(x).map(|(y, x)| y + x * a).collect()
}

/// Advances one step: RK4 on the deterministic terms, additive forcing,
/// filter. Returns the new state.
pub fn step(state: &BetaState, config: &BetaConfig, plan: &SpectralPlan, spectrum: &ForcingSpectrum) -> Result<BetaState> {
    let h = config.dt;
    let z0 = &state.zeta_modes;
    let k1 = tendency(config, plan, z0);
    let k2 = tendency(config, plan, &axpy(z0, h / 2.0, &k1));
    let k3 = tendency(config, plan, &axpy(z0, h / 2.0, &k2));
    let k4 = tendency(config, plan, &axpy(z0, h, &k3));
    let mut next: Vec<Complex64> = (0..z0.len())
        .map(|i| z0[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0))
        .collect();

    let mut rng = state.rng.clone();
    if config.epsilon > 0.0 {
        let xi = draw_forcing(config, plan, spectrum, &mut rng);
        for &idx in &spectrum.modes {
            next[idx] += xi[idx] * h;
        }
    }
    plan.apply_filter(&mut next);
    next[0] = Complex64::new(0.0, 0.0);

    let steps = state.steps + 1;
    if next.iter().any(|m| !(m.re.is_finite() && m.im.is_finite())) {
        return Err(Error::Diverged {
            step: steps,
            time: steps as f64 * h,
            detail: "non-finite vorticity mode".into(),
        });
    }
    Ok(BetaState {
        zeta_modes: next,
        time: steps as f64 * h,
        steps,
        rng,
    })
}

/// Row-wise mean of a 2D `[ny][nx]` array: the zonal (x) average per latitude.
pub fn zonal_mean(values: &[f64], shape: &[usize]) -> Result<Vec<f64>> {
    if shape.len() != 2 || shape[0] * shape[1] != values.len() {
        return Err(Error::shape(format!("2D field of shape {shape:?}"), values.len()));
    }
    let nx = shape[1];
    Ok(values
        .chunks_exact(nx)
        .map(|row| row.iter().sum::<f64>() / nx as f64)
        .collect())
}

/// Eddy fields: deviations from the zonal mean.
#[derive(Clone, Debug)]
pub struct EddyMean {
    pub u_mean: Vec<f64>,
    pub u_prime: Vec<f64>,
    pub v_prime: Vec<f64>,
    pub zeta_prime: Vec<f64>,
    /// `⟨ζ′ v′⟩` as a function of `y`.
    pub reynolds_stress: Vec<f64>,
}

fn remove_zonal_mean(values: &[f64], mean: &[f64], nx: usize) -> Vec<f64> {
    values
        .chunks_exact(nx)
        .zip(mean)
        .flat_map(|(row, m)| row.iter().map(move |v| v - m))
        .collect()
}

pub fn eddy_mean_decomposition(plan: &SpectralPlan, zeta_modes: &[Complex64]) -> EddyMean {
    let shape = plan.shape().to_vec();
    let nx = shape[1];
    let (u, v, z) = velocity_and_vorticity(plan, zeta_modes);
    let u_mean = zonal_mean(&u, &shape).expect("plan shape");
    let v_mean = zonal_mean(&v, &shape).expect("plan shape");
    let z_mean = zonal_mean(&z, &shape).expect("plan shape");
    let u_prime = remove_zonal_mean(&u, &u_mean, nx);
    let v_prime = remove_zonal_mean(&v, &v_mean, nx);
    let zeta_prime = remove_zonal_mean(&z, &z_mean, nx);
    let product: Vec<f64> = zeta_prime.iter().zip(&v_prime).map(|(a, b)| a * b).collect();
    let reynolds_stress = zonal_mean(&product, &shape).expect("plan shape");
    EddyMean {
        u_mean,
        u_prime,
        v_prime,
        zeta_prime,
        reynolds_stress,
    }
}

/// Terms of `∂t U = −μ U − ν(−∂yy)^n U + ⟨ζ′v′⟩` along `y`.
#[derive(Clone, Debug)]
pub struct Budget {
    pub u_mean: Vec<f64>,
    pub du_dt: Vec<f64>,
    pub damping_term: Vec<f64>,
    pub reynolds_term: Vec<f64>,
    pub residual: Vec<f64>,
    /// `max|residual| / max(max|du_dt|, max|damping|, max|reynolds|)`.
    pub relative_residual: f64,
}

/// Closes the zonal-mean momentum budget from equally spaced states.
///
/// Two states give a forward difference with terms averaged over both; three
/// give a centered difference; five give the fourth-order centered stencil.
/// Terms are evaluated at the central state.
pub fn eddy_mean_budget(states: &[BetaState], config: &BetaConfig, plan: &SpectralPlan) -> Result<Budget> {
    let means: Vec<Vec<f64>> = states
        .iter()
        .map(|s| eddy_mean_decomposition(plan, &s.zeta_modes).u_mean)
        .collect();
    let h = match states.len() {
        2..=5 => states[1].time - states[0].time,
        _ => 0.0,
    };
    if h <= 0.0 {
        return Err(Error::Config(
            "budget needs 2, 3 or 5 states at increasing, equally spaced times".into(),
        ));
    }
    let ny = means[0].len();
    let (du_dt, terms): (Vec<f64>, Vec<(Vec<f64>, Vec<f64>)>) = match states.len() {
        2 => (
            (0..ny).map(|j| (means[1][j] - means[0][j]) / h).collect(),
            states.iter().map(|s| budget_terms(config, plan, s)).collect(),
        ),
        3 => (
            (0..ny).map(|j| (means[2][j] - means[0][j]) / (2.0 * h)).collect(),
            vec![budget_terms(config, plan, &states[1])],
        ),
        5 => (
            (0..ny)
                .map(|j| (-means[4][j] + 8.0 * means[3][j] - 8.0 * means[1][j] + means[0][j]) / (12.0 * h))
                .collect(),
            vec![budget_terms(config, plan, &states[2])],
        ),
        n => return Err(Error::Config(format!("budget needs 2, 3 or 5 states, got {n}"))),
    };
    let k = terms.len() as f64;
    let damping_term: Vec<f64> = (0..ny).map(|j| terms.iter().map(|t| t.0[j]).sum::<f64>() / k).collect();
    let reynolds_term: Vec<f64> = (0..ny).map(|j| terms.iter().map(|t| t.1[j]).sum::<f64>() / k).collect();
    let residual: Vec<f64> = (0..ny)
        .map(|j| du_dt[j] - damping_term[j] - reynolds_term[j])
        .collect();
    let max_abs = |v: &[f64]| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    let scale = max_abs(&du_dt).max(max_abs(&damping_term)).max(max_abs(&reynolds_term));
    let relative_residual = if scale > 0.0 { max_abs(&residual) / scale } else { 0.0 };
    let center = states.len() / 2;
    Ok(Budget {
        u_mean: means[center].clone(),
        du_dt,
        damping_term,
        reynolds_term,
        residual,
        relative_residual,
    })
}

fn budget_terms(config: &BetaConfig, plan: &SpectralPlan, state: &BetaState) -> (Vec<f64>, Vec<f64>) {
    let em = eddy_mean_decomposition(plan, &state.zeta_modes);
    let y = plan.y_axis().expect("2D plan");
    let line = make_plan(1, y.n, y.length, FilterParams::Off).expect("valid axis");
    let mut damping: Vec<f64> = em.u_mean.iter().map(|u| -config.mu * u).collect();
    if let Some(h) = config.hyperviscosity {
        let mut modes = line.forward(&em.u_mean).expect("axis length");
        for (idx, m) in modes.iter_mut().enumerate() {
            let k = line.wavenumber(idx).1;
            *m *= -h.coefficient * (k * k).powi(h.order as i32);
        }
        let hv = line.inverse(&modes).expect("axis length");
        damping.iter_mut().zip(hv).for_each(|(d, v)| *d += v);
    }
    // Same truncation the solver applies to the advection term.
    let mut stress = line.forward(&em.reynolds_stress).expect("axis length");
    line.dealias(&mut stress);
    (damping, line.inverse(&stress).expect("axis length"))
}

/// One beta-plane integration: owns plan, forcing spectrum and state.
#[derive(Clone, Debug)]
pub struct BetaSolver {
    config: BetaConfig,
    plan: SpectralPlan,
    spectrum: ForcingSpectrum,
    state: BetaState,
}

impl BetaSolver {
    pub fn new(config: BetaConfig) -> Result<Self> {
        config.validate()?;
        let plan = config.plan()?;
        let spectrum = ForcingSpectrum::new(&config, &plan)?;
        let state = BetaState::at_rest(&config, &plan);
        Ok(Self {
            config,
            plan,
            spectrum,
            state,
        })
    }

    /// Starts from a physical vorticity field, e.g. a restart dump.
    pub fn from_vorticity(config: BetaConfig, zeta: &[f64], time: f64) -> Result<Self> {
        let mut s = Self::new(config)?;
        let mut modes = s.plan.forward(zeta)?;
        modes[0] = Complex64::new(0.0, 0.0);
        s.state.zeta_modes = modes;
        s.state.time = time;
        s.state.steps = (time / s.config.dt).round() as usize;
        Ok(s)
    }

    pub fn config(&self) -> &BetaConfig {
        &self.config
    }

    pub fn plan(&self) -> &SpectralPlan {
        &self.plan
    }

    pub fn spectrum(&self) -> &ForcingSpectrum {
        &self.spectrum
    }

    pub fn state(&self) -> &BetaState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut BetaState {
        &mut self.state
    }

    pub fn set_state(&mut self, state: BetaState) {
        self.state = state;
    }

    /// Replaces the forcing noise stream, keeping the flow state.
    pub fn reseed(&mut self, seed: u64) {
        self.state.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn step(&mut self) -> Result<()> {
        self.state = step(&self.state, &self.config, &self.plan, &self.spectrum)?;
        Ok(())
    }

    pub fn advance_steps(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    pub fn advance(&mut self, duration: f64) -> Result<()> {
        self.advance_steps(self.config.steps_for(duration))
    }

    pub fn energy(&self) -> f64 {
        energy(&self.plan, &self.state.zeta_modes)
    }

    pub fn vorticity(&self) -> Vec<f64> {
        self.plan.inverse(&self.state.zeta_modes).expect("mode count fixed by plan")
    }

    /// Zonal-mean zonal velocity `U(y)`.
    pub fn zonal_velocity(&self) -> Vec<f64> {
        eddy_mean_decomposition(&self.plan, &self.state.zeta_modes).u_mean
    }

    /// 2D vorticity dump in the trajectory container (single frame).
    pub fn vorticity_dump(&self) -> Trajectory {
        let mut meta = trajectory_meta(&self.config, self.state.time, 0.0);
        meta.equation = "beta_vorticity".into();
        meta.dims = 2;
        meta.n_points = vec![self.config.n_points, self.config.n_points];
        meta.domain_length = vec![DOMAIN_LENGTH, DOMAIN_LENGTH];
        let mut t = Trajectory::new(meta);
        t.push(self.vorticity()).expect("frame matches plan");
        t
    }
}

pub fn trajectory_meta(config: &BetaConfig, start_time: f64, snapshot_interval: f64) -> TrajectoryMeta {
    let mut parameters = BTreeMap::new();
    parameters.insert("beta".to_string(), config.beta);
    parameters.insert("mu".to_string(), config.mu);
    parameters.insert("epsilon".to_string(), config.epsilon);
    parameters.insert("k_f".to_string(), config.k_f);
    parameters.insert("delta_k".to_string(), config.delta_k);
    parameters.insert("n_points_2d".to_string(), config.n_points as f64);
    if let Some(h) = config.hyperviscosity {
        parameters.insert("nu".to_string(), h.coefficient);
        parameters.insert("nu_order".to_string(), h.order as f64);
    }
    TrajectoryMeta {
        equation: "beta_zonal_mean".into(),
        parameters,
        dims: 1,
        n_points: vec![config.n_points],
        domain_length: vec![DOMAIN_LENGTH],
        dt: config.dt,
        snapshot_interval,
        start_time,
        seed: config.seed,
        creation: CreationInfo::default(),
    }
}

/// From rest, integrates through `warmup`, then records `n_snapshots`
/// zonal-mean profiles `U(y)` every `snapshot_interval`.
pub fn generate_dataset(
    config: &BetaConfig,
    n_snapshots: usize,
    snapshot_interval: f64,
    warmup: f64,
) -> Result<Trajectory> {
    Ok(run_dataset(config, n_snapshots, snapshot_interval, warmup)?.0)
}

/// As [`generate_dataset`], also returning the solver at the last frame.
pub fn run_dataset(
    config: &BetaConfig,
    n_snapshots: usize,
    snapshot_interval: f64,
    warmup: f64,
) -> Result<(Trajectory, BetaSolver)> {
    let ratio = snapshot_interval / config.dt;
    if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9 * ratio) {
        return Err(Error::Config(format!(
            "snapshot interval {snapshot_interval} is not an integer multiple of dt {}",
            config.dt
        )));
    }
    let mut solver = BetaSolver::new(config.clone())?;
    solver.advance(warmup)?;
    let mut traj = Trajectory::new(trajectory_meta(config, solver.time(), snapshot_interval));
    let per = ratio.round() as usize;
    for i in 0..n_snapshots {
        if i > 0 {
            solver.advance_steps(per)?;
        }
        traj.push(solver.zonal_velocity())?;
    }
    Ok((traj, solver))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BetaConfig {
        BetaConfig {
            n_points: 32,
            k_f: 6.0,
            ..BetaConfig::default()
        }
    }

    #[test]
    fn validation() {
        assert!(BetaConfig::default().validate().is_ok());
        let mut c = BetaConfig::default();
        c.n_points = 32;
        assert!(c.validate().is_err());
        c = BetaConfig::default();
        c.mu = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_annulus_is_config_error() {
        let mut c = small();
        c.k_f = 0.3;
        c.delta_k = 0.2;
        let plan = c.plan().unwrap();
        assert!(matches!(ForcingSpectrum::new(&c, &plan), Err(Error::Config(_))));
    }

    #[test]
    fn forcing_support_and_determinism() {
        let c = BetaConfig::default();
        let plan = c.plan().unwrap();
        let spec = ForcingSpectrum::new(&c, &plan).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let a = draw_forcing(&c, &plan, &spec, &mut r1);
        let b = draw_forcing(&c, &plan, &spec, &mut r2);
        assert_eq!(a, b);
        for (idx, x) in a.iter().enumerate() {
            let (ky, kx) = plan.wavenumber(idx);
            let kappa = (kx * kx + ky * ky).sqrt();
            if (kappa - 16.0).abs() > 0.5 || kx == 0.0 {
                assert_eq!(*x, Complex64::new(0.0, 0.0), "mode ({ky}, {kx})");
            } else {
                assert!(x.norm() > 0.0);
            }
        }
    }

    #[test]
    fn zonal_mean_cases() {
        let shape = [4, 8];
        let uniform: Vec<f64> = (0..4).flat_map(|i| std::iter::repeat(i as f64).take(8)).collect();
        assert_eq!(zonal_mean(&uniform, &shape).unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
        let wave: Vec<f64> = (0..32).map(|i| (2.0 * PI * (i % 8) as f64 / 8.0).sin()).collect();
        assert!(zonal_mean(&wave, &shape).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(zonal_mean(&wave, &[3, 8]).is_err());
    }

    #[test]
    fn zonal_mean_preserves_total_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zm = zonal_mean(&v, &[64, 64]).unwrap();
        let a = v.iter().sum::<f64>() / v.len() as f64;
        let b = zm.iter().sum::<f64>() / zm.len() as f64;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn rest_state_stays_at_rest_without_forcing() {
        let mut c = small();
        c.epsilon = 0.0;
        let mut s = BetaSolver::new(c).unwrap();
        s.advance_steps(10).unwrap();
        assert!(s.state().zeta_modes.iter().all(|m| m.norm() == 0.0));
    }

    #[test]
    fn single_snapshot_from_rest_is_zero() {
        let t = generate_dataset(&small(), 1, 1.0, 0.0).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.frames[0].iter().all(|&v| v == 0.0));
        assert_eq!(t.meta.equation, "beta_zonal_mean");
        assert_eq!(t.meta.parameter("beta"), Some(0.9));
    }

    #[test]
    fn eddies_have_zero_zonal_mean() {
        let mut s = BetaSolver::new(small()).unwrap();
        s.advance_steps(50).unwrap();
        let em = eddy_mean_decomposition(s.plan(), &s.state().zeta_modes);
        let zm = zonal_mean(&em.u_prime, s.plan().shape()).unwrap();
        assert!(zm.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn zonal_flow_without_eddies_is_pure_damping() {
        let mut c = small();
        c.epsilon = 0.0;
        let g: Vec<f64> = (0..32).map(|j| j as f64 * DOMAIN_LENGTH / 32.0).collect();
        let zeta: Vec<f64> = g.iter().flat_map(|y| std::iter::repeat((3.0 * y).cos()).take(32)).collect();
        let mut s = BetaSolver::from_vorticity(c.clone(), &zeta, 0.0).unwrap();
        let s0 = s.state().clone();
        s.step().unwrap();
        let b = eddy_mean_budget(&[s0, s.state().clone()], &c, s.plan()).unwrap();
        assert!(b.reynolds_term.iter().all(|v| v.abs() < 1e-15));
        for (d, m) in b.du_dt.iter().zip(&b.damping_term) {
            assert!((d - m).abs() < 1e-6 * m.abs().max(1e-3));
        }
    }
}
