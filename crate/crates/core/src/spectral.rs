//! Real-to-complex Fourier transforms on periodic 1D and 2D grids.
//!
//! Physical arrays are row-major. For 2D grids the outer axis is `y` and the
//! inner (contiguous) axis is `x`; the real transform runs along `x`, so the
//! half-complex mode array has shape `[ny][nx/2 + 1]`. Conjugate-symmetric
//! partners are never stored.
//!
//! A [`SpectralPlan`] is immutable once built and can be shared across
//! threads; every transform call allocates its own workspace.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// High-wavenumber exponential filter
/// `gain = exp(C (κ* − κc)^order)` for `κ* ≥ κc`, where
/// `κ* = sqrt((kΔx)² + (lΔy)²)` lies in `[0, π]` along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFilter {
    /// Cutoff as a fraction of the Nyquist value κ* = π.
    pub cutoff_fraction: f64,
    /// Gain reached at κ* = π.
    pub nyquist_gain: f64,
    pub order: i32,
}

impl Default for ExponentialFilter {
    fn default() -> Self {
        Self {
            cutoff_fraction: 0.65,
            nyquist_gain: 1e-15,
            order: 4,
        }
    }
}

impl ExponentialFilter {
    pub fn cutoff(&self) -> f64 {
        self.cutoff_fraction * PI
    }

    /// The decay constant, `ln(nyquist_gain) / ((1 − fraction) π)^order`.
    pub fn decay_constant(&self) -> f64 {
        self.nyquist_gain.ln() / ((1.0 - self.cutoff_fraction) * PI).powi(self.order)
    }

    pub fn gain(&self, kappa_star: f64) -> f64 {
        let kc = self.cutoff();
        if kappa_star < kc {
            1.0
        } else {
            (self.decay_constant() * (kappa_star - kc).powi(self.order)).exp()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterParams {
    #[default]
    Off,
    Exponential(ExponentialFilter),
}

impl FilterParams {
    pub fn exponential() -> Self {
        FilterParams::Exponential(ExponentialFilter::default())
    }
}

/// Wavenumber bookkeeping for one periodic axis.
#[derive(Clone, Debug)]
pub struct Axis {
    pub n: usize,
    pub length: f64,
    /// Signed integer mode index for each stored mode slot.
    pub indices: Vec<i64>,
    /// `2π · index / length` for each stored mode slot.
    pub wavenumbers: Vec<f64>,
}

impl Axis {
    /// Axis carried by the real transform: slots `0..=n/2`.
    fn half(n: usize, length: f64) -> Self {
        let indices: Vec<i64> = (0..=n / 2).map(|j| j as i64).collect();
        Self::from_indices(n, length, indices)
    }

    /// Axis carried by the complex transform: FFT order `0, 1, …, n/2, −n/2+1, …, −1`.
    fn full(n: usize, length: f64) -> Self {
        let indices: Vec<i64> = (0..n)
            .map(|j| if j <= n / 2 { j as i64 } else { j as i64 - n as i64 })
            .collect();
        Self::from_indices(n, length, indices)
    }

    fn from_indices(n: usize, length: f64, indices: Vec<i64>) -> Self {
        let wavenumbers = indices
            .iter()
            .map(|&j| 2.0 * PI * j as f64 / length)
            .collect();
        Self {
            n,
            length,
            indices,
            wavenumbers,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn nyquist_index(&self) -> i64 {
        (self.n / 2) as i64
    }

    pub fn dealias_limit(&self) -> i64 {
        (self.n / 3) as i64
    }
}

/// Precomputed wavenumbers, transform plans and masks for one grid.
#[derive(Clone)]
pub struct SpectralPlan {
    dims: usize,
    /// `[x]` in 1D, `[y, x]` in 2D (outer to inner).
    shape: Vec<usize>,
    /// Real-transform axis.
    x: Axis,
    /// Complex-transform axis (2D only).
    y: Option<Axis>,
    filter: FilterParams,
    dealias_mask: Vec<bool>,
    filter_gain: Vec<f64>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fft_y: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("dims", &self.dims)
            .field("shape", &self.shape)
            .field("lengths", &self.domain_lengths())
            .field("filter", &self.filter)
            .finish()
    }
}

fn check_points(n: usize) -> Result<()> {
    if n < 8 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "grid size must be even and at least 8, got {n}"
        )));
    }
    Ok(())
}

fn check_length(length: f64) -> Result<()> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::Config(format!(
            "domain length must be positive, got {length}"
        )));
    }
    Ok(())
}

/// Builds a plan with the same number of points and length on every axis.
pub fn make_plan(
    dims: usize,
    n_points: usize,
    domain_length: f64,
    filter: FilterParams,
) -> Result<SpectralPlan> {
    match dims {
        1 => SpectralPlan::new_1d(n_points, domain_length, filter),
        2 => SpectralPlan::new_2d(n_points, n_points, domain_length, domain_length, filter),
        _ => Err(Error::Config(format!("dims must be 1 or 2, got {dims}"))),
    }
}

impl SpectralPlan {
    pub fn new_1d(n: usize, length: f64, filter: FilterParams) -> Result<Self> {
        check_points(n)?;
        check_length(length)?;
        let mut planner = RealFftPlanner::<f64>::new();
        let x = Axis::half(n, length);
        let mut plan = Self {
            dims: 1,
            shape: vec![n],
            r2c: planner.plan_fft_forward(n),
            c2r: planner.plan_fft_inverse(n),
            x,
            y: None,
            filter,
            dealias_mask: Vec::new(),
            filter_gain: Vec::new(),
            fft_y: None,
        };
        plan.build_masks();
        Ok(plan)
    }

    pub fn new_2d(nx: usize, ny: usize, lx: f64, ly: f64, filter: FilterParams) -> Result<Self> {
        check_points(nx)?;
        check_points(ny)?;
        check_length(lx)?;
        check_length(ly)?;
        let mut planner = RealFftPlanner::<f64>::new();
        let mut cplanner = FftPlanner::<f64>::new();
        let mut plan = Self {
            dims: 2,
            shape: vec![ny, nx],
            r2c: planner.plan_fft_forward(nx),
            c2r: planner.plan_fft_inverse(nx),
            x: Axis::half(nx, lx),
            y: Some(Axis::full(ny, ly)),
            filter,
            dealias_mask: Vec::new(),
            filter_gain: Vec::new(),
            fft_y: Some((
                cplanner.plan_fft_forward(ny),
                cplanner.plan_fft_inverse(ny),
            )),
        };
        plan.build_masks();
        Ok(plan)
    }

    fn build_masks(&mut self) {
        let n_modes = self.n_modes();
        let mut mask = Vec::with_capacity(n_modes);
        let mut gain = Vec::with_capacity(n_modes);
        for idx in 0..n_modes {
            let (iy, ix) = self.mode_indices(idx);
            let mut keep = ix.abs() <= self.x.dealias_limit();
            let mut kappa2 = (2.0 * PI * ix as f64 / self.x.n as f64).powi(2);
            if let Some(y) = &self.y {
                keep &= iy.abs() <= y.dealias_limit();
                kappa2 += (2.0 * PI * iy as f64 / y.n as f64).powi(2);
            }
            mask.push(keep);
            gain.push(match self.filter {
                FilterParams::Off => 1.0,
                FilterParams::Exponential(f) => f.gain(kappa2.sqrt()),
            });
        }
        self.dealias_mask = mask;
        self.filter_gain = gain;
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Physical shape, outer axis first.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn n_points(&self) -> usize {
        self.shape.iter().product()
    }

    /// Shape of the half-complex mode array, outer axis first.
    pub fn mode_shape(&self) -> Vec<usize> {
        match &self.y {
            None => vec![self.x.indices.len()],
            Some(y) => vec![y.n, self.x.indices.len()],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.mode_shape().iter().product()
    }

    pub fn x_axis(&self) -> &Axis {
        &self.x
    }

    pub fn y_axis(&self) -> Option<&Axis> {
        self.y.as_ref()
    }

    pub fn domain_lengths(&self) -> Vec<f64> {
        match &self.y {
            None => vec![self.x.length],
            Some(y) => vec![y.length, self.x.length],
        }
    }

    pub fn filter(&self) -> FilterParams {
        self.filter
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.dealias_mask
    }

    pub fn filter_gain(&self) -> &[f64] {
        &self.filter_gain
    }

    /// Signed `(y, x)` mode indices of a flat mode slot; `y` is 0 in 1D.
    pub fn mode_indices(&self, idx: usize) -> (i64, i64) {
        let nxh = self.x.indices.len();
        match &self.y {
            None => (0, self.x.indices[idx]),
            Some(y) => (y.indices[idx / nxh], self.x.indices[idx % nxh]),
        }
    }

    /// Physical `(ky, kx)` wavenumbers of a flat mode slot; `ky` is 0 in 1D.
    pub fn wavenumber(&self, idx: usize) -> (f64, f64) {
        let nxh = self.x.indices.len();
        match &self.y {
            None => (0.0, self.x.wavenumbers[idx]),
            Some(y) => (y.wavenumbers[idx / nxh], self.x.wavenumbers[idx % nxh]),
        }
    }

    /// Number of physical modes a half-complex slot stands for (1 or 2).
    ///
    /// Slots with `x` index strictly between 0 and the Nyquist index carry a
    /// conjugate partner that is not stored.
    pub fn multiplicity(&self, idx: usize) -> f64 {
        let (_, ix) = self.mode_indices(idx);
        if ix == 0 || ix == self.x.nyquist_index() {
            1.0
        } else {
            2.0
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_points() {
            return Err(Error::shape(
                format!("{} physical values {:?}", self.n_points(), self.shape),
                len,
            ));
        }
        Ok(())
    }

    fn check_modes(&self, len: usize) -> Result<()> {
        if len != self.n_modes() {
            return Err(Error::shape(
                format!("{} modes {:?}", self.n_modes(), self.mode_shape()),
                len,
            ));
        }
        Ok(())
    }

    /// Unnormalized forward transform: `F_k = Σ_n f_n e^{−2πi k·n/N}`.
    pub fn forward(&self, values: &[f64]) -> Result<Vec<Complex64>> {
        self.check_len(values.len())?;
        let nx = self.x.n;
        let nxh = nx / 2 + 1;
        let rows = values.len() / nx;
        let mut out = vec![Complex64::new(0.0, 0.0); rows * nxh];
        let mut input = vec![0.0; nx];
        let mut scratch = self.r2c.make_scratch_vec();
        for (row, dst) in values.chunks_exact(nx).zip(out.chunks_exact_mut(nxh)) {
            input.copy_from_slice(row);
            self.r2c
                .process_with_scratch(&mut input, dst, &mut scratch)
                .expect("real transform length fixed by plan");
        }
        if let Some((fwd, _)) = &self.fft_y {
            self.transform_columns(&mut out, fwd.as_ref());
        }
        Ok(out)
    }

    /// Inverse of [`forward`](Self::forward), including the `1/N` factor.
    ///
    /// The imaginary parts that a Hermitian-consistent array would have
    /// zero (x-DC and x-Nyquist entries after the column pass) are dropped.
    pub fn inverse(&self, modes: &[Complex64]) -> Result<Vec<f64>> {
        Ok(self.inverse_with_residue(modes)?.0)
    }

    /// Like [`inverse`](Self::inverse) but also returns the largest
    /// imaginary residue that had to be discarded, scaled like the output.
    pub fn inverse_with_residue(&self, modes: &[Complex64]) -> Result<(Vec<f64>, f64)> {
        self.check_modes(modes.len())?;
        let nx = self.x.n;
        let nxh = nx / 2 + 1;
        let mut spec = modes.to_vec();
        if let Some((_, inv)) = &self.fft_y {
            self.transform_columns(&mut spec, inv.as_ref());
        }
        let norm = 1.0 / self.n_points() as f64;
        let mut residue: f64 = 0.0;
        let rows = spec.len() / nxh;
        let mut out = vec![0.0; rows * nx];
        let mut scratch = self.c2r.make_scratch_vec();
        for (src, dst) in spec.chunks_exact_mut(nxh).zip(out.chunks_exact_mut(nx)) {
            residue = residue.max(src[0].im.abs()).max(src[nxh - 1].im.abs());
            src[0].im = 0.0;
            src[nxh - 1].im = 0.0;
            self.c2r
                .process_with_scratch(src, dst, &mut scratch)
                .expect("imaginary DC/Nyquist parts cleared");
            for v in dst.iter_mut() {
                *v *= norm;
            }
        }
        Ok((out, residue * norm))
    }

    fn transform_columns(&self, data: &mut [Complex64], fft: &dyn Fft<f64>) {
        let nxh = self.x.n / 2 + 1;
        let ny = data.len() / nxh;
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for j in 0..nxh {
            for (i, c) in col.iter_mut().enumerate() {
                *c = data[i * nxh + j];
            }
            fft.process_with_scratch(&mut col, &mut scratch);
            for (i, c) in col.iter().enumerate() {
                data[i * nxh + j] = *c;
            }
        }
    }

    pub fn forward_field(&self, field: &Field) -> Result<Vec<Complex64>> {
        self.forward(&field.values)
    }

    pub fn inverse_field(&self, modes: &[Complex64], time: f64) -> Result<Field> {
        Ok(Field {
            values: self.inverse(modes)?,
            shape: self.shape.clone(),
            time,
        })
    }

    /// Multiplies modes in place by `(i k_axis)^order`.
    ///
    /// `axis` counts from the inner axis: 0 is `x`, 1 is `y`. For odd orders
    /// the Nyquist slot of the differentiated axis is zeroed.
    pub fn differentiate_modes(&self, modes: &mut [Complex64], order: u32, axis: usize) -> Result<()> {
        self.check_modes(modes.len())?;
        let ax = match (axis, &self.y) {
            (0, _) => &self.x,
            (1, Some(y)) => y,
            _ => {
                return Err(Error::Config(format!(
                    "axis {axis} out of range for a {}D plan",
                    self.dims
                )))
            }
        };
        let nyq = ax.nyquist_index();
        for (idx, m) in modes.iter_mut().enumerate() {
            let (iy, ix) = self.mode_indices(idx);
            let (ky, kx) = self.wavenumber(idx);
            let (j, k) = if axis == 0 { (ix, kx) } else { (iy, ky) };
            if order % 2 == 1 && j.abs() == nyq {
                *m = Complex64::new(0.0, 0.0);
                continue;
            }
            *m *= Complex64::new(0.0, k).powu(order);
        }
        Ok(())
    }

    /// Zeroes every mode outside the 2/3-rule band.
    pub fn dealias(&self, modes: &mut [Complex64]) {
        for (m, &keep) in modes.iter_mut().zip(&self.dealias_mask) {
            if !keep {
                *m = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Multiplies every mode by its filter gain.
    pub fn apply_filter(&self, modes: &mut [Complex64]) {
        if matches!(self.filter, FilterParams::Off) {
            return;
        }
        for (m, &g) in modes.iter_mut().zip(&self.filter_gain) {
            *m *= g;
        }
    }

    /// `Σ_physical |f|² = (1/N) Σ_full |F|²`, evaluated from half-complex modes.
    pub fn parseval_sum(&self, modes: &[Complex64]) -> f64 {
        let full: f64 = modes
            .iter()
            .enumerate()
            .map(|(i, m)| self.multiplicity(i) * m.norm_sqr())
            .sum();
        full / self.n_points() as f64
    }
}

/// Real-valued field on a plan's physical grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub shape: Vec<usize>,
    pub time: f64,
}

impl Field {
    pub fn new(values: Vec<f64>, plan: &SpectralPlan, time: f64) -> Result<Self> {
        plan.check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field entry {i} is {}", values[i])));
        }
        Ok(Self {
            values,
            shape: plan.shape().to_vec(),
            time,
        })
    }

    pub fn zeros(plan: &SpectralPlan) -> Self {
        Self {
            values: vec![0.0; plan.n_points()],
            shape: plan.shape().to_vec(),
            time: 0.0,
        }
    }

    /// Grid coordinates along the inner axis, `x_j = j · L / n`.
    pub fn grid(plan: &SpectralPlan) -> Vec<f64> {
        let ax = plan.x_axis();
        (0..ax.n).map(|j| j as f64 * ax.spacing()).collect()
    }
}

/// `inverse((ik)^order · forward(field))` along `axis` (0 = x, 1 = y).
pub fn spectral_derivative(plan: &SpectralPlan, field: &Field, order: u32, axis: usize) -> Result<Field> {
    let mut modes = plan.forward(&field.values)?;
    plan.differentiate_modes(&mut modes, order, axis)?;
    plan.inverse_field(&modes, field.time)
}

/// Slice-level convenience used by the solvers and diagnostics.
pub fn derivative_values(plan: &SpectralPlan, values: &[f64], order: u32, axis: usize) -> Result<Vec<f64>> {
    let mut modes = plan.forward(values)?;
    plan.differentiate_modes(&mut modes, order, axis)?;
    plan.inverse(&modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    fn random_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn ks_plan_wavenumbers() {
        let plan = make_plan(1, 56, 22.0, FilterParams::Off).unwrap();
        let ax = plan.x_axis();
        assert_eq!(*ax.indices.last().unwrap(), 28);
        assert!((ax.wavenumbers[1] - 0.285_599_332).abs() < 1e-8);
        assert_eq!(ax.indices.iter().filter(|&&j| j == 0).count(), 1);
    }

    #[test]
    fn unit_plan_has_integer_wavenumbers() {
        let plan = make_plan(1, 8, 2.0 * PI, FilterParams::Off).unwrap();
        assert_eq!(plan.x_axis().indices, vec![0, 1, 2, 3, 4]);
        for (j, k) in plan.x_axis().wavenumbers.iter().enumerate() {
            assert!((k - j as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn two_d_mode_grid_shape() {
        let plan = make_plan(2, 64, 2.0 * PI, FilterParams::exponential()).unwrap();
        assert_eq!(plan.mode_shape(), vec![64, 33]);
        let y = plan.y_axis().unwrap();
        assert_eq!(y.indices.iter().filter(|&&j| j == 0).count(), 1);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(make_plan(1, 7, 1.0, FilterParams::Off), Err(Error::Config(_))));
        assert!(matches!(make_plan(1, 6, 1.0, FilterParams::Off), Err(Error::Config(_))));
        assert!(matches!(make_plan(1, 8, 0.0, FilterParams::Off), Err(Error::Config(_))));
        assert!(matches!(make_plan(3, 8, 1.0, FilterParams::Off), Err(Error::Config(_))));
    }

    #[test]
    fn dealias_mask_two_thirds() {
        let plan = make_plan(1, 56, 22.0, FilterParams::Off).unwrap();
        for (j, keep) in plan.dealias_mask().iter().enumerate() {
            assert_eq!(*keep, j <= 18, "index {j}");
        }
        let plan2 = make_plan(2, 64, 2.0 * PI, FilterParams::Off).unwrap();
        for idx in 0..plan2.n_modes() {
            let (iy, ix) = plan2.mode_indices(idx);
            assert_eq!(plan2.dealias_mask()[idx], iy.abs() <= 21 && ix <= 21);
        }
    }

    #[test]
    fn shape_errors() {
        let plan = make_plan(1, 16, 1.0, FilterParams::Off).unwrap();
        assert!(matches!(plan.forward(&[0.0; 15]), Err(Error::Shape { .. })));
        assert!(matches!(plan.inverse(&[Complex64::new(0.0, 0.0); 8]), Err(Error::Shape { .. })));
        assert!(Field::new(vec![f64::NAN; 16], &plan, 0.0).is_err());
    }

    #[test]
    fn constant_field_only_mean_mode() {
        for plan in [
            make_plan(1, 32, 3.0, FilterParams::Off).unwrap(),
            make_plan(2, 16, 2.0, FilterParams::Off).unwrap(),
        ] {
            let modes = plan.forward(&vec![1.5; plan.n_points()]).unwrap();
            assert!((modes[0].re - 1.5 * plan.n_points() as f64).abs() < 1e-12);
            assert!(modes[1..].iter().all(|m| m.norm() < 1e-12));
        }
    }

    #[test]
    fn sine_is_single_mode() {
        let plan = make_plan(1, 32, 5.0, FilterParams::Off).unwrap();
        let x = Field::grid(&plan);
        let v: Vec<f64> = x.iter().map(|x| (2.0 * PI * x / 5.0).sin()).collect();
        let modes = plan.forward(&v).unwrap();
        for (j, m) in modes.iter().enumerate() {
            if j == 1 {
                // sin ↦ −i N/2 at k=1 (partner at k=−1 implicit)
                assert!((m.im + 16.0).abs() < 1e-12 && m.re.abs() < 1e-12);
            } else {
                assert!(m.norm() < 1e-12, "mode {j}");
            }
        }
    }

    #[test]
    fn parseval_against_direct_sum() {
        for plan in [
            make_plan(1, 56, 22.0, FilterParams::Off).unwrap(),
            make_plan(2, 32, 2.0 * PI, FilterParams::Off).unwrap(),
        ] {
            let v = random_values(plan.n_points(), 3);
            let direct: f64 = v.iter().map(|x| x * x).sum();
            let modes = plan.forward(&v).unwrap();
            assert!((plan.parseval_sum(&modes) - direct).abs() / direct < 1e-10);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let plan = make_plan(1, 32, 2.0 * PI, FilterParams::Off).unwrap();
        let x = Field::grid(&plan);
        let f = Field::new(x.iter().map(|x| x.sin()).collect(), &plan, 0.0).unwrap();
        let d = spectral_derivative(&plan, &f, 1, 0).unwrap();
        let max_err = d
            .values
            .iter()
            .zip(&x)
            .map(|(d, x)| (d - x.cos()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-10);

        let c = Field::new(vec![3.0; 32], &plan, 0.0).unwrap();
        let d2 = spectral_derivative(&plan, &c, 2, 0).unwrap();
        assert!(d2.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fourth_derivative_matches_analytic() {
        // d⁴/dx⁴ sin(2x) = 2⁴ sin(2x)
        let plan = make_plan(1, 32, 2.0 * PI, FilterParams::Off).unwrap();
        let x = Field::grid(&plan);
        let f = Field::new(x.iter().map(|x| (2.0 * x).sin()).collect(), &plan, 0.0).unwrap();
        let d = spectral_derivative(&plan, &f, 4, 0).unwrap();
        for (d, x) in d.values.iter().zip(&x) {
            assert!((d - 16.0 * (2.0 * x).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_along_y() {
        let plan = make_plan(2, 16, 2.0 * PI, FilterParams::Off).unwrap();
        let g = Field::grid(&plan);
        let mut v = Vec::new();
        for y in &g {
            for x in &g {
                v.push((3.0 * y).sin() + x.cos());
            }
        }
        let dy = derivative_values(&plan, &v, 1, 1).unwrap();
        let dx = derivative_values(&plan, &v, 1, 0).unwrap();
        for (i, y) in g.iter().enumerate() {
            for (j, x) in g.iter().enumerate() {
                assert!((dy[i * 16 + j] - 3.0 * (3.0 * y).cos()).abs() < 1e-10);
                assert!((dx[i * 16 + j] + x.sin()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn odd_derivative_zeroes_nyquist() {
        let plan = make_plan(1, 8, 2.0 * PI, FilterParams::Off).unwrap();
        // (−1)^j is the pure Nyquist mode
        let v: Vec<f64> = (0..8).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let d1 = derivative_values(&plan, &v, 1, 0).unwrap();
        assert!(d1.iter().all(|x| x.abs() < 1e-14));
        let d2 = derivative_values(&plan, &v, 2, 0).unwrap();
        assert!((d2[0] + 16.0).abs() < 1e-12);
    }

    #[test]
    fn filter_values() {
        let f = ExponentialFilter::default();
        assert!((f.gain(PI) - 1e-15).abs() < 1e-27);
        assert_eq!(f.gain(0.5 * PI), 1.0);
        assert_eq!(f.gain(f.cutoff()), 1.0);
        assert!((f.decay_constant() - (-23.628_452_516)).abs() < 1e-8);
        let mut prev = 1.0;
        for i in 1..50 {
            let k = f.cutoff() + i as f64 * (PI - f.cutoff()) / 49.0;
            let g = f.gain(k);
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn apply_filter_on_plan_modes() {
        let plan = make_plan(1, 64, 2.0 * PI, FilterParams::exponential()).unwrap();
        let mut modes = vec![Complex64::new(1.0, 0.5); plan.n_modes()];
        plan.apply_filter(&mut modes);
        // κ* = 2π j / 64: j = 16 gives 0.5π, j = 32 gives π
        assert_eq!(modes[16], Complex64::new(1.0, 0.5));
        assert!((modes[32].re - 1e-15).abs() < 1e-27);

        let orig = modes.clone();
        let mut twice = modes.clone();
        plan.apply_filter(&mut twice);
        for ((a, o), g) in twice.iter().zip(&orig).zip(plan.filter_gain()) {
            assert_eq!(*a, *o * *g);
        }
    }

    #[test]
    fn filter_off_leaves_modes() {
        let plan = make_plan(1, 16, 1.0, FilterParams::Off).unwrap();
        let mut modes = vec![Complex64::new(2.0, -1.0); plan.n_modes()];
        plan.apply_filter(&mut modes);
        assert!(modes.iter().all(|m| *m == Complex64::new(2.0, -1.0)));
        assert!(plan.filter_gain().iter().all(|&g| g == 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn roundtrip_and_linearity(seed in 0u64..10_000, half in 4usize..40, a in -3.0f64..3.0, b in -3.0f64..3.0, two_d in any::<bool>()) {
            let n = 2 * half;
            let plan = if two_d {
                SpectralPlan::new_2d(n, 16, 3.0, 5.0, FilterParams::Off).unwrap()
            } else {
                SpectralPlan::new_1d(n, 7.0, FilterParams::Off).unwrap()
            };
            let f = random_values(plan.n_points(), seed);
            let g = random_values(plan.n_points(), seed + 1);
            let back = plan.inverse(&plan.forward(&f).unwrap()).unwrap();
            prop_assert!(rel_err(&back, &f) < 1e-12);

            let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = plan.forward(&comb).unwrap();
            let ff = plan.forward(&f).unwrap();
            let fg = plan.forward(&g).unwrap();
            let scale: f64 = lhs.iter().map(|m| m.norm()).fold(1e-300, f64::max);
            for ((l, x), y) in lhs.iter().zip(&ff).zip(&fg) {
                prop_assert!((l - (x * a + y * b)).norm() / scale < 1e-12);
            }
        }

        #[test]
        fn composed_derivatives(seed in 0u64..1000, o1 in 1u32..3, o2 in 1u32..3) {
            // band-limited field: no Nyquist content
            let plan = make_plan(1, 32, 2.0 * PI, FilterParams::Off).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<(f64, f64)> = (0..8).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let x = Field::grid(&plan);
            let v: Vec<f64> = x.iter().map(|x| coeffs.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * x).cos() + b * (k as f64 * x).sin()).sum()).collect();
            let step = derivative_values(&plan, &derivative_values(&plan, &v, o1, 0).unwrap(), o2, 0).unwrap();
            let once = derivative_values(&plan, &v, o1 + o2, 0).unwrap();
            let scale = once.iter().map(|x| x.abs()).fold(1.0, f64::max);
            for (a, b) in step.iter().zip(&once) {
                prop_assert!((a - b).abs() / scale < 1e-9);
            }
        }
    }
}
