use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared in absolute terms.
pub const ABS_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest relative error over the elements of each input.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().fold(0.0, |m: f64, &e| m.max(e))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Uniform `[-1, 1)` tensors of the given shapes.
pub fn random_inputs(shapes: &[&[usize]], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|s| Tensor::from_fn(s, |_| rng.random_range(-1.0..1.0)))
        .collect()
}

/// Compares the recorded adjoints of `op` with central differences.
///
/// The output is contracted with a fixed random tensor so that every output
/// element contributes; each input element is perturbed by ±[`FD_STEP`].
pub fn check_gradients<F>(op: F, inputs: &[Tensor<f64>], tolerance: f64, seed: u64) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let evaluate = |values: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = op(&mut g, &vars)?;
        Ok(g.value(out).clone())
    };
    let out_shape = evaluate(inputs)?.shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = Tensor::from_fn(&out_shape, |_| rng.random_range(-1.0..1.0));
    let contract = |t: &Tensor<f64>| -> f64 { t.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum() };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    let p = g.constant(probe.clone());
    let weighted = g.mul(out, p)?;
    let loss = g.sum(weighted);
    let grads = g.backward(loss);

    let mut max_rel_error = Vec::with_capacity(inputs.len());
    for (i, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*var).unwrap_or(&zero);
        if analytic.shape() != inputs[i].shape() {
            return Err(Error::shape(format!("{:?}", inputs[i].shape()), format!("{:?}", analytic.shape())));
        }
        let mut worst: f64 = 0.0;
        let mut work = inputs.to_vec();
        for e in 0..inputs[i].len() {
            let x0 = inputs[i].data()[e];
            work[i].data_mut()[e] = x0 + FD_STEP;
            let up = contract(&evaluate(&work)?);
            work[i].data_mut()[e] = x0 - FD_STEP;
            let down = contract(&evaluate(&work)?);
            work[i].data_mut()[e] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[e], numeric));
        }
        max_rel_error.push(worst);
    }
    let passed = max_rel_error.iter().all(|&e| e < tolerance);
    Ok(GradReport {
        max_rel_error,
        tolerance,
        passed,
    })
}
