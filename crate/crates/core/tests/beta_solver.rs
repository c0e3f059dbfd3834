use std::f64::consts::PI;

use num_complex::Complex64;
use pdelab::beta::{
    draw_forcing, eddy_mean_budget, generate_dataset, velocity_and_vorticity, BetaConfig, BetaSolver,
    ForcingSpectrum,
};
use pdelab::spectral::FilterParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn physical_energy(plan: &pdelab::spectral::SpectralPlan, modes: &[Complex64]) -> f64 {
    let (u, v, _) = velocity_and_vorticity(plan, modes);
    0.5 * u.iter().zip(&v).map(|(a, b)| a * a + b * b).sum::<f64>() / u.len() as f64
}

#[test]
fn forcing_injects_epsilon_on_average() {
    let c = BetaConfig::default();
    let plan = c.plan().unwrap();
    let spec = ForcingSpectrum::new(&c, &plan).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let background: Vec<Complex64> = draw_forcing(&c, &plan, &spec, &mut rng)
        .iter()
        .map(|x| x * c.dt)
        .collect();
    let e0 = physical_energy(&plan, &background);
    let draws = 10_000;
    let mut total = 0.0;
    for _ in 0..draws {
        let xi = draw_forcing(&c, &plan, &spec, &mut rng);
        let kicked: Vec<Complex64> = background.iter().zip(&xi).map(|(b, x)| b + x * c.dt).collect();
        total += (physical_energy(&plan, &kicked) - e0) / c.dt;
    }
    let rate = total / draws as f64;
    assert!(((rate - c.epsilon) / c.epsilon).abs() < 0.02, "rate {rate}");
}

fn grid_field(n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    (0..n * n).map(|i| f((i % n) as f64 * h, (i / n) as f64 * h)).collect()
}

#[test]
fn single_mode_decays_with_damping() {
    let c = BetaConfig {
        beta: 0.0,
        epsilon: 0.0,
        ..BetaConfig::default()
    };
    let zeta = grid_field(64, |x, y| 0.3 * (3.0 * x + 2.0 * y).cos());
    let mut s = BetaSolver::from_vorticity(c.clone(), &zeta, 0.0).unwrap();
    let e0 = s.energy();
    s.advance(1.0).unwrap();
    let decay = (-c.mu).exp();
    let z = s.vorticity();
    for (a, b) in z.iter().zip(&zeta) {
        assert!((a - b * decay).abs() < 1e-6 * 0.3);
    }
    assert!((s.energy() / e0 - decay * decay).abs() < 1e-6);
}

#[test]
fn zonal_vorticity_is_only_damped() {
    let c = BetaConfig {
        epsilon: 0.0,
        ..BetaConfig::default()
    };
    let zeta = grid_field(64, |_, y| (2.0 * y).sin() + 0.5 * (5.0 * y).cos());
    let mut s = BetaSolver::from_vorticity(c.clone(), &zeta, 0.0).unwrap();
    s.advance(2.0).unwrap();
    let decay = (-2.0 * c.mu).exp();
    for (a, b) in s.vorticity().iter().zip(&zeta) {
        assert!((a - b * decay).abs() < 1e-9);
    }
}

#[test]
fn energy_without_forcing_never_grows() {
    let mut s = BetaSolver::new(BetaConfig::default().with_seed(2)).unwrap();
    s.advance(10.0).unwrap();
    let state = s.state().clone();
    let mut free = BetaSolver::new(BetaConfig {
        epsilon: 0.0,
        ..BetaConfig::default()
    })
    .unwrap();
    free.set_state(state);
    let mut e = free.energy();
    for _ in 0..200 {
        free.step().unwrap();
        assert!(free.energy() <= e);
        e = free.energy();
    }
}

#[test]
fn mean_vorticity_and_reality_preserved() {
    let mut s = BetaSolver::new(BetaConfig::default().with_seed(5)).unwrap();
    let plan = s.plan().clone();
    let nxh = plan.mode_shape()[1];
    let ny = plan.shape()[0];
    for _ in 0..200 {
        s.step().unwrap();
        assert_eq!(s.state().zeta_modes[0], Complex64::new(0.0, 0.0));
    }
    let modes = &s.state().zeta_modes;
    let scale = modes.iter().fold(0.0, |m: f64, z| m.max(z.norm()));
    for iy in 1..ny {
        let a = modes[iy * nxh];
        let b = modes[(ny - iy) * nxh].conj();
        assert!((a - b).norm() <= 1e-12 * scale);
    }
}

#[test]
fn same_seed_same_run() {
    let run = |seed| {
        let mut s = BetaSolver::new(BetaConfig::default().with_seed(seed)).unwrap();
        s.advance_steps(50).unwrap();
        s.state().zeta_modes.clone()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn energy_settles_near_injection_over_damping() {
    let c = BetaConfig::default().with_seed(1);
    let target = c.epsilon / (2.0 * c.mu);
    let mut s = BetaSolver::new(c.clone()).unwrap();
    s.advance(3.0 / c.mu).unwrap();
    let mut total = 0.0;
    let samples = 250;
    for _ in 0..samples {
        s.advance(0.5).unwrap();
        total += s.energy();
    }
    let mean = total / samples as f64;
    assert!((mean / target - 1.0).abs() < 0.4, "mean energy {mean}, target {target}");
}

#[test]
fn budget_closes_on_jet_state() {
    let c = BetaConfig::default().with_seed(3);
    let mut s = BetaSolver::new(c.clone()).unwrap();
    s.advance(100.0).unwrap();
    // The forcing kicks make eddies rough in time; close the budget over a
    // deterministic stretch. What is left is mostly the wavenumber filter.
    let free_config = BetaConfig { epsilon: 0.0, ..c };
    let mut free = BetaSolver::new(free_config.clone()).unwrap();
    free.set_state(s.state().clone());
    let mut states = vec![free.state().clone()];
    for _ in 0..4 {
        free.step().unwrap();
        states.push(free.state().clone());
    }
    let two = eddy_mean_budget(&states[..2], &free_config, free.plan()).unwrap();
    assert!(two.relative_residual < 0.05, "{}", two.relative_residual);
    let five = eddy_mean_budget(&states, &free_config, free.plan()).unwrap();
    assert!(five.relative_residual < 0.05, "{}", five.relative_residual);
    assert!(five.reynolds_term.iter().any(|v| v.abs() > 0.0));
}

#[test]
fn budget_rejects_bad_state_counts() {
    let c = BetaConfig::default();
    let s = BetaSolver::new(c.clone()).unwrap();
    let st = s.state().clone();
    assert!(eddy_mean_budget(&[st.clone()], &c, s.plan()).is_err());
    assert!(eddy_mean_budget(&vec![st; 4], &c, s.plan()).is_err());
}

#[test]
fn short_dataset_and_restart_dump() {
    let c = BetaConfig {
        beta: 0.3,
        filter: FilterParams::exponential(),
        ..BetaConfig::default()
    };
    let t = generate_dataset(&c, 20, 1.0, 10.0).unwrap();
    assert_eq!((t.len(), t.frame_len()), (20, 64));
    assert_eq!(t.meta.parameter("beta"), Some(0.3));
    assert_eq!(t.meta.start_time, 10.0);
    assert!(generate_dataset(&c, 2, 0.05, 0.0).is_err());

    let mut s = BetaSolver::new(c.clone()).unwrap();
    s.advance(5.0).unwrap();
    let dump = s.vorticity_dump();
    assert_eq!(dump.meta.n_points, vec![64, 64]);
    let restarted = BetaSolver::from_vorticity(c, &dump.frames[0], dump.meta.start_time).unwrap();
    assert!((restarted.energy() / s.energy() - 1.0).abs() < 1e-12);
    assert_eq!(restarted.time(), s.time());
}
