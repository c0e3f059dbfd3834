use std::f64::consts::PI;

use pdelab::ks::{generate_dataset, KsConfig, KsSolver};
use pdelab::trajectory::Trajectory;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn small_sine_decays_at_linear_rate() {
    let config = KsConfig::for_length(22.0);
    let n = config.n_points;
    let m = 4;
    let k = 2.0 * PI * m as f64 / 22.0;
    let rate = k * k - k.powi(4);
    assert!(rate < 0.0);
    let eps = 1e-8;
    let u0: Vec<f64> = (0..n).map(|j| eps * (k * j as f64 * 22.0 / n as f64).sin()).collect();
    let mut s = KsSolver::from_values(config, &u0).unwrap();
    s.advance(1.0).unwrap();
    let amp = s.modes()[m].norm() * 2.0 / n as f64;
    let expected = eps * rate.exp();
    assert!(((amp - expected) / expected).abs() < 1e-6, "{amp} vs {expected}");
}

fn smooth_run(dt: f64) -> Vec<f64> {
    let l = 32.0 * PI;
    let n = 128;
    let mut c = KsConfig::for_length(l);
    c.n_points = n;
    c.dt = dt;
    c.snapshot_interval = dt;
    let u0: Vec<f64> = (0..n)
        .map(|j| {
            let x = j as f64 * l / n as f64;
            (x / 16.0).cos() * (1.0 + (x / 16.0).sin())
        })
        .collect();
    let mut s = KsSolver::from_values(c, &u0).unwrap();
    s.advance(1.0).unwrap();
    s.values()
}

#[test]
fn fourth_order_in_time() {
    let runs: Vec<Vec<f64>> = [0.25, 0.125, 0.0625].iter().map(|&h| smooth_run(h)).collect();
    let e1 = max_diff(&runs[0], &runs[1]);
    let e2 = max_diff(&runs[1], &runs[2]);
    let ratio = e1 / e2;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn long_run_bounded_and_mean_preserving() {
    let mut s = KsSolver::new(KsConfig::for_length(22.0).with_seed(1)).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let m0 = mean(&s.values());
    let mut max_abs: f64 = 0.0;
    for chunk in 0..1000 {
        s.advance_steps(100).unwrap();
        let v = s.values();
        max_abs = max_abs.max(v.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
        assert!((mean(&v) - m0).abs() < 1e-8, "mean drift at chunk {chunk}");
    }
    assert!(max_abs < 5.0, "max |u| = {max_abs}");
    assert!(max_abs > 1.0, "no chaotic growth: {max_abs}");
}

#[test]
fn dataset_shapes() {
    let pre = generate_dataset(&KsConfig::for_length(22.0).with_seed(3), 5000).unwrap();
    assert_eq!((pre.len(), pre.frame_len()), (5000, 56));
    assert_eq!(pre.meta.start_time, 500.0);
    assert_eq!(pre.meta.parameter("L"), Some(22.0));

    let fine = generate_dataset(&KsConfig::for_length(36.0).with_seed(4), 500).unwrap();
    assert_eq!((fine.len(), fine.frame_len()), (500, 90));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fine.pdet");
    fine.save(&path).unwrap();
    let back = Trajectory::load(&path).unwrap();
    assert_eq!(back, fine.quantized());
    assert_eq!(back.meta.seed, 4);
    assert_eq!(back.meta.dt, 0.025);
}
