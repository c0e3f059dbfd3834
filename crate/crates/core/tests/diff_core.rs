use std::sync::Arc;

use pdelab::diff::{check_gradients, random_inputs, Graph, Tensor, Var};

const TOL: f64 = 1e-6;

fn assert_grad<F>(name: &str, shapes: &[&[usize]], op: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> pdelab::Result<Var>,
{
    let inputs = random_inputs(shapes, 17);
    let report = check_gradients(op, &inputs, TOL, 5).unwrap();
    assert!(report.passed, "{name}: {:?}", report.max_rel_error);
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn linear_identity_and_any_length() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = g.constant(Tensor::zeros(&[2]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let w = g.constant(t(&[2, 3], &[1.0; 6]));
    for d in [56, 500] {
        let x = g.constant(Tensor::full(&[1, d, 2], 1.0));
        let y = g.matmul(x, w).unwrap();
        assert_eq!(g.shape(y), &[1, d, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 2.0));
    }
    let bad = g.constant(Tensor::zeros(&[3, 3]));
    assert!(g.matmul(x, bad).is_err());
}

#[test]
fn linear_gradients() {
    assert_grad("linear", &[&[2, 3, 4], &[4, 5], &[5]], |g, v| g.linear(v[0], v[1], Some(v[2])));
}

#[test]
fn layer_norm_statistics_and_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::full(&[2, 4], 3.5));
    let y = g.layer_norm(c).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let x = g.constant(random_inputs(&[&[3, 7, 16]], 2).remove(0).map(|v| 5.0 * v + 2.0));
    let y = g.layer_norm(x).unwrap();
    for row in g.value(y).data().chunks_exact(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-3, "{mean} {var}");
    }
    assert_grad("layer_norm", &[&[2, 3, 6]], |g, v| g.layer_norm(v[0]));
}

#[test]
fn gelu_and_softmax() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros(&[1]));
    let y = g.gelu(z);
    assert_eq!(g.value(y).item(), 0.0);
    let one = g.constant(Tensor::full(&[1], 1.0));
    let y = g.gelu(one);
    // Φ(1) = 0.841344746068543
    assert!((g.value(y).item() - 0.841344746068543).abs() < 1e-12);

    let u = g.constant(Tensor::full(&[2, 9], 0.7));
    let s = g.softmax(u);
    assert!(g.value(s).data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    let r = g.constant(random_inputs(&[&[5, 9]], 3).remove(0).map(|v| 40.0 * v));
    let s = g.softmax(r);
    for row in g.value(s).data().chunks_exact(9) {
        assert!(row.iter().all(|&v| v > 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-7);
    }

    assert_grad("gelu", &[&[3, 5]], |g, v| Ok(g.gelu(v[0])));
    assert_grad("softmax", &[&[5, 9]], |g, v| Ok(g.softmax(v[0])));
}

#[test]
fn unfold_windows_and_adjoint_count() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[1, 4, 1], &[0.0, 1.0, 2.0, 3.0]));
    let u = g.unfold_circular(x, 3).unwrap();
    assert_eq!(g.shape(u), &[1, 4, 3, 1]);
    assert_eq!(
        g.value(u).data(),
        &[3.0, 0.0, 1.0, 0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 0.0]
    );
    let s = g.sum(u);
    let grads = g.backward(s);
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 3.0));

    assert!(g.unfold_circular(x, 2).is_err());
    assert!(g.unfold_circular(x, 5).is_err());
}

#[test]
fn unfold_shift_equivariance_and_center() {
    let base = random_inputs(&[&[1, 10, 3]], 9).remove(0);
    let shift = 3;
    let shifted = Tensor::from_fn(&[1, 10, 3], |i| {
        let (d, c) = (i / 3, i % 3);
        base.data()[((d + 10 - shift) % 10) * 3 + c]
    });
    let mut g = Graph::<f64>::new();
    let a = g.constant(base.clone());
    let b = g.constant(shifted);
    let ua = g.unfold_circular(a, 5).unwrap();
    let ub = g.unfold_circular(b, 5).unwrap();
    let (va, vb) = (g.value(ua).data(), g.value(ub).data());
    let row = 5 * 3;
    for d in 0..10 {
        let src = (d + 10 - shift) % 10;
        assert_eq!(&vb[d * row..(d + 1) * row], &va[src * row..(src + 1) * row]);
        assert_eq!(&va[d * row + 2 * 3..d * row + 3 * 3], &base.data()[d * 3..d * 3 + 3]);
    }
    assert_grad("unfold", &[&[2, 5, 3]], |g, v| g.unfold_circular(v[0], 3));
}

#[test]
fn window_ops_match_unfold() {
    let inputs = random_inputs(&[&[2, 7, 4], &[2, 7, 4], &[2, 7, 5]], 21);
    let mut g = Graph::<f64>::new();
    let q = g.constant(inputs[0].clone());
    let k = g.constant(inputs[1].clone());
    let a = g.constant(inputs[2].clone());
    let fused = g.window_dot(q, k, 5).unwrap();
    let kw = g.unfold_circular(k, 5).unwrap();
    let combined = g.window_combine(a, k).unwrap();
    let (qd, kwd) = (g.value(q).data(), g.value(kw).data());
    for p in 0..14 {
        for j in 0..5 {
            let dot: f64 = (0..4).map(|c| qd[p * 4 + c] * kwd[(p * 5 + j) * 4 + c]).sum();
            assert!((dot - g.value(fused).data()[p * 5 + j]).abs() < 1e-14);
        }
        for c in 0..4 {
            let s: f64 = (0..5).map(|j| g.value(a).data()[p * 5 + j] * kwd[(p * 5 + j) * 4 + c]).sum();
            assert!((s - g.value(combined).data()[p * 4 + c]).abs() < 1e-14);
        }
    }
    assert_grad("window_dot", &[&[2, 6, 3], &[2, 6, 3]], |g, v| g.window_dot(v[0], v[1], 3));
    assert_grad("window_combine", &[&[2, 6, 3], &[2, 6, 4]], |g, v| g.window_combine(v[0], v[1]));
}

#[test]
fn dft_modulus_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::full(&[1, 8], -1.5));
    let m = g.dft_modulus(c).unwrap();
    assert_eq!(g.shape(m), &[1, 5]);
    assert!((g.value(m).data()[0] - 12.0).abs() < 1e-12);
    assert!(g.value(m).data()[1..].iter().all(|v| v.abs() < 1e-12));

    let x = random_inputs(&[&[1, 12]], 4).remove(0);
    let s = Tensor::from_fn(&[1, 12], |i| x.data()[(i + 5) % 12]);
    let a = g.constant(x);
    let b = g.constant(s);
    let (ma, mb) = (g.dft_modulus(a).unwrap(), g.dft_modulus(b).unwrap());
    for (u, v) in g.value(ma).data().iter().zip(g.value(mb).data()) {
        assert!((u - v).abs() < 1e-12);
    }
    assert_grad("dft_modulus even", &[&[3, 8]], |g, v| g.dft_modulus(v[0]));
    assert_grad("dft_modulus odd", &[&[2, 9]], |g, v| g.dft_modulus(v[0]));
}

#[test]
fn glue_ops_gradients() {
    assert_grad("mul/sub", &[&[3, 4], &[3, 4]], |g, v| {
        let p = g.mul(v[0], v[1])?;
        g.sub(p, v[0])
    });
    assert_grad("modulate", &[&[2, 5, 3], &[2, 3], &[2, 3]], |g, v| g.modulate(v[0], v[1], v[2]));
    assert_grad("slice", &[&[2, 3, 8]], |g, v| g.slice_last(v[0], 2, 3));
    assert_grad("exp_clamp", &[&[4, 3]], |g, v| Ok(g.exp_clamp(v[0], -0.8, 0.8)));
    assert_grad("mse", &[&[2, 6], &[2, 6]], |g, v| g.mse(v[0], v[1]));
    assert_grad("mae", &[&[2, 6], &[2, 6]], |g, v| g.mae(v[0], v[1]));
    assert_grad("crps", &[&[2, 5], &[2, 5], &[2, 5]], |g, v| g.crps(&v[..2], v[2]));
    assert_grad("reshape/mean", &[&[2, 6]], |g, v| {
        let r = g.reshape(v[0], &[3, 4])?;
        let s = g.scale(r, 0.5);
        Ok(g.mean(s))
    });
}

#[test]
fn corrupted_backward_fails_gradcheck() {
    let op = |g: &mut Graph<f64>, v: &[Var]| -> pdelab::Result<Var> {
        let x = g.value(v[0]).clone();
        let y = x.map(|a| a * a);
        // True adjoint is 2x·g; report x·g instead.
        let backward = Arc::new(|inp: &[&Tensor<f64>], _: &Tensor<f64>, adj: &Tensor<f64>| {
            let d = inp[0].data().iter().zip(adj.data()).map(|(a, g)| a * g).collect();
            vec![Tensor::new(adj.shape().to_vec(), d).unwrap()]
        });
        Ok(g.custom(&v[..1], y, backward))
    };
    let inputs = random_inputs(&[&[4, 3]], 8);
    let report = check_gradients(op, &inputs, TOL, 1).unwrap();
    assert!(!report.passed);
    assert!(report.worst() > 0.4);
}

#[test]
fn replayed_backward_is_bit_identical() {
    let inputs = random_inputs(&[&[2, 6, 4], &[4, 4]], 30);
    let mut g = Graph::<f64>::new();
    let x = g.param(inputs[0].clone());
    let w = g.param(inputs[1].clone());
    let h = g.matmul(x, w).unwrap();
    let n = g.layer_norm(h).unwrap();
    let a = g.window_dot(n, h, 3).unwrap();
    let s = g.softmax(a);
    let o = g.window_combine(s, n).unwrap();
    let l = g.mean(o);
    let first = g.backward(l);
    let second = g.backward(l);
    assert_eq!(first.get(w).unwrap(), second.get(w).unwrap());
    assert_eq!(first.get(x).unwrap(), second.get(x).unwrap());
}

#[test]
fn non_finite_values_are_reported() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_f64(&[2], &[1.0, 0.0]).unwrap());
    let y = g.constant(Tensor::from_f64(&[2], &[f64::INFINITY, 1.0]).unwrap());
    assert_eq!(g.first_non_finite().map(|p| p.1), Some("leaf"));
    let _ = g.mul(x, y).unwrap();
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_f64(&[2], &[1e30, 1e30]).unwrap());
    let y = g.mul(x, x).unwrap();
    assert!(!g.value(y).is_finite());
    assert_eq!(g.first_non_finite(), Some((1, "mul")));
}
