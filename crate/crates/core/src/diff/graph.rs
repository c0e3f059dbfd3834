use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-supplied op: `(inputs, output, output adjoint)`
/// to one adjoint per input.
pub type CustomBackward<T> = Arc<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync>;

enum Op<T> {
    Leaf,
    MatMul { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Modulate { x: Var, gamma: Var, delta: Var },
    SliceLast { x: Var, start: usize },
    LayerNorm { x: Var, inv_std: Vec<T> },
    Gelu(Var),
    Softmax(Var),
    UnfoldCircular { x: Var, window: usize },
    WindowDot { q: Var, k: Var, window: usize },
    WindowCombine { a: Var, v: Var, window: usize },
    ExpClamp { x: Var, lo: T, hi: T },
    DftModulus { x: Var, spectrum: Vec<Complex64> },
    Reshape(Var),
    Mse { pred: Var, truth: Var },
    Mae { a: Var, b: Var },
    Crps { members: Vec<Var>, truth: Var },
    Mean(Var),
    Sum(Var),
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Modulate { .. } => "modulate",
            Op::SliceLast { .. } => "slice_last",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Softmax(..) => "softmax",
            Op::UnfoldCircular { .. } => "unfold_circular",
            Op::WindowDot { .. } => "window_dot",
            Op::WindowCombine { .. } => "window_combine",
            Op::ExpClamp { .. } => "exp_clamp",
            Op::DftModulus { .. } => "dft_modulus",
            Op::Reshape(..) => "reshape",
            Op::Mse { .. } => "mse",
            Op::Mae { .. } => "mae",
            Op::Crps { .. } => "crps",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::Custom { .. } => "custom",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded forward computation; [`Graph::backward`] replays it in reverse.
///
/// The graph is not consumed by `backward`, so the same recording can be
/// differentiated repeatedly.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of every node reached from the differentiated output.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn window_source(d: usize, j: usize, half: usize, n: usize) -> usize {
    (d + n + j - half) % n
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * FRAC_1_SQRT_2))
}

fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

type Plans = (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>);

thread_local! {
    static FFT_PLANS: RefCell<HashMap<usize, Plans>> = RefCell::new(HashMap::new());
}

fn plans(n: usize) -> Plans {
    FFT_PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut planner = RealFftPlanner::<f64>::new();
                (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
            })
            .clone()
    })
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First recorded node whose value contains NaN or ±∞, with its op name.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((self.nodes.len(), "leaf"));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `x·w` along the last axis of `x`; `w` is `[c_in, c_out]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.last_dim() != wv.shape()[0] || xv.shape().is_empty() {
            return Err(Error::shape(
                format!("[.., {}] · [{}, _]", xv.last_dim(), xv.last_dim()),
                format!("{:?} · {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (rows, cin, cout) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        let mut out = vec![T::zero(); rows * cout];
        T::gemm(rows, cin, cout, xv.data(), (cin, 1), wv.data(), (cout, 1), T::zero(), &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { x, w }, &[x, w]))
    }

    /// `x + b` with `b` broadcast over all leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.last_dim() {
            return Err(Error::shape(xv.last_dim(), bv.len()));
        }
        let c = bv.len();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            row.iter_mut().zip(bv.data()).for_each(|(o, &b)| *o = *o + b);
        }
        Ok(self.push(out, Op::AddBias { x, b }, &[x, b]))
    }

    /// `x·w + b` (bias optional).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    /// `x[b, d, c]·γ[b, c] + δ[b, c]`: per-sample, per-channel scale and shift.
    pub fn modulate(&mut self, x: Var, gamma: Var, delta: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || self.shape(gamma) != [s[0], s[2]] || self.shape(delta) != [s[0], s[2]] {
            return Err(Error::shape(
                format!("x [B, D, C] with γ, δ [B, C]; x is {s:?}"),
                format!("{:?}, {:?}", self.shape(gamma), self.shape(delta)),
            ));
        }
        let (nb, nd, nc) = (s[0], s[1], s[2]);
        let (g, dl) = (self.value(gamma).data(), self.value(delta).data());
        let mut out = xv.clone();
        let o = out.data_mut();
        for b in 0..nb {
            for d in 0..nd {
                let base = (b * nd + d) * nc;
                for c in 0..nc {
                    o[base + c] = o[base + c] * g[b * nc + c] + dl[b * nc + c];
                }
            }
        }
        Ok(self.push(out, Op::Modulate { x, gamma, delta }, &[x, gamma, delta]))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if start + len > c {
            return Err(Error::shape(format!("slice {start}..{} within {c}", start + len), c));
        }
        let data: Vec<T> = xv
            .data()
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::SliceLast { x, start }, &[x]))
    }

    /// Affine-free normalization over the last axis, `η = 1e-5` inside the root.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if c < 2 {
            return Err(Error::shape("at least 2 channels", c));
        }
        let n = T::of(c as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for row in out.data_mut().chunks_exact_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        Ok(self.push(out, Op::LayerNorm { x, inv_std }, &[x]))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| {
            let f = v.f64();
            T::of(f * phi(f))
        });
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis (max-shifted).
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s = T::zero();
            row.iter_mut().for_each(|v| {
                *v = (*v - m).exp();
                s = s + *v;
            });
            row.iter_mut().for_each(|v| *v = *v / s);
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    fn check_window(&self, x: Var, window: usize) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::shape("[B, D, C]", format!("{s:?}")));
        }
        if window % 2 == 0 || window > s[1] || window == 0 {
            return Err(Error::Config(format!(
                "window {window} must be odd and at most the spatial extent {}",
                s[1]
            )));
        }
        Ok((s[0], s[1], s[2]))
    }

    /// Circular windows along `D`: `[B, D, C] → [B, D, K, C]` with
    /// `out[b, d, j, c] = x[b, (d + j − (K−1)/2) mod D, c]`.
    pub fn unfold_circular(&mut self, x: Var, window: usize) -> Result<Var> {
        let (nb, nd, nc) = self.check_window(x, window)?;
        let half = (window - 1) / 2;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(nb * nd * window * nc);
        for b in 0..nb {
            for d in 0..nd {
                for j in 0..window {
                    let base = (b * nd + window_source(d, j, half, nd)) * nc;
                    out.extend_from_slice(&xv[base..base + nc]);
                }
            }
        }
        let value = Tensor::new(vec![nb, nd, window, nc], out)?;
        Ok(self.push(value, Op::UnfoldCircular { x, window }, &[x]))
    }

    /// Windowed dot products `out[b, d, j] = Σ_c q[b, d, c]·k[b, src(d, j), c]`
    /// (the logits of local attention without materializing the unfold).
    pub fn window_dot(&mut self, q: Var, k: Var, window: usize) -> Result<Var> {
        self.same_shape(q, k)?;
        let (nb, nd, nc) = self.check_window(q, window)?;
        let half = (window - 1) / 2;
        let (qv, kv) = (self.value(q).data(), self.value(k).data());
        let mut out = vec![T::zero(); nb * nd * window];
        for b in 0..nb {
            for d in 0..nd {
                let qrow = &qv[(b * nd + d) * nc..][..nc];
                for j in 0..window {
                    let krow = &kv[(b * nd + window_source(d, j, half, nd)) * nc..][..nc];
                    out[(b * nd + d) * window + j] = qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum();
                }
            }
        }
        let value = Tensor::new(vec![nb, nd, window], out)?;
        Ok(self.push(value, Op::WindowDot { q, k, window }, &[q, k]))
    }

    /// Window-weighted sums `out[b, d, c] = Σ_j a[b, d, j]·v[b, src(d, j), c]`.
    pub fn window_combine(&mut self, a: Var, v: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let (nb, nd, nc) = {
            let s = self.shape(v);
            if s.len() != 3 || sa.len() != 3 || sa[0] != s[0] || sa[1] != s[1] {
                return Err(Error::shape(
                    format!("weights [B, D, K] matching values [B, D, C] = {s:?}"),
                    format!("{sa:?}"),
                ));
            }
            (s[0], s[1], s[2])
        };
        let window = sa[2];
        self.check_window(v, window)?;
        let half = (window - 1) / 2;
        let (av, vv) = (self.value(a).data(), self.value(v).data());
        let mut out = vec![T::zero(); nb * nd * nc];
        for b in 0..nb {
            for d in 0..nd {
                let orow = &mut out[(b * nd + d) * nc..][..nc];
                for j in 0..window {
                    let w = av[(b * nd + d) * window + j];
                    let vrow = &vv[(b * nd + window_source(d, j, half, nd)) * nc..][..nc];
                    orow.iter_mut().zip(vrow).for_each(|(o, &x)| *o = *o + w * x);
                }
            }
        }
        let value = Tensor::new(vec![nb, nd, nc], out)?;
        Ok(self.push(value, Op::WindowCombine { a, v, window }, &[a, v]))
    }

    /// `exp(clamp(x, lo, hi))`; zero gradient where the clamp is active.
    pub fn exp_clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let value = self.value(x).map(|v| v.max(lo).min(hi).exp());
        self.push(value, Op::ExpClamp { x, lo, hi }, &[x])
    }

    /// Modulus of the real DFT along the last axis: `[.., D] → [.., D/2+1]`.
    pub fn dft_modulus(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if n == 0 || xv.shape().is_empty() {
            return Err(Error::shape("[.., D] with D > 0", format!("{:?}", xv.shape())));
        }
        let (fwd, _) = plans(n);
        let nh = n / 2 + 1;
        let mut spectrum = Vec::with_capacity(xv.rows() * nh);
        let mut out = Vec::with_capacity(xv.rows() * nh);
        let mut buf = vec![0.0; n];
        let mut modes = vec![Complex64::new(0.0, 0.0); nh];
        for row in xv.data().chunks_exact(n) {
            buf.iter_mut().zip(row).for_each(|(b, v)| *b = v.f64());
            fwd.process(&mut buf, &mut modes).expect("plan length");
            out.extend(modes.iter().map(|m| T::of(m.norm())));
            spectrum.extend_from_slice(&modes);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = nh;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::DftModulus { x, spectrum }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, pred: Var, truth: Var) -> Result<Var> {
        self.same_shape(pred, truth)?;
        let (p, t) = (self.value(pred), self.value(truth));
        let n = T::of(p.len() as f64);
        let s = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse { pred, truth }, &[pred, truth]))
    }

    /// Mean of absolute differences.
    pub fn mae(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = T::of(av.len() as f64);
        let s = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y).abs()).sum::<T>() / n;
        Ok(self.push(Tensor::scalar(s), Op::Mae { a, b }, &[a, b]))
    }

    /// Ensemble CRPS per point, averaged over all points:
    /// `(1/m)Σ_i|t − x_i| − (1/2m²)Σ_iΣ_j|x_i − x_j|`.
    pub fn crps(&mut self, members: &[Var], truth: Var) -> Result<Var> {
        if members.is_empty() {
            return Err(Error::Config("CRPS needs at least one ensemble member".into()));
        }
        for &m in members {
            self.same_shape(m, truth)?;
        }
        let t = self.value(truth).data();
        let xs: Vec<&[T]> = members.iter().map(|&m| self.value(m).data()).collect();
        let m = T::of(members.len() as f64);
        let mut total = T::zero();
        for p in 0..t.len() {
            let mut skill = T::zero();
            let mut spread = T::zero();
            for (i, xi) in xs.iter().enumerate() {
                skill = skill + (t[p] - xi[p]).abs();
                for xj in &xs[i + 1..] {
                    spread = spread + (xi[p] - xj[p]).abs();
                }
            }
            // Each unordered pair appears twice in the double sum.
            total = total + skill / m - spread / (m * m);
        }
        let value = Tensor::scalar(total / T::of(t.len() as f64));
        let mut inputs = members.to_vec();
        inputs.push(truth);
        Ok(self.push(
            value,
            Op::Crps {
                members: members.to_vec(),
                truth,
            },
            &inputs,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>() / T::of(xv.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Records an externally computed value with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            inputs,
        )
    }

    /// Reverse sweep from `output`, seeded with ones.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), T::one()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, adj) in self.adjoints(node, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&adj),
                    slot @ None => *slot = Some(adj),
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn adjoints(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let y = &node.value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, cin, cout) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); rows * cin];
                    T::gemm(rows, cout, cin, g.data(), (cout, 1), wv.data(), (1, cout), T::zero(), &mut dx);
                    out.push((*x, Tensor::new(xv.shape().to_vec(), dx).unwrap()));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); cin * cout];
                    T::gemm(cin, rows, cout, xv.data(), (1, cin), g.data(), (cout, 1), T::zero(), &mut dw);
                    out.push((*w, Tensor::new(wv.shape().to_vec(), dw).unwrap()));
                }
            }
            Op::AddBias { x, b } => {
                out.push((*x, g.clone()));
                if self.wants(*b) {
                    let bv = self.value(*b);
                    let c = bv.len();
                    let mut db = vec![T::zero(); c];
                    for row in g.data().chunks_exact(c) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    out.push((*b, Tensor::new(bv.shape().to_vec(), db).unwrap()));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let prod = |u: &Tensor<T>| {
                    let d = g.data().iter().zip(u.data()).map(|(&x, &y)| x * y).collect();
                    Tensor::new(g.shape().to_vec(), d).unwrap()
                };
                if self.wants(*a) {
                    out.push((*a, prod(bv)));
                }
                if self.wants(*b) {
                    out.push((*b, prod(av)));
                }
            }
            Op::Scale(x, s) => out.push((*x, g.map(|v| v * *s))),
            Op::Modulate { x, gamma, delta } => {
                let xv = self.value(*x);
                let s = xv.shape();
                let (nb, nd, nc) = (s[0], s[1], s[2]);
                let gm = self.value(*gamma).data();
                let mut dx = g.clone();
                let mut dg = vec![T::zero(); nb * nc];
                let mut dd = vec![T::zero(); nb * nc];
                let (gd, xd) = (g.data(), xv.data());
                for b in 0..nb {
                    for d in 0..nd {
                        let base = (b * nd + d) * nc;
                        for c in 0..nc {
                            dx.data_mut()[base + c] = gd[base + c] * gm[b * nc + c];
                            dg[b * nc + c] = dg[b * nc + c] + gd[base + c] * xd[base + c];
                            dd[b * nc + c] = dd[b * nc + c] + gd[base + c];
                        }
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, Tensor::new(vec![nb, nc], dg).unwrap()));
                out.push((*delta, Tensor::new(vec![nb, nc], dd).unwrap()));
            }
            Op::SliceLast { x, start } => {
                let xv = self.value(*x);
                let (c, len) = (xv.last_dim(), g.last_dim());
                let mut dx = Tensor::zeros(xv.shape());
                for (row, grow) in dx.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(len)) {
                    row[*start..*start + len].copy_from_slice(grow);
                }
                out.push((*x, dx));
            }
            Op::LayerNorm { x, inv_std } => {
                let c = y.last_dim();
                let n = T::of(c as f64);
                let mut dx = g.clone();
                for ((drow, yrow), &inv) in dx
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(y.data().chunks_exact(c))
                    .zip(inv_std)
                {
                    let mg = drow.iter().copied().sum::<T>() / n;
                    let mgy = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>() / n;
                    drow.iter_mut()
                        .zip(yrow)
                        .for_each(|(d, &yv)| *d = inv * (*d - mg - yv * mgy));
                }
                out.push((*x, dx));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &v)| {
                        let f = v.f64();
                        gv * T::of(phi(f) + f * density(f))
                    })
                    .collect();
                out.push((*x, Tensor::new(g.shape().to_vec(), d).unwrap()));
            }
            Op::Softmax(x) => {
                let c = y.last_dim();
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_exact_mut(c).zip(y.data().chunks_exact(c)) {
                    let dot = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>();
                    drow.iter_mut().zip(yrow).for_each(|(d, &yv)| *d = yv * (*d - dot));
                }
                out.push((*x, dx));
            }
            Op::UnfoldCircular { x, window } => {
                let xv = self.value(*x);
                let s = xv.shape();
                let (nb, nd, nc) = (s[0], s[1], s[2]);
                let half = (window - 1) / 2;
                let mut dx = Tensor::zeros(s);
                let gd = g.data();
                let dd = dx.data_mut();
                for b in 0..nb {
                    for d in 0..nd {
                        for j in 0..*window {
                            let src = (b * nd + window_source(d, j, half, nd)) * nc;
                            let from = ((b * nd + d) * window + j) * nc;
                            for c in 0..nc {
                                dd[src + c] = dd[src + c] + gd[from + c];
                            }
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::WindowDot { q, k, window } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let s = qv.shape();
                let (nb, nd, nc) = (s[0], s[1], s[2]);
                let half = (window - 1) / 2;
                let mut dq = Tensor::zeros(s);
                let mut dk = Tensor::zeros(s);
                let (qd, kd, gd) = (qv.data(), kv.data(), g.data());
                for b in 0..nb {
                    for d in 0..nd {
                        let row = (b * nd + d) * nc;
                        for j in 0..*window {
                            let src = (b * nd + window_source(d, j, half, nd)) * nc;
                            let gv = gd[(b * nd + d) * window + j];
                            let dqd = dq.data_mut();
                            for c in 0..nc {
                                dqd[row + c] = dqd[row + c] + gv * kd[src + c];
                            }
                            let dkd = dk.data_mut();
                            for c in 0..nc {
                                dkd[src + c] = dkd[src + c] + gv * qd[row + c];
                            }
                        }
                    }
                }
                out.push((*q, dq));
                out.push((*k, dk));
            }
            Op::WindowCombine { a, v, window } => {
                let (av, vv) = (self.value(*a), self.value(*v));
                let s = vv.shape();
                let (nb, nd, nc) = (s[0], s[1], s[2]);
                let half = (window - 1) / 2;
                let mut da = Tensor::zeros(av.shape());
                let mut dv = Tensor::zeros(s);
                let (ad, vd, gd) = (av.data(), vv.data(), g.data());
                for b in 0..nb {
                    for d in 0..nd {
                        let row = (b * nd + d) * nc;
                        for j in 0..*window {
                            let src = (b * nd + window_source(d, j, half, nd)) * nc;
                            let wi = (b * nd + d) * window + j;
                            let mut acc = T::zero();
                            for c in 0..nc {
                                acc = acc + gd[row + c] * vd[src + c];
                            }
                            da.data_mut()[wi] = acc;
                            let w = ad[wi];
                            let dvd = dv.data_mut();
                            for c in 0..nc {
                                dvd[src + c] = dvd[src + c] + w * gd[row + c];
                            }
                        }
                    }
                }
                out.push((*a, da));
                out.push((*v, dv));
            }
            Op::ExpClamp { x, lo, hi } => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .zip(y.data())
                    .map(|((&gv, &v), &e)| if v > *lo && v < *hi { gv * e } else { T::zero() })
                    .collect();
                out.push((*x, Tensor::new(g.shape().to_vec(), d).unwrap()));
            }
            Op::DftModulus { x, spectrum } => {
                let xv = self.value(*x);
                let n = xv.last_dim();
                let nh = n / 2 + 1;
                let (_, inv) = plans(n);
                let mut dx = Vec::with_capacity(xv.len());
                let mut half = vec![Complex64::new(0.0, 0.0); nh];
                let mut row_out = vec![0.0; n];
                for (grow, srow) in g.data().chunks_exact(nh).zip(spectrum.chunks_exact(nh)) {
                    // Adjoint of |X_k| is Re(X_k e^{iθkn})/|X_k|, summed over the
                    // stored half spectrum; the c2r transform doubles interior modes.
                    for k in 0..nh {
                        let m = srow[k].norm();
                        let w = if m > 0.0 {
                            srow[k] * (grow[k].f64() / m)
                        } else {
                            Complex64::new(0.0, 0.0)
                        };
                        let edge = k == 0 || (n % 2 == 0 && k == nh - 1);
                        half[k] = if edge { Complex64::new(w.re, 0.0) } else { w * 0.5 };
                    }
                    inv.process(&mut half, &mut row_out).expect("plan length");
                    dx.extend(row_out.iter().map(|&v| T::of(v)));
                }
                out.push((*x, Tensor::new(xv.shape().to_vec(), dx).unwrap()));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                out.push((*x, g.clone().reshape(&shape).unwrap()));
            }
            Op::Mse { pred, truth } => {
                let (p, t) = (self.value(*pred), self.value(*truth));
                let scale = g.item() * T::of(2.0 / p.len() as f64);
                let d: Vec<T> = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * scale).collect();
                let dp = Tensor::new(p.shape().to_vec(), d).unwrap();
                out.push((*truth, dp.map(|v| -v)));
                out.push((*pred, dp));
            }
            Op::Mae { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = g.item() / T::of(av.len() as f64);
                let d: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| sign(x - y) * scale)
                    .collect();
                let da = Tensor::new(av.shape().to_vec(), d).unwrap();
                out.push((*b, da.map(|v| -v)));
                out.push((*a, da));
            }
            Op::Crps { members, truth } => {
                let t = self.value(*truth);
                let xs: Vec<&[T]> = members.iter().map(|&m| self.value(m).data()).collect();
                let m = T::of(members.len() as f64);
                let scale = g.item() / T::of(t.len() as f64);
                let mut dt = vec![T::zero(); t.len()];
                let mut dxs: Vec<Vec<T>> = vec![vec![T::zero(); t.len()]; members.len()];
                for p in 0..t.len() {
                    for (i, xi) in xs.iter().enumerate() {
                        let s = sign(t.data()[p] - xi[p]);
                        dt[p] = dt[p] + s / m;
                        let mut pair = T::zero();
                        for xj in &xs {
                            pair = pair + sign(xi[p] - xj[p]);
                        }
                        dxs[i][p] = -s / m - pair / (m * m);
                    }
                }
                for (mv, d) in members.iter().zip(dxs) {
                    let d = d.into_iter().map(|v| v * scale).collect();
                    out.push((*mv, Tensor::new(t.shape().to_vec(), d).unwrap()));
                }
                let dt = dt.into_iter().map(|v| v * scale).collect();
                out.push((*truth, Tensor::new(t.shape().to_vec(), dt).unwrap()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                out.push((*x, Tensor::full(xv.shape(), g.item() / T::of(xv.len() as f64))));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(self.shape(*x), g.item()))),
            Op::Custom { inputs, backward } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                for (v, adj) in inputs.iter().zip(backward(&vals, y, g)) {
                    out.push((*v, adj));
                }
            }
        }
        out
    }
}
