//! Parameter-conditioned local-attention transformer.
//!
//! `history [B, D, S] → encoder → (sampler) → N blocks → decoder → [B, D]`.
//! No parameter extent depends on `D`, so one set of weights runs on any
//! grid with `D ≥ K`. Each block is
//!
//! ```text
//! z → z + LA(γ₁·LN(z) + δ₁)
//! z → z + MLP(γ₂·LN(z) + δ₂)
//! ```
//!
//! with `(γ₁, δ₁, γ₂, δ₂) = β·W_β + b_β`. During pre-training the
//! conditioning map is left out of the graph and `γ = 1`, `δ = 0`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

pub const NPEC_MAGIC: &[u8; 5] = b"NPEC1";
pub const NPEC_VERSION: u16 = 1;
pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Deterministic,
    Probabilistic,
}

/// Whether the conditioning map takes part in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// `γ = 1`, `δ = 0`; `W_β` is not on the graph.
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub channels: usize,
    pub window: usize,
    pub history: usize,
    pub cond_dim: usize,
    pub mlp_hidden: usize,
    pub heads: usize,
    pub mode: Mode,
    /// Extra per-channel gates on both residual branches.
    #[serde(default)]
    pub gated: bool,
    pub equation: String,
}

impl ModelConfig {
    pub fn new(n_blocks: usize, channels: usize, window: usize, history: usize, mode: Mode) -> Self {
        Self {
            n_blocks,
            channels,
            window,
            history,
            cond_dim: 1,
            mlp_hidden: 4 * channels,
            heads: 1,
            mode,
            gated: false,
            equation: String::new(),
        }
    }

    /// `N = 8`, `C = 64`, `K = 9`, `S = 2`, deterministic.
    pub fn ks() -> Self {
        Self {
            equation: "ks".into(),
            ..Self::new(8, 64, 9, 2, Mode::Deterministic)
        }
    }

    /// `N = 16`, `C = 64`, `K = 17`, `S = 2`, probabilistic.
    pub fn beta_plane() -> Self {
        Self {
            equation: "beta_zonal_mean".into(),
            ..Self::new(16, 64, 17, 2, Mode::Probabilistic)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::Config(format!("window K = {} must be odd", self.window)));
        }
        if self.channels < 2 || self.history == 0 || self.n_blocks == 0 || self.cond_dim == 0 {
            return Err(Error::Config(format!(
                "need C ≥ 2, S ≥ 1, N ≥ 1, M ≥ 1 (got C = {}, S = {}, N = {}, M = {})",
                self.channels, self.history, self.n_blocks, self.cond_dim
            )));
        }
        if self.heads != 1 {
            return Err(Error::Config("only a single attention head is supported".into()));
        }
        Ok(())
    }

    /// Outputs of the conditioning map per block: 4C, or 6C when gated.
    pub fn film_width(&self) -> usize {
        if self.gated {
            6 * self.channels
        } else {
            4 * self.channels
        }
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (s, c, k, m, h) = (self.history, self.channels, self.window, self.cond_dim, self.mlp_hidden);
        let f = self.film_width();
        let per_block = 4 * c * c + k + m * f + f + 2 * c * h;
        let sampler = if self.mode == Mode::Probabilistic { 2 * c * c } else { 0 };
        s * c + self.n_blocks * per_block + c + sampler
    }
}

/// Scalar standardization applied to fields before encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl Normalization {
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a Vec<f64>>) -> Self {
        let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
        for f in frames {
            for &v in f {
                n += 1;
                s += v;
                s2 += v * v;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = s / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0);
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub pe: Tensor<T>,
    pub w_beta: Tensor<T>,
    pub b_beta: Tensor<T>,
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub normalization: Normalization,
    pub encoder: Tensor<T>,
    /// `(W_μ, W_logσ)`, probabilistic mode only.
    pub sampler: Option<(Tensor<T>, Tensor<T>)>,
    pub blocks: Vec<BlockParams<T>>,
    pub decoder: Tensor<T>,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let a = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-a..a)))
}

/// Bias of the conditioning map giving `γ = 1`, `δ = 0` (and gates `φ = 1`).
fn film_bias<T: Real>(config: &ModelConfig) -> Tensor<T> {
    let c = config.channels;
    let pattern: &[f64] = if config.gated {
        &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]
    } else {
        &[1.0, 0.0, 1.0, 0.0]
    };
    Tensor::from_fn(&[config.film_width()], |i| T::of(pattern[i / c]))
}

impl<T: Real> ModelParams<T> {
    /// Uniform `±√(1/fan_in)` projections, zero positional bias, zero
    /// conditioning weights with the identity bias.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, c, h, k, m) = (config.history, config.channels, config.mlp_hidden, config.window, config.cond_dim);
        let encoder = uniform(&mut rng, &[s, c], s);
        let sampler = match config.mode {
            Mode::Probabilistic => Some((uniform(&mut rng, &[c, c], c), uniform(&mut rng, &[c, c], c))),
            Mode::Deterministic => None,
        };
        let blocks = (0..config.n_blocks)
            .map(|_| BlockParams {
                wq: uniform(&mut rng, &[c, c], c),
                wk: uniform(&mut rng, &[c, c], c),
                wv: uniform(&mut rng, &[c, c], c),
                wo: uniform(&mut rng, &[c, c], c),
                pe: Tensor::zeros(&[k]),
                w_beta: Tensor::zeros(&[m, config.film_width()]),
                b_beta: film_bias(&config),
                w1: uniform(&mut rng, &[c, h], c),
                w2: uniform(&mut rng, &[h, c], h),
            })
            .collect();
        let decoder = uniform(&mut rng, &[c, 1], c);
        Ok(Self {
            config,
            normalization: Normalization::default(),
            encoder,
            sampler,
            blocks,
            decoder,
        })
    }

    /// Every tensor with its checkpoint name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("encoder.weight".to_string(), &self.encoder)];
        if let Some((mu, ls)) = &self.sampler {
            out.push(("sampler.mu".into(), mu));
            out.push(("sampler.log_sigma".into(), ls));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, t) in [
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("wo", &b.wo),
                ("pe", &b.pe),
                ("w_beta", &b.w_beta),
                ("b_beta", &b.b_beta),
                ("mlp1", &b.w1),
                ("mlp2", &b.w2),
            ] {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("decoder.weight".into(), &self.decoder));
        out
    }

    /// Mutable counterpart of [`named`](Self::named), same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![("encoder.weight".to_string(), &mut self.encoder)];
        if let Some((mu, ls)) = &mut self.sampler {
            out.push(("sampler.mu".into(), mu));
            out.push(("sampler.log_sigma".into(), ls));
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (n, t) in [
                ("wq", &mut b.wq),
                ("wk", &mut b.wk),
                ("wv", &mut b.wv),
                ("wo", &mut b.wo),
                ("pe", &mut b.pe),
                ("w_beta", &mut b.w_beta),
                ("b_beta", &mut b.b_beta),
                ("mlp1", &mut b.w1),
                ("mlp2", &mut b.w2),
            ] {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("decoder.weight".into(), &mut self.decoder));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            normalization: self.normalization,
            encoder: self.encoder.cast(),
            sampler: self.sampler.as_ref().map(|(a, b)| (a.cast(), b.cast())),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    wq: b.wq.cast(),
                    wk: b.wk.cast(),
                    wv: b.wv.cast(),
                    wo: b.wo.cast(),
                    pe: b.pe.cast(),
                    w_beta: b.w_beta.cast(),
                    b_beta: b.b_beta.cast(),
                    w1: b.w1.cast(),
                    w2: b.w2.cast(),
                })
                .collect(),
            decoder: self.decoder.cast(),
        }
    }

    /// Names of the conditioning-map tensors (frozen during pre-training).
    pub fn is_conditioning(name: &str) -> bool {
        name.ends_with(".w_beta") || name.ends_with(".b_beta")
    }

    /// Tensors that take part in `phase`, in binding order. The
    /// conditioning map is absent in pre-training.
    pub fn trainable(&self, phase: Phase) -> Vec<(String, &Tensor<T>)> {
        self.named()
            .into_iter()
            .filter(|(n, _)| phase == Phase::Finetune || !Self::is_conditioning(n))
            .collect()
    }

    /// Records every tensor of `phase` on `g` as a parameter.
    pub fn register(&self, g: &mut Graph<T>, phase: Phase) -> ParamVars {
        let vars: Vec<Var> = self
            .trainable(phase)
            .into_iter()
            .map(|(_, t)| g.param(t.clone()))
            .collect();
        self.bind(phase, &vars).expect("binding order matches")
    }

    /// Wraps already-recorded handles, given in [`trainable`](Self::trainable) order.
    pub fn bind(&self, phase: Phase, vars: &[Var]) -> Result<ParamVars> {
        let names: Vec<(String, Var)> = self
            .trainable(phase)
            .into_iter()
            .map(|(n, _)| n)
            .zip(vars.iter().copied())
            .collect();
        if names.len() != vars.len() || vars.len() != self.trainable(phase).len() {
            return Err(Error::shape(self.trainable(phase).len(), vars.len()));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().unwrap();
        let encoder = next();
        let sampler = self.sampler.as_ref().map(|_| (next(), next()));
        let blocks = (0..self.blocks.len())
            .map(|_| {
                let (wq, wk, wv, wo, pe) = (next(), next(), next(), next(), next());
                let film = match phase {
                    Phase::Finetune => Some((next(), next())),
                    Phase::Pretrain => None,
                };
                BlockVars {
                    wq,
                    wk,
                    wv,
                    wo,
                    pe,
                    film,
                    w1: next(),
                    w2: next(),
                }
            })
            .collect();
        let decoder = next();
        Ok(ParamVars {
            encoder,
            sampler,
            blocks,
            decoder,
            names,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub pe: Var,
    pub film: Option<(Var, Var)>,
    pub w1: Var,
    pub w2: Var,
}

/// Graph handles of a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub encoder: Var,
    pub sampler: Option<(Var, Var)>,
    pub blocks: Vec<BlockVars>,
    pub decoder: Var,
    /// `(checkpoint name, handle)` of every registered tensor.
    pub names: Vec<(String, Var)>,
}

/// Scale and shift (and gates) for one block, each `[B, C]`.
pub struct Film {
    pub gamma1: Var,
    pub delta1: Var,
    pub gamma2: Var,
    pub delta2: Var,
    pub gates: Option<(Var, Var)>,
}

/// `history [B, D, S] → z [B, D, C]`.
pub fn encode<T: Real>(g: &mut Graph<T>, vars: &ParamVars, history: Var) -> Result<Var> {
    g.matmul(history, vars.encoder)
}

/// `μ(z) + σ(z)⊙ε` with `σ = exp(clamp(z·W_logσ, −10, 5))`.
pub fn sample_latent<T: Real>(g: &mut Graph<T>, vars: &ParamVars, z: Var, noise: Var) -> Result<Var> {
    let (wmu, wls) = vars
        .sampler
        .ok_or_else(|| Error::Config("sampling layer requires probabilistic mode".into()))?;
    let mu = g.matmul(z, wmu)?;
    let ls = g.matmul(z, wls)?;
    let sigma = g.exp_clamp(ls, T::of(LOG_SIGMA_MIN), T::of(LOG_SIGMA_MAX));
    let kick = g.mul(sigma, noise)?;
    g.add(mu, kick)
}

/// Single-head attention over circular windows of size `K` with a learned
/// bias per window offset added to the logits.
pub fn local_attention<T: Real>(g: &mut Graph<T>, block: &BlockVars, z: Var) -> Result<Var> {
    let c = *g.shape(z).last().unwrap();
    let window = g.value(block.pe).len();
    let q = g.matmul(z, block.wq)?;
    let k = g.matmul(z, block.wk)?;
    let v = g.matmul(z, block.wv)?;
    let dots = g.window_dot(q, k, window)?;
    let scaled = g.scale(dots, T::of(1.0 / (c as f64).sqrt()));
    let logits = g.add_bias(scaled, block.pe)?;
    let weights = g.softmax(logits);
    let mixed = g.window_combine(weights, v)?;
    g.matmul(mixed, block.wo)
}

/// Conditioning map outputs for one block, or `None` in pre-training.
pub fn film<T: Real>(g: &mut Graph<T>, config: &ModelConfig, block: &BlockVars, cond: Var) -> Result<Option<Film>> {
    let Some((w, b)) = block.film else { return Ok(None) };
    let c = config.channels;
    let all = g.linear(cond, w, Some(b))?;
    let mut part = |i: usize| g.slice_last(all, i * c, c);
    Ok(Some(if config.gated {
        Film {
            gamma1: part(0)?,
            delta1: part(1)?,
            gates: Some((part(2)?, part(5)?)),
            gamma2: part(3)?,
            delta2: part(4)?,
        }
    } else {
        Film {
            gamma1: part(0)?,
            delta1: part(1)?,
            gamma2: part(2)?,
            delta2: part(3)?,
            gates: None,
        }
    }))
}

fn gate<T: Real>(g: &mut Graph<T>, x: Var, phi: Option<Var>) -> Result<Var> {
    match phi {
        None => Ok(x),
        Some(phi) => {
            let zero = g.constant(Tensor::zeros(g.shape(phi)));
            g.modulate(x, phi, zero)
        }
    }
}

/// Two pre-norm residual branches, attention then MLP.
pub fn transformer_block<T: Real>(g: &mut Graph<T>, block: &BlockVars, z: Var, film: Option<&Film>) -> Result<Var> {
    let n1 = g.layer_norm(z)?;
    let m1 = match film {
        Some(f) => g.modulate(n1, f.gamma1, f.delta1)?,
        None => n1,
    };
    let att = local_attention(g, block, m1)?;
    let att = gate(g, att, film.and_then(|f| f.gates.map(|p| p.0)))?;
    let z = g.add(z, att)?;

    let n2 = g.layer_norm(z)?;
    let m2 = match film {
        Some(f) => g.modulate(n2, f.gamma2, f.delta2)?,
        None => n2,
    };
    let h = g.matmul(m2, block.w1)?;
    let h = g.gelu(h);
    let mlp = g.matmul(h, block.w2)?;
    let mlp = gate(g, mlp, film.and_then(|f| f.gates.map(|p| p.1)))?;
    g.add(z, mlp)
}

/// Full forward pass on standardized data.
///
/// `history` is `[B, D, S]` (oldest frame first along `S`), `cond` is
/// `[B, M]` of raw conditioning values, `noise` is `[B, D, C]` and required
/// in probabilistic mode. Returns the standardized prediction `[B, D]`.
pub fn forward_graph<T: Real>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    vars: &ParamVars,
    history: Var,
    cond: Var,
    noise: Option<Var>,
) -> Result<Var> {
    let config = &params.config;
    let hs = g.shape(history).to_vec();
    if hs.len() != 3 || hs[2] != config.history {
        return Err(Error::shape(format!("[B, D, {}]", config.history), format!("{hs:?}")));
    }
    if hs[1] < config.window {
        return Err(Error::Config(format!(
            "spatial extent {} smaller than the attention window {}",
            hs[1], config.window
        )));
    }
    if g.shape(cond) != [hs[0], config.cond_dim] {
        return Err(Error::shape(
            format!("[{}, {}]", hs[0], config.cond_dim),
            format!("{:?}", g.shape(cond)),
        ));
    }
    let mut z = encode(g, vars, history)?;
    if config.mode == Mode::Probabilistic {
        let noise = noise.ok_or_else(|| Error::Config("probabilistic forward needs a noise tensor".into()))?;
        z = sample_latent(g, vars, z, noise)?;
    }
    for block in &vars.blocks {
        let f = film(g, config, block, cond)?;
        z = transformer_block(g, block, z, f.as_ref())?;
    }
    let out = g.matmul(z, vars.decoder)?;
    g.reshape(out, &hs[..2])
}

/// Stacks per-sample histories (each `S` frames of length `D`, oldest
/// first) into a standardized `[B, D, S]` tensor.
pub fn history_tensor<T: Real>(norm: &Normalization, samples: &[&[Vec<f64>]]) -> Result<Tensor<T>> {
    let b = samples.len();
    let s = samples.first().map(|h| h.len()).unwrap_or(0);
    let d = samples.first().and_then(|h| h.first()).map(|f| f.len()).unwrap_or(0);
    let mut data = Vec::with_capacity(b * d * s);
    for h in samples {
        if h.len() != s || h.iter().any(|f| f.len() != d) {
            return Err(Error::Batching(format!(
                "sample histories must all be {s} frames of {d} points"
            )));
        }
        for x in 0..d {
            for frame in h.iter() {
                data.push(T::of(norm.apply(frame[x])));
            }
        }
    }
    Tensor::new(vec![b, d, s], data)
}

/// Evaluation-only forward: one prediction per history, in physical units.
pub fn predict<T: Real>(
    params: &ModelParams<T>,
    histories: &[&[Vec<f64>]],
    cond: &[f64],
    phase: Phase,
    noise: Option<Tensor<T>>,
) -> Result<Vec<Vec<f64>>> {
    let norm = params.normalization;
    let mut g = Graph::new();
    let vars = params.register(&mut g, phase);
    let h = g.constant(history_tensor(&norm, histories)?);
    let m = params.config.cond_dim;
    if cond.len() != histories.len() * m {
        return Err(Error::shape(histories.len() * m, cond.len()));
    }
    let c = g.constant(Tensor::new(vec![histories.len(), m], cond.iter().map(|&v| T::of(v)).collect())?);
    let noise = noise.map(|n| g.constant(n));
    let out = forward_graph(&mut g, params, &vars, h, c, noise)?;
    let d = g.shape(out)[1];
    Ok(g.value(out)
        .data()
        .chunks_exact(d)
        .map(|row| row.iter().map(|v| norm.invert(v.f64())).collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    normalization: Normalization,
    params: Vec<(String, Vec<usize>)>,
}

impl ModelParams<f32> {
    /// `NPEC1` layout: magic, `u16` version, `u32` header length, JSON header,
    /// then one blob per tensor: `u32` name length, name, `u32` rank, `u64`
    /// extents, `f32` values (all little-endian).
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let named = self.named();
        let header = CheckpointHeader {
            config: self.config.clone(),
            normalization: self.normalization,
            params: named.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(NPEC_MAGIC)?;
        w.write_all(&NPEC_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (name, t) in named {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(4 * t.len());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != NPEC_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected NPEC1")));
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v)?;
        if u16::from_le_bytes(v) != NPEC_VERSION {
            return Err(Error::Format(format!("unsupported NPEC version {}", u16::from_le_bytes(v))));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        let mut params = ModelParams::<f32>::init(header.config.clone(), 0)?;
        params.normalization = header.normalization;
        let expected: Vec<(String, Vec<usize>)> = params
            .named()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        if expected != header.params {
            return Err(Error::Checkpoint("parameter list disagrees with the architecture header".into()));
        }
        for (name, slot) in params.named_mut() {
            r.read_exact(&mut len)?;
            let mut raw = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut raw)?;
            if raw != name.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "expected blob {name}, found {}",
                    String::from_utf8_lossy(&raw)
                )));
            }
            r.read_exact(&mut len)?;
            let rank = u32::from_le_bytes(len) as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut word = [0u8; 8];
            for _ in 0..rank {
                r.read_exact(&mut word)?;
                shape.push(u64::from_le_bytes(word) as usize);
            }
            if shape != slot.shape() {
                return Err(Error::Checkpoint(format!("{name}: shape {shape:?} vs {:?}", slot.shape())));
            }
            let mut bytes = vec![0u8; 4 * slot.len()];
            r.read_exact(&mut bytes)?;
            for (dst, b) in slot.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Loads and checks the architecture against `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let p = Self::load(path)?;
        if &p.config != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} differs from requested {:?}",
                p.config, expected
            )));
        }
        Ok(p)
    }
}
