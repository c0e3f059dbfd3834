//! Losses, Adam, batching and the two-phase training protocol.
//!
//! A batch is split into fixed-size chunks, each evaluated on its own
//! [`Graph`] (in parallel when a rayon pool is available). Chunk
//! gradients are summed in chunk order, so results do not depend on the
//! number of worker threads.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Real, Tensor, Var};
use crate::emulator::{forward_graph, history_tensor, Mode, ModelParams, Normalization, Phase};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const FINETUNE_LR_FACTOR: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrpsSpectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub loss: LossKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ensemble_m: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Samples per gradient chunk; fixes the reduction order.
    pub chunk_size: usize,
    /// Trailing fraction of every shard held out for validation.
    pub validation_fraction: f64,
    pub schedule: Schedule,
}

impl TrainConfig {
    pub fn pretrain(loss: LossKind, lr: f64, epochs: usize) -> Self {
        Self {
            phase: Phase::Pretrain,
            loss,
            lr,
            epochs,
            batch_size: 128,
            ensemble_m: if loss == LossKind::Mse { 1 } else { 2 },
            lambda: 1.0,
            seed: 0,
            chunk_size: 8,
            validation_fraction: 0.05,
            schedule: Schedule::Constant,
        }
    }

    /// Deterministic KS pre-training: MSE, lr 5e-4, 1000 epochs.
    pub fn ks_pretrain() -> Self {
        Self::pretrain(LossKind::Mse, 5e-4, 1000)
    }

    /// Probabilistic beta-plane pre-training: CRPS + spectral, m = 2, 500 epochs.
    pub fn beta_pretrain() -> Self {
        Self::pretrain(LossKind::CrpsSpectral, 5e-4, 500)
    }

    /// Same settings with the learning rate divided by 50.
    pub fn finetune_from(pretrain: &TrainConfig, epochs: usize) -> Self {
        Self {
            phase: Phase::Finetune,
            lr: pretrain.lr / FINETUNE_LR_FACTOR,
            epochs,
            ..pretrain.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.loss == LossKind::CrpsSpectral && self.ensemble_m < 2 {
            return Err(Error::Config("CRPS training needs an ensemble of at least 2".into()));
        }
        if self.ensemble_m == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return Err(Error::Config("ensemble size, batch size and chunk size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let f = epoch as f64 / self.epochs.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * f).cos())
            }
        }
    }
}

/// Field trajectory sharing one conditioning value.
#[derive(Clone, Debug)]
pub struct Shard {
    pub conditioning: f64,
    pub frames: Vec<Vec<f64>>,
}

impl Shard {
    pub fn new(conditioning: f64, frames: Vec<Vec<f64>>) -> Self {
        Self { conditioning, frames }
    }

    /// Uses the parameter the equation is conditioned on (`L` or `beta`).
    pub fn from_trajectory(t: &Trajectory) -> Result<Self> {
        let key = conditioning_key(&t.meta.equation)?;
        let c = t
            .meta
            .parameter(key)
            .ok_or_else(|| Error::Format(format!("trajectory has no '{key}' parameter")))?;
        Ok(Self::new(c, t.frames.clone()))
    }

    pub fn n_points(&self) -> usize {
        self.frames.first().map(|f| f.len()).unwrap_or(0)
    }

    /// Number of (history, target) pairs for history length `s`.
    pub fn n_samples(&self, s: usize) -> usize {
        self.frames.len().saturating_sub(s)
    }

    /// Frames `i .. i+s` as history, frame `i+s` as target.
    pub fn sample(&self, i: usize, s: usize) -> (&[Vec<f64>], &[f64]) {
        (&self.frames[i..i + s], &self.frames[i + s])
    }
}

pub fn conditioning_key(equation: &str) -> Result<&'static str> {
    match equation {
        "ks" => Ok("L"),
        "beta_zonal_mean" => Ok("beta"),
        other => Err(Error::Config(format!("no conditioning parameter known for '{other}'"))),
    }
}

/// Reference to one sample: shard index and start of its history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub shard: usize,
    pub index: usize,
}

/// Contiguous train/validation split per shard (validation at the end).
pub fn split_samples(shards: &[Shard], s: usize, validation_fraction: f64) -> (Vec<Vec<SampleRef>>, Vec<Vec<SampleRef>>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (k, shard) in shards.iter().enumerate() {
        let n = shard.n_samples(s);
        let n_val = ((n as f64) * validation_fraction).round() as usize;
        let cut = n - n_val.min(n);
        train.push((0..cut).map(|index| SampleRef { shard: k, index }).collect());
        val.push((cut..n).map(|index| SampleRef { shard: k, index }).collect());
    }
    (train, val)
}

/// Standardized `[B, D, S]` history, `[B, 1]` conditioning and `[B, D]`
/// target. Fails with a batching error when spatial sizes differ.
pub fn assemble_batch(
    shards: &[Shard],
    samples: &[SampleRef],
    s: usize,
    norm: &Normalization,
) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    let d = samples
        .first()
        .map(|r| shards[r.shard].n_points())
        .ok_or_else(|| Error::Batching("empty batch".into()))?;
    if let Some(r) = samples.iter().find(|r| shards[r.shard].n_points() != d) {
        return Err(Error::Batching(format!(
            "batch mixes spatial sizes {d} and {}",
            shards[r.shard].n_points()
        )));
    }
    let histories: Vec<&[Vec<f64>]> = samples.iter().map(|r| shards[r.shard].sample(r.index, s).0).collect();
    let h = history_tensor::<f32>(norm, &histories)?;
    let cond = Tensor::from_fn(&[samples.len(), 1], |i| shards[samples[i].shard].conditioning as f32);
    let mut target = Vec::with_capacity(samples.len() * d);
    for r in samples {
        let (_, t) = shards[r.shard].sample(r.index, s);
        target.extend(t.iter().map(|&v| norm.apply(v) as f32));
    }
    Ok((h, cond, Tensor::new(vec![samples.len(), d], target)?))
}

/// Batches for one epoch: each shard shuffled and cut into batches, shards
/// then interleaved round-robin. Every batch holds a single shard.
pub fn epoch_batches(train: &[Vec<SampleRef>], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<SampleRef>> {
    let per_shard: Vec<Vec<Vec<SampleRef>>> = train
        .iter()
        .map(|samples| {
            let mut s = samples.clone();
            s.shuffle(rng);
            s.chunks(batch_size).map(|c| c.to_vec()).collect()
        })
        .collect();
    let rounds = per_shard.iter().map(|b| b.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for shard in &per_shard {
            if let Some(b) = shard.get(r) {
                out.push(b.clone());
            }
        }
    }
    out
}

fn graph_spectral<T: Real>(g: &mut Graph<T>, pred: Var, truth_modulus: Var) -> Result<Var> {
    let m = g.dft_modulus(pred)?;
    g.mae(m, truth_modulus)
}

/// Loss terms on a graph. Returns `(total, primary, spectral)` where the
/// primary term is MSE or CRPS.
pub fn graph_loss<T: Real>(
    g: &mut Graph<T>,
    kind: LossKind,
    members: &[Var],
    truth: Var,
    lambda: f64,
) -> Result<(Var, Var, Option<Var>)> {
    match kind {
        LossKind::Mse => {
            let l = g.mse(members[0], truth)?;
            Ok((l, l, None))
        }
        LossKind::CrpsSpectral => {
            let crps = g.crps(members, truth)?;
            let tm = g.dft_modulus(truth)?;
            let mut spec = graph_spectral(g, members[0], tm)?;
            for &m in &members[1..] {
                let s = graph_spectral(g, m, tm)?;
                spec = g.add(spec, s)?;
            }
            let spec = g.scale(spec, T::of(1.0 / members.len() as f64));
            let weighted = g.scale(spec, T::of(lambda));
            let total = g.add(crps, weighted)?;
            Ok((total, crps, Some(spec)))
        }
    }
}

fn eval_f64(f: impl FnOnce(&mut Graph<f64>) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let out = f(&mut g)?;
    Ok(g.value(out).item())
}

fn row(g: &mut Graph<f64>, v: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::new(vec![v.len()], v.to_vec())?))
}

pub fn mse_loss(truth: &[f64], pred: &[f64]) -> Result<f64> {
    eval_f64(|g| {
        let (t, p) = (row(g, truth)?, row(g, pred)?);
        g.mse(p, t)
    })
}

/// Ensemble CRPS per point, averaged over points.
pub fn crps_loss(truth: &[f64], ensemble: &[Vec<f64>]) -> Result<f64> {
    eval_f64(|g| {
        let t = row(g, truth)?;
        let members = ensemble.iter().map(|m| row(g, m)).collect::<Result<Vec<_>>>()?;
        g.crps(&members, t)
    })
}

/// Mean absolute difference of DFT moduli.
pub fn spectral_loss(truth: &[f64], pred: &[f64]) -> Result<f64> {
    eval_f64(|g| {
        let (t, p) = (row(g, truth)?, row(g, pred)?);
        let (ft, fp) = (g.dft_modulus(t)?, g.dft_modulus(p)?);
        g.mae(fp, ft)
    })
}

/// `crps + λ · mean_i spectral(truth, member_i)`.
pub fn composite_loss(truth: &[f64], ensemble: &[Vec<f64>], lambda: f64) -> Result<f64> {
    let mut spec = 0.0;
    for m in ensemble {
        spec += spectral_loss(truth, m)?;
    }
    Ok(crps_loss(truth, ensemble)? + lambda * spec / ensemble.len() as f64)
}

/// Bias-corrected Adam with `β₁ = 0.9`, `β₂ = 0.999`, `η = 1e-8`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Tensor<f32>], grads: &[Tensor<f32>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(self.m.len(), params.len().min(grads.len())));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (lr, eps) = (lr as f32, self.eps as f32);
        let (c1, c2) = (c1 as f32, c2 as f32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!("{:?}", p.shape()), format!("{:?}", g.shape())));
            }
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_primary: f64,
    pub train_spectral: f64,
    pub val_loss: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    /// Wall-clock seconds per epoch (kept apart from the deterministic metrics).
    pub wall_seconds: Vec<f64>,
}

struct ChunkResult {
    loss: f64,
    primary: f64,
    spectral: f64,
    mse: f64,
    grads: Vec<Tensor<f32>>,
}

/// Seed for the noise of one chunk, independent of scheduling.
fn chunk_seed(seed: u64, epoch: u64, batch: u64, chunk: u64) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [epoch, batch, chunk] {
        x = (x ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 31;
    }
    x
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    params: &ModelParams<f32>,
    shards: &[Shard],
    samples: &[SampleRef],
    config: &TrainConfig,
    weight: f64,
    seed: u64,
    with_grad: bool,
) -> Result<ChunkResult> {
    let s = params.config.history;
    let (h, cond, target) = assemble_batch(shards, samples, s, &params.normalization)?;
    let (b, d) = (target.shape()[0], target.shape()[1]);
    let mut g = Graph::<f32>::new();
    let vars = params.register(&mut g, config.phase);
    let h = g.constant(h);
    let cond = g.constant(cond);
    let truth = g.constant(target);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = if config.loss == LossKind::Mse { 1 } else { config.ensemble_m };
    let mut members = Vec::with_capacity(m);
    for _ in 0..m {
        let noise = match params.config.mode {
            Mode::Probabilistic => {
                let n = Tensor::from_fn(&[b, d, params.config.channels], |_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x as f32
                });
                Some(g.constant(n))
            }
            Mode::Deterministic => None,
        };
        members.push(forward_graph(&mut g, params, &vars, h, cond, noise)?);
    }
    let (total, primary, spectral) = graph_loss(&mut g, config.loss, &members, truth, config.lambda)?;
    let mse = g.mse(members[0], truth)?;
    let value = |g: &Graph<f32>, v: Var| g.value(v).item() as f64;
    let loss = value(&g, total);
    if !loss.is_finite() {
        let at = g
            .first_non_finite()
            .map(|(i, op)| format!("first non-finite value at node {i} ({op})"))
            .unwrap_or_default();
        return Err(Error::NonFinite(format!("loss {loss}; {at}")));
    }
    let mut grads = Vec::new();
    if with_grad {
        let weighted = g.scale(total, weight as f32);
        let mut gr = g.backward(weighted);
        grads = vars
            .names
            .iter()
            .map(|(_, v)| gr.take(*v).unwrap_or_else(|| Tensor::zeros(g.shape(*v))))
            .collect();
    }
    Ok(ChunkResult {
        loss: loss * weight,
        primary: value(&g, primary) * weight,
        spectral: spectral.map(|v| value(&g, v)).unwrap_or(0.0) * weight,
        mse: value(&g, mse) * weight,
        grads,
    })
}

/// Loss and summed gradients of one batch, chunked and reduced in order.
fn batch_pass(
    params: &ModelParams<f32>,
    shards: &[Shard],
    batch: &[SampleRef],
    config: &TrainConfig,
    seed: u64,
    with_grad: bool,
) -> Result<ChunkResult> {
    let total = batch.len() as f64;
    let chunks: Vec<(usize, &[SampleRef])> = batch.chunks(config.chunk_size).enumerate().collect();
    let results: Vec<Result<ChunkResult>> = chunks
        .par_iter()
        .map(|(ci, c)| {
            run_chunk(
                params,
                shards,
                c,
                config,
                c.len() as f64 / total,
                chunk_seed(seed, 0, 0, *ci as u64),
                with_grad,
            )
        })
        .collect();
    let mut acc: Option<ChunkResult> = None;
    for r in results {
        let r = r?;
        match &mut acc {
            None => acc = Some(r),
            Some(a) => {
                a.loss += r.loss;
                a.primary += r.primary;
                a.spectral += r.spectral;
                a.mse += r.mse;
                for (x, y) in a.grads.iter_mut().zip(&r.grads) {
                    x.add_assign(y);
                }
            }
        }
    }
    acc.ok_or_else(|| Error::Batching("empty batch".into()))
}

/// Validation loss and MSE (standardized units) over held-out samples.
pub fn evaluate(params: &ModelParams<f32>, shards: &[Shard], samples: &[SampleRef], config: &TrainConfig) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut by_shard: Vec<Vec<SampleRef>> = vec![Vec::new(); shards.len()];
    for r in samples {
        by_shard[r.shard].push(*r);
    }
    let n = samples.len() as f64;
    let (mut loss, mut mse) = (0.0, 0.0);
    for (k, group) in by_shard.iter().enumerate() {
        for (bi, batch) in group.chunks(config.batch_size).enumerate() {
            let seed = chunk_seed(config.seed ^ 0xfeed, k as u64, bi as u64, 0);
            let r = batch_pass(params, shards, batch, config, seed, false)?;
            loss += r.loss * batch.len() as f64 / n;
            mse += r.mse * batch.len() as f64 / n;
        }
    }
    Ok((loss, mse))
}

fn check_model_loss(params: &ModelParams<f32>, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if config.loss == LossKind::CrpsSpectral && params.config.mode != Mode::Probabilistic {
        return Err(Error::Config("CRPS training requires a probabilistic model".into()));
    }
    Ok(())
}

/// Runs `config.epochs` epochs on `shards`, calling `on_epoch` after each.
pub fn train(
    params: &mut ModelParams<f32>,
    shards: &[Shard],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &ModelParams<f32>),
) -> Result<TrainReport> {
    check_model_loss(params, config)?;
    if shards.is_empty() {
        return Err(Error::Config("no training data".into()));
    }
    let s = params.config.history;
    let (train, val) = split_samples(shards, s, config.validation_fraction);
    let val: Vec<SampleRef> = val.into_iter().flatten().collect();
    if train.iter().all(|t| t.is_empty()) {
        return Err(Error::Config(format!("shards too short for history length {s}")));
    }
    let names: Vec<String> = params.trainable(config.phase).into_iter().map(|(n, _)| n).collect();
    let shapes: Vec<Vec<usize>> = params
        .trainable(config.phase)
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut adam = Adam::new(&shape_refs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.lr_at(epoch);
        let batches = epoch_batches(&train, config.batch_size, &mut rng);
        let n: usize = batches.iter().map(|b| b.len()).sum();
        let mut m = EpochMetrics {
            epoch: epoch + 1,
            lr,
            ..Default::default()
        };
        for (bi, batch) in batches.iter().enumerate() {
            let seed = chunk_seed(config.seed, epoch as u64, bi as u64, 1);
            let r = batch_pass(params, shards, batch, config, seed, true).map_err(|e| Error::Training {
                epoch: epoch + 1,
                step: bi,
                detail: e.to_string(),
            })?;
            let w = batch.len() as f64 / n as f64;
            m.train_loss += r.loss * w;
            m.train_primary += r.primary * w;
            m.train_spectral += r.spectral * w;
            if let Some((i, _)) = r.grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
                return Err(Error::Training {
                    epoch: epoch + 1,
                    step: bi,
                    detail: format!("non-finite gradient for {}", names[i]),
                });
            }
            let mut slots: Vec<&mut Tensor<f32>> = params
                .named_mut()
                .into_iter()
                .filter(|(n, _)| config.phase == Phase::Finetune || !ModelParams::<f32>::is_conditioning(n))
                .map(|(_, t)| t)
                .collect();
            adam.update(&mut slots, &r.grads, lr)?;
        }
        let (vl, vm) = evaluate(params, shards, &val, config)?;
        m.val_loss = vl;
        m.val_mse = vm;
        report.wall_seconds.push(start.elapsed().as_secs_f64());
        on_epoch(&m, params);
        report.metrics.push(m);
    }
    Ok(report)
}

/// Pre-training on a single conditioning value. Fits the normalization on
/// the data and keeps the conditioning map out of the graph.
pub fn pretrain(
    params: &mut ModelParams<f32>,
    shards: &[Shard],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics, &ModelParams<f32>),
) -> Result<TrainReport> {
    if config.phase != Phase::Pretrain {
        return Err(Error::Config("pretrain called with a finetune configuration".into()));
    }
    if let Some(s) = shards.iter().find(|s| s.conditioning != shards[0].conditioning) {
        return Err(Error::Config(format!(
            "pre-training expects one conditioning value, got {} and {}",
            shards[0].conditioning, s.conditioning
        )));
    }
    params.normalization = Normalization::fit(shards.iter().flat_map(|s| &s.frames));
    train(params, shards, config, on_epoch)
}

/// Fine-tuning of all parameters including the conditioning map. The
/// normalization of the pre-trained checkpoint is kept.
pub fn finetune(
    params: &mut ModelParams<f32>,
    shards: &[Shard],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics, &ModelParams<f32>),
) -> Result<TrainReport> {
    if config.phase != Phase::Finetune {
        return Err(Error::Config("finetune called with a pretrain configuration".into()));
    }
    train(params, shards, config, on_epoch)
}

pub fn write_metrics_csv(path: impl AsRef<Path>, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for m in metrics {
        w.serialize(m).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv(path: impl AsRef<Path>, wall_seconds: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "wall_seconds"]).map_err(csv_err)?;
    for (i, s) in wall_seconds.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finetune_rate_is_a_fiftieth() {
        let p = TrainConfig::ks_pretrain();
        let f = TrainConfig::finetune_from(&p, 500);
        assert_eq!(f.lr, 1e-5);
        assert_eq!(f.phase, Phase::Finetune);
    }

    #[test]
    fn crps_needs_two_members() {
        let mut c = TrainConfig::beta_pretrain();
        assert!(c.validate().is_ok());
        c.ensemble_m = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn round_robin_interleaves_shards() {
        let train = vec![
            (0..5).map(|index| SampleRef { shard: 0, index }).collect::<Vec<_>>(),
            (0..2).map(|index| SampleRef { shard: 1, index }).collect(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(&train, 2, &mut rng);
        let kinds: Vec<usize> = b.iter().map(|x| x[0].shard).collect();
        assert_eq!(kinds, vec![0, 1, 0, 0]);
        assert!(b.iter().all(|x| x.iter().all(|r| r.shard == x[0].shard)));
        let n: usize = b.iter().map(|x| x.len()).sum();
        assert_eq!(n, 7);
    }

    #[test]
    fn cosine_schedule_ends_at_zero() {
        let mut c = TrainConfig::ks_pretrain();
        c.schedule = Schedule::Cosine;
        c.epochs = 10;
        assert_eq!(c.lr_at(0), c.lr);
        assert!(c.lr_at(5) < c.lr);
    }
}
