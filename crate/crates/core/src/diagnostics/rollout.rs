use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diff::{Graph, Real, Tensor};
use crate::emulator::{forward_graph, history_tensor, Mode, ModelParams, Phase};
use crate::error::{Error, Result};
use crate::trajectory::{Trajectory, TrajectoryMeta};
use crate::training::conditioning_key;

/// Default bound on `|u|∞` before a rollout is declared diverged.
pub const DEFAULT_CAP: f64 = 1e3;

#[derive(Clone, Debug)]
pub struct RolloutOptions {
    pub n_steps: usize,
    pub noise_seed: u64,
    pub cap: f64,
    pub phase: Phase,
    /// Time between frames, recorded in the output metadata.
    pub snapshot_interval: f64,
    /// Physical domain length, recorded in the output metadata.
    pub domain_length: f64,
}

impl RolloutOptions {
    pub fn new(n_steps: usize) -> Self {
        Self {
            n_steps,
            noise_seed: 0,
            cap: DEFAULT_CAP,
            phase: Phase::Finetune,
            snapshot_interval: 1.0,
            domain_length: 1.0,
        }
    }
}

fn output_meta<T: Real>(params: &ModelParams<T>, d: usize, cond: f64, opts: &RolloutOptions, seed: u64) -> TrajectoryMeta {
    let mut parameters = std::collections::BTreeMap::new();
    if let Ok(key) = conditioning_key(&params.config.equation) {
        parameters.insert(key.to_string(), cond);
    }
    TrajectoryMeta {
        equation: if params.config.equation.is_empty() {
            "emulator".into()
        } else {
            params.config.equation.clone()
        },
        parameters,
        dims: 1,
        n_points: vec![d],
        domain_length: vec![opts.domain_length],
        dt: 0.0,
        snapshot_interval: opts.snapshot_interval,
        start_time: 0.0,
        seed,
        creation: Default::default(),
    }
}

/// Autoregressive rollout of several members from one initial history.
///
/// Member `i` draws its noise from its own stream seeded by
/// `(noise_seed, i)`, so results do not depend on how members are grouped.
/// Returned trajectories hold only the generated frames.
pub fn rollout_ensemble<T: Real>(
    params: &ModelParams<T>,
    init_history: &[Vec<f64>],
    conditioning: f64,
    members: &[u64],
    opts: &RolloutOptions,
) -> Result<Vec<Trajectory>> {
    let s = params.config.history;
    if init_history.len() != s {
        return Err(Error::shape(format!("{s} history frames"), init_history.len()));
    }
    let d = init_history[0].len();
    if init_history.iter().any(|f| f.len() != d) {
        return Err(Error::Batching("history frames differ in length".into()));
    }
    let b = members.len();
    let c = params.config.channels;
    let mut rngs: Vec<ChaCha8Rng> = members
        .iter()
        .map(|&m| {
            let mut r = ChaCha8Rng::seed_from_u64(opts.noise_seed);
            r.set_stream(m);
            r
        })
        .collect();
    let mut histories: Vec<Vec<Vec<f64>>> = vec![init_history.to_vec(); b];
    let mut out: Vec<Trajectory> = members
        .iter()
        .map(|&m| Trajectory::new(output_meta(params, d, conditioning, opts, m)))
        .collect();
    let cond = Tensor::full(&[b, params.config.cond_dim], T::of(conditioning));
    let norm = params.normalization;
    for step in 0..opts.n_steps {
        let mut g = Graph::<T>::new();
        let vars = params.register(&mut g, opts.phase);
        let refs: Vec<&[Vec<f64>]> = histories.iter().map(|h| h.as_slice()).collect();
        let h = g.constant(history_tensor(&norm, &refs)?);
        let cv = g.constant(cond.clone());
        let noise = match params.config.mode {
            Mode::Probabilistic => {
                let mut data = Vec::with_capacity(b * d * c);
                for r in rngs.iter_mut() {
                    for _ in 0..d * c {
                        let x: f64 = StandardNormal.sample(r);
                        data.push(T::of(x));
                    }
                }
                Some(g.constant(Tensor::new(vec![b, d, c], data)?))
            }
            Mode::Deterministic => None,
        };
        let y = forward_graph(&mut g, params, &vars, h, cv, noise)?;
        for (i, row) in g.value(y).data().chunks_exact(d).enumerate() {
            let frame: Vec<f64> = row.iter().map(|v| norm.invert(v.f64())).collect();
            let max_abs = frame.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
            if !(max_abs <= opts.cap) {
                return Err(Error::RolloutDiverged { step, max_abs });
            }
            histories[i].remove(0);
            histories[i].push(frame.clone());
            out[i].frames.push(frame);
        }
    }
    Ok(out)
}

/// Single-member rollout.
pub fn rollout<T: Real>(
    params: &ModelParams<T>,
    init_history: &[Vec<f64>],
    conditioning: f64,
    opts: &RolloutOptions,
) -> Result<Trajectory> {
    Ok(rollout_ensemble(params, init_history, conditioning, &[0], opts)?.remove(0))
}
