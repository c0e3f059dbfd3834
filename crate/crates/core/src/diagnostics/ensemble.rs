use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::jets::{detect_events, EventKind};
use super::pdf::hellinger;
use super::rollout::{rollout_ensemble, RolloutOptions};
use crate::beta::{BetaConfig, BetaSolver, BetaState};
use crate::emulator::ModelParams;
use crate::error::{Error, Result};

/// Anything that can produce ensemble members from a shared initial state.
pub trait EnsembleSource: Sync {
    /// For each member id, `n_frames + 1` zonal profiles starting with the
    /// shared initial one.
    fn run_members(&self, members: &[u64], n_frames: usize) -> Result<Vec<Vec<Vec<f64>>>>;

    /// Time between consecutive frames.
    fn frame_interval(&self) -> f64;

    /// Members run together in one call.
    fn group_size(&self) -> usize {
        1
    }
}

/// Stochastic solver restarted from one state with a fresh noise stream
/// per member.
pub struct BetaSolverEnsemble {
    pub config: BetaConfig,
    pub initial: BetaState,
    pub steps_per_frame: usize,
    pub seed: u64,
}

impl BetaSolverEnsemble {
    pub fn from_solver(solver: &BetaSolver, steps_per_frame: usize, seed: u64) -> Self {
        Self {
            config: solver.config().clone(),
            initial: solver.state().clone(),
            steps_per_frame,
            seed,
        }
    }
}

pub(crate) fn member_seed(seed: u64, member: u64) -> u64 {
    let mut x = seed ^ member.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^ (x >> 31)
}

impl EnsembleSource for BetaSolverEnsemble {
    fn run_members(&self, members: &[u64], n_frames: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        members
            .iter()
            .map(|&m| {
                let mut s = BetaSolver::new(self.config.clone())?;
                s.set_state(self.initial.clone());
                s.reseed(member_seed(self.seed, m));
                let mut frames = vec![s.zonal_velocity()];
                for _ in 0..n_frames {
                    s.advance_steps(self.steps_per_frame)?;
                    frames.push(s.zonal_velocity());
                }
                Ok(frames)
            })
            .collect()
    }

    fn frame_interval(&self) -> f64 {
        self.steps_per_frame as f64 * self.config.dt
    }
}

/// Probabilistic emulator rolled out from one history.
pub struct EmulatorEnsemble {
    pub params: ModelParams<f32>,
    pub init_history: Vec<Vec<f64>>,
    pub conditioning: f64,
    pub options: RolloutOptions,
    pub group: usize,
}

impl EnsembleSource for EmulatorEnsemble {
    fn run_members(&self, members: &[u64], n_frames: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let opts = RolloutOptions {
            n_steps: n_frames,
            ..self.options.clone()
        };
        let runs = rollout_ensemble(&self.params, &self.init_history, self.conditioning, members, &opts)?;
        let first = self.init_history.last().cloned().unwrap_or_default();
        Ok(runs
            .into_iter()
            .map(|t| std::iter::once(first.clone()).chain(t.frames).collect())
            .collect())
    }

    fn frame_interval(&self) -> f64 {
        self.options.snapshot_interval
    }

    fn group_size(&self) -> usize {
        self.group.max(1)
    }
}

/// First-event times binned on `[0, horizon]`; members without an event
/// land in the overflow count.
#[derive(Clone, Debug, PartialEq)]
pub struct EventTimeHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub overflow: u64,
    /// Per member, in member order.
    pub times: Vec<Option<f64>>,
}

impl EventTimeHistogram {
    pub fn from_times(times: Vec<Option<f64>>, horizon: f64, n_bins: usize) -> Self {
        let edges: Vec<f64> = (0..=n_bins).map(|i| horizon * i as f64 / n_bins as f64).collect();
        let mut counts = vec![0u64; n_bins];
        let mut overflow = 0;
        for t in &times {
            match t {
                Some(t) if *t <= horizon => {
                    let i = ((t / horizon) * n_bins as f64).floor() as usize;
                    counts[i.min(n_bins - 1)] += 1;
                }
                _ => overflow += 1,
            }
        }
        Self {
            edges,
            counts,
            overflow,
            times,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Probabilities of the bins followed by the overflow.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts
            .iter()
            .chain(std::iter::once(&self.overflow))
            .map(|&c| c as f64 / t)
            .collect()
    }

    pub fn hellinger(&self, other: &EventTimeHistogram) -> Result<f64> {
        if self.edges != other.edges {
            return Err(Error::Config("event-time histograms use different bins".into()));
        }
        hellinger(&self.probabilities(), &other.probabilities())
    }
}

/// Ensemble of first-event times of the given kind.
#[allow(clippy::too_many_arguments)]
pub fn event_time_pdf(
    source: &dyn EnsembleSource,
    members: std::ops::Range<u64>,
    n_frames: usize,
    kind: EventKind,
    n_bins: usize,
    prominence: f64,
    debounce: usize,
) -> Result<EventTimeHistogram> {
    let ids: Vec<u64> = members.collect();
    let dt = source.frame_interval();
    let groups: Vec<&[u64]> = ids.chunks(source.group_size()).collect();
    let results: Vec<Result<Vec<Option<f64>>>> = groups
        .par_iter()
        .map(|g| {
            let runs = source.run_members(g, n_frames)?;
            Ok(runs
                .iter()
                .map(|frames| {
                    detect_events(frames, prominence, debounce, 0.0, dt)
                        .into_iter()
                        .find(|e| e.kind == kind)
                        .map(|e| e.time)
                })
                .collect())
        })
        .collect();
    let mut times = Vec::with_capacity(ids.len());
    for r in results {
        times.extend(r?);
    }
    Ok(EventTimeHistogram::from_times(times, n_frames as f64 * dt, n_bins))
}

/// Two-sample permutation null for the Hellinger distance between the
/// event-time histograms of `a` and `b`. Returns the observed distance and
/// the `quantile` of the distances under random relabelling.
pub fn permutation_threshold(
    a: &EventTimeHistogram,
    b: &EventTimeHistogram,
    n_permutations: usize,
    quantile: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let horizon = *a.edges.last().unwrap_or(&0.0);
    let n_bins = a.counts.len();
    let observed = a.hellinger(b)?;
    let mut pool: Vec<Option<f64>> = a.times.iter().chain(&b.times).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut null = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        pool.shuffle(&mut rng);
        let (x, y) = pool.split_at(a.times.len());
        let hx = EventTimeHistogram::from_times(x.to_vec(), horizon, n_bins);
        let hy = EventTimeHistogram::from_times(y.to_vec(), horizon, n_bins);
        null.push(hx.hellinger(&hy)?);
    }
    null.sort_by(f64::total_cmp);
    let idx = ((quantile * null.len() as f64).ceil() as usize).clamp(1, null.len().max(1)) - 1;
    Ok((observed, null.get(idx).copied().unwrap_or(0.0)))
}
