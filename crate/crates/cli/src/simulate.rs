use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use pdelab::beta::{self, BetaConfig};
use pdelab::ks::{self, KsConfig};

use crate::args::{BetaArgs, KsArgs};
use crate::manifest::{manifest_path, Manifest};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KsRun {
    pub solver: KsConfig,
    pub snapshots: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaRun {
    pub solver: BetaConfig,
    pub snapshots: usize,
    pub interval: f64,
    pub warmup: f64,
    #[serde(default)]
    pub dump: Option<String>,
}

pub fn ks_run(a: &KsArgs) -> KsRun {
    let mut solver = KsConfig::for_length(a.length).with_seed(a.seed);
    solver.snapshot_interval = a.interval;
    if let Some(w) = a.warmup {
        solver.warmup_time = w;
    }
    if let Some(dt) = a.dt {
        solver.dt = dt;
    }
    if let Some(n) = a.n {
        solver.n_points = n;
    }
    KsRun {
        solver,
        snapshots: a.snapshots,
    }
}

pub fn beta_run(a: &BetaArgs) -> BetaRun {
    let mut c = if a.jet_regime {
        BetaConfig::jet_regime()
    } else {
        BetaConfig::default()
    };
    c.seed = a.seed;
    if let Some(v) = a.beta {
        c.beta = v;
    }
    if let Some(v) = a.n {
        c.n_points = v;
    }
    if let Some(v) = a.mu {
        c.mu = v;
    }
    if let Some(v) = a.epsilon {
        c.epsilon = v;
    }
    if let Some(v) = a.k_f {
        c.k_f = v;
    }
    if let Some(v) = a.delta_k {
        c.delta_k = v;
    }
    if let Some(v) = a.dt {
        c.dt = v;
    }
    BetaRun {
        solver: c,
        snapshots: a.snapshots,
        interval: a.interval,
        warmup: a.warmup,
        dump: a.dump.as_ref().map(|p| p.display().to_string()),
    }
}

pub fn run_ks(run: &KsRun, out: &Path) -> Result<()> {
    run.solver.validate()?;
    let mut m = Manifest::new("simulate ks", run.solver.seed, serde_json::to_value(run)?);
    m.outputs.push(out.display().to_string());
    m.save(&manifest_path(out))?;
    log::info!(
        "KS L = {} on {} points, {} snapshots",
        run.solver.domain_length,
        run.solver.n_points,
        run.snapshots
    );
    let traj = ks::generate_dataset(&run.solver, run.snapshots)?;
    traj.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

pub fn run_beta(run: &BetaRun, out: &Path) -> Result<()> {
    run.solver.validate()?;
    let mut m = Manifest::new("simulate beta", run.solver.seed, serde_json::to_value(run)?);
    m.outputs.push(out.display().to_string());
    m.outputs.extend(run.dump.clone());
    m.save(&manifest_path(out))?;
    log::info!(
        "beta-plane beta = {} on {}^2, {} snapshots after warm-up {}",
        run.solver.beta,
        run.solver.n_points,
        run.snapshots,
        run.warmup
    );
    let (traj, solver) = beta::run_dataset(&run.solver, run.snapshots, run.interval, run.warmup)?;
    traj.save(out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(d) = &run.dump {
        solver.vorticity_dump().save(d).with_context(|| format!("writing {d}"))?;
    }
    Ok(())
}
