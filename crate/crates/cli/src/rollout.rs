use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use pdelab::diagnostics::{rollout_ensemble, RolloutOptions};
use pdelab::emulator::ModelParams;
use pdelab::trajectory::Trajectory;

use crate::args::RolloutArgs;
use crate::evaluate::conditioning_for;
use crate::manifest::{manifest_path, InputFile, Manifest};

/// Members evaluated together in one forward pass.
const GROUP: usize = 8;

/// One member writes `--out`; several treat `--out` as a directory of
/// `member_NNNN.pdet` files.
pub fn command(a: &RolloutArgs) -> Result<()> {
    if a.members == 0 {
        bail!("--members must be at least 1");
    }
    let params = ModelParams::<f32>::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let init = Trajectory::load(&a.init).with_context(|| format!("reading {}", a.init.display()))?;
    let s = params.config.history;
    if a.start + s > init.len() {
        bail!("history frames {}..{} lie outside the {} frames of {}", a.start, a.start + s, init.len(), a.init.display());
    }
    let cond = conditioning_for(&params, a.cond, &init)?;

    let outputs: Vec<PathBuf> = if a.members == 1 {
        vec![a.out.clone()]
    } else {
        std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        (0..a.members).map(|i| a.out.join(format!("member_{i:04}.pdet"))).collect()
    };
    let config = json!({
        "start": a.start, "steps": a.steps, "conditioning": cond,
        "members": a.members, "cap": a.cap,
    });
    let mut m = Manifest::new("rollout", a.seed, config);
    m.inputs = vec![InputFile::hash(&a.model)?, InputFile::hash(&a.init)?];
    m.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    m.save(&manifest_path(&a.out))?;

    let mut opts = RolloutOptions::new(a.steps);
    opts.noise_seed = a.seed;
    opts.cap = a.cap;
    opts.snapshot_interval = init.meta.snapshot_interval;
    opts.domain_length = init.meta.domain_length[0];
    let history = &init.frames[a.start..a.start + s];
    let ids: Vec<u64> = (0..a.members).collect();
    let runs: Vec<Vec<Trajectory>> = ids
        .par_chunks(GROUP)
        .map(|g| rollout_ensemble(&params, history, cond, g, &opts))
        .collect::<pdelab::Result<_>>()?;
    for (t, path) in runs.into_iter().flatten().zip(&outputs) {
        t.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!("{} member(s) x {} steps at conditioning {cond}", a.members, a.steps);
    Ok(())
}
