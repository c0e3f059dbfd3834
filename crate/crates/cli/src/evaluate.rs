use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use pdelab::diagnostics::{
    detect_events, jet_counts, joint_pdf, lyapunov_exponent, rollout, tracking_horizon, write_csv_rows,
    zonal_psd, EventKind, LyapunovOptions, RolloutOptions, Summary,
};
use pdelab::emulator::{Mode, ModelParams};
use pdelab::ks::KsConfig;
use pdelab::training::conditioning_key;
use pdelab::trajectory::Trajectory;

use crate::args::{Evaluate, EventsArgs, HorizonArgs, LyapunovArgs, PdfArgs, PsdArgs};
use crate::manifest::{InputFile, Manifest};

pub fn command(e: &Evaluate) -> Result<()> {
    match e {
        Evaluate::Pdf(a) => pdf(a),
        Evaluate::Psd(a) => psd(a),
        Evaluate::Events(a) => events(a),
        Evaluate::Horizon(a) => horizon(a),
        Evaluate::Lyapunov(a) => lyapunov(a),
    }
}

fn load(path: &Path) -> Result<Trajectory> {
    Trajectory::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelParams<f32>> {
    ModelParams::<f32>::load(path).with_context(|| format!("reading {}", path.display()))
}

/// Creates `dir`, hashes `inputs` and writes the manifest there.
fn start(dir: &Path, command: &str, seed: u64, config: serde_json::Value, inputs: &[&Path]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut m = Manifest::new(command, seed, config);
    for p in inputs {
        m.inputs.push(InputFile::hash(p)?);
    }
    m.outputs.push(dir.display().to_string());
    m.save(&dir.join("manifest.json"))
}

fn finish(dir: &Path, summary: &Summary) -> Result<()> {
    let text = summary.render();
    std::fs::write(dir.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Conditioning value for `params`: explicit, else read from `traj`.
pub fn conditioning_for(params: &ModelParams<f32>, explicit: Option<f64>, traj: &Trajectory) -> Result<f64> {
    if let Some(c) = explicit {
        return Ok(c);
    }
    let key = conditioning_key(&params.config.equation)?;
    traj.meta
        .parameter(key)
        .with_context(|| format!("no '{key}' in the trajectory; pass it explicitly"))
}

/// Rolls `params` out from the first `S` frames of `truth` for `steps` steps.
pub fn rollout_from(params: &ModelParams<f32>, truth: &Trajectory, cond: f64, steps: usize, seed: u64) -> Result<Trajectory> {
    let s = params.config.history;
    if truth.len() < s {
        bail!("need at least {s} frames to start a rollout, got {}", truth.len());
    }
    let mut opts = RolloutOptions::new(steps);
    opts.noise_seed = seed;
    opts.snapshot_interval = truth.meta.snapshot_interval;
    opts.domain_length = truth.meta.domain_length[0];
    Ok(rollout(params, &truth.frames[..s], cond, &opts)?)
}

fn pdf(a: &PdfArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.truth];
    inputs.extend(a.model.as_deref());
    inputs.extend(a.other.as_deref());
    let config = json!({"bins": a.bins, "beta": a.beta, "L": a.length, "seed": a.seed});
    start(&a.out_dir, "evaluate pdf", a.seed, config, &inputs)?;

    let truth = load(&a.truth)?;
    let (other, label) = match (&a.model, &a.other) {
        (Some(m), None) => {
            let params = load_model(m)?;
            let cond = conditioning_for(&params, a.beta.or(a.length), &truth)?;
            let s = params.config.history;
            let steps = truth.len().saturating_sub(s);
            let r = rollout_from(&params, &truth, cond, steps, a.seed)?;
            r.save(a.out_dir.join("rollout.pdet"))?;
            (r, format!("emulator at {cond}"))
        }
        (None, Some(o)) => (load(o)?, o.display().to_string()),
        _ => bail!("give exactly one of --model and --other"),
    };
    let ht = joint_pdf(&truth, a.bins, None)?;
    let ho = joint_pdf(&other, a.bins, Some(&ht.binning))?;
    let h = ht.hellinger(&ho)?;
    ht.to_trajectory().save(a.out_dir.join("pdf_truth.pdet"))?;
    ho.to_trajectory().save(a.out_dir.join("pdf_other.pdet"))?;

    let (pt, po) = (ht.probabilities(), ho.probabilities());
    let [_, n1, n2] = ht.binning.bins;
    let mut cells: Vec<[usize; 3]> = ht.occupied();
    cells.extend(ho.occupied());
    cells.sort_unstable();
    cells.dedup();
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|&[i, j, k]| {
            let idx = (i * n1 + j) * n2 + k;
            vec![i.to_string(), j.to_string(), k.to_string(), pt[idx].to_string(), po[idx].to_string()]
        })
        .collect();
    write_csv_rows(a.out_dir.join("pdf.csv"), &["i_u", "i_ux", "i_ut", "p_truth", "p_other"], &rows)?;

    let mut s = Summary::new("joint PDF of (u, u_x, u_t)");
    s.add("truth", a.truth.display())
        .add("compared", label)
        .add("bins per axis", a.bins)
        .add("truth samples", ht.total)
        .add("compared samples", ho.total)
        .add("hellinger", format!("{h:.6}"));
    finish(&a.out_dir, &s)
}

fn psd(a: &PsdArgs) -> Result<()> {
    start(&a.out_dir, "evaluate psd", 0, json!({}), &[&a.input])?;
    let t = load(&a.input)?;
    if t.meta.dims != 1 {
        bail!("psd expects 1D frames");
    }
    let p = zonal_psd(&t.frames)?;
    let l = t.meta.domain_length[0];
    let rows: Vec<Vec<String>> = p
        .iter()
        .enumerate()
        .map(|(k, v)| vec![k.to_string(), (2.0 * std::f64::consts::PI * k as f64 / l).to_string(), v.to_string()])
        .collect();
    write_csv_rows(a.out_dir.join("psd.csv"), &["k", "wavenumber", "psd"], &rows)?;
    let peak = p
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let mut s = Summary::new("time-mean power spectrum");
    s.add("input", a.input.display())
        .add("frames", t.len())
        .add("total power", format!("{:.6e}", p.iter().sum::<f64>()))
        .add("peak mode", peak);
    finish(&a.out_dir, &s)
}

fn events(a: &EventsArgs) -> Result<()> {
    let config = json!({"prominence": a.prominence, "debounce": a.debounce});
    start(&a.out_dir, "evaluate events", 0, config, &[&a.input])?;
    let t = load(&a.input)?;
    if t.meta.dims != 1 {
        bail!("events expect zonal-mean profiles");
    }
    let dt = t.meta.snapshot_interval;
    let counts = jet_counts(&t.frames, a.prominence);
    let rows: Vec<Vec<String>> = counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![t.time(i).to_string(), c.to_string()])
        .collect();
    write_csv_rows(a.out_dir.join("jet_counts.csv"), &["time", "jets"], &rows)?;
    let ev = detect_events(&t.frames, a.prominence, a.debounce, t.meta.start_time, dt);
    let rows: Vec<Vec<String>> = ev
        .iter()
        .map(|e| {
            let kind = match e.kind {
                EventKind::Nucleation => "nucleation",
                EventKind::Coalescence => "coalescence",
            };
            vec![kind.into(), e.time.to_string(), e.count_before.to_string(), e.count_after.to_string()]
        })
        .collect();
    write_csv_rows(a.out_dir.join("events.csv"), &["kind", "time", "jets_before", "jets_after"], &rows)?;

    let mut freq = std::collections::BTreeMap::<usize, usize>::new();
    for &c in &counts {
        *freq.entry(c).or_default() += 1;
    }
    let (mode, n_mode) = freq.iter().max_by_key(|(c, n)| (**n, std::cmp::Reverse(**c))).map(|(c, n)| (*c, *n)).unwrap_or((0, 0));
    let mut s = Summary::new("zonal jets");
    s.add("input", a.input.display())
        .add("frames", counts.len())
        .add("modal jet count", mode)
        .add("modal frequency", format!("{:.4}", n_mode as f64 / counts.len().max(1) as f64))
        .add("nucleations", ev.iter().filter(|e| e.kind == EventKind::Nucleation).count())
        .add("coalescences", ev.iter().filter(|e| e.kind == EventKind::Coalescence).count());
    finish(&a.out_dir, &s)
}

fn ks_length(t: &Trajectory) -> Result<f64> {
    if t.meta.equation != "ks" {
        bail!("expected a KS trajectory, got '{}'", t.meta.equation);
    }
    t.meta.parameter("L").context("KS trajectory without 'L'")
}

fn horizon(a: &HorizonArgs) -> Result<()> {
    let config = json!({"lambda": a.lambda, "threshold": a.threshold, "seed": a.seed});
    start(&a.out_dir, "evaluate horizon", a.seed, config, &[&a.truth, &a.model])?;
    let truth = load(&a.truth)?;
    let l = ks_length(&truth)?;
    let params = load_model(&a.model)?;
    if params.config.mode != Mode::Deterministic {
        log::warn!("tracking horizon of a probabilistic model follows one noise realization");
    }
    let lambda = match a.lambda {
        Some(v) => v,
        None => {
            log::info!("estimating the leading Lyapunov exponent at L = {l}");
            lyapunov_exponent(&KsConfig::for_length(l).with_seed(a.seed), &LyapunovOptions::default())?
        }
    };
    if !(lambda > 0.0) {
        bail!("tracking horizon needs a positive exponent, got {lambda}");
    }
    let s = params.config.history;
    let steps = truth.len().saturating_sub(s);
    let pred = rollout_from(&params, &truth, l, steps, a.seed)?;
    let target = &truth.frames[s..];
    let dt = truth.meta.snapshot_interval;
    let h = tracking_horizon(&pred.frames, target, dt, lambda, a.threshold)?;
    let rows: Vec<Vec<String>> = pred
        .frames
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (p, u))| {
            let rms = (p.iter().zip(u).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / u.len() as f64).sqrt();
            vec![((i + 1) as f64 * dt).to_string(), rms.to_string()]
        })
        .collect();
    write_csv_rows(a.out_dir.join("error.csv"), &["lead_time", "rms_error"], &rows)?;
    let mut sm = Summary::new("tracking horizon");
    sm.add("truth", a.truth.display())
        .add("model", a.model.display())
        .add("L", l)
        .add("lambda", format!("{lambda:.6}"))
        .add("threshold", a.threshold)
        .add("horizon (Lyapunov times)", format!("{h:.3}"));
    finish(&a.out_dir, &sm)
}

fn lyapunov(a: &LyapunovArgs) -> Result<()> {
    let opts = LyapunovOptions {
        averaging_time: a.duration,
        renormalize_every: a.interval,
        seed: a.seed,
        ..Default::default()
    };
    let config = json!({"L": a.length, "duration": a.duration, "interval": a.interval, "seed": a.seed});
    start(&a.out_dir, "evaluate lyapunov", a.seed, config, &[])?;
    let lambda = lyapunov_exponent(&KsConfig::for_length(a.length).with_seed(a.seed), &opts)?;
    write_csv_rows(
        a.out_dir.join("lyapunov.csv"),
        &["L", "lambda", "renormalize_every", "averaging_time"],
        &[vec![a.length.to_string(), lambda.to_string(), a.interval.to_string(), a.duration.to_string()]],
    )?;
    let mut s = Summary::new("leading Lyapunov exponent");
    s.add("L", a.length)
        .add("lambda", format!("{lambda:.6}"))
        .add("Lyapunov time", if lambda > 0.0 { format!("{:.3}", 1.0 / lambda) } else { "n/a".into() });
    finish(&a.out_dir, &s)
}
