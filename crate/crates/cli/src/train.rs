use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use pdelab::emulator::{Mode, ModelConfig, ModelParams, Phase};
use pdelab::training::{self, EpochMetrics, LossKind, Shard, TrainConfig};
use pdelab::trajectory::Trajectory;

use crate::args::{ModeArg, TrainArgs};
use crate::manifest::{derive_seed, merge, sibling, InputFile, Manifest};

/// Fully resolved training run as stored in the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    #[serde(default)]
    pub init_checkpoint: Option<String>,
}

pub fn load_data(paths: &[impl AsRef<Path>]) -> Result<(Vec<Shard>, Vec<InputFile>, String)> {
    let mut shards = Vec::new();
    let mut inputs = Vec::new();
    let mut equation: Option<String> = None;
    for p in paths {
        let p = p.as_ref();
        let t = Trajectory::load(p).with_context(|| format!("reading {}", p.display()))?;
        match &equation {
            None => equation = Some(t.meta.equation.clone()),
            Some(e) if *e != t.meta.equation => {
                bail!("{} holds '{}' data, expected '{e}'", p.display(), t.meta.equation)
            }
            _ => {}
        }
        let shard = Shard::from_trajectory(&t).with_context(|| format!("reading {}", p.display()))?;
        let mut input = InputFile::hash(p)?;
        input.conditioning = Some(shard.conditioning);
        inputs.push(input);
        shards.push(shard);
    }
    Ok((shards, inputs, equation.unwrap_or_default()))
}

fn default_model(equation: &str) -> Result<ModelConfig> {
    let mut m = match equation {
        "ks" => ModelConfig::ks(),
        "beta_zonal_mean" => ModelConfig::beta_plane(),
        other => bail!("cannot train on '{other}' data"),
    };
    m.equation = equation.into();
    Ok(m)
}

fn default_train(mode: Mode, phase: Phase, equation: &str) -> TrainConfig {
    let pre = match mode {
        Mode::Deterministic => TrainConfig::ks_pretrain(),
        Mode::Probabilistic => TrainConfig::beta_pretrain(),
    };
    match phase {
        Phase::Pretrain => pre,
        Phase::Finetune => TrainConfig::finetune_from(&pre, if equation == "ks" { 500 } else { 250 }),
    }
}

fn read_config(path: Option<&Path>) -> Result<serde_json::Value> {
    match path {
        None => Ok(json!({})),
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let v: serde_json::Value = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?;
            if !v.is_object() {
                bail!("{}: expected a JSON object with 'model' and/or 'train' sections", p.display());
            }
            Ok(v)
        }
    }
}

/// Defaults, then the JSON config file, then flags.
pub fn resolve(a: &TrainArgs, phase: Phase, equation: &str) -> Result<TrainRun> {
    let file = read_config(a.config.as_deref())?;
    let file_model = file.get("model").cloned().unwrap_or(json!({}));
    let file_train = file.get("train").cloned().unwrap_or(json!({}));

    let (model, init_checkpoint) = match phase {
        Phase::Pretrain => {
            let mut v = serde_json::to_value(default_model(equation)?)?;
            merge(&mut v, &file_model);
            let mut flags = serde_json::Map::new();
            if let Some(c) = a.channels {
                flags.insert("channels".into(), json!(c));
                if file_model.get("mlp_hidden").is_none() {
                    flags.insert("mlp_hidden".into(), json!(4 * c));
                }
            }
            if let Some(n) = a.blocks {
                flags.insert("n_blocks".into(), json!(n));
            }
            if let Some(k) = a.window {
                flags.insert("window".into(), json!(k));
            }
            if let Some(s) = a.history {
                flags.insert("history".into(), json!(s));
            }
            if let Some(m) = a.mode {
                flags.insert("mode".into(), serde_json::to_value(mode_of(m))?);
            }
            merge(&mut v, &serde_json::Value::Object(flags));
            let m: ModelConfig = serde_json::from_value(v).context("model configuration")?;
            (m, None)
        }
        Phase::Finetune => {
            let ck = a.checkpoint.as_ref().context("finetune needs --checkpoint")?;
            if a.channels.is_some() || a.blocks.is_some() || a.window.is_some() || a.history.is_some() || a.mode.is_some() {
                bail!("the architecture of a finetune run comes from its checkpoint");
            }
            let p = ModelParams::<f32>::load(ck).with_context(|| format!("reading {}", ck.display()))?;
            (p.config, Some(ck.display().to_string()))
        }
    };
    model.validate()?;
    if model.equation != equation {
        bail!("model is for '{}' but the data is '{equation}'", model.equation);
    }

    let mut t = serde_json::to_value(default_train(model.mode, phase, equation))?;
    merge(&mut t, &file_train);
    let mut flags = serde_json::Map::new();
    if let Some(e) = a.epochs {
        flags.insert("epochs".into(), json!(e));
    }
    if let Some(lr) = a.lr {
        flags.insert("lr".into(), json!(lr));
    }
    if let Some(b) = a.batch_size {
        flags.insert("batch_size".into(), json!(b));
    }
    if let Some(s) = a.seed {
        flags.insert("seed".into(), json!(s));
    }
    flags.insert("phase".into(), serde_json::to_value(phase)?);
    merge(&mut t, &serde_json::Value::Object(flags));
    let train: TrainConfig = serde_json::from_value(t).context("training configuration")?;
    train.validate()?;
    if train.loss == LossKind::CrpsSpectral && model.mode != Mode::Probabilistic {
        bail!("the CRPS loss needs a probabilistic model");
    }
    Ok(TrainRun {
        init_seed: derive_seed(train.seed, 1),
        model,
        train,
        init_checkpoint,
    })
}

fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::Deterministic => Mode::Deterministic,
        ModeArg::Probabilistic => Mode::Probabilistic,
    }
}

pub fn command(a: &TrainArgs, phase: Phase) -> Result<()> {
    let (shards, inputs, equation) = load_data(&a.data)?;
    let run = resolve(a, phase, &equation)?;
    execute(&run, shards, inputs, &a.out)
}

/// Writes the manifest, trains, then writes the checkpoint, metrics and timing.
pub fn execute(run: &TrainRun, shards: Vec<Shard>, inputs: Vec<InputFile>, out: &Path) -> Result<()> {
    let phase = run.train.phase;
    let name = match phase {
        Phase::Pretrain => "pretrain",
        Phase::Finetune => "finetune",
    };
    let metrics_path = sibling(out, "metrics.csv");
    let timing_path = sibling(out, "timing.csv");
    let mut m = Manifest::new(name, run.train.seed, serde_json::to_value(run)?);
    m.inputs = inputs;
    if let Some(ck) = &run.init_checkpoint {
        m.inputs.push(InputFile::hash(Path::new(ck))?);
    }
    m.outputs = vec![
        out.display().to_string(),
        metrics_path.display().to_string(),
        timing_path.display().to_string(),
    ];
    m.save(&sibling(out, "manifest.json"))?;

    let mut params = match &run.init_checkpoint {
        Some(ck) => ModelParams::<f32>::load_expecting(ck, &run.model)?,
        None => ModelParams::<f32>::init(run.model.clone(), run.init_seed)?,
    };
    log::info!(
        "{name}: {} parameters, {} shard(s), {} epochs",
        params.parameter_count(),
        shards.len(),
        run.train.epochs
    );
    let log_epoch = |e: &EpochMetrics, _: &ModelParams<f32>| {
        log::info!(
            "epoch {:>5}  lr {:.3e}  train {:.6e}  val {:.6e}  val_mse {:.6e}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.val_loss,
            e.val_mse
        );
    };
    let report = match phase {
        Phase::Pretrain => training::pretrain(&mut params, &shards, &run.train, log_epoch)?,
        Phase::Finetune => training::finetune(&mut params, &shards, &run.train, log_epoch)?,
    };
    params.save(out).with_context(|| format!("writing {}", out.display()))?;
    training::write_metrics_csv(&metrics_path, &report.metrics)?;
    training::write_timing_csv(&timing_path, &report.wall_seconds)?;
    Ok(())
}
