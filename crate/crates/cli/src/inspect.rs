use std::fs::File;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use pdelab::emulator::ModelParams;
use pdelab::trajectory::read_meta;

pub fn command(path: &Path) -> Result<()> {
    let mut magic = [0u8; 5];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = String::new();
    match &magic {
        b"PDET1" => {
            let (meta, frames) = read_meta(path)?;
            writeln!(out, "PDET1 trajectory: {frames} frame(s) of {:?}", meta.n_points)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&meta)?)?;
        }
        b"NPEC1" => {
            let p = ModelParams::<f32>::load(path)?;
            writeln!(out, "NPEC1 checkpoint: {} parameters", p.parameter_count())?;
            writeln!(out, "config: {}", serde_json::to_string_pretty(&p.config)?)?;
            writeln!(out, "normalization: mean {} std {}", p.normalization.mean, p.normalization.std)?;
            for (name, t) in p.named() {
                writeln!(out, "  {name:<24} {:?}", t.shape())?;
            }
        }
        _ if magic.starts_with(b"{") => {
            let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        _ => bail!("{}: not a PDET1, NPEC1 or JSON file", path.display()),
    }
    match std::io::stdout().write_all(out.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
