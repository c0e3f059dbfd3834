//! Time-ordered snapshot sequences and the `PDET1` container.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 5    | magic `b"PDET1"`                          |
//! | 5      | 2    | format version (`u16`, currently 1)       |
//! | 7      | 4    | metadata length `H` in bytes (`u32`)      |
//! | 11     | H    | UTF-8 JSON metadata ([`TrajectoryMeta`])  |
//! | 11+H   | 8    | frame count `T` (`u64`)                   |
//! | 19+H   | 8    | values per frame `F` (`u64`)              |
//! | 27+H   | 4·T·F| frames as `f32`, frame-major              |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PDET_MAGIC: &[u8; 5] = b"PDET1";
pub const PDET_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreationInfo {
    pub tool: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Default for CreationInfo {
    fn default() -> Self {
        Self {
            tool: "pdelab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            note: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    /// `ks`, `beta_zonal_mean`, `beta_vorticity`, `emulator`, `histogram3d`, …
    pub equation: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub dims: usize,
    /// Physical shape of one frame, outer axis first.
    pub n_points: Vec<usize>,
    /// Domain length per axis, outer axis first.
    pub domain_length: Vec<f64>,
    /// Inner integration step (0 when not applicable).
    pub dt: f64,
    pub snapshot_interval: f64,
    pub start_time: f64,
    pub seed: u64,
    #[serde(default)]
    pub creation: CreationInfo,
}

impl TrajectoryMeta {
    pub fn frame_len(&self) -> usize {
        self.n_points.iter().product()
    }

    pub fn parameter(&self, key: &str) -> Option<f64> {
        self.parameters.get(key).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub frames: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(meta: TrajectoryMeta) -> Self {
        Self {
            meta,
            frames: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.meta.frame_len()
    }

    pub fn push(&mut self, frame: Vec<f64>) -> Result<()> {
        if frame.len() != self.frame_len() {
            return Err(Error::shape(self.frame_len(), frame.len()));
        }
        self.frames.push(frame);
        Ok(())
    }

    pub fn time(&self, index: usize) -> f64 {
        self.meta.start_time + index as f64 * self.meta.snapshot_interval
    }

    pub fn max_abs(&self) -> f64 {
        self.frames
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Frames `start..end` with the start time shifted accordingly.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        let mut meta = self.meta.clone();
        meta.start_time = self.time(start);
        Trajectory {
            meta,
            frames: self.frames[start..end].to_vec(),
        }
    }

    /// Same frames in reverse time order.
    pub fn reversed(&self) -> Trajectory {
        let mut frames = self.frames.clone();
        frames.reverse();
        Trajectory {
            meta: self.meta.clone(),
            frames,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.meta)?;
        w.write_all(PDET_MAGIC)?;
        w.write_all(&PDET_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.frames.len() as u64).to_le_bytes())?;
        w.write_all(&(self.frame_len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * self.frame_len());
        for frame in &self.frames {
            buf.clear();
            for &v in frame {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let meta = read_header(&mut r)?;
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n_frames = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let frame_len = u64::from_le_bytes(word) as usize;
        if frame_len != meta.frame_len() {
            return Err(Error::Format(format!(
                "frame length {frame_len} disagrees with metadata shape {:?}",
                meta.n_points
            )));
        }
        let mut frames = Vec::with_capacity(n_frames);
        let mut raw = vec![0u8; 4 * frame_len];
        for _ in 0..n_frames {
            r.read_exact(&mut raw)?;
            frames.push(
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect(),
            );
        }
        Ok(Self { meta, frames })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Rounds every value through `f32`, matching what a save/load cycle yields.
    pub fn quantized(&self) -> Trajectory {
        Trajectory {
            meta: self.meta.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().map(|&v| v as f32 as f64).collect())
                .collect(),
        }
    }
}

fn read_header(r: &mut impl Read) -> Result<TrajectoryMeta> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != PDET_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected PDET1")));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != PDET_VERSION {
        return Err(Error::Format(format!("unsupported PDET version {version}")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    Ok(serde_json::from_slice(&header)?)
}

/// Reads only the metadata block of a `PDET1` file.
pub fn read_meta(path: impl AsRef<Path>) -> Result<(TrajectoryMeta, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    let meta = read_header(&mut r)?;
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    Ok((meta, u64::from_le_bytes(word) as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let meta = TrajectoryMeta {
            equation: "ks".into(),
            parameters: [("L".to_string(), 22.0)].into_iter().collect(),
            dims: 1,
            n_points: vec![4],
            domain_length: vec![22.0],
            dt: 0.025,
            snapshot_interval: 1.0,
            start_time: 10.0,
            seed: 7,
            creation: CreationInfo::default(),
        };
        let mut t = Trajectory::new(meta);
        t.push(vec![0.5, -1.25, 2.0, 0.0]).unwrap();
        t.push(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        t
    }

    #[test]
    fn roundtrip_bytes() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"PDET1");
        assert_eq!(u16::from_le_bytes([buf[5], buf[6]]), 1);
        let back = Trajectory::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.time(1), 11.0);
    }

    #[test]
    fn layout_is_exact() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let h = u32::from_le_bytes([buf[7], buf[8], buf[9], buf[10]]) as usize;
        let base = 11 + h;
        assert_eq!(u64::from_le_bytes(buf[base..base + 8].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[base + 8..base + 16].try_into().unwrap()), 4);
        assert_eq!(buf.len(), base + 16 + 2 * 4 * 4);
        let first = f32::from_le_bytes(buf[base + 16..base + 20].try_into().unwrap());
        assert_eq!(first, 0.5);
    }

    #[test]
    fn rejects_bad_magic_and_push() {
        let mut t = sample();
        assert!(t.push(vec![1.0]).is_err());
        let err = Trajectory::read_from(&b"NOPE1\x01\x00"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
