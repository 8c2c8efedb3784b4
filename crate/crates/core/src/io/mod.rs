//! Capture persistence in a SigMF-style layout, energy-gated segmentation and
//! dataset manifests.
//!
//! A capture `<name>` is two files: `<name>.iq` holding interleaved
//! little-endian `f32` I/Q pairs and `<name>.json` with the metadata object.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::Protocol;

pub const FRAME_LEN: usize = 1024;
pub const DEFAULT_GATE_DB: f64 = 6.0;
pub const DATATYPE: &str = "cf32_le";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("missing metadata sidecar {0}")]
    MissingSidecar(PathBuf),
    #[error("unsupported datatype {0:?}, expected cf32_le")]
    Datatype(String),
    #[error("{path}: {bytes} bytes is not a whole number of cf32 samples")]
    Truncated { path: PathBuf, bytes: u64 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("invalid metadata: {0}")]
    Meta(String),
    #[error("capture of {len} samples is shorter than one {frame_len}-sample frame")]
    TooShort { len: usize, frame_len: usize },
    #[error("no captures given")]
    NoCaptures,
    #[error("capture listed twice: {0}")]
    DuplicateCapture(PathBuf),
    #[error("manifest: {0}")]
    Manifest(String),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub sample_rate: f64,
    pub center_frequency: f64,
    pub datatype: String,
    pub datetime: String,
    pub device_id: u32,
    pub protocol: Protocol,
    pub scenario_seed: u64,
    #[serde(default)]
    pub extensions: serde_json::Map<String, serde_json::Value>,
}

impl CaptureMeta {
    fn validate(&self) -> Result<()> {
        if self.datatype != DATATYPE {
            return Err(IoError::Datatype(self.datatype.clone()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(IoError::Meta(format!("sample_rate {} must be positive", self.sample_rate)));
        }
        Ok(())
    }
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn data_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "iq")
}

pub fn meta_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "json")
}

pub fn write_capture(samples: &[Complex32], meta: &CaptureMeta, stem: &Path) -> Result<()> {
    meta.validate()?;
    if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
        return Err(IoError::NonFinite(i));
    }
    let mut bytes = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        bytes.extend_from_slice(&s.re.to_le_bytes());
        bytes.extend_from_slice(&s.im.to_le_bytes());
    }
    let data = data_path(stem);
    fs::write(&data, bytes).map_err(io_err(&data))?;
    let meta_file = meta_path(stem);
    let json = serde_json::to_string_pretty(meta).map_err(|source| IoError::Json { path: meta_file.clone(), source })?;
    fs::write(&meta_file, json + "\n").map_err(io_err(&meta_file))
}

pub fn read_meta(stem: &Path) -> Result<CaptureMeta> {
    let meta_file = meta_path(stem);
    if !meta_file.exists() {
        return Err(IoError::MissingSidecar(meta_file));
    }
    let text = fs::read_to_string(&meta_file).map_err(io_err(&meta_file))?;
    let meta: CaptureMeta = serde_json::from_str(&text).map_err(|source| IoError::Json { path: meta_file, source })?;
    meta.validate()?;
    Ok(meta)
}

pub fn read_capture(stem: &Path) -> Result<(Vec<Complex32>, CaptureMeta)> {
    let meta = read_meta(stem)?;
    let data = data_path(stem);
    let bytes = fs::read(&data).map_err(io_err(&data))?;
    if bytes.len() % 8 != 0 {
        return Err(IoError::Truncated { path: data, bytes: bytes.len() as u64 });
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(f32::from_le_bytes([c[0], c[1], c[2], c[3]]), f32::from_le_bytes([c[4], c[5], c[6], c[7]]))
        })
        .collect();
    Ok((samples, meta))
}

/// One labeled example cut from a capture.
#[derive(Clone, Debug, PartialEq)]
pub struct IqFrame {
    pub samples: Vec<Complex32>,
    pub device_id: u32,
    pub protocol: Protocol,
    pub scenario_seed: u64,
    pub source: PathBuf,
    pub offset: usize,
}

fn frame_power(x: &[Complex32]) -> f64 {
    x.iter().map(|v| v.norm_sqr() as f64).sum::<f64>() / x.len() as f64
}

/// Offsets of the non-overlapping frames whose mean power clears the noise
/// floor (10th percentile of frame powers) by `gate_db`.
pub fn active_offsets(samples: &[Complex32], frame_len: usize, gate_db: f64) -> Result<Vec<usize>> {
    if frame_len == 0 || samples.len() < frame_len {
        return Err(IoError::TooShort { len: samples.len(), frame_len });
    }
    let powers: Vec<f64> = samples.chunks_exact(frame_len).map(frame_power).collect();
    let mut sorted = powers.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = (0.1 * sorted.len() as f64).ceil().max(1.0) as usize - 1;
    let threshold = sorted[rank] * 10f64.powf(gate_db / 10.0);
    Ok(powers
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold && p > 0.0)
        .map(|(i, _)| i * frame_len)
        .collect())
}

pub fn segment_capture(samples: &[Complex32], meta: &CaptureMeta, source: &Path, frame_len: usize, gate_db: f64) -> Result<Vec<IqFrame>> {
    Ok(active_offsets(samples, frame_len, gate_db)?
        .into_iter()
        .map(|offset| IqFrame {
            samples: samples[offset..offset + frame_len].to_vec(),
            device_id: meta.device_id,
            protocol: meta.protocol,
            scenario_seed: meta.scenario_seed,
            source: source.to_path_buf(),
            offset,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Capture stem relative to the manifest directory.
    pub file: String,
    pub offset: usize,
    /// Dense index into `devices`.
    pub device: usize,
    /// Dense index into `protocols`.
    pub protocol: usize,
    pub scenario_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub frame_len: usize,
    pub frames: Vec<FrameRecord>,
    pub devices: Vec<u32>,
    pub protocols: Vec<Protocol>,
    pub scenarios: Vec<u64>,
}

impl DatasetManifest {
    pub fn protocol_of(&self, r: &FrameRecord) -> Protocol {
        self.protocols[r.protocol]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
        fs::write(path, json + "\n").map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let m: Self = serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        for r in &self.frames {
            if r.device >= self.devices.len() || r.protocol >= self.protocols.len() {
                return Err(IoError::Manifest(format!("label out of vocabulary in {} @ {}", r.file, r.offset)));
            }
            if !self.scenarios.contains(&r.scenario_seed) {
                return Err(IoError::Manifest(format!("unknown scenario {} in {}", r.scenario_seed, r.file)));
            }
        }
        Ok(())
    }
}

fn relative_name(stem: &Path, base: &Path) -> String {
    stem.strip_prefix(base).unwrap_or(stem).to_string_lossy().replace('\\', "/")
}

/// Segments every capture and writes a manifest whose records are sorted by
/// capture path, then offset.
pub fn build_manifest(captures: &[PathBuf], out_path: &Path, frame_len: usize, gate_db: f64) -> Result<DatasetManifest> {
    if captures.is_empty() {
        return Err(IoError::NoCaptures);
    }
    let mut seen = BTreeSet::new();
    for c in captures {
        if !seen.insert(c.clone()) {
            return Err(IoError::DuplicateCapture(c.clone()));
        }
    }
    let base = out_path.parent().unwrap_or(Path::new(""));
    let mut raw = Vec::new();
    for stem in captures {
        let (samples, meta) = read_capture(stem)?;
        for offset in active_offsets(&samples, frame_len, gate_db)? {
            raw.push((relative_name(stem, base), offset, meta.device_id, meta.protocol, meta.scenario_seed));
        }
    }
    raw.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let devices: Vec<u32> = raw.iter().map(|r| r.2).collect::<BTreeSet<_>>().into_iter().collect();
    let protocols: Vec<Protocol> = raw.iter().map(|r| r.3).collect::<BTreeSet<_>>().into_iter().collect();
    let scenarios: Vec<u64> = raw.iter().map(|r| r.4).collect::<BTreeSet<_>>().into_iter().collect();
    let frames = raw
        .into_iter()
        .map(|(file, offset, d, p, s)| FrameRecord {
            file,
            offset,
            device: devices.binary_search(&d).expect("device in vocabulary"),
            protocol: protocols.binary_search(&p).expect("protocol in vocabulary"),
            scenario_seed: s,
        })
        .collect();
    let manifest = DatasetManifest { frame_len, frames, devices, protocols, scenarios };
    manifest.write(out_path)?;
    Ok(manifest)
}

/// Reads every frame a manifest references, opening each capture once.
pub fn load_frames(manifest: &DatasetManifest, root: &Path) -> Result<Vec<IqFrame>> {
    let mut cache: BTreeMap<&str, Vec<Complex32>> = BTreeMap::new();
    let mut out = Vec::with_capacity(manifest.frames.len());
    for r in &manifest.frames {
        if !cache.contains_key(r.file.as_str()) {
            let (samples, _) = read_capture(&root.join(&r.file))?;
            cache.insert(&r.file, samples);
        }
        let samples = &cache[r.file.as_str()];
        let end = r.offset + manifest.frame_len;
        if end > samples.len() {
            return Err(IoError::Manifest(format!("{} @ {} runs past the end of the capture", r.file, r.offset)));
        }
        out.push(IqFrame {
            samples: samples[r.offset..end].to_vec(),
            device_id: manifest.devices[r.device],
            protocol: manifest.protocols[r.protocol],
            scenario_seed: r.scenario_seed,
            source: PathBuf::from(&r.file),
            offset: r.offset,
        });
    }
    Ok(out)
}
