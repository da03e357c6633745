//! Seeded synthetic stand-in for spoof-detection corpora.
//!
//! Every trial is a sequence of feature frames. Genuine trials carry a slow
//! carrier sinusoid with per-dimension phase offsets plus gaussian noise;
//! spoof trials add a faster artifact sinusoid on a leading block of
//! dimensions. The source and target tasks differ only in the artifact
//! frequency, which gives a minimal pretrain-then-adapt setup: a model tuned
//! to one artifact frequency meets a shifted one.

use crate::error::{Error, Result};
use crate::evaluation::Label;
use crate::numerics::{Matrix, RngStream};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Artifact frequency of the source (pretraining) task, cycles per sequence.
pub const SOURCE_ARTIFACT_FREQ: f64 = 4.0;
/// Artifact frequency of the target (adaptation) task.
pub const TARGET_ARTIFACT_FREQ: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        })
    }
}

/// Generation parameters for one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_per_class: usize,
    pub seq_len: usize,
    pub feat_dim: usize,
    /// Frame-noise standard deviation.
    pub noise_sigma: f64,
    /// Amplitude of the spoof artifact sinusoid.
    pub artifact_amp: f64,
    /// Artifact frequency in cycles per sequence.
    pub artifact_freq: f64,
    /// Number of leading dimensions the artifact is added to.
    pub artifact_dims: usize,
    /// Carrier frequency in cycles per sequence.
    pub base_freq: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Defaults for a given geometry and task, everything else pinned to the
    /// crate-wide synthetic defaults.
    pub fn new(n_per_class: usize, seq_len: usize, feat_dim: usize, seed: u64) -> Self {
        DatasetSpec {
            n_per_class,
            seq_len,
            feat_dim,
            noise_sigma: 1.0,
            artifact_amp: 0.6,
            artifact_freq: SOURCE_ARTIFACT_FREQ,
            artifact_dims: (feat_dim / 4).max(1),
            base_freq: 1.0,
            seed,
        }
    }

    pub fn with_artifact_freq(mut self, freq: f64) -> Self {
        self.artifact_freq = freq;
        self
    }

    pub fn with_artifact_amp(mut self, amp: f64) -> Self {
        self.artifact_amp = amp;
        self
    }

    pub fn with_noise_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::config("n_per_class must be at least 1"));
        }
        if self.seq_len < 2 {
            return Err(Error::config("seq_len must be at least 2"));
        }
        if self.feat_dim == 0 {
            return Err(Error::config("feat_dim must be at least 1"));
        }
        if self.noise_sigma < 0.0 || self.artifact_amp < 0.0 {
            return Err(Error::config("noise_sigma and artifact_amp must be >= 0"));
        }
        if self.artifact_dims > self.feat_dim {
            return Err(Error::config(format!(
                "artifact_dims {} exceeds feat_dim {}",
                self.artifact_dims, self.feat_dim
            )));
        }
        Ok(())
    }
}

/// One labelled feature sequence (`seq_len` x `feat_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub label: Label,
    pub features: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trials: Vec<Trial>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Generates a dataset, fully determined by the spec (including its seed).
/// Trials alternate genuine/spoof so every prefix is near-balanced.
pub fn generate_dataset(spec: &DatasetSpec, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed);
    let mut trials = Vec::with_capacity(2 * spec.n_per_class);
    for _ in 0..spec.n_per_class {
        for label in [Label::Genuine, Label::Spoof] {
            let idx = trials.len();
            trials.push(Trial {
                trial_id: format!("{split}_{idx:06}"),
                label,
                features: generate_sequence(spec, label, &mut rng),
            });
        }
    }
    Ok(Dataset { trials, split })
}

fn generate_sequence(spec: &DatasetSpec, label: Label, rng: &mut RngStream) -> Matrix {
    let mut m = Matrix::zeros(spec.seq_len, spec.feat_dim);
    let len = spec.seq_len as f64;
    for t in 0..spec.seq_len {
        let phase_t = TAU * spec.base_freq * t as f64 / len;
        let artifact = spec.artifact_amp * (TAU * spec.artifact_freq * t as f64 / len).sin();
        let row = m.row_mut(t);
        for (j, v) in row.iter_mut().enumerate() {
            let phi = TAU * j as f64 / spec.feat_dim as f64;
            let mut x = (phase_t + phi).sin() + spec.noise_sigma * rng.next_gaussian();
            if label == Label::Spoof && j < spec.artifact_dims {
                x += artifact;
            }
            *v = x;
        }
    }
    m
}

/// Fits a sequence to `target_len` frames: longer sequences keep their last
/// `target_len` frames, shorter ones get zero frames appended.
pub fn crop_or_pad(seq: &Matrix, target_len: usize) -> Matrix {
    let (len, dim) = seq.shape();
    if len == target_len {
        return seq.clone();
    }
    let mut out = Matrix::zeros(target_len, dim);
    if len > target_len {
        let skip = len - target_len;
        for t in 0..target_len {
            out.row_mut(t).copy_from_slice(seq.row(skip + t));
        }
    } else {
        for t in 0..len {
            out.row_mut(t).copy_from_slice(seq.row(t));
        }
    }
    out
}

const MAGIC: &[u8; 4] = b"LADS";
const FORMAT_VERSION: u32 = 1;

/// Writes the binary dataset format: magic, version, counts, then per trial
/// the id, label byte and `f32` little-endian features row-major.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let (seq_len, feat_dim) = match ds.trials.first() {
        Some(t) => t.features.shape(),
        None => (0, 0),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(ds.trials.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(seq_len as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(feat_dim as u32).to_le_bytes()).map_err(io_err)?;
    for t in &ds.trials {
        if t.features.shape() != (seq_len, feat_dim) {
            return Err(Error::contract(format!(
                "trial {} has shape {} but the dataset header says {}x{}",
                t.trial_id,
                t.features.shape_string(),
                seq_len,
                feat_dim
            )));
        }
        let id = t.trial_id.as_bytes();
        if id.len() > u16::MAX as usize {
            return Err(Error::contract(format!("trial id too long: {}", t.trial_id)));
        }
        w.write_all(&(id.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(id).map_err(io_err)?;
        w.write_all(&[match t.label {
            Label::Genuine => 0u8,
            Label::Spoof => 1u8,
        }])
        .map_err(io_err)?;
        for v in t.features.data() {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads a dataset file; features are promoted to `f64`. The split tag is not
/// stored on disk, so the caller assigns it.
pub fn read_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let parse_err = |msg: String| Error::parse(path, 0, msg);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, "magic")?;
    if &magic != MAGIC {
        return Err(parse_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let version = read_u32(&mut r, path, "version")?;
    if version != FORMAT_VERSION {
        return Err(parse_err(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n_trials = read_u32(&mut r, path, "trial count")? as usize;
    let seq_len = read_u32(&mut r, path, "seq_len")? as usize;
    let feat_dim = read_u32(&mut r, path, "feat_dim")? as usize;

    let mut trials = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let mut len_buf = [0u8; 2];
        read_exact(&mut r, &mut len_buf, path, "trial id length")?;
        let id_len = u16::from_le_bytes(len_buf) as usize;
        let mut id = vec![0u8; id_len];
        read_exact(&mut r, &mut id, path, "trial id")?;
        let trial_id = String::from_utf8(id)
            .map_err(|_| parse_err(format!("trial {i}: id is not UTF-8")))?;
        let mut label_buf = [0u8; 1];
        read_exact(&mut r, &mut label_buf, path, "label")?;
        let label = match label_buf[0] {
            0 => Label::Genuine,
            1 => Label::Spoof,
            other => return Err(parse_err(format!("trial {i}: bad label byte {other}"))),
        };
        let mut data = Vec::with_capacity(seq_len * feat_dim);
        let mut f32_buf = [0u8; 4];
        for _ in 0..seq_len * feat_dim {
            read_exact(&mut r, &mut f32_buf, path, "feature payload")?;
            let v = f32::from_le_bytes(f32_buf) as f64;
            if !v.is_finite() {
                return Err(parse_err(format!("trial {i}: non-finite feature value")));
            }
            data.push(v);
        }
        trials.push(Trial {
            trial_id,
            label,
            features: Matrix::from_vec(seq_len, feat_dim, data)?,
        });
    }
    Ok(Dataset { trials, split })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::parse(path, 0, format!("truncated file while reading {what}")))
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path, what)?;
    Ok(u32::from_le_bytes(buf))
}
