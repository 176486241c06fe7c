//! Condition labels, trial records and their on-disk bundle format.
//!
//! A bundle directory holds a `manifest.json` plus one binary file per trial
//! (and optionally one per attention trace). Binary files are
//!
//! ```text
//! "NTRJ" | version: u32 LE = 1 | T: u32 LE | q: u32 LE | T*q f64 LE, row-major (time-major)
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::StyleParams;

pub const TRIAL_MAGIC: &[u8; 4] = b"NTRJ";
pub const TRIAL_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Identifies the experimental condition a trial was produced under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionLabel {
    /// 0 = unprimed, 1..=S = priming style.
    pub style_id: u32,
    pub text_id: u32,
    pub seed: u64,
}

impl ConditionLabel {
    pub fn new(style_id: u32, text_id: u32, seed: u64) -> Self {
        Self {
            style_id,
            text_id,
            seed,
        }
    }

    /// The (style, text) pair, ignoring the seed.
    pub fn condition_key(&self) -> (u32, u32) {
        (self.style_id, self.text_id)
    }
}

/// One recorded synthesis run for one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub id: String,
    pub condition: ConditionLabel,
    pub layer_index: usize,
    /// Rows are timesteps, columns are units.
    pub activations: DMatrix<f64>,
    /// Attention weight per character position, same row count as `activations`.
    pub attention_trace: Option<DMatrix<f64>>,
}

impl TrialRecord {
    pub fn timesteps(&self) -> usize {
        self.activations.nrows()
    }

    pub fn units(&self) -> usize {
        self.activations.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (t, q) = self.activations.shape();
        if t < 2 || q < 1 {
            return Err(Error::Shape(format!(
                "trial {} has shape {t}x{q}; need T >= 2 and q >= 1",
                self.id
            )));
        }
        if self.layer_index > 2 {
            return Err(Error::Shape(format!(
                "trial {} has layer index {}",
                self.id, self.layer_index
            )));
        }
        if self.activations.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("activations of trial {}", self.id)));
        }
        if let Some(trace) = &self.attention_trace {
            if trace.nrows() != t {
                return Err(Error::Shape(format!(
                    "attention trace of trial {} has {} rows, activations have {t}",
                    self.id,
                    trace.nrows()
                )));
            }
            if trace.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFinite(format!(
                    "attention trace of trial {} (entries must be finite and nonnegative)",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Style metadata stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleDescriptor {
    pub style_id: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<StyleParams>,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub style_id: u32,
    pub text_id: u32,
    pub seed: u64,
    pub layer_index: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub q: usize,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub texts: Vec<String>,
    pub styles: Vec<StyleDescriptor>,
    pub trials: Vec<ManifestEntry>,
}

/// A set of trials sharing a text list and style table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialBundle {
    pub texts: Vec<String>,
    pub styles: Vec<StyleDescriptor>,
    pub trials: Vec<TrialRecord>,
}

impl TrialBundle {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for trial in &self.trials {
            trial.validate()?;
            if !seen.insert((trial.id.as_str(), trial.layer_index)) {
                return Err(Error::Manifest(format!(
                    "duplicate trial id {} for layer {}",
                    trial.id, trial.layer_index
                )));
            }
            if !self.texts.is_empty() && trial.condition.text_id as usize >= self.texts.len() {
                return Err(Error::Manifest(format!(
                    "trial {} references text {} of {}",
                    trial.id,
                    trial.condition.text_id,
                    self.texts.len()
                )));
            }
        }
        Ok(())
    }

    /// Trials recorded from one layer, in bundle order.
    pub fn layer(&self, layer_index: usize) -> impl Iterator<Item = &TrialRecord> {
        self.trials
            .iter()
            .filter(move |t| t.layer_index == layer_index)
    }

    pub fn manifest(&self) -> Manifest {
        let trials = self
            .trials
            .iter()
            .enumerate()
            .map(|(i, trial)| ManifestEntry {
                id: trial.id.clone(),
                style_id: trial.condition.style_id,
                text_id: trial.condition.text_id,
                seed: trial.condition.seed,
                layer_index: trial.layer_index,
                t: trial.timesteps(),
                q: trial.units(),
                path: format!("trials/{i:05}.ntrj"),
                attention_path: trial
                    .attention_trace
                    .as_ref()
                    .map(|_| format!("trials/{i:05}.attn.ntrj")),
            })
            .collect();
        Manifest {
            texts: self.texts.clone(),
            styles: self.styles.clone(),
            trials,
        }
    }
}

/// Encodes a matrix in the trial binary format.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let (t, q) = m.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + t * q * 8);
    out.extend_from_slice(TRIAL_MAGIC);
    out.extend_from_slice(&TRIAL_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(q as u32).to_le_bytes());
    for row in 0..t {
        for col in 0..q {
            out.extend_from_slice(&m[(row, col)].to_le_bytes());
        }
    }
    out
}

/// Decodes the trial binary format. `path` is only used for error messages.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    if bytes.len() < 4 || &bytes[..4] != TRIAL_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedTrial(path.to_path_buf()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != TRIAL_VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let t = word(8) as usize;
    let q = word(12) as usize;
    let payload = &bytes[HEADER_LEN..];
    let need = t * q * 8;
    if payload.len() < need {
        return Err(Error::TruncatedTrial(path.to_path_buf()));
    }
    if payload.len() > need {
        return Err(Error::Shape(format!(
            "{} has {} trailing bytes",
            path.display(),
            payload.len() - need
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    Ok(DMatrix::from_row_iterator(t, q, values))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_trial_bundle(bundle: &TrialBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    let manifest = bundle.manifest();
    for (trial, entry) in bundle.trials.iter().zip(&manifest.trials) {
        write_file(&dir.join(&entry.path), &encode_matrix(&trial.activations))?;
        if let (Some(trace), Some(rel)) = (&trial.attention_trace, &entry.attention_path) {
            write_file(&dir.join(rel), &encode_matrix(trace))?;
        }
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn read_matrix_file(path: PathBuf) -> Result<DMatrix<f64>> {
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingTrialFile(path))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_matrix(&bytes, &path)
}

pub fn read_trial_bundle(dir: &Path) -> Result<TrialBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for entry in &manifest.trials {
        let activations = read_matrix_file(dir.join(&entry.path))?;
        if activations.shape() != (entry.t, entry.q) {
            return Err(Error::Shape(format!(
                "trial {}: manifest says {}x{}, file header says {}x{}",
                entry.id,
                entry.t,
                entry.q,
                activations.nrows(),
                activations.ncols()
            )));
        }
        let attention_trace = match &entry.attention_path {
            Some(rel) => {
                let trace = read_matrix_file(dir.join(rel))?;
                if trace.nrows() != entry.t {
                    return Err(Error::Shape(format!(
                        "attention trace of trial {} has {} rows, expected {}",
                        entry.id,
                        trace.nrows(),
                        entry.t
                    )));
                }
                Some(trace)
            }
            None => None,
        };
        trials.push(TrialRecord {
            id: entry.id.clone(),
            condition: ConditionLabel::new(entry.style_id, entry.text_id, entry.seed),
            layer_index: entry.layer_index,
            activations,
            attention_trace,
        });
    }
    let bundle = TrialBundle {
        texts: manifest.texts,
        styles: manifest.styles,
        trials,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Renders a trial as CSV: header `t,u0,..`, one row per timestep.
///
/// Values use the shortest decimal form that parses back to the same `f64`.
pub fn export_csv(trial: &TrialRecord) -> String {
    matrix_to_csv(&trial.activations)
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::from("t");
    for u in 0..m.ncols() {
        let _ = write!(out, ",u{u}");
    }
    out.push('\n');
    for t in 0..m.nrows() {
        let _ = write!(out, "{t}");
        for u in 0..m.ncols() {
            let _ = write!(out, ",{}", m[(t, u)]);
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`export_csv`].
pub fn parse_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty csv".into()))?;
    let q = header.split(',').count() - 1;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != q + 1 {
            return Err(Error::Parse(format!(
                "row {i} has {} fields, expected {}",
                fields.len(),
                q + 1
            )));
        }
        for f in &fields[1..] {
            values.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {i}: {e}")))?,
            );
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, q, &values))
}
