//! Plain-text container of named float64 tensors plus string metadata.
//!
//! ```text
//! # neurotraj tensors v1
//! meta <key> <value...>
//! tensor <name> <rows> <cols>
//! <rows*cols values, row-major, whitespace separated>
//! ```
//!
//! Values are printed in shortest round-trip form, so a write/read cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const HEADER: &str = "# neurotraj tensors v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, DMatrix<f64>)>,
}

impl TensorFile {
    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, name: &str, m: &DMatrix<f64>) {
        self.tensors.push((name.to_string(), m.clone()));
    }

    pub fn push_vec(&mut self, name: &str, v: &[f64]) {
        self.tensors
            .push((name.to_string(), DMatrix::from_row_slice(v.len(), 1, v)));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse(format!("missing meta key {key}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("bad value for meta key {key}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Parse(format!("missing tensor {name}")))
    }

    /// Fetches a tensor and checks its shape.
    pub fn tensor_shaped(&self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let m = self.tensor(name)?;
        if m.shape() != (rows, cols) {
            return Err(Error::Shape(format!(
                "tensor {name} is {}x{}, expected {rows}x{cols}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m.clone())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, m) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", m.nrows(), m.ncols());
            let mut first = true;
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    let _ = write!(out, "{}", m[(r, c)]);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HEADER) {
            return Err(Error::Parse("missing tensor file header".into()));
        }
        let mut file = TensorFile::default();
        while let Some(line) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                file.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::Parse(format!("bad tensor line: {line}")));
                }
                let rows: usize = parts[1]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad rows in: {line}")))?;
                let cols: usize = parts[2]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad cols in: {line}")))?;
                let data = lines.next().unwrap_or("");
                let values = data
                    .split_whitespace()
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad value {s} in {}", parts[0])))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if values.len() != rows * cols {
                    return Err(Error::Shape(format!(
                        "tensor {} declares {rows}x{cols} but has {} values",
                        parts[0],
                        values.len()
                    )));
                }
                file.tensors.push((
                    parts[0].to_string(),
                    DMatrix::from_row_slice(rows, cols, &values),
                ));
            } else {
                return Err(Error::Parse(format!("unexpected line: {line}")));
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
