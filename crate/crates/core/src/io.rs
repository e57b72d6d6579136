//! On-disk formats: flat binary arrays, JSON sidecars, CSV tables and PNG.
//!
//! Array file layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `CCS1` |
//! | 4 | dtype code (u32, 1 = f64) |
//! | 4 | ndim (u32) |
//! | 8·ndim | dims (u64 each) |
//! | rest | row-major payload |

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CCS1";
pub const DTYPE_F64: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayFile {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "dims {dims:?} hold {n} values, payload has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_array<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Self {
        Self {
            dims: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.dims), self.data.clone()).expect("dims checked on construction")
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::Dimension(format!("expected a 2-D array, found dims {:?}", self.dims)));
        }
        Ok(Array2::from_shape_vec((self.dims[0], self.dims[1]), self.data.clone()).expect("dims checked"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DTYPE_F64.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut word = [0u8; 4];
        let short = |what: &str| Error::Data(format!("array file truncated in {what}"));
        r.read_exact(&mut word).map_err(|_| short("magic"))?;
        if &word != MAGIC {
            return Err(Error::Data("not a CCS1 array file (bad magic)".into()));
        }
        r.read_exact(&mut word).map_err(|_| short("dtype"))?;
        let dtype = u32::from_le_bytes(word);
        if dtype != DTYPE_F64 {
            return Err(Error::Data(format!("unsupported dtype code {dtype}")));
        }
        r.read_exact(&mut word).map_err(|_| short("ndim"))?;
        let ndim = u32::from_le_bytes(word) as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut dword = [0u8; 8];
        for _ in 0..ndim {
            r.read_exact(&mut dword).map_err(|_| short("dims"))?;
            dims.push(u64::from_le_bytes(dword) as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Data("array dims overflow".into()))?;
        if r.len() != n * 8 {
            return Err(Error::Data(format!(
                "payload is {} bytes, dims {dims:?} need {}",
                r.len(),
                n * 8
            )));
        }
        let data = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Provenance record written next to every artifact as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    /// SHA-256 of each input sidecar, keyed by file name.
    #[serde(default)]
    pub inputs: Vec<(String, String)>,
    #[serde(default)]
    pub dims: Vec<usize>,
    /// Stage-specific details.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Sidecar {
    pub fn new(stage: &str, seed: u64, config_hash: &str) -> Self {
        Self {
            stage: stage.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            inputs: Vec::new(),
            dims: Vec::new(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn write_for(&self, artifact: &Path) -> Result<()> {
        let path = sidecar_path(artifact);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read_for(artifact: &Path) -> Result<Self> {
        let path = sidecar_path(artifact);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Refuse artifacts produced under a different configuration.
    pub fn require_hash(&self, expected: &str) -> Result<()> {
        if self.config_hash != expected {
            return Err(Error::Provenance {
                expected: expected.to_string(),
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }
}

/// SHA-256 of a file's bytes, lower-case hex.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Write rows of string fields as CSV.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a CSV with a header row; returns the header and the records.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// One value per line, no header.
pub fn write_series_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(values.len() * 20);
    for v in values {
        text.push_str(&format!("{v}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_series_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("{}: bad value {l:?}: {e}", path.display())))
        })
        .collect()
}

/// Square matrix as CSV with a label column and label header.
pub fn write_matrix_csv(path: &Path, labels: &[&str], m: &Array2<f64>) -> Result<()> {
    let mut header = vec!["actual\\predicted"];
    header.extend_from_slice(labels);
    let rows: Vec<Vec<String>> = m
        .outer_iter()
        .zip(labels)
        .map(|(row, l)| {
            std::iter::once(l.to_string())
                .chain(row.iter().map(|v| format!("{v}")))
                .collect()
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let (header, rows) = read_csv(path)?;
    let labels: Vec<String> = header.into_iter().skip(1).collect();
    let n = labels.len();
    if rows.len() != n {
        return Err(Error::Data(format!(
            "{}: {} rows for {n} labels",
            path.display(),
            rows.len()
        )));
    }
    let mut m = Array2::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n + 1 {
            return Err(Error::Data(format!("{}: row {i} has {} fields", path.display(), row.len())));
        }
        for j in 0..n {
            m[[i, j]] = row[j + 1]
                .parse()
                .map_err(|e| Error::Data(format!("{}: bad entry {:?}: {e}", path.display(), row[j + 1])))?;
        }
    }
    Ok((labels, m))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale PNG; values are linearly scaled so `max` maps to white.
pub fn write_gray_png(path: &Path, values: &Array2<f64>, max: f64) -> Result<()> {
    let (rows, cols) = values.dim();
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let img = GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        Luma([to_u8(values[[y as usize, x as usize]] * scale)])
    });
    img.save(path)?;
    Ok(())
}

/// `H x W x 3` array in [0, 1] as an 8-bit RGB PNG.
pub fn write_rgb_png(path: &Path, pixels: &ndarray::Array3<f64>) -> Result<()> {
    let (rows, cols, ch) = pixels.dim();
    if ch != 3 {
        return Err(Error::Dimension(format!("RGB export needs 3 channels, got {ch}")));
    }
    let img = RgbImage::from_fn(cols as u32, rows as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        Rgb([to_u8(pixels[[y, x, 0]]), to_u8(pixels[[y, x, 1]]), to_u8(pixels[[y, x, 2]])])
    });
    img.save(path)?;
    Ok(())
}
