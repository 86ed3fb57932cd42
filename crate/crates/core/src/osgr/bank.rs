//! Feature bank of unit-norm training embeddings and its WFDB file format.
//!
//! WFDB layout (little-endian): `"WFDB"`, u8 version, u32 N, u32 D, f32
//! threshold, N·D f32 row-major vectors, N i32 labels.

use std::io::{Read, Write};

use crate::data::ClassId;
use crate::net::dot;
use crate::{Error, Result};

pub const WFDB_MAGIC: &[u8; 4] = b"WFDB";
pub const WFDB_VERSION: u8 = 1;

/// Allowed deviation of a stored row from unit norm.
pub const BANK_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    rows: Vec<f64>,
    labels: Vec<ClassId>,
    momentum: f64,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

impl FeatureBank {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<ClassId>, momentum: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("feature bank needs at least one row"));
        }
        if rows.len() != labels.len() {
            return Err(Error::invalid("feature bank rows and labels differ in count"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("bank momentum must be in [0, 1), got {momentum}")));
        }
        let dim = rows[0].len();
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: vec![dim],
                    found: vec![r.len()],
                });
            }
            let n = dot(r, r).sqrt();
            if (n - 1.0).abs() > BANK_NORM_TOL {
                return Err(Error::invalid(format!("bank row {i} has norm {n}")));
            }
            flat.extend_from_slice(r);
        }
        Ok(FeatureBank {
            dim,
            rows: flat,
            labels,
            momentum,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Cosine similarity of `v` to every row.
    pub fn similarities(&self, v: &[f64]) -> Vec<f64> {
        self.rows.chunks(self.dim).map(|r| dot(v, r)).collect()
    }

    /// `row ← normalize(m·row + (1 − m)·v)` for every `(id, v)`.
    pub fn update(&mut self, ids: &[usize], vectors: &[Vec<f64>]) -> Result<()> {
        if ids.len() != vectors.len() {
            return Err(Error::invalid("bank update ids and vectors differ in count"));
        }
        let m = self.momentum;
        for (&id, v) in ids.iter().zip(vectors) {
            if id >= self.len() {
                return Err(Error::invalid(format!("bank id {id} out of range for {} rows", self.len())));
            }
            if v.len() != self.dim {
                return Err(Error::ShapeMismatch {
                    expected: vec![self.dim],
                    found: vec![v.len()],
                });
            }
            let dim = self.dim;
            let row = &mut self.rows[id * dim..(id + 1) * dim];
            let mut mixed: Vec<f64> = row.iter().zip(v).map(|(r, x)| m * r + (1.0 - m) * x).collect();
            if normalize(&mut mixed) < 1e-12 {
                // opposite vectors cancelled; fall back to the fresh one
                mixed = v.clone();
                normalize(&mut mixed);
            }
            row.copy_from_slice(&mixed);
        }
        Ok(())
    }

    /// Overwrites row `id` with the normalized `v`.
    pub fn set_row(&mut self, id: usize, v: &[f64]) -> Result<()> {
        if id >= self.len() || v.len() != self.dim {
            return Err(Error::invalid(format!("cannot set bank row {id}")));
        }
        let dim = self.dim;
        let row = &mut self.rows[id * dim..(id + 1) * dim];
        row.copy_from_slice(v);
        normalize(row);
        Ok(())
    }

    /// Rounds every row to f32 precision, as stored on disk.
    pub fn round_to_f32(&mut self) {
        self.rows.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}

fn err(msg: impl Into<String>) -> Error {
    Error::format("WFDB", msg)
}

pub fn write_wfdb<W: Write>(bank: &FeatureBank, threshold: f64, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(17 + bank.rows.len() * 4 + bank.len() * 4);
    buf.extend_from_slice(WFDB_MAGIC);
    buf.push(WFDB_VERSION);
    buf.extend_from_slice(&(bank.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(bank.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(threshold as f32).to_le_bytes());
    for &x in &bank.rows {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    for &l in &bank.labels {
        let l = i32::try_from(l).map_err(|_| err(format!("label {l} exceeds i32")))?;
        buf.extend_from_slice(&l.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads a bank and its threshold; `momentum` is not part of the file.
pub fn read_wfdb<R: Read>(mut r: R, momentum: f64) -> Result<(FeatureBank, f64)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 17 {
        return Err(err("truncated header"));
    }
    if &bytes[..4] != WFDB_MAGIC {
        return Err(err("bad magic"));
    }
    if bytes[4] != WFDB_VERSION {
        return Err(err(format!("unsupported version {}", bytes[4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let n = u32_at(5) as usize;
    let d = u32_at(9) as usize;
    let t = f32::from_le_bytes([bytes[13], bytes[14], bytes[15], bytes[16]]) as f64;
    let want = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(17))
        .ok_or_else(|| err("sizes overflow"))?;
    if bytes.len() != want {
        return Err(err(format!("expected {want} bytes, found {}", bytes.len())));
    }
    let f32_at = |o: usize| f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|j| f32_at(17 + 4 * (i * d + j))).collect())
        .collect();
    let base = 17 + 4 * n * d;
    let labels = (0..n)
        .map(|i| {
            let l = i32::from_le_bytes([bytes[base + 4 * i], bytes[base + 4 * i + 1], bytes[base + 4 * i + 2], bytes[base + 4 * i + 3]]);
            ClassId::try_from(l).map_err(|_| err(format!("negative label {l}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if !(t >= 0.0) {
        return Err(err(format!("threshold {t} is negative")));
    }
    Ok((FeatureBank::new(rows, labels, momentum)?, t))
}
