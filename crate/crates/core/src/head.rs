//! Output-projection ("LM head") stand-in: row gathering, logits, greedy
//! decoding over a reduced head, and memory accounting.
//!
//! # Weight file layout
//!
//! All integers little-endian.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `VSLMHEAD`                        |
//! | 8      | 4    | format version, `1`                     |
//! | 12     | 8    | rows (vocabulary size)                  |
//! | 20     | 4    | hidden size `d`                         |
//! | 24     | 4    | dtype code: `1` = f32, `2` = f16        |
//! | 28     | ...  | `rows * d` elements, row-major          |

use std::path::Path;

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::SelectionPlan;
use crate::token::TokenId;

pub const MAGIC: &[u8; 8] = b"VSLMHEAD";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    pub fn bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F16 => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F16),
            _ => Err(Error::Integrity(format!("unknown dtype code {code}"))),
        }
    }

    pub fn from_bytes(bytes: usize) -> Result<Self> {
        match bytes {
            4 => Ok(Dtype::F32),
            2 => Ok(Dtype::F16),
            _ => Err(Error::Config(format!(
                "dtype must be 2 or 4 bytes, got {bytes}"
            ))),
        }
    }
}

/// Dense row-major weight matrix, one row per vocabulary token. Values are
/// held as f32; `dtype` records the storage width for accounting and I/O.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMatrix {
    rows: usize,
    dim: usize,
    dtype: Dtype,
    data: Vec<f32>,
}

impl HeadMatrix {
    pub fn new(rows: usize, dim: usize, dtype: Dtype, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Dimension {
                expected: rows * dim,
                found: data.len(),
            });
        }
        let data = match dtype {
            Dtype::F32 => data,
            Dtype::F16 => data
                .into_iter()
                .map(|x| f16::from_f32(x).to_f32())
                .collect(),
        };
        Ok(Self {
            rows,
            dim,
            dtype,
            data,
        })
    }

    /// Matrix with entries drawn uniformly from [-1, 1) by a seeded generator.
    pub fn random(rows: usize, dim: usize, dtype: Dtype, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        Self::new(rows, dim, dtype, data).expect("sized correctly")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * self.dtype.bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.dtype.code().to_le_bytes());
        for &x in &self.data {
            match self.dtype {
                Dtype::F32 => out.extend_from_slice(&x.to_le_bytes()),
                Dtype::F16 => out.extend_from_slice(&f16::from_f32(x).to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Integrity(
                "not a head weight file (bad magic)".into(),
            ));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported weight file version {version}"
            )));
        }
        let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let dim = u32_at(20) as usize;
        let dtype = Dtype::from_code(u32_at(24))?;
        let body = &bytes[HEADER_LEN..];
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(dtype.bytes()))
            .ok_or_else(|| Error::Integrity("weight file shape overflows".into()))?;
        if body.len() != expected {
            return Err(Error::Integrity(format!(
                "weight file body has {} bytes, header implies {expected}",
                body.len()
            )));
        }
        let data = match dtype {
            Dtype::F32 => body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F16 => body
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
        };
        Ok(Self {
            rows,
            dim,
            dtype,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Copies the rows named by `plan` into a reduced head; row `k` of the result
/// is row `plan.active_ids[k]` of `head`.
pub fn gather(head: &HeadMatrix, plan: &SelectionPlan) -> Result<HeadMatrix> {
    if plan.full_vocab_size != head.rows {
        return Err(Error::Dimension {
            expected: head.rows,
            found: plan.full_vocab_size,
        });
    }
    let mut data = Vec::with_capacity(plan.len() * head.dim);
    for &id in &plan.active_ids {
        if id.index() >= head.rows {
            return Err(Error::InvalidToken {
                id: id.0,
                size: head.rows,
                doc_index: None,
            });
        }
        data.extend_from_slice(head.row(id.index()));
    }
    Ok(HeadMatrix {
        rows: plan.len(),
        dim: head.dim,
        dtype: head.dtype,
        data,
    })
}

#[inline]
fn dot(row: &[f32], hidden: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (w, h) in row.iter().zip(hidden) {
        acc += w * h;
    }
    acc
}

/// Row-wise dot products, accumulated in index order.
pub fn logits(head: &HeadMatrix, hidden: &[f32]) -> Result<Vec<f32>> {
    if hidden.len() != head.dim {
        return Err(Error::Dimension {
            expected: head.dim,
            found: hidden.len(),
        });
    }
    Ok((0..head.rows).map(|i| dot(head.row(i), hidden)).collect())
}

/// [`logits`] with rows computed in parallel; bitwise identical to it.
pub fn logits_par(head: &HeadMatrix, hidden: &[f32]) -> Result<Vec<f32>> {
    if hidden.len() != head.dim {
        return Err(Error::Dimension {
            expected: head.dim,
            found: hidden.len(),
        });
    }
    Ok((0..head.rows)
        .into_par_iter()
        .map(|i| dot(head.row(i), hidden))
        .collect())
}

/// Index of the largest value; ties go to the lowest index, NaNs never win.
pub fn argmax(values: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy decoding step over a reduced head, returning a global token id.
pub fn greedy_step(subhead: &HeadMatrix, hidden: &[f32], plan: &SelectionPlan) -> Result<TokenId> {
    if subhead.rows != plan.len() {
        return Err(Error::Dimension {
            expected: plan.len(),
            found: subhead.rows,
        });
    }
    if subhead.rows == 0 {
        return Err(Error::Empty("greedy step over an empty head"));
    }
    let scores = logits(subhead, hidden)?;
    let local = argmax(&scores).ok_or(Error::Empty("every logit is NaN"))?;
    plan.remap_out(local)
}

/// Byte accounting for the embedding table and output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub full_vocab_size: u64,
    pub hidden_size: u64,
    pub dtype_bytes: u64,
    pub active_rows: u64,
    pub full_head_bytes: u64,
    pub sub_head_bytes: u64,
    /// Zero: the embedding table stays in host memory.
    pub embedding_bytes_gpu: u64,
    pub embedding_bytes_host: u64,
    /// Device bytes of both vocabulary components without reduction.
    pub baseline_device_bytes: u64,
    /// Device bytes of both vocabulary components with reduction.
    pub device_bytes: u64,
    /// `1 - device_bytes / baseline_device_bytes`.
    pub saved_fraction: f64,
    /// Savings on the output head alone.
    pub head_saved_fraction: f64,
}

pub fn memory_report(
    full_size: u64,
    hidden_size: u64,
    dtype_bytes: u64,
    active_rows: u64,
) -> MemoryReport {
    let row_bytes = hidden_size * dtype_bytes;
    let full_head_bytes = full_size * row_bytes;
    let sub_head_bytes = active_rows * row_bytes;
    let embedding_bytes_host = full_size * row_bytes;
    let embedding_bytes_gpu = 0;
    let baseline_device_bytes = full_head_bytes + embedding_bytes_host;
    let device_bytes = sub_head_bytes + embedding_bytes_gpu;
    let saved = |kept: u64, total: u64| {
        if total == 0 {
            0.0
        } else {
            1.0 - kept as f64 / total as f64
        }
    };
    MemoryReport {
        full_vocab_size: full_size,
        hidden_size,
        dtype_bytes,
        active_rows,
        full_head_bytes,
        sub_head_bytes,
        embedding_bytes_gpu,
        embedding_bytes_host,
        baseline_device_bytes,
        device_bytes,
        saved_fraction: saved(device_bytes, baseline_device_bytes),
        head_saved_fraction: saved(sub_head_bytes, full_head_bytes),
    }
}

/// [`memory_report`] for a selection plan.
pub fn plan_memory_report(
    plan: &SelectionPlan,
    hidden_size: u64,
    dtype_bytes: u64,
) -> MemoryReport {
    memory_report(
        plan.full_vocab_size as u64,
        hidden_size,
        dtype_bytes,
        plan.len() as u64,
    )
}
