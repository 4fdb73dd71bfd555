//! Learning-element encoding: hashed text vectors, embedding tables and input
//! composition.
//!
//! Text vectors use signed feature hashing over lowercase alphanumeric
//! tokens. For token `t` with bytes `b`, `h = fnv1a64(b)` selects bucket
//! `(h >> 32) % d_t` and `s = fnv1a64(b ++ [0xFF])` selects the sign
//! (`+1` when the top bit of `s` is clear). Counts are accumulated and the
//! result is L2-normalised; empty text maps to the zero vector.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{concept_base_vectors, concept_set_vector};
use crate::corpus::Corpus;
use crate::error::{PalError, Result};
use crate::nn::{matmul, Tensor};

pub const DEFAULT_TEXT_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn hash_slot(token: &str, dim: usize) -> (usize, f64) {
    let b = token.as_bytes();
    let bucket = ((fnv1a64(b) >> 32) % dim as u64) as usize;
    let mut salted = b.to_vec();
    salted.push(0xFF);
    let sign = if fnv1a64(&salted) >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

pub fn text_vector(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for t in tokenize(text) {
        let (bucket, sign) = hash_slot(&t, dim);
        v[bucket] += sign;
    }
    normalize(&mut v);
    v
}

pub(crate) fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[derive(Deserialize)]
struct TextVectorRec {
    video: String,
    vector: Vec<f64>,
}

/// Precomputed per-video text vectors, indexed by video.
pub type TextVectors = HashMap<usize, Vec<f64>>;

/// Reads `text_vectors.jsonl`; vectors are L2-normalised on load.
pub fn load_text_vectors(path: &Path, corpus: &Corpus, dim: usize) -> Result<TextVectors> {
    let text = fs::read_to_string(path).map_err(|e| PalError::io(path, e))?;
    let file = path.display().to_string();
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextVectorRec = serde_json::from_str(line).map_err(|e| PalError::Parse {
            file: file.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.vector.len() != dim {
            return Err(PalError::Parse {
                file: file.clone(),
                line: i + 1,
                msg: format!("vector has dimension {}, expected {dim}", rec.vector.len()),
            });
        }
        let v = corpus.video_index(&rec.video).ok_or_else(|| PalError::DanglingId {
            kind: "video",
            id: rec.video.clone(),
        })?;
        let mut vec = rec.vector;
        normalize(&mut vec);
        out.insert(v, vec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    #[default]
    Text,
    Concept,
}

/// Frozen raw vector per video (`|V|×d_t`), before projection.
pub fn raw_vectors(corpus: &Corpus, mode: TokenMode, dim: usize, overrides: Option<&TextVectors>) -> Result<Tensor> {
    let mut raw = Tensor::zeros(&[corpus.videos.len(), dim]);
    let base = match mode {
        TokenMode::Concept => Some(concept_base_vectors(&corpus.concepts, dim)),
        TokenMode::Text => None,
    };
    let mut empty = 0;
    for (i, v) in corpus.videos.iter().enumerate() {
        let vec = match (&base, overrides.and_then(|o| o.get(&i))) {
            (None, Some(o)) => o.clone(),
            (None, None) => text_vector(&v.subtitles, dim),
            (Some(table), _) => concept_set_vector(&v.concepts, table, dim)?,
        };
        if vec.iter().all(|&x| x == 0.0) {
            empty += 1;
        }
        raw.row_mut(i).copy_from_slice(&vec);
    }
    if empty > 0 {
        log::warn!("{empty} videos have an empty raw vector; their token rows equal the projection bias");
    }
    Ok(raw)
}

/// Owning course of every video, the row selector for the meta table.
pub fn video_courses(corpus: &Corpus) -> Vec<usize> {
    corpus.videos.iter().map(|v| v.course).collect()
}

/// Index of the special rows in [`EmbeddingTables::special`].
pub const CLS: usize = 0;
pub const MASK: usize = 1;
pub const PAD: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTables {
    /// `d_t×d` projection applied to the frozen raw vectors.
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    /// One row per course.
    pub meta: Tensor,
    /// `(N+1)×d`; row 0 belongs to the `[CLS]` slot.
    pub positions: Tensor,
    /// `[CLS]`, `[MASK]`, `[PAD]`.
    pub special: Tensor,
}

impl EmbeddingTables {
    pub fn init<R: Rng>(d_t: usize, d: usize, n_courses: usize, max_len: usize, rng: &mut R) -> Self {
        let xavier = (6.0 / (d_t + d) as f64).sqrt();
        EmbeddingTables {
            proj_w: Tensor::uniform(&[d_t, d], xavier, rng),
            proj_b: Tensor::zeros(&[d]),
            meta: Tensor::uniform(&[n_courses, d], 0.02, rng),
            positions: Tensor::uniform(&[max_len + 1, d], 0.02, rng),
            special: Tensor::uniform(&[3, d], 0.02, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EmbeddingTables {
            proj_w: Tensor::zeros_like(&self.proj_w),
            proj_b: Tensor::zeros_like(&self.proj_b),
            meta: Tensor::zeros_like(&self.meta),
            positions: Tensor::zeros_like(&self.positions),
            special: Tensor::zeros_like(&self.special),
        }
    }

    pub fn d(&self) -> usize {
        self.proj_w.cols()
    }

    /// Longest item window `N`.
    pub fn max_len(&self) -> usize {
        self.positions.rows() - 1
    }

    /// Projected token table `E_v = raw·W_p + b_p`.
    pub fn token_table(&self, raw: &Tensor) -> Result<Tensor> {
        let mut t = matmul(raw, &self.proj_w)?;
        for i in 0..t.rows() {
            for (x, &b) in t.row_mut(i).iter_mut().zip(self.proj_b.data()) {
                *x += b;
            }
        }
        Ok(t)
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 5] {
        [
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
            ("meta", &self.meta),
            ("positions", &self.positions),
            ("special", &self.special),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 5] {
        [
            ("proj_w", &mut self.proj_w),
            ("proj_b", &mut self.proj_b),
            ("meta", &mut self.meta),
            ("positions", &mut self.positions),
            ("special", &mut self.special),
        ]
    }
}

/// One behavior slot of a composed input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Video(usize),
    Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedInput {
    /// `(N+1)×d`; row 0 is `[CLS]`, rows after the true length are `[PAD]`.
    pub matrix: Tensor,
    pub attention_mask: Vec<bool>,
    /// Slots kept after truncation, in row order starting at row 1.
    pub slots: Vec<Slot>,
}

impl ComposedInput {
    /// Number of live rows, `[CLS]` included.
    pub fn live_rows(&self) -> usize {
        self.slots.len() + 1
    }
}

/// Composes slots into model input. Only the last `N` slots are kept.
/// Video rows sum token, meta (when `use_meta`) and position rows; `[MASK]`
/// rows sum the mask embedding and position only.
pub fn compose_slots(
    slots: &[Slot],
    video_course: &[usize],
    tables: &EmbeddingTables,
    token_table: &Tensor,
    use_meta: bool,
) -> ComposedInput {
    let n_max = tables.max_len();
    let d = tables.d();
    let kept = &slots[slots.len().saturating_sub(n_max)..];
    let mut matrix = Tensor::zeros(&[n_max + 1, d]);
    let mut attention_mask = vec![false; n_max + 1];
    let add = |dst: &mut [f64], src: &[f64]| dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
    {
        let r = matrix.row_mut(0);
        add(r, tables.special.row(CLS));
        add(r, tables.positions.row(0));
        attention_mask[0] = true;
    }
    for (t, slot) in kept.iter().enumerate() {
        let r = matrix.row_mut(t + 1);
        match *slot {
            Slot::Video(v) => {
                add(r, token_table.row(v));
                if use_meta {
                    add(r, tables.meta.row(video_course[v]));
                }
            }
            Slot::Mask => add(r, tables.special.row(MASK)),
        }
        add(r, tables.positions.row(t + 1));
        attention_mask[t + 1] = true;
    }
    for t in kept.len() + 1..=n_max {
        matrix.row_mut(t).copy_from_slice(tables.special.row(PAD));
    }
    ComposedInput {
        matrix,
        attention_mask,
        slots: kept.to_vec(),
    }
}

pub fn compose_input(
    items: &[usize],
    video_course: &[usize],
    tables: &EmbeddingTables,
    token_table: &Tensor,
    use_meta: bool,
) -> ComposedInput {
    let slots: Vec<Slot> = items.iter().map(|&v| Slot::Video(v)).collect();
    compose_slots(&slots, video_course, tables, token_table, use_meta)
}
