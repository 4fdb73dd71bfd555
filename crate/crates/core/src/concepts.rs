//! Lexicon-based concept extraction, concept linking and concept-set vectors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Concept, Corpus};
use crate::encoder::{cosine, text_vector, tokenize};
use crate::error::{PalError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMatch {
    pub concept: usize,
    pub count: u32,
    /// `count` over all retained matches in the same text.
    pub confidence: f64,
}

/// Serialized form used in `video_concepts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMatchRec {
    pub id: String,
    pub count: u32,
    pub confidence: f64,
}

/// Tokenized concept names keyed by first token, longest phrases first.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    by_first: HashMap<String, Vec<(Vec<String>, usize)>>,
    ids: Vec<String>,
}

impl Lexicon {
    pub fn new(concepts: &[Concept]) -> Self {
        let mut by_first: HashMap<String, Vec<(Vec<String>, usize)>> = HashMap::new();
        for (i, c) in concepts.iter().enumerate() {
            let toks = tokenize(&c.name);
            if let Some(first) = toks.first() {
                by_first.entry(first.clone()).or_default().push((toks, i));
            }
        }
        for list in by_first.values_mut() {
            list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        }
        Lexicon {
            by_first,
            ids: concepts.iter().map(|c| c.id.clone()).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }

    /// Non-overlapping matches scanned left to right, longest phrase first.
    /// Yields `(token_position, concept)`.
    pub fn scan(&self, text: &str) -> Vec<(usize, usize)> {
        let toks = tokenize(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let hit = self.by_first.get(&toks[i]).and_then(|cands| {
                cands
                    .iter()
                    .find(|(phrase, _)| toks.len() - i >= phrase.len() && toks[i..i + phrase.len()] == phrase[..])
            });
            match hit {
                Some((phrase, c)) => {
                    out.push((i, *c));
                    i += phrase.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Concepts whose names occur in `text` at least `min_count` times, sorted
/// by count descending then concept id ascending.
pub fn extract_concepts(text: &str, lexicon: &Lexicon, min_count: u32) -> Vec<ConceptMatch> {
    let mut counts: HashMap<usize, u32> = HashMap::new();
    for (_, c) in lexicon.scan(text) {
        *counts.entry(c).or_insert(0) += 1;
    }
    let mut kept: Vec<(usize, u32)> = counts.into_iter().filter(|&(_, n)| n >= min_count.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| lexicon.ids[a.0].cmp(&lexicon.ids[b.0])));
    let total: u32 = kept.iter().map(|k| k.1).sum();
    kept.into_iter()
        .map(|(concept, count)| ConceptMatch {
            concept,
            count,
            confidence: count as f64 / total as f64,
        })
        .collect()
}

/// Per-video matches over the subtitles of every video.
pub fn video_concept_matches(corpus: &Corpus, lexicon: &Lexicon, min_count: u32) -> Vec<Vec<ConceptMatch>> {
    corpus
        .videos
        .iter()
        .map(|v| extract_concepts(&v.subtitles, lexicon, min_count))
        .collect()
}

/// Replaces every video's concept list with the extracted matches.
pub fn link_video_concepts(corpus: &mut Corpus, lexicon: &Lexicon, min_count: u32) {
    let matches = video_concept_matches(corpus, lexicon, min_count);
    for (v, m) in corpus.videos.iter_mut().zip(matches) {
        v.concepts = m.into_iter().map(|m| m.concept).collect();
    }
}

/// Base vector of each concept: the text vector of its name.
pub fn concept_base_vectors(concepts: &[Concept], dim: usize) -> Vec<Vec<f64>> {
    concepts.iter().map(|c| text_vector(&c.name, dim)).collect()
}

pub fn concept_set_vector(ids: &[usize], table: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    for &id in ids {
        let row = table.get(id).ok_or_else(|| PalError::DanglingId {
            kind: "concept",
            id: id.to_string(),
        })?;
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Ok(out)
}

/// Top `k` candidates by cosine similarity to `target`, ties by id.
/// Returns `(candidate index, similarity)`.
pub fn link_text(target: &str, candidates: &[Concept], k: usize, dim: usize) -> Vec<(usize, f64)> {
    let t = text_vector(target, dim);
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i, cosine(&t, &text_vector(&c.name, dim))))
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| candidates[a.0].id.cmp(&candidates[b.0].id))
    });
    scored.truncate(k);
    scored
}
