//! Ranking logic behind the HTTP API, usable without a server.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use pal_core::concepts::{concept_base_vectors, concept_set_vector, Lexicon};
use pal_core::corpus::Corpus;
use pal_core::encoder::cosine;
use pal_core::model::PalModel;
use serde::{Deserialize, Serialize};

use crate::error::{ServeError, ServeResult};
use crate::session::{resolve, SessionStore};

/// Most videos returned for one concept.
pub const MAX_VIDEOS: usize = 200;
pub const MAX_SEARCH_RESULTS: usize = 50;
pub const RELATED_CONCEPTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Relevance,
    Personal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchTier {
    Substring,
    Prefix,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoHit {
    pub id: String,
    pub title: String,
    /// Token index of the concept's first occurrence in the subtitles.
    pub position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelatedConcept {
    pub id: String,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub id: String,
    pub name: String,
    pub tier: MatchTier,
    pub score: f64,
    pub videos: Vec<VideoHit>,
    pub related: Vec<RelatedConcept>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedVideo {
    pub id: String,
    pub title: String,
    pub course: String,
    pub score: f64,
    pub match_position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoList {
    pub concept: String,
    pub mode: Mode,
    /// Set when personal ranking was asked for but the student has no
    /// history, so relevance order was used instead.
    pub fallback: bool,
    pub videos: Vec<RankedVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub student: String,
    pub history: Vec<String>,
}

pub struct Service {
    corpus: Corpus,
    model: PalModel,
    concept_vectors: Vec<Vec<f64>>,
    video_vectors: Vec<Vec<f64>>,
    /// Videos linked to each concept, with the first match position.
    concept_videos: Vec<Vec<(usize, Option<usize>)>>,
    names_lower: Vec<String>,
    sessions: SessionStore,
}

fn normalize_query(q: &str) -> String {
    q.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Service {
    pub fn new(corpus: Corpus, model: PalModel, event_log: Option<&Path>) -> ServeResult<Self> {
        if model.n_videos() != corpus.videos.len() {
            return Err(ServeError::BadRequest(format!(
                "model covers {} videos but the corpus has {}",
                model.n_videos(),
                corpus.videos.len()
            )));
        }
        let dim = model.config.text_dim;
        let concept_vectors = concept_base_vectors(&corpus.concepts, dim);
        let video_vectors = corpus
            .videos
            .iter()
            .map(|v| concept_set_vector(&v.concepts, &concept_vectors, dim))
            .collect::<pal_core::Result<Vec<_>>>()?;
        let lexicon = Lexicon::new(&corpus.concepts);
        let mut concept_videos = vec![Vec::new(); corpus.concepts.len()];
        for (vi, v) in corpus.videos.iter().enumerate() {
            let mut first: HashMap<usize, usize> = HashMap::new();
            for (pos, c) in lexicon.scan(&v.subtitles) {
                first.entry(c).or_insert(pos);
            }
            for &c in &v.concepts {
                concept_videos[c].push((vi, first.get(&c).copied()));
            }
        }
        let names_lower = corpus.concepts.iter().map(|c| normalize_query(&c.name)).collect();
        let sessions = SessionStore::new(&corpus, event_log)?;
        Ok(Service {
            corpus,
            model,
            concept_vectors,
            video_vectors,
            concept_videos,
            names_lower,
            sessions,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    /// Case-insensitive concept lookup: exact name, then prefix, then
    /// substring matches, each tier in ascending name order.
    pub fn search(&self, query: &str) -> Vec<SearchResult> {
        let q = normalize_query(query);
        if q.is_empty() {
            return Vec::new();
        }
        let mut hits: Vec<(MatchTier, usize)> = self
            .names_lower
            .iter()
            .enumerate()
            .filter_map(|(i, name)| {
                let tier = if *name == q {
                    MatchTier::Exact
                } else if name.starts_with(&q) {
                    MatchTier::Prefix
                } else if name.contains(&q) {
                    MatchTier::Substring
                } else {
                    return None;
                };
                Some((tier, i))
            })
            .collect();
        hits.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| self.names_lower[a.1].cmp(&self.names_lower[b.1]))
                .then_with(|| self.corpus.concepts[a.1].id.cmp(&self.corpus.concepts[b.1].id))
        });
        hits.truncate(MAX_SEARCH_RESULTS);
        hits.into_iter()
            .map(|(tier, c)| {
                let concept = &self.corpus.concepts[c];
                SearchResult {
                    id: concept.id.clone(),
                    name: concept.name.clone(),
                    tier,
                    score: match tier {
                        MatchTier::Exact => 3.0,
                        MatchTier::Prefix => 2.0,
                        MatchTier::Substring => 1.0,
                    },
                    videos: self.concept_videos[c]
                        .iter()
                        .take(MAX_VIDEOS)
                        .map(|&(v, position)| VideoHit {
                            id: self.corpus.videos[v].id.clone(),
                            title: self.corpus.videos[v].title.clone(),
                            position,
                        })
                        .collect(),
                    related: self.related(c),
                }
            })
            .collect()
    }

    fn related(&self, c: usize) -> Vec<RelatedConcept> {
        let base = &self.concept_vectors[c];
        let mut scored: Vec<(usize, f64)> = (0..self.corpus.concepts.len())
            .filter(|&o| o != c)
            .map(|o| (o, cosine(base, &self.concept_vectors[o])))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.corpus.concepts[a.0].id.cmp(&self.corpus.concepts[b.0].id))
        });
        scored
            .into_iter()
            .take(RELATED_CONCEPTS)
            .map(|(o, score)| RelatedConcept {
                id: self.corpus.concepts[o].id.clone(),
                name: self.corpus.concepts[o].name.clone(),
                score,
            })
            .collect()
    }

    fn concept_index(&self, id: &str) -> ServeResult<usize> {
        self.corpus
            .concept_index(id)
            .ok_or_else(|| ServeError::NotFound(format!("unknown concept {id}")))
    }

    pub fn student_index(&self, id: &str) -> ServeResult<usize> {
        self.corpus
            .student_index(id)
            .ok_or_else(|| ServeError::NotFound(format!("unknown student {id}")))
    }

    /// Videos linked to `concept` by descending cosine between the concept's
    /// base vector and each video's concept-set vector, ties by video id.
    fn relevance(&self, c: usize) -> Vec<(usize, f64, Option<usize>)> {
        let base = &self.concept_vectors[c];
        let mut out: Vec<(usize, f64, Option<usize>)> = self.concept_videos[c]
            .iter()
            .map(|&(v, pos)| (v, cosine(base, &self.video_vectors[v]), pos))
            .collect();
        self.sort_scored(&mut out);
        out.truncate(MAX_VIDEOS);
        out
    }

    fn sort_scored(&self, items: &mut [(usize, f64, Option<usize>)]) {
        items.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.corpus.videos[a.0].id.cmp(&self.corpus.videos[b.0].id))
        });
    }

    pub fn videos(&self, concept: &str, mode: Mode, student: Option<&str>) -> ServeResult<VideoList> {
        let c = self.concept_index(concept)?;
        let mut ranked = self.relevance(c);
        let mut fallback = false;
        if mode == Mode::Personal {
            let student = student.ok_or_else(|| ServeError::BadRequest("personal mode needs a student".into()))?;
            let history = self.sessions.history(self.student_index(student)?);
            if history.is_empty() {
                fallback = true;
            } else {
                let probs = self.model.next_item_scores(&history)?;
                for r in &mut ranked {
                    r.1 = probs[r.0];
                }
                self.sort_scored(&mut ranked);
            }
        }
        Ok(VideoList {
            concept: self.corpus.concepts[c].id.clone(),
            mode,
            fallback,
            videos: ranked
                .into_iter()
                .map(|(v, score, match_position)| {
                    let video = &self.corpus.videos[v];
                    RankedVideo {
                        id: video.id.clone(),
                        title: video.title.clone(),
                        course: self.corpus.courses[video.course].id.clone(),
                        score,
                        match_position,
                    }
                })
                .collect(),
        })
    }

    pub fn record_watch(&self, student: &str, video: &str) -> ServeResult<usize> {
        let (s, v) = resolve(&self.corpus, student, video)?;
        self.sessions.record(&self.corpus, s, v)
    }

    pub fn history(&self, student: &str) -> ServeResult<History> {
        let s = self.student_index(student)?;
        Ok(History {
            student: self.corpus.students[s].clone(),
            history: self
                .sessions
                .history(s)
                .into_iter()
                .map(|v| self.corpus.videos[v].id.clone())
                .collect(),
        })
    }
}
