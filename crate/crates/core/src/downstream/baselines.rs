use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::LooSplit;
use crate::corpus::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Pop,
    Kss,
}

/// Distinct training-prefix watchers of every video.
pub fn training_popularity(corpus: &Corpus, splits: &[LooSplit]) -> Vec<u64> {
    let mut pop = vec![0u64; corpus.videos.len()];
    for s in splits {
        let seen: BTreeSet<usize> = s.train.iter().copied().collect();
        for v in seen {
            pop[v] += 1;
        }
    }
    pop
}

/// The `k` most popular videos outside `watched`, by popularity descending
/// then video id ascending.
pub fn popular_negatives(corpus: &Corpus, popularity: &[u64], watched: &[usize], k: usize) -> Vec<usize> {
    let seen: BTreeSet<usize> = watched.iter().copied().collect();
    let mut cands: Vec<usize> = (0..corpus.videos.len()).filter(|v| !seen.contains(v)).collect();
    cands.sort_by(|&a, &b| {
        popularity[b]
            .cmp(&popularity[a])
            .then_with(|| corpus.videos[a].id.cmp(&corpus.videos[b].id))
    });
    cands.truncate(k);
    cands
}

/// Course-structure proximity to the last watched video. Tiers: the next
/// video of the same chapter (3000), the rest of that chapter (2000 minus
/// teaching-order distance), the rest of the course (1000 minus distance),
/// everything else; popularity breaks ties inside a tier. An empty history
/// reduces to popularity.
pub fn kss_scores(corpus: &Corpus, popularity: &[u64], history: &[usize]) -> Vec<f64> {
    let top = popularity.iter().copied().max().unwrap_or(0) as f64 + 1.0;
    let mut scores: Vec<f64> = popularity.iter().map(|&p| p as f64 / top).collect();
    let Some(&last) = history.last() else {
        return scores;
    };
    let lv = &corpus.videos[last];
    let lp = corpus.course_position(last) as f64;
    for &v in corpus.course_videos(lv.course) {
        let vv = &corpus.videos[v];
        let delta = corpus.course_position(v) as f64 - lp;
        let same_chapter = vv.chapter_index == lv.chapter_index;
        let tier = if same_chapter && delta == 1.0 {
            3000.0
        } else if same_chapter {
            2000.0 - delta.abs() - if delta < 0.0 { 0.5 } else { 0.0 }
        } else {
            1000.0 - delta.abs() - if delta < 0.0 { 0.5 } else { 0.0 }
        };
        scores[v] += tier;
    }
    scores
}

pub fn baseline_scores(kind: Baseline, corpus: &Corpus, popularity: &[u64], history: &[usize]) -> Vec<f64> {
    match kind {
        Baseline::Pop => popularity.iter().map(|&p| p as f64).collect(),
        Baseline::Kss => kss_scores(corpus, popularity, history),
    }
}
