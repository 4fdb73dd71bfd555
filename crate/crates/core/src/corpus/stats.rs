use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use super::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub students: usize,
    pub videos: usize,
    pub interactions: usize,
    /// Fraction of zero entries in the student-by-video watched matrix.
    pub sparsity: f64,
    /// Watcher count -> number of videos with that many distinct watchers.
    pub popularity_histogram: BTreeMap<usize, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    for s in &corpus.sequences {
        for &v in &s.items {
            pairs.insert((s.student, v));
        }
    }
    let mut watchers = vec![0usize; corpus.videos.len()];
    for &(_, v) in &pairs {
        watchers[v] += 1;
    }
    let mut popularity_histogram = BTreeMap::new();
    for w in watchers {
        *popularity_histogram.entry(w).or_insert(0) += 1;
    }
    let cells = corpus.students.len() as f64 * corpus.videos.len() as f64;
    let sparsity = if cells > 0.0 {
        1.0 - pairs.len() as f64 / cells
    } else {
        0.0
    };
    CorpusStats {
        students: corpus.students.len(),
        videos: corpus.videos.len(),
        interactions: pairs.len(),
        sparsity,
        popularity_histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Course, Discipline, LearningSequence, Video};

    fn corpus(n_videos: usize, seqs: Vec<Vec<usize>>) -> Corpus {
        let mut c = Corpus {
            courses: vec![Course {
                id: "m".into(),
                name: "m".into(),
                discipline: Discipline::Other,
                chapters: vec!["ch".into()],
            }],
            ..Default::default()
        };
        c.videos = (0..n_videos)
            .map(|i| Video {
                id: format!("v{i}"),
                course: 0,
                chapter: "ch".into(),
                chapter_index: 0,
                order: i as u32,
                title: String::new(),
                subtitles: String::new(),
                concepts: vec![],
                comments: 0,
            })
            .collect();
        c.students = (0..seqs.len()).map(|i| format!("s{i}")).collect();
        c.sequences = seqs
            .into_iter()
            .enumerate()
            .map(|(student, items)| LearningSequence { student, items })
            .collect();
        c.reindex();
        c
    }

    #[test]
    fn dense_corpus_has_zero_sparsity() {
        let s = corpus_stats(&corpus(3, vec![vec![0, 1, 2], vec![2, 1, 0]]));
        assert_eq!(s.sparsity, 0.0);
        assert_eq!(s.popularity_histogram.get(&2), Some(&3));
    }

    #[test]
    fn hand_counted_sparsity() {
        let s = corpus_stats(&corpus(4, vec![vec![0], vec![3]]));
        assert_eq!(s.sparsity, 0.75);
        assert_eq!(s.popularity_histogram.values().sum::<usize>(), 4);
        assert_eq!(s.popularity_histogram.get(&0), Some(&2));
    }
}
