use std::collections::BTreeSet;

use super::{baseline_scores, loo_split, popular_negatives, training_popularity, Baseline, LooSplit, RecReport};
use crate::corpus::Corpus;
use crate::error::{PalError, Result};
use crate::model::PalModel;
use crate::par::Exec;

pub const NEGATIVES: usize = 100;

/// 1-based rank of `target` among `candidates` (which may or may not list
/// the target) by descending score, ties by ascending video id.
pub fn rank_of_target(corpus: &Corpus, scores: &[f64], target: usize, candidates: &[usize]) -> usize {
    let st = scores[target];
    let tid = &corpus.videos[target].id;
    let others: BTreeSet<usize> = candidates.iter().copied().filter(|&c| c != target).collect();
    1 + others
        .iter()
        .filter(|&&c| scores[c] > st || (scores[c] == st && corpus.videos[c].id < *tid))
        .count()
}

/// Ranks each student's test item against their popular negatives using
/// `scorer(split)`, a score per video computed from the split's history.
pub fn eval_recommendation<F>(corpus: &Corpus, splits: &[LooSplit], scorer: F, exec: Exec) -> Result<RecReport>
where
    F: Fn(&LooSplit) -> Result<Vec<f64>> + Sync + Send,
{
    if splits.is_empty() {
        return Err(PalError::Invalid("no students to evaluate".into()));
    }
    let pop = training_popularity(corpus, splits);
    let ranks = exec
        .map(splits, |s| -> Result<usize> {
            let scores = scorer(s)?;
            if scores.len() != corpus.videos.len() {
                return Err(PalError::Shape(format!("{} scores for {} videos", scores.len(), corpus.videos.len())));
            }
            let negatives = popular_negatives(corpus, &pop, &s.full(), NEGATIVES);
            Ok(rank_of_target(corpus, &scores, s.test, &negatives))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(RecReport::from_ranks(&ranks))
}

/// Recommendation quality of a pre-trained model scoring the masked slot
/// after each student's history.
pub fn eval_model(model: &PalModel, corpus: &Corpus, exec: Exec) -> Result<RecReport> {
    let splits = loo_split(&corpus.sequences);
    // Scoring itself runs on the outer map; nesting the model's own
    // parallelism adds nothing.
    eval_recommendation(corpus, &splits, |s| model.next_item_scores(&s.history()), exec)
}

pub fn eval_baseline(kind: Baseline, corpus: &Corpus, exec: Exec) -> Result<RecReport> {
    let splits = loo_split(&corpus.sequences);
    let pop = training_popularity(corpus, &splits);
    eval_recommendation(corpus, &splits, |s| Ok(baseline_scores(kind, corpus, &pop, &s.history())), exec)
}
