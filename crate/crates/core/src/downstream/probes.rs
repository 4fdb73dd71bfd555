//! Representation probes: resource evaluation, knowledge tracing and
//! dropout prediction, each a linear classifier over model encodings.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{FitOptions, LinearClassifier};
use super::metrics::{accuracy, auc, average_precision, macro_prf, rmse};
use crate::concepts::{concept_base_vectors, concept_set_vector};
use crate::corpus::{observed_prefix, Corpus};
use crate::error::{PalError, Result};
use crate::model::PalModel;
use crate::par::Exec;

/// L2 strengths tried on the validation split.
pub const LAMBDA_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// Rank-based quartile labels (1 = top 25%) by value descending, ties by
/// id ascending. The first `n % 4` buckets take one extra member.
pub fn quartile_buckets(values: &[(String, f64)]) -> Vec<u8> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[b].1.total_cmp(&values[a].1).then_with(|| values[a].0.cmp(&values[b].0)));
    let (base, rem) = (n / 4, n % 4);
    let mut labels = vec![0u8; n];
    let mut at = 0;
    for b in 0..4 {
        let size = base + usize::from(b < rem);
        for &i in &idx[at..at + size] {
            labels[i] = b as u8 + 1;
        }
        at += size;
    }
    labels
}

/// Seeded 8:1:1 partition of `0..n`; validation and test each take
/// `max(1, n/10)` items.
pub fn split_811(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (n / 10).max(1).min(n / 3);
    let test = idx[..k].to_vec();
    let val = idx[k..2 * k].to_vec();
    let train = idx[2 * k..].to_vec();
    (train, val, test)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProbeReport {
    pub task: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<f64>,
    /// Records dropped for lack of a learning history.
    pub skipped: usize,
}

struct Dataset<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
}

impl Dataset<'_> {
    fn pick(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|&i| self.x[i].clone()).collect(), idx.iter().map(|&i| self.y[i]).collect())
    }
}

/// Fits one classifier per grid value and keeps the best on validation.
fn select<M>(
    train: &(Vec<Vec<f64>>, Vec<usize>),
    val: &(Vec<Vec<f64>>, Vec<usize>),
    n_classes: usize,
    exec: Exec,
    metric: M,
) -> Result<LinearClassifier>
where
    M: Fn(&LinearClassifier, &(Vec<Vec<f64>>, Vec<usize>)) -> f64 + Sync + Send,
{
    let fits = exec.map(&LAMBDA_GRID, |&lambda| -> Result<(f64, LinearClassifier)> {
        let m = LinearClassifier::fit(
            &train.0,
            &train.1,
            n_classes,
            FitOptions {
                lambda,
                ..FitOptions::default()
            },
        )?;
        Ok((metric(&m, val), m))
    });
    let mut best: Option<(f64, LinearClassifier)> = None;
    for f in fits {
        let (score, m) = f?;
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, m));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

fn macro_f1_of(m: &LinearClassifier, d: &(Vec<Vec<f64>>, Vec<usize>)) -> f64 {
    let pred: Vec<usize> = d.0.iter().map(|x| m.predict(x)).collect();
    macro_prf(&d.1, &pred).2
}

fn auc_of(m: &LinearClassifier, d: &(Vec<Vec<f64>>, Vec<usize>)) -> f64 {
    let p: Vec<f64> = d.0.iter().map(|x| m.predict_proba(x)[1]).collect();
    let l: Vec<bool> = d.1.iter().map(|&y| y == 1).collect();
    auc(&p, &l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceLevel {
    Course,
    Video,
}

/// Log-rate labels: comments per watcher for videos, completions per
/// enrolment for courses, both add-one smoothed.
pub fn resource_rates(corpus: &Corpus, level: ResourceLevel) -> Vec<(String, f64)> {
    match level {
        ResourceLevel::Video => {
            let mut watchers = vec![BTreeSet::new(); corpus.videos.len()];
            for s in &corpus.sequences {
                for &v in &s.items {
                    watchers[v].insert(s.student);
                }
            }
            corpus
                .videos
                .iter()
                .zip(&watchers)
                .map(|(v, w)| (v.id.clone(), ((v.comments as f64 + 1.0) / (w.len() as f64 + 1.0)).ln()))
                .collect()
        }
        ResourceLevel::Course => {
            let mut enrolled = vec![0usize; corpus.courses.len()];
            let mut completed = vec![0usize; corpus.courses.len()];
            for e in &corpus.enrollments {
                enrolled[e.course] += 1;
                completed[e.course] += usize::from(!e.dropout);
            }
            corpus
                .courses
                .iter()
                .enumerate()
                .map(|(c, m)| (m.id.clone(), ((completed[c] as f64 + 1.0) / (enrolled[c] as f64 + 1.0)).ln()))
                .collect()
        }
    }
}

/// Resource encodings: the `[CLS]` vector of a course's videos in teaching
/// order, or a video's token row.
pub fn resource_features(model: &PalModel, corpus: &Corpus, level: ResourceLevel, exec: Exec) -> Result<Vec<Vec<f64>>> {
    match level {
        ResourceLevel::Video => Ok((0..corpus.videos.len()).map(|v| model.token_table().row(v).to_vec()).collect()),
        ResourceLevel::Course => exec
            .map_range(corpus.courses.len(), |c| model.encode_cls(corpus.course_videos(c)))
            .into_iter()
            .collect(),
    }
}

/// Quartile classification of resource rates. With `permute_seed` the
/// labels are shuffled first, giving a chance-level control.
pub fn resource_eval(
    model: &PalModel,
    corpus: &Corpus,
    level: ResourceLevel,
    seed: u64,
    permute_seed: Option<u64>,
    exec: Exec,
) -> Result<ProbeReport> {
    let x = resource_features(model, corpus, level, exec)?;
    resource_eval_features(&x, &resource_rates(corpus, level), level, seed, permute_seed, exec)
}

pub fn resource_eval_features(
    x: &[Vec<f64>],
    rates: &[(String, f64)],
    level: ResourceLevel,
    seed: u64,
    permute_seed: Option<u64>,
    exec: Exec,
) -> Result<ProbeReport> {
    let mut y: Vec<usize> = quartile_buckets(rates).into_iter().map(|b| b as usize - 1).collect();
    if let Some(p) = permute_seed {
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(p));
    }
    let (tr, va, te) = split_811(x.len(), seed);
    let data = Dataset { x, y: &y };
    let (train, val, test) = (data.pick(&tr), data.pick(&va), data.pick(&te));
    let present: BTreeSet<usize> = train.1.iter().copied().collect();
    if present.len() < 4 {
        return Err(PalError::Invalid(format!(
            "only {} of 4 rate buckets occur in the training split; use a larger corpus",
            present.len()
        )));
    }
    let m = select(&train, &val, 4, exec, macro_f1_of)?;
    let pred: Vec<usize> = test.0.iter().map(|r| m.predict(r)).collect();
    let (p, r, f) = macro_prf(&test.1, &pred);
    Ok(ProbeReport {
        task: format!("resource/{}", if level == ResourceLevel::Video { "video" } else { "course" }),
        n_train: train.1.len(),
        n_val: val.1.len(),
        n_test: test.1.len(),
        lambda: m.lambda,
        accuracy: Some(accuracy(&test.1, &pred)),
        precision: Some(p),
        recall: Some(r),
        macro_f1: Some(f),
        ..ProbeReport::default()
    })
}

/// Mean test macro-F1 of [`resource_eval`] over `rounds` label permutations.
pub fn resource_permutation_control(
    model: &PalModel,
    corpus: &Corpus,
    level: ResourceLevel,
    seed: u64,
    rounds: usize,
    exec: Exec,
) -> Result<f64> {
    let x = resource_features(model, corpus, level, exec)?;
    let rates = resource_rates(corpus, level);
    let mut total = 0.0;
    for r in 0..rounds {
        let rep = resource_eval_features(&x, &rates, level, seed.wrapping_add(r as u64), Some(seed ^ (r as u64 + 1)), exec)?;
        total += rep.macro_f1.unwrap_or(0.0);
    }
    Ok(total / rounds.max(1) as f64)
}

fn binary_report(task: &str, m: &LinearClassifier, train: usize, val: usize, test: &(Vec<Vec<f64>>, Vec<usize>)) -> ProbeReport {
    let probs: Vec<f64> = test.0.iter().map(|x| m.predict_proba(x)[1]).collect();
    let labels: Vec<bool> = test.1.iter().map(|&y| y == 1).collect();
    let pred: Vec<usize> = probs.iter().map(|&p| usize::from(p >= 0.5)).collect();
    let (_, _, f1) = macro_prf(&test.1, &pred);
    ProbeReport {
        task: task.into(),
        n_train: train,
        n_val: val,
        n_test: test.1.len(),
        lambda: m.lambda,
        accuracy: Some(accuracy(&test.1, &pred)),
        macro_f1: Some(f1),
        rmse: Some(rmse(&probs, &labels)),
        auc: Some(auc(&probs, &labels)),
        ap: Some(average_precision(&probs, &labels)),
        ..ProbeReport::default()
    }
}

/// Knowledge-tracing probe over `[s; q; s⊙q]`, where `s` is the student's
/// `[CLS]` encoding and `q` the projected concept-set vector of the
/// question. `train_fraction` keeps a leading share of the training split.
pub fn kt_probe(model: &PalModel, corpus: &Corpus, train_fraction: f64, seed: u64, exec: Exec) -> Result<ProbeReport> {
    if corpus.kt.is_empty() {
        return Err(PalError::Invalid("corpus has no knowledge-tracing records".into()));
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(PalError::Config(format!("train fraction must lie in (0,1], got {train_fraction}")));
    }
    let students: Vec<Option<Vec<f64>>> = exec
        .map_range(corpus.students.len(), |s| {
            corpus.sequence_of(s).filter(|q| !q.is_empty()).map(|q| model.encode_cls(&q.items)).transpose()
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let dim = model.raw.cols();
    let base = concept_base_vectors(&corpus.concepts, dim);
    let questions: Vec<Vec<f64>> = corpus
        .questions
        .iter()
        .map(|q| model.project(&concept_set_vector(&q.concepts, &base, dim)?))
        .collect::<Result<_>>()?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut skipped = 0;
    for r in &corpus.kt {
        let Some(s) = &students[r.student] else {
            skipped += 1;
            continue;
        };
        let q = &questions[r.question];
        let mut f = Vec::with_capacity(3 * s.len());
        f.extend_from_slice(s);
        f.extend_from_slice(q);
        f.extend(s.iter().zip(q).map(|(a, b)| a * b));
        x.push(f);
        y.push(usize::from(r.correct));
    }
    if skipped > 0 {
        log::warn!("{skipped} knowledge-tracing records skipped: student has no history");
    }
    let (mut tr, va, te) = split_811(x.len(), seed);
    tr.truncate(((tr.len() as f64) * train_fraction).ceil() as usize);
    let data = Dataset { x: &x, y: &y };
    let (train, val, test) = (data.pick(&tr), data.pick(&va), data.pick(&te));
    let m = select(&train, &val, 2, exec, auc_of)?;
    let mut rep = binary_report("kt", &m, train.1.len(), val.1.len(), &test);
    rep.skipped = skipped;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropoutReport {
    pub combined: ProbeReport,
    pub counts_only: ProbeReport,
}

/// Dropout prediction per enrolment from the observed window of in-course
/// behavior: `[CLS]` encoding plus counts, against counts alone.
pub fn dropout_eval(model: &PalModel, corpus: &Corpus, seed: u64, exec: Exec) -> Result<DropoutReport> {
    if corpus.enrollments.is_empty() {
        return Err(PalError::Invalid("corpus has no enrolment records".into()));
    }
    let d = model.d();
    let rows = exec
        .map(&corpus.enrollments, |e| -> Result<(Vec<f64>, Vec<f64>)> {
            let items: Vec<usize> = corpus
                .sequence_of(e.student)
                .map(|s| {
                    observed_prefix(&s.items)
                        .iter()
                        .copied()
                        .filter(|&v| corpus.videos[v].course == e.course)
                        .collect()
                })
                .unwrap_or_default();
            let enc = if items.is_empty() { vec![0.0; d] } else { model.encode_cls(&items)? };
            let distinct: BTreeSet<usize> = items.iter().copied().collect();
            Ok((enc, vec![items.len() as f64, distinct.len() as f64]))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let combined: Vec<Vec<f64>> = rows.iter().map(|r| [r.0.clone(), r.1.clone()].concat()).collect();
    let y: Vec<usize> = corpus.enrollments.iter().map(|e| usize::from(e.dropout)).collect();
    let (tr, va, te) = split_811(y.len(), seed);
    let run = |x: &[Vec<f64>], task: &str| -> Result<ProbeReport> {
        let data = Dataset { x, y: &y };
        let (train, val, test) = (data.pick(&tr), data.pick(&va), data.pick(&te));
        let m = select(&train, &val, 2, exec, auc_of)?;
        Ok(binary_report(task, &m, train.1.len(), val.1.len(), &test))
    };
    Ok(DropoutReport {
        combined: run(&combined, "dropout/combined")?,
        counts_only: run(&counts, "dropout/counts")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(v: &[f64]) -> Vec<(String, f64)> {
        v.iter().enumerate().map(|(i, &x)| (format!("id{i:02}"), x)).collect()
    }

    fn sizes(l: &[u8]) -> [usize; 4] {
        let mut s = [0; 4];
        for &b in l {
            s[b as usize - 1] += 1;
        }
        s
    }

    #[test]
    fn quartiles() {
        let l = quartile_buckets(&vals(&[8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]));
        assert_eq!(l, [1, 1, 2, 2, 3, 3, 4, 4]);
        let l = quartile_buckets(&vals(&[1.0; 8]));
        assert_eq!(l, [1, 1, 2, 2, 3, 3, 4, 4]);
        assert_eq!(sizes(&quartile_buckets(&vals(&[0.3, 0.1, 0.5, 0.2, 0.4]))), [2, 1, 1, 1]);
    }

    #[test]
    fn split_sizes() {
        let (a, b, c) = split_811(200, 1);
        assert_eq!((a.len(), b.len(), c.len()), (160, 20, 20));
        let (a, b, c) = split_811(10, 1);
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let mut all = [a, b, c].concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn separable_resources_score_perfectly() {
        let mut x = Vec::new();
        let mut rates = Vec::new();
        for i in 0..80 {
            let c = i % 4;
            x.push(vec![c as f64 * 3.0 + (i as f64 * 0.001), (c % 2) as f64]);
            rates.push((format!("v{i:03}"), -(c as f64) - i as f64 * 1e-4));
        }
        let r = resource_eval_features(&x, &rates, ResourceLevel::Video, 3, None, Exec::Sequential).unwrap();
        assert_eq!(r.macro_f1, Some(1.0));
    }

    proptest::proptest! {
        #[test]
        fn bucket_sizes_balanced(v in proptest::collection::vec(-5.0f64..5.0, 1..60)) {
            let s = sizes(&quartile_buckets(&vals(&v)));
            let (lo, hi) = (s.iter().min().unwrap(), s.iter().max().unwrap());
            proptest::prop_assert!(hi - lo <= 1);
            proptest::prop_assert_eq!(s.iter().sum::<usize>(), v.len());
        }
    }
}
