//! Learning-style analysis: sample sizing, Markov-property testing of
//! course transition matrices, adjacent-behavior similarity and discipline
//! profiles.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{concept_base_vectors, concept_set_vector};
use crate::corpus::{corpus_stats, Corpus, CorpusStats, Discipline};
use crate::encoder::{dot, normalize, text_vector, DEFAULT_TEXT_DIM};
use crate::error::{PalError, Result};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub z: f64,
    pub p: f64,
    pub d_margin: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            z: 1.96,
            p: 0.5,
            d_margin: 0.05,
        }
    }
}

/// `⌈z²p(1−p)/d²⌉`.
pub fn required_sample_size(sp: SamplingParams) -> Result<u64> {
    if sp.d_margin == 0.0 {
        return Err(PalError::Domain("margin of error must be nonzero".into()));
    }
    if !(sp.z >= 0.0) || !(0.0..=1.0).contains(&sp.p) || !(sp.d_margin > 0.0) {
        return Err(PalError::Domain(format!(
            "need z >= 0, p in [0,1], margin > 0; got {sp:?}"
        )));
    }
    let raw = sp.z * sp.z * sp.p * (1.0 - sp.p) / (sp.d_margin * sp.d_margin);
    // absorb representation error so exact integers are not bumped up
    Ok((raw - 1e-9).ceil().max(0.0) as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferMatrix {
    /// Video indices, ascending; row/column `i` of `counts` is `states[i]`.
    pub states: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

impl TransferMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = counts.len();
        if counts.iter().any(|r| r.len() != m) {
            return Err(PalError::Shape("transfer matrix must be square".into()));
        }
        Ok(TransferMatrix {
            states: (0..m).collect(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Pools adjacent pairs over all given item runs.
pub fn transition_counts<S: AsRef<[usize]>>(runs: &[S]) -> Result<TransferMatrix> {
    let mut pairs: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut states = BTreeSet::new();
    for run in runs {
        for w in run.as_ref().windows(2) {
            *pairs.entry((w[0], w[1])).or_insert(0) += 1;
            states.insert(w[0]);
            states.insert(w[1]);
        }
    }
    if pairs.is_empty() {
        return Err(PalError::Untestable("no transitions".into()));
    }
    let states: Vec<usize> = states.into_iter().collect();
    let pos: BTreeMap<usize, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut counts = vec![vec![0u64; states.len()]; states.len()];
    for ((a, b), n) in pairs {
        counts[pos[&a]][pos[&b]] = n;
    }
    Ok(TransferMatrix { states, counts })
}

/// Maximal runs of consecutive in-course items of every sequence.
pub fn course_runs(corpus: &Corpus, course: usize) -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    for s in &corpus.sequences {
        let mut cur = Vec::new();
        for &v in &s.items {
            if corpus.videos[v].course == course {
                cur.push(v);
            } else if !cur.is_empty() {
                runs.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
    }
    runs
}

pub fn course_transition_counts(corpus: &Corpus, course: usize) -> Result<TransferMatrix> {
    transition_counts(&course_runs(corpus, course))
        .map_err(|_| PalError::Untestable(format!("course `{}` has no in-course transitions", corpus.courses[course].id)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovTestResult {
    /// Likelihood-ratio statistic `2·Σ f_ij·log(P_ij/P_·j)`.
    pub chi2: f64,
    /// The same sum with `|log(P_ij/P_·j)|`.
    pub chi2_abs: f64,
    pub m: usize,
    pub dof: u64,
    pub alpha: f64,
    pub critical: f64,
    /// `chi2 < critical`: the original classification rule, read literally.
    pub classified_markov: bool,
    /// Conventional reading: independence rejected, so transitions depend on
    /// the current state.
    pub dependence_detected: bool,
}

pub fn markov_test(tm: &TransferMatrix, alpha: f64) -> Result<MarkovTestResult> {
    let m = tm.counts.len();
    if m < 2 {
        return Err(PalError::Untestable(format!("need at least 2 states, got {m}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PalError::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let total = tm.total() as f64;
    if total == 0.0 {
        return Err(PalError::Untestable("all marginals are zero".into()));
    }
    let col: Vec<f64> = (0..m)
        .map(|j| tm.counts.iter().map(|r| r[j] as f64).sum::<f64>() / total)
        .collect();
    let mut signed = 0.0;
    let mut abs = 0.0;
    for row in &tm.counts {
        let rt: f64 = row.iter().map(|&x| x as f64).sum();
        if rt == 0.0 {
            continue;
        }
        for (j, &f) in row.iter().enumerate() {
            if f == 0 {
                continue;
            }
            let f = f as f64;
            let l = (f / rt / col[j]).ln();
            signed += f * l;
            abs += f * l.abs();
        }
    }
    let chi2 = (2.0 * signed).max(0.0);
    let dof = ((m - 1) * (m - 1)) as u64;
    let critical = chi2_critical(alpha, dof as f64)?;
    Ok(MarkovTestResult {
        chi2,
        chi2_abs: 2.0 * abs,
        m,
        dof,
        alpha,
        critical,
        classified_markov: chi2 < critical,
        dependence_detected: chi2 > critical,
    })
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lead = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut n = a;
        for _ in 0..10_000 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() + lead).exp()
    } else {
        // Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (lead.exp() * h)
    }
}

pub fn chi2_cdf(x: f64, dof: f64) -> f64 {
    gamma_p(dof / 2.0, x / 2.0)
}

/// Inverse CDF by bisection on [`chi2_cdf`].
pub fn chi2_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(dof > 0.0) {
        return Err(PalError::Domain(format!("chi2 quantile needs p in (0,1), dof > 0; got p={p}, dof={dof}")));
    }
    let mut lo = 0.0;
    let mut hi = dof.max(1.0);
    while chi2_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Upper-tail critical value `χ²_α(dof)`.
pub fn chi2_critical(alpha: f64, dof: f64) -> Result<f64> {
    chi2_quantile(1.0 - alpha, dof)
}

/// Fraction of trials whose statistic exceeds the critical value when the
/// states are drawn i.i.d. from `marginal`. Each trial draws
/// `transitions + 1` states from its own seeded stream.
pub fn markov_calibration(
    marginal: &[f64],
    transitions: usize,
    trials: usize,
    alpha: f64,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    let total: f64 = marginal.iter().sum();
    let rejected = exec.map_range(trials, |t| -> Result<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let seq: Vec<usize> = (0..=transitions)
            .map(|_| {
                let mut x = rng.gen_range(0.0..total);
                for (i, &w) in marginal.iter().enumerate() {
                    x -= w;
                    if x < 0.0 {
                        return i;
                    }
                }
                marginal.len() - 1
            })
            .collect();
        Ok(markov_test(&transition_counts(&[seq])?, alpha)?.dependence_detected)
    });
    let mut hits = 0;
    for r in rejected {
        hits += r? as usize;
    }
    Ok(hits as f64 / trials as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub text_similarity: f64,
    pub concept_similarity: f64,
    pub n_pairs: usize,
}

/// Mean inner product over adjacent pairs. `vectors` is indexed by video; an
/// empty entry counts as missing.
pub fn adjacent_similarity(corpus: &Corpus, items: &[usize], vectors: &[Vec<f64>]) -> Result<f64> {
    if items.len() < 2 {
        return Err(PalError::Invalid(format!("need at least 2 items, got {}", items.len())));
    }
    let get = |v: usize| -> Result<&[f64]> {
        match vectors.get(v) {
            Some(x) if !x.is_empty() => Ok(x),
            _ => Err(PalError::MissingVector(
                corpus.videos.get(v).map(|x| x.id.clone()).unwrap_or_else(|| v.to_string()),
            )),
        }
    };
    let mut sum = 0.0;
    for w in items.windows(2) {
        sum += dot(get(w[0])?, get(w[1])?);
    }
    Ok(sum / (items.len() - 1) as f64)
}

/// Unit text vectors of every video's subtitles.
pub fn video_text_vectors(corpus: &Corpus, dim: usize) -> Vec<Vec<f64>> {
    corpus.videos.iter().map(|v| text_vector(&v.subtitles, dim)).collect()
}

/// Unit-normalised concept-sum vectors; zero for videos without concepts.
pub fn video_concept_vectors(corpus: &Corpus, dim: usize) -> Result<Vec<Vec<f64>>> {
    let base = concept_base_vectors(&corpus.concepts, dim);
    corpus
        .videos
        .iter()
        .map(|v| {
            let mut x = concept_set_vector(&v.concepts, &base, dim)?;
            normalize(&mut x);
            Ok(x)
        })
        .collect()
}

pub fn similarity_report(
    corpus: &Corpus,
    items: &[usize],
    text: &[Vec<f64>],
    concept: &[Vec<f64>],
) -> Result<SimilarityReport> {
    Ok(SimilarityReport {
        text_similarity: adjacent_similarity(corpus, items, text)?,
        concept_similarity: adjacent_similarity(corpus, items, concept)?,
        n_pairs: items.len() - 1,
    })
}

/// Share of items per discipline, in [`Discipline::ALL`] order. Empty input
/// yields all zeros.
pub fn discipline_profile(corpus: &Corpus, items: &[usize]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for &v in items {
        out[corpus.discipline_of_video(v).index()] += 1.0;
    }
    if !items.is_empty() {
        out.iter_mut().for_each(|x| *x /= items.len() as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeOptions {
    pub alpha: f64,
    pub sampling: SamplingParams,
    pub seed: u64,
    pub text_dim: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            alpha: 0.05,
            sampling: SamplingParams::default(),
            seed: 7,
            text_dim: DEFAULT_TEXT_DIM,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CourseMarkov {
    pub course: String,
    pub result: Option<MarkovTestResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudentAnalysis {
    pub student: String,
    pub n_items: usize,
    pub similarity: SimilarityReport,
    pub disciplines: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSummary {
    pub courses_tested: usize,
    pub classified_markov: usize,
    pub dependence_detected: usize,
    pub mean_text_similarity: f64,
    pub mean_concept_similarity: f64,
    /// Students whose mean text similarity exceeds 0.
    pub positive_text_similarity: usize,
    pub single_discipline_students: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub stats: CorpusStats,
    pub required_sample_size: u64,
    pub sampled_students: usize,
    pub courses: Vec<CourseMarkov>,
    pub students: Vec<StudentAnalysis>,
    pub summary: AnalysisSummary,
}

/// Full analysis: every course is tested, and a seeded sample of
/// [`required_sample_size`] sequences is profiled.
pub fn analyze(corpus: &Corpus, opts: &AnalyzeOptions, exec: Exec) -> Result<AnalysisReport> {
    let n = required_sample_size(opts.sampling)? as usize;
    let mut order: Vec<usize> = (0..corpus.sequences.len()).filter(|&i| corpus.sequences[i].len() >= 2).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    order.truncate(n);
    order.sort_unstable();

    let courses: Vec<CourseMarkov> = exec.map_range(corpus.courses.len(), |c| {
        let r = course_transition_counts(corpus, c).and_then(|tm| markov_test(&tm, opts.alpha));
        CourseMarkov {
            course: corpus.courses[c].id.clone(),
            error: r.as_ref().err().map(|e| e.to_string()),
            result: r.ok(),
        }
    });

    let text = video_text_vectors(corpus, opts.text_dim);
    let concept = video_concept_vectors(corpus, opts.text_dim)?;
    let students = exec
        .map(&order, |&i| -> Result<StudentAnalysis> {
            let s = &corpus.sequences[i];
            let profile = discipline_profile(corpus, &s.items);
            Ok(StudentAnalysis {
                student: corpus.students[s.student].clone(),
                n_items: s.len(),
                similarity: similarity_report(corpus, &s.items, &text, &concept)?,
                disciplines: Discipline::ALL
                    .iter()
                    .map(|d| (d.label().to_string(), profile[d.index()]))
                    .collect(),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let tested: Vec<&MarkovTestResult> = courses.iter().filter_map(|c| c.result.as_ref()).collect();
    let k = students.len().max(1) as f64;
    let summary = AnalysisSummary {
        courses_tested: tested.len(),
        classified_markov: tested.iter().filter(|r| r.classified_markov).count(),
        dependence_detected: tested.iter().filter(|r| r.dependence_detected).count(),
        mean_text_similarity: students.iter().map(|s| s.similarity.text_similarity).sum::<f64>() / k,
        mean_concept_similarity: students.iter().map(|s| s.similarity.concept_similarity).sum::<f64>() / k,
        positive_text_similarity: students.iter().filter(|s| s.similarity.text_similarity > 0.0).count(),
        single_discipline_students: students
            .iter()
            .filter(|s| s.disciplines.values().any(|&p| p == 1.0))
            .count(),
    };
    Ok(AnalysisReport {
        stats: corpus_stats(corpus),
        required_sample_size: n as u64,
        sampled_students: students.len(),
        courses,
        students,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Course, Video};
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn sample_sizes() {
        let s = |z, p, d| required_sample_size(SamplingParams { z, p, d_margin: d });
        assert_eq!(s(1.96, 0.5, 0.05).unwrap(), 385);
        assert_eq!(s(0.0, 0.5, 0.05).unwrap(), 0);
        assert_eq!(s(2.58, 0.5, 0.05).unwrap(), 666);
        // exact integer raw value stays put: 2²·0.5·0.5/0.1² = 100
        assert_eq!(s(2.0, 0.5, 0.1).unwrap(), 100);
        assert!(matches!(s(1.96, 0.5, 0.0), Err(PalError::Domain(_))));
    }

    #[test]
    fn transition_enumeration() {
        let tm = transition_counts(&[vec![10, 20, 10, 20]]).unwrap();
        assert_eq!(tm.states, [10, 20]);
        assert_eq!(tm.counts, vec![vec![0, 2], vec![1, 0]]);
        let tm = transition_counts(&[vec![1, 2], vec![1, 2]]).unwrap();
        assert_eq!(tm.counts[0][1], 2);
        assert!(matches!(transition_counts(&[vec![1]]), Err(PalError::Untestable(_))));
    }

    #[test]
    fn worked_statistics() {
        let r = markov_test(&TransferMatrix::from_counts(vec![vec![5, 5], vec![5, 5]]).unwrap(), 0.05).unwrap();
        assert_eq!(r.chi2, 0.0);
        assert_eq!(r.chi2_abs, 0.0);
        let r = markov_test(&TransferMatrix::from_counts(vec![vec![0, 10], vec![10, 0]]).unwrap(), 0.05).unwrap();
        assert!((r.chi2 - 40.0 * 2f64.ln()).abs() < 1e-12);
        assert!((r.chi2_abs - 27.725887).abs() < 1e-6);
        assert_eq!(r.dof, 1);
        assert!((r.critical - 3.841459).abs() < 1e-6);
        assert!(!r.classified_markov);
        assert!(r.dependence_detected);
    }

    #[test]
    fn skips_empty_rows_and_rejects_degenerate() {
        let r = markov_test(
            &TransferMatrix::from_counts(vec![vec![3, 1, 0], vec![0, 0, 0], vec![2, 2, 0]]).unwrap(),
            0.05,
        )
        .unwrap();
        assert!(r.chi2.is_finite() && r.chi2 >= 0.0);
        assert_eq!(r.dof, 4);
        assert!(markov_test(&TransferMatrix::from_counts(vec![vec![0, 0], vec![0, 0]]).unwrap(), 0.05).is_err());
        assert!(markov_test(&TransferMatrix::from_counts(vec![vec![4]]).unwrap(), 0.05).is_err());
    }

    #[test]
    fn critical_values_match_tables() {
        for (dof, crit) in [(1.0, 3.841459), (2.0, 5.991465), (4.0, 9.487729), (16.0, 26.296228), (100.0, 124.342113)] {
            let c = chi2_critical(0.05, dof).unwrap();
            assert!((c - crit).abs() / crit < 1e-6, "dof {dof}: {c}");
        }
        assert!((chi2_critical(0.01, 1.0).unwrap() - 6.634897).abs() < 1e-5);
    }

    #[test]
    fn cdf_agrees_with_statrs() {
        for dof in [1.0, 3.0, 9.0, 25.0, 361.0] {
            let d = ChiSquared::new(dof).unwrap();
            for x in [0.1, 1.0, 5.0, 30.0, 300.0, 400.0] {
                assert!((chi2_cdf(x, dof) - d.cdf(x)).abs() < 1e-10, "dof {dof} x {x}");
            }
            for p in [0.05, 0.5, 0.95, 0.99] {
                let q = chi2_quantile(p, dof).unwrap();
                assert!((q - d.inverse_cdf(p)).abs() / q < 1e-7);
            }
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0) - 362880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn calibration_under_independence() {
        let rate = markov_calibration(&[0.24, 0.22, 0.2, 0.18, 0.16], 500, 400, 0.05, 11, Exec::default()).unwrap();
        assert!((0.02..=0.09).contains(&rate), "{rate}");
    }

    fn tiny_corpus() -> Corpus {
        let mut c = Corpus::default();
        for (i, d) in [Discipline::NatSciEng, Discipline::SocSci].into_iter().enumerate() {
            c.courses.push(Course {
                id: format!("m{i}"),
                name: format!("m{i}"),
                discipline: d,
                chapters: vec!["c".into()],
            });
        }
        for i in 0..6 {
            c.videos.push(Video {
                id: format!("v{i}"),
                course: usize::from(i >= 4),
                chapter: "c".into(),
                chapter_index: 0,
                order: i as u32,
                title: String::new(),
                subtitles: String::new(),
                concepts: vec![],
                comments: 0,
            });
        }
        c.reindex();
        c
    }

    #[test]
    fn similarity_fixtures() {
        let c = tiny_corpus();
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        let vecs = vec![e1.clone(), e1, e2, vec![]];
        assert_eq!(adjacent_similarity(&c, &[0, 1], &vecs).unwrap(), 1.0);
        assert_eq!(adjacent_similarity(&c, &[0, 1, 2], &vecs).unwrap(), 0.5);
        let err = adjacent_similarity(&c, &[0, 3], &vecs).unwrap_err();
        assert!(err.to_string().contains("v3"));
    }

    #[test]
    fn profiles() {
        let c = tiny_corpus();
        let p = discipline_profile(&c, &[0, 1, 2]);
        assert_eq!(p, [1.0, 0.0, 0.0, 0.0]);
        let p = discipline_profile(&c, &[0, 1, 2, 4]);
        assert_eq!(p[Discipline::NatSciEng.index()], 0.75);
        assert_eq!(p[Discipline::SocSci.index()], 0.25);
    }

    #[test]
    fn course_runs_split_on_course_change() {
        let mut c = tiny_corpus();
        c.students = vec!["s".into()];
        c.sequences = vec![crate::corpus::LearningSequence {
            student: 0,
            items: vec![0, 1, 4, 2, 3, 5],
        }];
        c.reindex();
        assert_eq!(course_runs(&c, 0), vec![vec![0, 1], vec![2, 3]]);
        let tm = course_transition_counts(&c, 1).unwrap_err();
        assert!(tm.to_string().contains("m1"));
    }

    proptest! {
        #[test]
        fn relabeling_preserves_statistic(counts in proptest::collection::vec(0u64..20, 9), perm in Just([2usize, 0, 1]).prop_shuffle()) {
            let f: Vec<Vec<u64>> = counts.chunks(3).map(|r| r.to_vec()).collect();
            prop_assume!(f.iter().flatten().sum::<u64>() > 0);
            let mut g = vec![vec![0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    g[perm[i]][perm[j]] = f[i][j];
                }
            }
            let a = markov_test(&TransferMatrix::from_counts(f).unwrap(), 0.05).unwrap();
            let b = markov_test(&TransferMatrix::from_counts(g).unwrap(), 0.05).unwrap();
            prop_assert!(a.chi2 >= 0.0);
            prop_assert!((a.chi2 - b.chi2).abs() < 1e-9);
            prop_assert!((a.chi2_abs - b.chi2_abs).abs() < 1e-9);
        }

        #[test]
        fn sample_size_monotone(z in 0.0f64..4.0, dz in 0.0f64..1.0, d in 0.01f64..0.5, dd in 0.0f64..0.2, p in 0.0f64..=1.0) {
            let s = |z, d| required_sample_size(SamplingParams { z, p, d_margin: d }).unwrap();
            prop_assert!(s(z + dz, d) >= s(z, d));
            prop_assert!(s(z, d + dd) <= s(z, d));
        }

        #[test]
        fn similarity_rotation_invariant(raw in proptest::collection::vec(-1.0f64..1.0, 12), h in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let c = tiny_corpus();
            let mut vecs: Vec<Vec<f64>> = raw.chunks(3).map(|r| { let mut v = r.to_vec(); normalize(&mut v); v }).collect();
            prop_assume!(vecs.iter().all(|v| dot(v, v) > 0.5));
            let nh = dot(&h, &h);
            prop_assume!(nh > 0.1);
            let reflect = |x: &[f64]| -> Vec<f64> {
                let k = 2.0 * dot(x, &h) / nh;
                x.iter().zip(&h).map(|(a, b)| a - k * b).collect()
            };
            let items = [0, 1, 2, 3];
            let a = adjacent_similarity(&c, &items, &vecs).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            vecs = vecs.iter().map(|v| reflect(v)).collect();
            let b = adjacent_similarity(&c, &items, &vecs).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
