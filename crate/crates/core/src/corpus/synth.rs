//! Deterministic synthetic MOOC corpus.
//!
//! Students enroll in a few courses (mostly from a home discipline) and walk
//! through them in teaching order with skips, rewinds and random jumps,
//! switching between their courses and resuming where they left off. Every
//! collapsed step is emitted as one or more heartbeat-level behaviors, so the
//! sequences are recovered by running the real ingestion pipeline.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ingest, Concept, Corpus, Course, Discipline, Enrollment, HeartbeatLog, KtRecord, Question,
    Video, HEARTBEAT_SECONDS, OBSERVED_FRACTION,
};
use crate::concepts::{link_video_concepts, Lexicon};
use crate::error::{PalError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_students: usize,
    pub n_courses: usize,
    pub videos_per_course: usize,
    pub n_disciplines: usize,
    pub mean_seq_len: usize,
    /// Probability the next step stays in the current course.
    pub p_same_course: f64,
    /// Per-behavior probability of a further consecutive repeat.
    pub p_repeat: f64,
    /// Concepts taught by each course.
    pub vocab_per_course: usize,
    pub chapters_per_course: usize,
    pub questions_per_course: usize,
    pub kt_per_student: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_students: 500,
            n_courses: 10,
            videos_per_course: 20,
            n_disciplines: 4,
            mean_seq_len: 20,
            p_same_course: 0.75,
            // geometric runs with mean 1 / (1 - p) = 1.6
            p_repeat: 0.375,
            vocab_per_course: 30,
            chapters_per_course: 4,
            questions_per_course: 12,
            kt_per_student: 12,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PalError::Config(m.to_string()));
        for (name, p) in [("p_same_course", self.p_same_course), ("p_repeat", self.p_repeat)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.p_repeat >= 1.0 {
            return bad("p_repeat must be below 1");
        }
        if self.n_students == 0
            || self.n_courses == 0
            || self.videos_per_course == 0
            || self.vocab_per_course == 0
            || self.chapters_per_course == 0
            || self.questions_per_course == 0
        {
            return bad("counts must be at least 1");
        }
        if self.n_disciplines != Discipline::ALL.len() {
            return bad("n_disciplines must be 4");
        }
        if self.mean_seq_len < super::MIN_SEQUENCE_LEN {
            return bad("mean_seq_len must be at least 5");
        }
        if self.videos_per_course < 2 {
            return bad("videos_per_course must be at least 2");
        }
        if self.chapters_per_course > self.videos_per_course {
            return bad("chapters_per_course exceeds videos_per_course");
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "tu", "vos", "zel", "pa", "dri", "on", "sa", "qui", "bel", "nor",
    "fa", "xi", "gor", "lu", "met", "ra", "shi", "ven", "dal", "tor",
];

const FILLER: [&str; 48] = [
    "the", "and", "we", "now", "this", "so", "look", "here", "that", "is", "a", "of", "to", "in",
    "it", "you", "can", "see", "next", "then", "what", "about", "let", "us", "consider", "example",
    "today", "with", "for", "our", "very", "important", "remember", "when", "how", "why", "first",
    "second", "step", "method", "result", "case", "question", "answer", "simple", "idea",
    "again", "note",
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct NameGen {
    used: BTreeSet<String>,
}

impl NameGen {
    fn new() -> Self {
        NameGen {
            used: FILLER.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// A fresh pseudo-word never produced before.
    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.gen_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn phrase(&mut self, rng: &mut ChaCha8Rng, words: usize) -> String {
        (0..words).map(|_| self.word(rng)).collect::<Vec<_>>().join(" ")
    }
}

struct Student {
    enrolled: Vec<usize>,
}

/// Builds a corpus that is a pure function of `cfg`.
pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut names = NameGen::new();
    let mut corpus = Corpus::default();
    let vpc = cfg.videos_per_course;

    for c in 0..cfg.n_courses {
        let name = names.phrase(&mut rng, 2);
        let chapters = (0..cfg.chapters_per_course)
            .map(|k| format!("C{c:03}-ch{k}"))
            .collect();
        corpus.courses.push(Course {
            id: format!("C{c:03}"),
            name,
            discipline: Discipline::ALL[c % Discipline::ALL.len()],
            chapters,
        });
    }

    // Shared concepts per discipline, then the topic pool of each course.
    let shared_per_discipline = 4;
    let mut discipline_concepts = vec![Vec::new(); Discipline::ALL.len()];
    let mut course_concepts = vec![Vec::new(); cfg.n_courses];
    let new_concept = |corpus: &mut Corpus, rng: &mut ChaCha8Rng, names: &mut NameGen| {
        let words = if rng.gen_bool(0.5) { 1 } else { 2 };
        let id = format!("K{:04}", corpus.concepts.len());
        corpus.concepts.push(Concept {
            id,
            name: names.phrase(rng, words),
        });
        corpus.concepts.len() - 1
    };
    for pool in discipline_concepts.iter_mut() {
        for _ in 0..shared_per_discipline {
            pool.push(new_concept(&mut corpus, &mut rng, &mut names));
        }
    }
    for pool in course_concepts.iter_mut() {
        for _ in 0..cfg.vocab_per_course {
            pool.push(new_concept(&mut corpus, &mut rng, &mut names));
        }
    }

    let per_chapter = vpc / cfg.chapters_per_course;
    let extra = vpc % cfg.chapters_per_course;
    for c in 0..cfg.n_courses {
        let mut j = 0;
        for ch in 0..cfg.chapters_per_course {
            let size = per_chapter + usize::from(ch < extra);
            for order in 0..size {
                let pool = &course_concepts[c];
                let window = 4.min(pool.len());
                let center = j * pool.len() / vpc;
                let lo = center.min(pool.len() - window);
                let mut chosen: Vec<usize> = pool[lo..lo + window].to_vec();
                chosen.shuffle(&mut rng);
                chosen.truncate(3.min(window));
                let mut chunks: Vec<String> = Vec::new();
                for &k in &chosen {
                    for _ in 0..rng.gen_range(1..=3) {
                        chunks.push(corpus.concepts[k].name.clone());
                    }
                }
                if rng.gen_bool(0.35) {
                    let d = corpus.courses[c].discipline.index();
                    let k = *discipline_concepts[d].choose(&mut rng).unwrap();
                    chunks.push(corpus.concepts[k].name.clone());
                }
                for _ in 0..30 {
                    chunks.push(FILLER.choose(&mut rng).unwrap().to_string());
                }
                chunks.shuffle(&mut rng);
                let course = &corpus.courses[c];
                corpus.videos.push(Video {
                    id: format!("V{:04}", corpus.videos.len()),
                    course: c,
                    chapter: course.chapters[ch].clone(),
                    chapter_index: ch,
                    order: order as u32,
                    title: format!("{} {}.{}", course.name, ch + 1, order + 1),
                    subtitles: chunks.join(" "),
                    concepts: Vec::new(),
                    comments: 0,
                });
                j += 1;
            }
        }
    }
    corpus.reindex();
    let lexicon = Lexicon::new(&corpus.concepts);
    link_video_concepts(&mut corpus, &lexicon, 1);

    // Long-tail course popularity.
    let mut ranks: Vec<usize> = (0..cfg.n_courses).collect();
    ranks.shuffle(&mut rng);
    let popularity: Vec<f64> = ranks.iter().map(|&r| 1.0 / (1.0 + r as f64).powf(0.8)).collect();
    let difficulty: Vec<f64> = (0..cfg.n_courses).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let quality: Vec<f64> = (0..cfg.n_courses).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let pick_weighted = |rng: &mut ChaCha8Rng, options: &[usize]| -> usize {
        let total: f64 = options.iter().map(|&c| popularity[c]).sum();
        let mut x = rng.gen_range(0.0..total);
        for &c in options {
            x -= popularity[c];
            if x < 0.0 {
                return c;
            }
        }
        *options.last().unwrap()
    };

    let mut students = Vec::with_capacity(cfg.n_students);
    let base_ts: i64 = 1_579_392_000;
    for s in 0..cfg.n_students {
        corpus.students.push(format!("S{s:04}"));
        let home = rng.gen_range(0..Discipline::ALL.len());
        let k = match rng.gen_range(0..100) {
            0..=19 => 1,
            20..=54 => 2,
            55..=84 => 3,
            _ => 4,
        }
        .min(cfg.n_courses);
        let mut enrolled: Vec<usize> = Vec::new();
        while enrolled.len() < k {
            let home_courses: Vec<usize> = (0..cfg.n_courses)
                .filter(|&c| corpus.courses[c].discipline.index() == home && !enrolled.contains(&c))
                .collect();
            let others: Vec<usize> = (0..cfg.n_courses).filter(|c| !enrolled.contains(c)).collect();
            let pool = if !home_courses.is_empty() && rng.gen_bool(0.8) {
                home_courses
            } else {
                others
            };
            enrolled.push(pick_weighted(&mut rng, &pool));
        }

        let len = super::MIN_SEQUENCE_LEN + rng.gen_range(0..=2 * (cfg.mean_seq_len - super::MIN_SEQUENCE_LEN));
        let mut cursor: Vec<Option<usize>> = vec![None; enrolled.len()];
        let start_pos = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.7) {
                0
            } else {
                rng.gen_range(0..per_chapter.max(1))
            }
        };
        let first = pick_weighted(&mut rng, &enrolled);
        let mut slot = enrolled.iter().position(|&c| c == first).unwrap();
        let mut pos = start_pos(&mut rng);
        let mut walk = vec![corpus.course_videos(enrolled[slot])[pos]];
        cursor[slot] = Some(pos);
        while walk.len() < len {
            let current = *walk.last().unwrap();
            if enrolled.len() > 1 && !rng.gen_bool(cfg.p_same_course) {
                let mut next_slot = rng.gen_range(0..enrolled.len() - 1);
                if next_slot >= slot {
                    next_slot += 1;
                }
                slot = next_slot;
                pos = match cursor[slot] {
                    Some(p) if p + 1 < vpc => p + 1,
                    Some(_) => rng.gen_range(0..vpc),
                    None => start_pos(&mut rng),
                };
            } else {
                let r: f64 = rng.gen();
                pos = if r < 0.6 {
                    pos + 1
                } else if r < 0.75 {
                    pos + 2
                } else if r < 0.85 && pos > 0 {
                    rng.gen_range(0..pos)
                } else {
                    rng.gen_range(0..vpc)
                };
                if pos >= vpc {
                    pos = rng.gen_range(0..vpc);
                }
            }
            let videos = corpus.course_videos(enrolled[slot]);
            if videos[pos] == current {
                pos = (pos + rng.gen_range(1..vpc)) % vpc;
            }
            cursor[slot] = Some(pos);
            walk.push(videos[pos]);
        }

        let mut t = base_ts + rng.gen_range(0..30 * 86_400);
        for &video in &walk {
            let mut runs = 1;
            while rng.gen_bool(cfg.p_repeat) {
                runs += 1;
            }
            for _ in 0..runs {
                let beats = rng.gen_range(2..=12);
                let mut position = (rng.gen_range(0..60) * HEARTBEAT_SECONDS) as f64;
                for _ in 0..beats {
                    corpus.heartbeats.push(HeartbeatLog {
                        student: s,
                        video,
                        position,
                        ts: t,
                    });
                    t += HEARTBEAT_SECONDS;
                    position += HEARTBEAT_SECONDS as f64;
                }
                t += rng.gen_range(30..=900);
            }
        }
        students.push(Student { enrolled });
    }
    corpus.sequences = ingest(&corpus.heartbeats).0;
    debug_assert_eq!(corpus.sequences.len(), cfg.n_students);
    corpus.reindex();

    // Questions over contiguous windows of each course's topic pool.
    for (c, pool) in course_concepts.iter().enumerate() {
        for _ in 0..cfg.questions_per_course {
            let width = rng.gen_range(1..=3).min(pool.len());
            let start = rng.gen_range(0..=pool.len() - width);
            let concepts: Vec<usize> = pool[start..start + width].to_vec();
            let names: Vec<&str> = concepts.iter().map(|&k| corpus.concepts[k].name.as_str()).collect();
            corpus.questions.push(Question {
                id: format!("Q{:04}", corpus.questions.len()),
                text: format!("Which statement about {} is correct? ({})", names.join(" and "), corpus.courses[c].id),
                concepts,
            });
        }
    }
    corpus.reindex();

    let sequences = corpus.sequences.clone();
    for seq in &sequences {
        let student = &students[seq.student];
        let watched: BTreeSet<usize> = seq
            .items
            .iter()
            .flat_map(|&v| corpus.videos[v].concepts.iter().copied())
            .collect();
        for _ in 0..cfg.kt_per_student {
            let q = if rng.gen_bool(0.75) {
                let c = *student.enrolled.choose(&mut rng).unwrap();
                c * cfg.questions_per_course + rng.gen_range(0..cfg.questions_per_course)
            } else {
                rng.gen_range(0..corpus.questions.len())
            };
            let qc = &corpus.questions[q].concepts;
            let coverage = qc.iter().filter(|k| watched.contains(k)).count() as f64 / qc.len() as f64;
            let correct = rng.gen_bool(sigmoid(6.0 * coverage - 3.0));
            corpus.kt.push(KtRecord {
                student: seq.student,
                question: q,
                correct,
            });
        }

        let observed = observed_prefix(&seq.items);
        for &c in &student.enrolled {
            let distinct: BTreeSet<usize> = observed
                .iter()
                .copied()
                .filter(|&v| corpus.videos[v].course == c)
                .collect();
            let engagement = 1.0 - (-(distinct.len() as f64) / 3.0).exp();
            let p = sigmoid(4.0 * (1.0 - engagement) - 2.0 + difficulty[c]);
            corpus.enrollments.push(Enrollment {
                student: seq.student,
                course: c,
                dropout: rng.gen_bool(p),
            });
        }
    }

    let mut watchers = vec![BTreeSet::new(); corpus.videos.len()];
    for seq in &corpus.sequences {
        for &v in &seq.items {
            watchers[v].insert(seq.student);
        }
    }
    for (v, w) in watchers.iter().enumerate() {
        let q = quality[corpus.videos[v].course] + rng.gen_range(-0.75..0.75);
        let rate = sigmoid(q - 1.5);
        corpus.videos[v].comments = (0..w.len()).filter(|_| rng.gen_bool(rate)).count() as u32;
    }
    corpus.reindex();
    Ok(corpus)
}

/// The observed (historical) part of a sequence used for dropout features.
pub fn observed_prefix(items: &[usize]) -> &[usize] {
    let n = ((items.len() as f64) * OBSERVED_FRACTION).ceil() as usize;
    &items[..n.min(items.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{aggregate_heartbeats, corpus_to_lines, repeat_factor};

    fn small() -> SynthConfig {
        SynthConfig {
            n_students: 60,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = corpus_to_lines(&synthesize_corpus(&small()).unwrap());
        let b = corpus_to_lines(&synthesize_corpus(&small()).unwrap());
        assert_eq!(a, b);
        let c = corpus_to_lines(&synthesize_corpus(&SynthConfig { seed: 8, ..small() }).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn size_contract() {
        let c = synthesize_corpus(&SynthConfig::default()).unwrap();
        assert_eq!(c.videos.len(), 200);
        assert_eq!(c.students.len(), 500);
        assert_eq!(c.sequences.len(), 500);
        assert!(c.sequences.iter().all(|s| s.len() >= 5));
        assert!(c.sequences.iter().all(|s| s.items.windows(2).all(|w| w[0] != w[1])));
    }

    #[test]
    fn repeat_factor_near_target() {
        let c = synthesize_corpus(&SynthConfig::default()).unwrap();
        let rf = repeat_factor(&aggregate_heartbeats(&c.heartbeats));
        assert!((rf - 1.6).abs() <= 0.2, "repeat factor {rf}");
    }

    #[test]
    fn subtitles_recover_assigned_concepts() {
        let c = synthesize_corpus(&small()).unwrap();
        assert!(c.videos.iter().all(|v| (3..=4).contains(&v.concepts.len())));
    }

    #[test]
    fn rejects_impossible_sizes() {
        let bad = SynthConfig {
            mean_seq_len: 4,
            ..SynthConfig::default()
        };
        assert!(matches!(synthesize_corpus(&bad), Err(PalError::Config(_))));
        let bad = SynthConfig {
            p_same_course: 1.5,
            ..SynthConfig::default()
        };
        assert!(synthesize_corpus(&bad).is_err());
    }
}
