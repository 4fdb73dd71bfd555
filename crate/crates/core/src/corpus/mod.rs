//! Corpus data model: students, videos, courses, concepts, questions and the
//! learning sequences derived from raw heartbeat logs.

mod ingest;
mod io;
mod stats;
mod synth;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoder::fnv1a64;

pub use ingest::{
    aggregate_heartbeats, collapse_items, collapse_repeats, ingest, repeat_factor, IngestReport,
    MIN_SEQUENCE_LEN,
};
pub use io::{corpus_to_lines, load_corpus, video_concept_lines, write_corpus, write_jsonl_atomic, CORPUS_FILES};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{observed_prefix, synthesize_corpus, SynthConfig};

/// Beat interval of the raw logs, in seconds.
pub const HEARTBEAT_SECONDS: i64 = 5;

/// Leading fraction of a student's timeline treated as the observed
/// (historical) period for dropout prediction.
pub const OBSERVED_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatLog {
    pub student: usize,
    pub video: usize,
    /// Seconds into the video.
    pub position: f64,
    /// Epoch seconds.
    pub ts: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WatchBehavior {
    pub student: usize,
    pub video: usize,
    pub start_ts: i64,
    /// Seconds watched; always a positive multiple of [`HEARTBEAT_SECONDS`].
    pub duration: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningSequence {
    pub student: usize,
    pub items: Vec<usize>,
}

impl LearningSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Discipline {
    #[serde(rename = "NatSci&Eng")]
    NatSciEng,
    #[serde(rename = "Hum&Arts")]
    HumArts,
    #[serde(rename = "SocSci")]
    SocSci,
    #[serde(rename = "Other")]
    Other,
}

impl Discipline {
    pub const ALL: [Discipline; 4] = [
        Discipline::NatSciEng,
        Discipline::HumArts,
        Discipline::SocSci,
        Discipline::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Discipline::NatSciEng => "NatSci&Eng",
            Discipline::HumArts => "Hum&Arts",
            Discipline::SocSci => "SocSci",
            Discipline::Other => "Other",
        }
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Course {
    pub id: String,
    pub name: String,
    pub discipline: Discipline,
    pub chapters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub course: usize,
    pub chapter: String,
    /// Index of `chapter` within the owning course's chapter list.
    pub chapter_index: usize,
    pub order: u32,
    pub title: String,
    pub subtitles: String,
    pub concepts: Vec<usize>,
    /// Forum comments attached to the video.
    pub comments: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub concepts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KtRecord {
    pub student: usize,
    pub question: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Enrollment {
    pub student: usize,
    pub course: usize,
    pub dropout: bool,
}

/// The full cross-linked universe. All references are dense indices into the
/// corresponding vectors; string ids live on the records themselves.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub students: Vec<String>,
    pub videos: Vec<Video>,
    pub courses: Vec<Course>,
    pub concepts: Vec<Concept>,
    pub questions: Vec<Question>,
    pub kt: Vec<KtRecord>,
    pub enrollments: Vec<Enrollment>,
    pub sequences: Vec<LearningSequence>,
    pub heartbeats: Vec<HeartbeatLog>,
    index: CorpusIndex,
}

#[derive(Debug, Clone, Default)]
struct CorpusIndex {
    students: HashMap<String, usize>,
    videos: HashMap<String, usize>,
    courses: HashMap<String, usize>,
    concepts: HashMap<String, usize>,
    questions: HashMap<String, usize>,
    /// Videos of each course in (chapter, order, id) order.
    course_videos: Vec<Vec<usize>>,
    /// Rank of each video inside its course's ordering.
    course_position: Vec<usize>,
    sequence_by_student: Vec<Option<usize>>,
}

impl Corpus {
    /// Rebuilds id maps and course orderings. Must be called after the record
    /// vectors are mutated.
    pub fn reindex(&mut self) {
        fn ids<'a>(it: impl Iterator<Item = &'a String>) -> HashMap<String, usize> {
            it.enumerate().map(|(i, s)| (s.clone(), i)).collect()
        }
        let mut course_videos = vec![Vec::new(); self.courses.len()];
        for (i, v) in self.videos.iter().enumerate() {
            course_videos[v.course].push(i);
        }
        for list in &mut course_videos {
            list.sort_by(|&a, &b| {
                let (va, vb) = (&self.videos[a], &self.videos[b]);
                (va.chapter_index, va.order, &va.id).cmp(&(vb.chapter_index, vb.order, &vb.id))
            });
        }
        let mut course_position = vec![0; self.videos.len()];
        for list in &course_videos {
            for (rank, &v) in list.iter().enumerate() {
                course_position[v] = rank;
            }
        }
        let mut sequence_by_student = vec![None; self.students.len()];
        for (i, s) in self.sequences.iter().enumerate() {
            if s.student < sequence_by_student.len() {
                sequence_by_student[s.student] = Some(i);
            }
        }
        self.index = CorpusIndex {
            students: ids(self.students.iter()),
            videos: ids(self.videos.iter().map(|v| &v.id)),
            courses: ids(self.courses.iter().map(|c| &c.id)),
            concepts: ids(self.concepts.iter().map(|c| &c.id)),
            questions: ids(self.questions.iter().map(|q| &q.id)),
            course_videos,
            course_position,
            sequence_by_student,
        };
    }

    pub fn student_index(&self, id: &str) -> Option<usize> {
        self.index.students.get(id).copied()
    }

    pub fn video_index(&self, id: &str) -> Option<usize> {
        self.index.videos.get(id).copied()
    }

    pub fn course_index(&self, id: &str) -> Option<usize> {
        self.index.courses.get(id).copied()
    }

    pub fn concept_index(&self, id: &str) -> Option<usize> {
        self.index.concepts.get(id).copied()
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.index.questions.get(id).copied()
    }

    /// Videos of a course in teaching order.
    pub fn course_videos(&self, course: usize) -> &[usize] {
        &self.index.course_videos[course]
    }

    /// Position of a video within its course's teaching order.
    pub fn course_position(&self, video: usize) -> usize {
        self.index.course_position[video]
    }

    pub fn discipline_of_video(&self, video: usize) -> Discipline {
        self.courses[self.videos[video].course].discipline
    }

    /// Sequence of a student, if the student has one.
    pub fn sequence_of(&self, student: usize) -> Option<&LearningSequence> {
        self.index
            .sequence_by_student
            .get(student)
            .copied()
            .flatten()
            .map(|i| &self.sequences[i])
    }

    /// Content hash over the ids and sequences, used to bind checkpoints to
    /// the corpus they were trained on.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        for v in &self.videos {
            buf.extend_from_slice(v.id.as_bytes());
            buf.push(0);
            buf.extend_from_slice(self.courses[v.course].id.as_bytes());
            buf.push(0);
            buf.extend_from_slice(v.subtitles.as_bytes());
            buf.push(1);
        }
        for s in &self.sequences {
            buf.extend_from_slice(self.students[s.student].as_bytes());
            for &i in &s.items {
                buf.extend_from_slice(&(i as u64).to_le_bytes());
            }
            buf.push(2);
        }
        format!("{:016x}", fnv1a64(&buf))
    }
}
