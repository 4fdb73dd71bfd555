//! JSONL (de)serialization of a corpus directory.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    Concept, Corpus, Course, Discipline, Enrollment, HeartbeatLog, KtRecord, LearningSequence,
    Question, Video,
};
use crate::concepts::{self, Lexicon};
use crate::error::{PalError, Result};

/// Files written by [`write_corpus`], in write order.
pub const CORPUS_FILES: [&str; 8] = [
    "heartbeats.jsonl",
    "videos.jsonl",
    "courses.jsonl",
    "concepts.jsonl",
    "questions.jsonl",
    "kt.jsonl",
    "enroll.jsonl",
    "sequences.jsonl",
];

#[derive(Serialize, Deserialize)]
struct HeartbeatRec {
    student: String,
    video: String,
    position: f64,
    ts: i64,
}

#[derive(Serialize, Deserialize)]
struct VideoRec {
    id: String,
    course: String,
    chapter: String,
    order: u32,
    title: String,
    #[serde(default)]
    subtitles: String,
    #[serde(default)]
    comments: u32,
}

#[derive(Serialize, Deserialize)]
struct CourseRec {
    id: String,
    name: String,
    discipline: Discipline,
    chapters: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ConceptRec {
    id: String,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct QuestionRec {
    id: String,
    text: String,
    concepts: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct KtRec {
    student: String,
    question: String,
    correct: u8,
}

#[derive(Serialize, Deserialize)]
struct EnrollRec {
    student: String,
    course: String,
    dropout: u8,
}

#[derive(Serialize, Deserialize)]
struct SequenceRec {
    student: String,
    items: Vec<String>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct VideoConceptsRec {
    pub video: String,
    pub concepts: Vec<concepts::ConceptMatchRec>,
}

fn read_jsonl<T: DeserializeOwned>(dir: &Path, name: &str, required: bool) -> Result<Option<Vec<T>>> {
    let path = dir.join(name);
    if !path.exists() {
        if required {
            return Err(PalError::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "required corpus file missing"),
            ));
        }
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| PalError::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| PalError::Parse {
            file: name.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(Some(out))
}

fn flag(value: u8, file: &str, line: usize) -> Result<bool> {
    match value {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(PalError::Parse {
            file: file.to_string(),
            line,
            msg: format!("expected 0 or 1, got {other}"),
        }),
    }
}

#[derive(Default)]
struct StudentTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl StudentTable {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), self.ids.len() - 1);
        self.ids.len() - 1
    }
}

fn lookup(idx: Option<usize>, kind: &'static str, id: &str) -> Result<usize> {
    idx.ok_or_else(|| PalError::DanglingId {
        kind,
        id: id.to_string(),
    })
}

/// Loads a corpus directory. `videos.jsonl` and `courses.jsonl` are required;
/// every other file is optional. When `sequences.jsonl` is absent the
/// sequences are ingested from `heartbeats.jsonl`. When
/// `video_concepts.jsonl` is absent, video concepts are extracted from the
/// subtitles with the concept lexicon.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let mut corpus = Corpus::default();

    let courses: Vec<CourseRec> = read_jsonl(dir, "courses.jsonl", true)?.unwrap_or_default();
    corpus.courses = courses
        .into_iter()
        .map(|c| Course {
            id: c.id,
            name: c.name,
            discipline: c.discipline,
            chapters: c.chapters,
        })
        .collect();
    corpus.reindex();

    let videos: Vec<VideoRec> = read_jsonl(dir, "videos.jsonl", true)?.unwrap_or_default();
    for v in videos {
        let course = lookup(corpus.course_index(&v.course), "course", &v.course)?;
        let chapter_index = corpus.courses[course]
            .chapters
            .iter()
            .position(|c| c == &v.chapter)
            .ok_or_else(|| PalError::DanglingId {
                kind: "chapter",
                id: v.chapter.clone(),
            })?;
        corpus.videos.push(Video {
            id: v.id,
            course,
            chapter: v.chapter,
            chapter_index,
            order: v.order,
            title: v.title,
            subtitles: v.subtitles,
            concepts: Vec::new(),
            comments: v.comments,
        });
    }

    let concepts: Vec<ConceptRec> = read_jsonl(dir, "concepts.jsonl", false)?.unwrap_or_default();
    corpus.concepts = concepts
        .into_iter()
        .map(|c| Concept { id: c.id, name: c.name })
        .collect();
    corpus.reindex();

    let questions: Vec<QuestionRec> = read_jsonl(dir, "questions.jsonl", false)?.unwrap_or_default();
    for q in questions {
        let concepts = q
            .concepts
            .iter()
            .map(|c| lookup(corpus.concept_index(c), "concept", c))
            .collect::<Result<Vec<_>>>()?;
        corpus.questions.push(Question {
            id: q.id,
            text: q.text,
            concepts,
        });
    }
    corpus.reindex();

    let sequences: Option<Vec<SequenceRec>> = read_jsonl(dir, "sequences.jsonl", false)?;
    let enrolls: Vec<EnrollRec> = read_jsonl(dir, "enroll.jsonl", false)?.unwrap_or_default();
    let kts: Vec<KtRec> = read_jsonl(dir, "kt.jsonl", false)?.unwrap_or_default();
    let beats: Vec<HeartbeatRec> = read_jsonl(dir, "heartbeats.jsonl", false)?.unwrap_or_default();

    let mut students = StudentTable::default();
    if let Some(seqs) = &sequences {
        for s in seqs {
            let student = students.intern(&s.student);
            let items = s
                .items
                .iter()
                .map(|v| lookup(corpus.video_index(v), "video", v))
                .collect::<Result<Vec<_>>>()?;
            if items.windows(2).any(|w| w[0] == w[1]) {
                return Err(PalError::Invalid(format!(
                    "sequence of student `{}` contains consecutive repeats",
                    s.student
                )));
            }
            corpus.sequences.push(LearningSequence { student, items });
        }
    }
    for (i, e) in enrolls.iter().enumerate() {
        let student = students.intern(&e.student);
        let course = lookup(corpus.course_index(&e.course), "course", &e.course)?;
        let dropout = flag(e.dropout, "enroll.jsonl", i + 1)?;
        corpus.enrollments.push(Enrollment {
            student,
            course,
            dropout,
        });
    }
    for (i, k) in kts.iter().enumerate() {
        let student = students.intern(&k.student);
        let question = lookup(corpus.question_index(&k.question), "question", &k.question)?;
        let correct = flag(k.correct, "kt.jsonl", i + 1)?;
        corpus.kt.push(KtRecord {
            student,
            question,
            correct,
        });
    }
    for b in &beats {
        let student = students.intern(&b.student);
        let video = lookup(corpus.video_index(&b.video), "video", &b.video)?;
        if b.ts < 0 || b.position < 0.0 {
            return Err(PalError::Invalid(format!(
                "heartbeat of `{}` has negative time or position",
                b.student
            )));
        }
        corpus.heartbeats.push(HeartbeatLog {
            student,
            video,
            position: b.position,
            ts: b.ts,
        });
    }
    corpus.students = students.ids;
    if sequences.is_none() {
        corpus.sequences = super::ingest(&corpus.heartbeats).0;
    }

    let linked: Option<Vec<VideoConceptsRec>> = read_jsonl(dir, "video_concepts.jsonl", false)?;
    match linked {
        Some(recs) => {
            for r in recs {
                let v = lookup(corpus.video_index(&r.video), "video", &r.video)?;
                corpus.videos[v].concepts = r
                    .concepts
                    .iter()
                    .map(|m| lookup(corpus.concept_index(&m.id), "concept", &m.id))
                    .collect::<Result<Vec<_>>>()?;
            }
        }
        None if !corpus.concepts.is_empty() => {
            let lexicon = Lexicon::new(&corpus.concepts);
            concepts::link_video_concepts(&mut corpus, &lexicon, 1);
        }
        None => {}
    }
    corpus.reindex();
    Ok(corpus)
}

/// Writes `lines` to `path` through a temporary sibling file and a rename.
pub fn write_jsonl_atomic(path: &Path, lines: &[String]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| PalError::io(&tmp, e))?;
        let mut buf = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
        for l in lines {
            buf.push_str(l);
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(|e| PalError::io(&tmp, e))?;
        f.sync_all().map_err(|e| PalError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| PalError::io(path, e))
}

fn to_lines<T: Serialize>(recs: impl Iterator<Item = T>) -> Vec<String> {
    recs.map(|r| serde_json::to_string(&r).expect("records serialize"))
        .collect()
}

/// `video_concepts.jsonl` lines for per-video concept matches.
pub fn video_concept_lines(c: &Corpus, matches: &[Vec<concepts::ConceptMatch>]) -> Vec<String> {
    to_lines(c.videos.iter().zip(matches).map(|(v, m)| VideoConceptsRec {
        video: v.id.clone(),
        concepts: m
            .iter()
            .map(|m| concepts::ConceptMatchRec {
                id: c.concepts[m.concept].id.clone(),
                count: m.count,
                confidence: m.confidence,
            })
            .collect(),
    }))
}

/// Serializes a corpus as the eight JSONL files of [`CORPUS_FILES`].
pub fn corpus_to_lines(c: &Corpus) -> Vec<(&'static str, Vec<String>)> {
    let sid = |i: usize| c.students[i].clone();
    let vid = |i: usize| c.videos[i].id.clone();
    vec![
        (
            "heartbeats.jsonl",
            to_lines(c.heartbeats.iter().map(|b| HeartbeatRec {
                student: sid(b.student),
                video: vid(b.video),
                position: b.position,
                ts: b.ts,
            })),
        ),
        (
            "videos.jsonl",
            to_lines(c.videos.iter().map(|v| VideoRec {
                id: v.id.clone(),
                course: c.courses[v.course].id.clone(),
                chapter: v.chapter.clone(),
                order: v.order,
                title: v.title.clone(),
                subtitles: v.subtitles.clone(),
                comments: v.comments,
            })),
        ),
        (
            "courses.jsonl",
            to_lines(c.courses.iter().map(|m| CourseRec {
                id: m.id.clone(),
                name: m.name.clone(),
                discipline: m.discipline,
                chapters: m.chapters.clone(),
            })),
        ),
        (
            "concepts.jsonl",
            to_lines(c.concepts.iter().map(|k| ConceptRec {
                id: k.id.clone(),
                name: k.name.clone(),
            })),
        ),
        (
            "questions.jsonl",
            to_lines(c.questions.iter().map(|q| QuestionRec {
                id: q.id.clone(),
                text: q.text.clone(),
                concepts: q.concepts.iter().map(|&k| c.concepts[k].id.clone()).collect(),
            })),
        ),
        (
            "kt.jsonl",
            to_lines(c.kt.iter().map(|k| KtRec {
                student: sid(k.student),
                question: c.questions[k.question].id.clone(),
                correct: k.correct as u8,
            })),
        ),
        (
            "enroll.jsonl",
            to_lines(c.enrollments.iter().map(|e| EnrollRec {
                student: sid(e.student),
                course: c.courses[e.course].id.clone(),
                dropout: e.dropout as u8,
            })),
        ),
        (
            "sequences.jsonl",
            to_lines(c.sequences.iter().map(|s| SequenceRec {
                student: sid(s.student),
                items: s.items.iter().map(|&v| vid(v)).collect(),
            })),
        ),
    ]
}

pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| PalError::io(dir, e))?;
    for (name, lines) in corpus_to_lines(corpus) {
        write_jsonl_atomic(&dir.join(name), &lines)?;
    }
    Ok(())
}
