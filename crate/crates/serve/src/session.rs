//! Per-student watch histories backed by an append-only JSONL event log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use pal_core::corpus::Corpus;
use serde::{Deserialize, Serialize};

use crate::error::{ServeError, ServeResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchEvent {
    pub ts: i64,
    pub student: String,
    pub video: String,
}

#[derive(Debug)]
struct Inner {
    histories: HashMap<usize, Vec<usize>>,
    log: Option<File>,
}

/// Histories start from the corpus sequences; every watch is appended to
/// the log before it is applied, so a restart replays to the same state.
#[derive(Debug)]
pub struct SessionStore {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
}

/// Appends `video` unless it repeats the last item. Returns the new length.
fn push_collapsed(history: &mut Vec<usize>, video: usize) -> usize {
    if history.last() != Some(&video) {
        history.push(video);
    }
    history.len()
}

impl SessionStore {
    pub fn new(corpus: &Corpus, log_path: Option<&Path>) -> ServeResult<Self> {
        let mut histories: HashMap<usize, Vec<usize>> =
            corpus.sequences.iter().map(|s| (s.student, s.items.clone())).collect();
        let mut log = None;
        if let Some(path) = log_path {
            let mut replayed = 0;
            if path.exists() {
                let file = File::open(path).map_err(|e| io_err(path, e))?;
                for (n, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| io_err(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let bad = |msg: String| ServeError::BadRequest(format!("{}:{}: {msg}", path.display(), n + 1));
                    let ev: WatchEvent = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                    let (s, v) = resolve(corpus, &ev.student, &ev.video).map_err(|e| bad(e.to_string()))?;
                    push_collapsed(histories.entry(s).or_default(), v);
                    replayed += 1;
                }
            }
            log::info!("replayed {replayed} watch events from {}", path.display());
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| io_err(path, e))?;
            log = Some(file);
        }
        Ok(SessionStore {
            inner: Mutex::new(Inner { histories, log }),
            path: log_path.map(Path::to_path_buf),
        })
    }

    pub fn history(&self, student: usize) -> Vec<usize> {
        self.lock().histories.get(&student).cloned().unwrap_or_default()
    }

    /// Logs and applies one watch; `student` and `video` must already be
    /// resolved against the corpus.
    pub fn record(&self, corpus: &Corpus, student: usize, video: usize) -> ServeResult<usize> {
        let mut inner = self.lock();
        if let Some(file) = inner.log.as_mut() {
            let ev = WatchEvent {
                ts: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64),
                student: corpus.students[student].clone(),
                video: corpus.videos[video].id.clone(),
            };
            let mut line = serde_json::to_string(&ev).map_err(|e| ServeError::Internal(e.to_string()))?;
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new("event log"));
            file.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
            file.flush().map_err(|e| io_err(path, e))?;
        }
        Ok(push_collapsed(inner.histories.entry(student).or_default(), video))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        // A panic while holding the lock cannot leave a history half-written.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ServeError {
    ServeError::Internal(format!("{}: {e}", path.display()))
}

pub(crate) fn resolve(corpus: &Corpus, student: &str, video: &str) -> ServeResult<(usize, usize)> {
    let s = corpus
        .student_index(student)
        .ok_or_else(|| ServeError::NotFound(format!("unknown student {student}")))?;
    let v = corpus
        .video_index(video)
        .ok_or_else(|| ServeError::NotFound(format!("unknown video {video}")))?;
    Ok((s, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_rule() {
        let mut h = vec![1, 2];
        assert_eq!(push_collapsed(&mut h, 3), 3);
        assert_eq!(push_collapsed(&mut h, 3), 3);
        assert_eq!(push_collapsed(&mut h, 2), 4);
        assert_eq!(h, [1, 2, 3, 2]);
    }
}
