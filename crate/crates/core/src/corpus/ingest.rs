//! Raw heartbeat logs to learning sequences.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{HeartbeatLog, LearningSequence, WatchBehavior, HEARTBEAT_SECONDS};

/// Students with fewer collapsed behaviors than this are dropped.
pub const MIN_SEQUENCE_LEN: usize = 5;

/// Merges consecutive same-video beats of a student whose inter-arrival is at
/// most five seconds. Each merged beat contributes five seconds of duration.
///
/// Output is ordered by student, then start time.
pub fn aggregate_heartbeats(logs: &[HeartbeatLog]) -> Vec<WatchBehavior> {
    let mut per_student: BTreeMap<usize, Vec<&HeartbeatLog>> = BTreeMap::new();
    for log in logs {
        per_student.entry(log.student).or_default().push(log);
    }
    let mut out = Vec::new();
    for (student, mut beats) in per_student {
        // stable: equal timestamps keep file order
        beats.sort_by_key(|b| b.ts);
        let mut current: Option<(WatchBehavior, i64)> = None;
        for beat in beats {
            match current.as_mut() {
                Some((behavior, last_ts))
                    if behavior.video == beat.video && beat.ts - *last_ts <= HEARTBEAT_SECONDS =>
                {
                    behavior.duration += HEARTBEAT_SECONDS;
                    *last_ts = beat.ts;
                }
                _ => {
                    if let Some((done, _)) = current.take() {
                        out.push(done);
                    }
                    current = Some((
                        WatchBehavior {
                            student,
                            video: beat.video,
                            start_ts: beat.ts,
                            duration: HEARTBEAT_SECONDS,
                        },
                        beat.ts,
                    ));
                }
            }
        }
        if let Some((done, _)) = current {
            out.push(done);
        }
    }
    out
}

/// Collapses runs of equal adjacent ids, keeping first occurrences in order.
pub fn collapse_items(items: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(items.len());
    for &item in items {
        if out.last() != Some(&item) {
            out.push(item);
        }
    }
    out
}

/// Collapses one student's time-ordered behaviors into a learning sequence.
/// The second value is `false` when the result is too short to keep.
pub fn collapse_repeats(student: usize, behaviors: &[WatchBehavior]) -> (LearningSequence, bool) {
    let raw: Vec<usize> = behaviors.iter().map(|b| b.video).collect();
    let items = collapse_items(&raw);
    let keep = items.len() >= MIN_SEQUENCE_LEN;
    (LearningSequence { student, items }, keep)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub raw_logs: usize,
    pub behaviors: usize,
    pub collapsed_items: usize,
    pub students_seen: usize,
    pub students_excluded: usize,
}

/// Full pipeline: aggregate, collapse, and filter short sequences.
pub fn ingest(logs: &[HeartbeatLog]) -> (Vec<LearningSequence>, IngestReport) {
    let behaviors = aggregate_heartbeats(logs);
    let mut report = IngestReport {
        raw_logs: logs.len(),
        behaviors: behaviors.len(),
        ..Default::default()
    };
    let mut sequences = Vec::new();
    let mut start = 0;
    while start < behaviors.len() {
        let student = behaviors[start].student;
        let end = start + behaviors[start..].iter().take_while(|b| b.student == student).count();
        let (seq, keep) = collapse_repeats(student, &behaviors[start..end]);
        report.students_seen += 1;
        report.collapsed_items += seq.items.len();
        if keep {
            sequences.push(seq);
        } else {
            report.students_excluded += 1;
        }
        start = end;
    }
    (sequences, report)
}

/// Mean length of runs of repeated adjacent behaviors (behaviors per collapsed
/// item).
pub fn repeat_factor(behaviors: &[WatchBehavior]) -> f64 {
    if behaviors.is_empty() {
        return 0.0;
    }
    let mut runs = 0usize;
    for (i, b) in behaviors.iter().enumerate() {
        let continues = i > 0 && {
            let p = &behaviors[i - 1];
            p.student == b.student && p.video == b.video
        };
        if !continues {
            runs += 1;
        }
    }
    behaviors.len() as f64 / runs as f64
}
