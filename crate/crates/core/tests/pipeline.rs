use pal_core::analysis::{analyze, AnalyzeOptions};
use pal_core::corpus::{collapse_items, ingest, load_corpus, synthesize_corpus, write_corpus, Corpus, SynthConfig};
use pal_core::downstream::{eval_baseline, eval_model, Baseline};
use pal_core::model::{load_checkpoint, pretrain, save_checkpoint, ModelConfig};
use pal_core::Exec;
use proptest::prelude::*;

fn corpus() -> Corpus {
    synthesize_corpus(&SynthConfig {
        seed: 21,
        n_students: 60,
        n_courses: 4,
        videos_per_course: 10,
        mean_seq_len: 12,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn corpus_survives_a_disk_round_trip() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&c, dir.path()).unwrap();
    let back = load_corpus(dir.path()).unwrap();
    assert_eq!(back.content_hash(), c.content_hash());
    assert_eq!(back.sequences, c.sequences);
}

#[test]
fn heartbeats_rebuild_the_sequences() {
    let c = corpus();
    let (seqs, report) = ingest(&c.heartbeats);
    assert_eq!(seqs, c.sequences);
    assert_eq!(report.raw_logs, c.heartbeats.len());
    assert_eq!(report.students_seen, report.students_excluded + seqs.len());
}

#[test]
fn analysis_covers_every_course() {
    let c = corpus();
    let r = analyze(&c, &AnalyzeOptions::default(), Exec::default()).unwrap();
    assert_eq!(r.required_sample_size, 385);
    assert_eq!(r.courses.len(), c.courses.len());
    assert!(r.sampled_students <= c.sequences.len());
}

#[test]
fn checkpoint_reload_scores_identically() {
    let c = corpus();
    let cfg = ModelConfig {
        d: 16,
        max_len: 16,
        text_dim: 32,
        epochs: 2,
        batch_size: 8,
        ..ModelConfig::default()
    };
    let (model, report) = pretrain(&c, &cfg, None, Exec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&path, &model, &c.content_hash(), Some(&report)).unwrap();
    let back = load_checkpoint(&path, Some(&c.content_hash())).unwrap();
    assert_eq!(back.report.as_ref(), Some(&report));
    let back = back.into_model().unwrap();
    assert_eq!(eval_model(&back, &c, Exec::Sequential).unwrap(), eval_model(&model, &c, Exec::Parallel).unwrap());
    assert!(load_checkpoint(&path, Some("other")).is_err());
}

#[test]
fn baselines_are_exec_independent() {
    let c = corpus();
    for kind in [Baseline::Pop, Baseline::Kss] {
        let a = eval_baseline(kind, &c, Exec::Sequential).unwrap();
        assert_eq!(a, eval_baseline(kind, &c, Exec::Parallel).unwrap());
        assert_eq!(a.students, c.sequences.len());
    }
}

proptest! {
    #[test]
    fn collapsed_runs_have_no_adjacent_repeats(items in proptest::collection::vec(0usize..4, 0..50)) {
        let out = collapse_items(&items);
        prop_assert!(out.windows(2).all(|w| w[0] != w[1]));
        let mut distinct: Vec<usize> = items.clone();
        distinct.dedup();
        prop_assert_eq!(out, distinct);
    }
}
