use super::*;
use crate::corpus::{synthesize_corpus, Corpus, SynthConfig};
use crate::model::{pretrain, ModelConfig, PalModel};
use crate::Exec;

fn fixture() -> (Corpus, PalModel) {
    let corpus = synthesize_corpus(&SynthConfig {
        seed: 5,
        n_students: 60,
        n_courses: 4,
        videos_per_course: 10,
        mean_seq_len: 12,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = ModelConfig {
        d: 16,
        max_len: 16,
        text_dim: 32,
        epochs: 2,
        batch_size: 8,
        ..ModelConfig::default()
    };
    let (model, _) = pretrain(&corpus, &cfg, None, Exec::Parallel).unwrap();
    (corpus, model)
}

fn in_unit(x: Option<f64>) -> bool {
    x.is_some_and(|v| (0.0..=1.0).contains(&v))
}

#[test]
fn end_to_end_reports_are_well_formed() {
    let (corpus, model) = fixture();
    let students = loo_split(&corpus.sequences).len();

    let pal = eval_model(&model, &corpus, Exec::Parallel).unwrap();
    let pop = eval_baseline(Baseline::Pop, &corpus, Exec::Parallel).unwrap();
    let kss = eval_baseline(Baseline::Kss, &corpus, Exec::Sequential).unwrap();
    for r in [&pal, &pop, &kss] {
        assert_eq!(r.students, students);
        assert!(r.ndcg_1 <= r.ndcg_5 && r.ndcg_5 <= r.ndcg_10);
        assert!(r.recall_1 <= r.recall_5 && r.recall_5 <= r.recall_10 && r.recall_10 <= 100.0);
    }
    assert_eq!(pal, eval_model(&model, &corpus, Exec::Sequential).unwrap());

    let kt = kt_probe(&model, &corpus, 1.0, 1, Exec::Parallel).unwrap();
    assert!(in_unit(kt.auc) && in_unit(kt.accuracy) && in_unit(kt.rmse) && in_unit(kt.macro_f1));
    let small = kt_probe(&model, &corpus, 0.1, 1, Exec::Parallel).unwrap();
    assert!(small.n_train < kt.n_train && small.n_test == kt.n_test);

    let drop = dropout_eval(&model, &corpus, 1, Exec::Parallel).unwrap();
    assert!(in_unit(drop.combined.auc) && in_unit(drop.counts_only.ap));
    assert_eq!(drop.combined.n_test, drop.counts_only.n_test);

    let res = resource_eval(&model, &corpus, ResourceLevel::Video, 1, None, Exec::Parallel).unwrap();
    assert_eq!(res.n_train + res.n_val + res.n_test, corpus.videos.len());
    assert!(in_unit(res.macro_f1));
}

#[test]
fn course_level_needs_enough_courses() {
    let (corpus, model) = fixture();
    // Four courses cannot populate four buckets after an 8:1:1 split.
    assert!(resource_eval(&model, &corpus, ResourceLevel::Course, 1, None, Exec::Sequential).is_err());
}

#[test]
fn kt_rejects_bad_fraction() {
    let (corpus, model) = fixture();
    assert!(kt_probe(&model, &corpus, 0.0, 1, Exec::Sequential).is_err());
    assert!(kt_probe(&model, &corpus, 1.5, 1, Exec::Sequential).is_err());
}
