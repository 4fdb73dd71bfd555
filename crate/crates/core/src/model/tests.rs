use super::*;
use crate::corpus::{synthesize_corpus, SynthConfig};
use crate::nn::grad_check_with;
use crate::Exec;
use rand::Rng;

fn small_corpus() -> Corpus {
    synthesize_corpus(&SynthConfig {
        seed: 3,
        n_students: 40,
        n_courses: 5,
        videos_per_course: 10,
        mean_seq_len: 12,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d: 16,
        max_len: 16,
        text_dim: 32,
        epochs: 2,
        batch_size: 8,
        ..ModelConfig::default()
    }
}

fn batch(model: &PalModel, corpus: &Corpus, n: usize, seed: u64) -> Vec<MaskedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train_sequences(corpus, model.config.max_len)
        .iter()
        .take(n)
        .map(|s| mask_sequence(s, 0.3, &mut rng).unwrap())
        .collect()
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    for bad in [
        ModelConfig { mask_ratio: 0.0, ..ModelConfig::default() },
        ModelConfig { mask_ratio: 1.0, ..ModelConfig::default() },
        ModelConfig { layers: 0, ..ModelConfig::default() },
        ModelConfig { heads: 3, ..ModelConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(PalError::Config(_))));
    }
    let parsed: ModelConfig = serde_json::from_str(r#"{"d": 32, "token_mode": "concept"}"#).unwrap();
    assert_eq!((parsed.d, parsed.token_mode, parsed.layers), (32, TokenMode::Concept, 2));
    assert!(serde_json::from_str::<ModelConfig>(r#"{"dim": 32}"#).is_err());
}

#[test]
fn mask_counts_and_determinism() {
    assert_eq!(mask_count(20, 0.15), 3);
    assert_eq!(mask_count(5, 0.15), 1);
    let items: Vec<usize> = (10..30).collect();
    let a = mask_sequence(&items, 0.15, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = mask_sequence(&items, 0.15, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.positions.len(), 3);
    for (&p, &t) in a.positions.iter().zip(&a.targets) {
        assert_eq!(a.slots[p], Slot::Mask);
        assert_eq!(items[p], t);
    }
    assert_eq!(a.slots.iter().filter(|s| **s == Slot::Mask).count(), 3);
    assert!(mask_sequence(&[1], 0.5, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn fresh_loss_is_near_uniform() {
    let corpus = small_corpus();
    assert_eq!(corpus.videos.len(), 50);
    let model = PalModel::init(&corpus, &tiny_config(), None).unwrap();
    let b = batch(&model, &corpus, 30, 2);
    let (loss, _) = model.batch_loss(&model.params, &b, false, Exec::Sequential).unwrap();
    let ln50 = 50f64.ln();
    assert!((loss - ln50).abs() < 0.1 * ln50, "{loss}");
}

#[test]
fn probability_rows() {
    let corpus = small_corpus();
    let mut model = PalModel::init(&corpus, &tiny_config(), None).unwrap();
    let slots = [Slot::Video(3), Slot::Mask, Slot::Video(7), Slot::Mask];
    let rows = model.forward_probs(&slots, &[2, 4]).unwrap();
    for r in &rows {
        assert_eq!(r.len(), 50);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(model.forward_probs(&slots, &[5]).is_err());
    assert!(model.forward_probs(&slots, &[0]).is_err());

    let mut p = model.params.clone();
    p.head.b2.data_mut()[11] = 0.5;
    model.set_params(p.clone()).unwrap();
    let before = model.forward_probs(&slots, &[2, 4]).unwrap();
    p.head.b2.data_mut()[11] = 1.0;
    model.set_params(p).unwrap();
    let after = model.forward_probs(&slots, &[2, 4]).unwrap();
    for (a, b) in after.iter().zip(&before) {
        assert!(a[11] > b[11]);
    }
}

#[test]
fn loss_formula() {
    let one_hot = |v: usize| {
        let mut r = vec![0.0; 50];
        r[v] = 1.0;
        r
    };
    assert_eq!(mlm_loss(&[vec![one_hot(3), one_hot(9)]], &[vec![3, 9]]).unwrap(), 0.0);
    let uniform = vec![1.0 / 50.0; 50];
    let l = mlm_loss(&[vec![uniform.clone()], vec![uniform.clone(), uniform.clone()]], &[vec![1], vec![2, 3]]).unwrap();
    assert!((l - 50f64.ln()).abs() < 1e-12);
    // per-sequence averaging first, then across sequences
    let rows = vec![vec![one_hot(1)], vec![uniform.clone(), one_hot(4)]];
    let targets = vec![vec![1], vec![0, 4]];
    let l = mlm_loss(&rows, &targets).unwrap();
    assert!((l - 50f64.ln() / 4.0).abs() < 1e-12);
    let doubled = mlm_loss(&[rows.clone(), rows].concat(), &[targets.clone(), targets].concat()).unwrap();
    assert!((doubled - l).abs() < 1e-15);
    // zero target probability is clamped, not infinite
    assert!(mlm_loss(&[vec![one_hot(0)]], &[vec![1]]).unwrap().is_finite());
}

#[test]
fn batch_loss_ignores_order_and_duplication() {
    let corpus = small_corpus();
    let model = PalModel::init(&corpus, &tiny_config(), None).unwrap();
    let b = batch(&model, &corpus, 9, 4);
    let (l, _) = model.batch_loss(&model.params, &b, false, Exec::Sequential).unwrap();
    let mut rev = b.clone();
    rev.reverse();
    let (lr, _) = model.batch_loss(&model.params, &rev, false, Exec::Sequential).unwrap();
    assert!((l - lr).abs() < 1e-12);
    let dup = [b.clone(), b].concat();
    let (ld, _) = model.batch_loss(&model.params, &dup, false, Exec::Sequential).unwrap();
    assert!((l - ld).abs() < 1e-12);
}

fn full_grad_check(cfg: &ModelConfig) -> (f64, String) {
    let corpus = small_corpus();
    let model = PalModel::init(&corpus, cfg, None).unwrap();
    let mut params = model.params.clone();
    // leave the symmetric init so every group carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (_, t) in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let b = batch(&model, &corpus, 6, 5);
    let (_, g) = model.batch_loss(&params, &b, true, Exec::Sequential).unwrap();
    let analytic = g.unwrap().flatten();
    let theta = params.flatten();
    let r = grad_check_with(&theta, &analytic, 1e-5, Exec::default(), |t| {
        let mut p = params.clone();
        p.unflatten(t)?;
        Ok(model.batch_loss(&p, &b, false, Exec::Sequential)?.0)
    })
    .unwrap();
    let mut at = 0;
    let mut worst = String::new();
    for (name, t) in params.tensors() {
        if (at..at + t.len()).contains(&r.worst_index) {
            worst = name;
        }
        at += t.len();
    }
    (r.max_rel_error, worst)
}

#[test]
fn full_model_gradient() {
    let (err, worst) = full_grad_check(&tiny_config());
    assert!(err < 1e-4, "{err} in {worst}");
}

#[test]
fn meta_gradient_vanishes_without_meta() {
    let corpus = small_corpus();
    let cfg = ModelConfig {
        use_meta: false,
        ..tiny_config()
    };
    let model = PalModel::init(&corpus, &cfg, None).unwrap();
    let b = batch(&model, &corpus, 5, 6);
    let g = model.batch_loss(&model.params, &b, true, Exec::Sequential).unwrap().1.unwrap();
    assert!(g.tables.meta.data().iter().all(|&x| x == 0.0));
    assert!(g.tables.special.row(crate::encoder::PAD).iter().all(|&x| x == 0.0));
    let with_meta = PalModel::init(&corpus, &tiny_config(), None).unwrap();
    let g = with_meta.batch_loss(&with_meta.params, &b, true, Exec::Sequential).unwrap().1.unwrap();
    assert!(g.tables.meta.data().iter().any(|&x| x != 0.0));
}

#[test]
fn predictions_use_future_context() {
    let corpus = small_corpus();
    let model = PalModel::init(&corpus, &tiny_config(), None).unwrap();
    let a = [Slot::Video(1), Slot::Mask, Slot::Video(2), Slot::Video(3)];
    let b = [Slot::Video(1), Slot::Mask, Slot::Video(2), Slot::Video(40)];
    let pa = model.forward_probs(&a, &[2]).unwrap();
    let pb = model.forward_probs(&b, &[2]).unwrap();
    assert_ne!(pa, pb);
}

#[test]
fn cls_encoding() {
    let corpus = small_corpus();
    let model = PalModel::init(&corpus, &tiny_config(), None).unwrap();
    let items: Vec<usize> = (0..23).map(|i| (i * 7) % 50).collect();
    let e = model.encode_cls(&items).unwrap();
    assert_eq!(e.len(), 16);
    assert_eq!(e, model.encode_cls(&items).unwrap());
    assert_eq!(e, model.encode_cls(&items[7..]).unwrap());
    assert!(model.encode_cls(&[]).is_err());
    assert!(model.encode_cls(&[50]).is_err());
}

#[test]
fn next_item_distribution() {
    let corpus = small_corpus();
    let model = PalModel::init(&corpus, &tiny_config(), None).unwrap();
    let hist: Vec<usize> = (0..30).collect();
    let p = model.next_item_scores(&hist).unwrap();
    assert_eq!(p.len(), 50);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(p, model.next_item_scores(&hist).unwrap());
    // only the last N−1 items are visible
    assert_eq!(p, model.next_item_scores(&hist[15..]).unwrap());
    assert!(model.next_item_scores(&[]).is_err());
}

#[test]
fn training_is_deterministic_across_exec_modes() {
    let corpus = small_corpus();
    let cfg = tiny_config();
    let (m1, r1) = pretrain(&corpus, &cfg, None, Exec::Sequential).unwrap();
    let (m2, r2) = pretrain(&corpus, &cfg, None, Exec::Parallel).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1.params, m2.params);
    assert_eq!(r1.loss_trace.len(), cfg.epochs + 1);
    assert!(r1.loss_trace.last() < r1.loss_trace.first());
}

#[test]
fn zero_learning_rate_freezes_the_trace() {
    let corpus = small_corpus();
    let cfg = ModelConfig { lr: 0.0, ..tiny_config() };
    let (m, r) = pretrain(&corpus, &cfg, None, Exec::default()).unwrap();
    assert!(r.loss_trace.iter().all(|&l| l == r.loss_trace[0]));
    assert_eq!(m.params, PalModel::init(&corpus, &cfg, None).unwrap().params);
}

#[test]
fn checkpoint_round_trip() {
    let corpus = small_corpus();
    let (m, r) = pretrain(&corpus, &tiny_config(), None, Exec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &m, &corpus.content_hash(), Some(&r)).unwrap();
    let ck = load_checkpoint(&path, Some(&corpus.content_hash())).unwrap();
    assert_eq!(ck.report.as_ref(), Some(&r));
    let back = ck.into_model().unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(back.token_table(), m.token_table());
    let first = std::fs::read(&path).unwrap();
    save_checkpoint(&path, &back, &corpus.content_hash(), Some(&r)).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert!(matches!(load_checkpoint(&path, Some("other")), Err(PalError::Checkpoint(_))));
}
