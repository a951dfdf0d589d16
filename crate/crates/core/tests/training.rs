use std::cell::Cell;

use grounded_rank::data::{generate_synthetic, SynthSpec, SyntheticCorpora, Task, TrainingSource};
use grounded_rank::encoders::{build_vocabulary, Model, ModelConfig};
use grounded_rank::train::{
    run_pseudopair_cycle, train, CycleMode, PseudoPairConfig, StopReason, TrainConfig, Trainer,
};
use grounded_rank::{Error, Result};

const CFG: ModelConfig = ModelConfig {
    word_dim: 6,
    hidden_dim: 6,
    image_dim: 8,
};

fn corpora() -> SyntheticCorpora {
    generate_synthetic(&SynthSpec {
        concepts: 5,
        images: 40,
        val_images: 20,
        test_images: 20,
        feature_dim: 8,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn setup() -> (SyntheticCorpora, Vec<TrainingSource>, Model) {
    let data = corpora();
    let aligned = data.aligned.clone().with_name("aligned");
    let disjoint = data.disjoint.clone().with_name("disjoint");
    let vocab = build_vocabulary(&[&aligned, &disjoint], 1).unwrap();
    let model = Model::new(vocab, &CFG, 3);
    let sources = vec![
        TrainingSource::with_c2c(aligned, "en", "de"),
        TrainingSource::new(disjoint),
    ];
    (data, sources, model)
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn decreasing_evaluator_stops_after_eleven_inspections() {
    let (_, sources, model) = setup();
    let calls = Cell::new(0.0);
    let mut eval = |_: &Model| -> Result<f64> {
        calls.set(calls.get() + 1.0);
        Ok(100.0 - calls.get())
    };
    let out = train(model, &sources, &small_cfg(), &mut eval).unwrap();
    assert_eq!(out.log.stop_reason, StopReason::Patience);
    assert_eq!(out.log.inspections.len(), 11);
    assert_eq!(out.log.updates, 5500);
    assert_eq!(out.log.best_update, 500);
    let updates: Vec<usize> = out.log.inspections.iter().map(|i| i.update).collect();
    assert_eq!(updates, (1..=11).map(|k| 500 * k).collect::<Vec<_>>());
}

#[test]
fn increasing_evaluator_runs_to_cap_and_keeps_last() {
    let (_, sources, model) = setup();
    let mut n = 0.0;
    let mut eval = |_: &Model| -> Result<f64> {
        n += 1.0;
        Ok(n)
    };
    let cfg = TrainConfig {
        max_updates: 2000,
        ..small_cfg()
    };
    let out = train(model, &sources, &cfg, &mut eval).unwrap();
    assert_eq!(out.log.stop_reason, StopReason::MaxUpdates);
    assert_eq!(out.log.inspections.len(), 4);
    assert_eq!(out.log.best_update, 2000);
    assert_eq!(out.log.best_score, 4.0);
}

#[test]
fn improvement_resets_patience() {
    let (_, sources, model) = setup();
    // Best at inspection 0, a new best at inspection 9, then flat.
    let mut k = 0usize;
    let mut eval = |_: &Model| -> Result<f64> {
        let s = match k {
            0 => 10.0,
            9 => 11.0,
            _ => 5.0,
        };
        k += 1;
        Ok(s)
    };
    let out = train(model, &sources, &small_cfg(), &mut eval).unwrap();
    assert_eq!(out.log.inspections.len(), 20);
    assert_eq!(out.log.best_update, 5000);
    assert_eq!(out.log.updates, 10_000);
}

#[test]
fn equal_score_is_not_an_improvement() {
    let (_, sources, model) = setup();
    let mut eval = |_: &Model| -> Result<f64> { Ok(1.0) };
    let cfg = TrainConfig {
        eval_interval_updates: 10,
        patience_inspections: 3,
        ..small_cfg()
    };
    let out = train(model, &sources, &cfg, &mut eval).unwrap();
    let improved: Vec<bool> = out.log.inspections.iter().map(|i| i.improved).collect();
    assert_eq!(improved, vec![true, false, false, false]);
    assert_eq!(out.log.best_update, 10);
}

#[test]
fn clipped_gradient_norm_bounded_every_step() {
    let (_, sources, model) = setup();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        ..small_cfg()
    };
    let mut t = Trainer::new(model, &sources, cfg).unwrap();
    let mut clipped = 0;
    for _ in 0..1000 {
        let info = t.step().unwrap();
        assert!(info.clipped_norm <= 2.0 + 1e-6, "{}", info.clipped_norm);
        if info.grad_norm > 2.0 {
            clipped += 1;
            assert!((info.clipped_norm - 2.0).abs() < 1e-4);
        } else {
            assert!((info.clipped_norm - info.grad_norm).abs() < 1e-9);
        }
    }
    assert_eq!(t.updates(), 1000);
    // The bound is not vacuous at this learning rate.
    assert!(clipped > 0);
}

#[test]
fn both_tasks_are_sampled() {
    let (_, sources, model) = setup();
    let mut t = Trainer::new(model, &sources, small_cfg()).unwrap();
    for _ in 0..200 {
        t.step().unwrap();
    }
    let mut eval = |_: &Model| -> Result<f64> { Ok(0.0) };
    let cfg = TrainConfig {
        max_updates: 200,
        ..small_cfg()
    };
    let out = train(t.model().clone(), &sources, &cfg, &mut eval).unwrap();
    assert!(out.log.task_count(Task::ImageCaption) > 0);
    assert!(out.log.task_count(Task::CaptionCaption) > 0);

    let off = TrainConfig { c2c: false, ..cfg };
    let out = train(t.model().clone(), &sources, &off, &mut eval).unwrap();
    assert_eq!(out.log.task_count(Task::CaptionCaption), 0);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let (_, sources, model) = setup();
        let mut t = Trainer::new(model, &sources, small_cfg()).unwrap();
        let losses: Vec<f64> = (0..50).map(|_| t.step().unwrap().loss).collect();
        (losses, t.model().params.clone())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn nan_parameters_diverge_and_keep_best() {
    let (_, sources, mut model) = setup();
    model.params.image_proj.data_mut()[0] = f32::NAN;
    let mut eval = |_: &Model| -> Result<f64> { Ok(0.0) };
    let out = train(model, &sources, &small_cfg(), &mut eval).unwrap();
    assert_eq!(out.log.stop_reason, StopReason::Diverged);
    assert_eq!(out.log.updates, 0);
    assert!(out.log.failure.is_some());
}

#[test]
fn mismatched_feature_width_rejected() {
    let (_, sources, model) = setup();
    let cfg = ModelConfig { image_dim: 5, ..CFG };
    let wrong = Model::new(model.vocab.clone(), &cfg, 1);
    let err = Trainer::new(wrong, &sources, small_cfg()).err().unwrap();
    assert!(err.is_config_error(), "{err}");
}

fn cycle_cfg(mode: CycleMode) -> PseudoPairConfig {
    PseudoPairConfig {
        source_corpus: "aligned".into(),
        source_language: "en".into(),
        target_corpus: "disjoint".into(),
        target_language: "de".into(),
        filter: Default::default(),
        mode,
        vocab_min_count: 1,
    }
}

#[test]
fn fine_tune_starts_from_base_with_fresh_optimizer() {
    let (data, sources, model) = setup();
    let mut base_trainer = Trainer::new(model, &sources, small_cfg()).unwrap();
    for _ in 0..20 {
        base_trainer.step().unwrap();
    }
    assert!(!base_trainer.optimizer().is_fresh());
    let base = base_trainer.model().clone();

    let val = data.validation.clone();
    let mut eval = |m: &Model| -> Result<f64> { Ok(grounded_rank::eval::evaluate(m, &val, &[])?.sum_of_sums) };
    let tcfg = TrainConfig {
        max_updates: 40,
        eval_interval_updates: 20,
        ..small_cfg()
    };
    let out = run_pseudopair_cycle(&base, &sources, &cycle_cfg(CycleMode::FineTune), &tcfg, &mut eval, None).unwrap();
    let first = &out.outcome.log.inspections[0];
    assert_eq!(first.update, 0);
    assert_eq!(first.score, out.base_score);
    assert_eq!(out.pairs.len(), data.disjoint.captions().len());
    assert_eq!(out.outcome.model.vocab, base.vocab);

    let fresh = Trainer::new(base.clone(), &out.sources, tcfg).unwrap();
    assert!(fresh.optimizer().is_fresh());
    assert_eq!(fresh.model().params, base.params);
}

#[test]
fn restart_rebuilds_vocabulary_and_parameters() {
    let (_, sources, model) = setup();
    let mut eval = |_: &Model| -> Result<f64> { Ok(0.0) };
    let tcfg = TrainConfig {
        max_updates: 10,
        eval_interval_updates: 10,
        ..small_cfg()
    };
    let out = run_pseudopair_cycle(&model, &sources, &cycle_cfg(CycleMode::Restart), &tcfg, &mut eval, None).unwrap();
    let corpora: Vec<_> = out.sources.iter().map(|s| &s.corpus).collect();
    let vocab = build_vocabulary(&corpora, 1).unwrap();
    assert_eq!(out.outcome.model.vocab, vocab);
    assert_eq!(out.outcome.log.inspections[0].update, 10);
}

#[test]
fn empty_pseudopair_set_is_an_error() {
    let (_, sources, model) = setup();
    let mut eval = |_: &Model| -> Result<f64> { Ok(0.0) };
    let mut cfg = cycle_cfg(CycleMode::FineTune);
    cfg.target_language = "fr".into();
    let err = run_pseudopair_cycle(&model, &sources, &cfg, &small_cfg(), &mut eval, None).unwrap_err();
    assert!(matches!(err, Error::NoPseudoPairs), "{err}");
}
