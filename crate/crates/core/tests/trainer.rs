//! Training loop: loss descent, accumulation equivalence, evaluation,
//! determinism, and resume.

mod common;

use std::sync::Arc;

use audapt_core::autodiff::Tensor;
use audapt_core::checkpoint::model_hash;
use audapt_core::data::{CorpusRecord, Domain, MixtureSpec, BOS};
use audapt_core::model::HiddenStates;
use audapt_core::optim::{lr_at, warmup_steps};
use audapt_core::trainer::{
    evaluate, read_loss_log, train_to_dir, LogRecord, RunPaths, TrainConfig, Trainer, TrainingSet,
};
use audapt_core::Error;
use common::{accumulation_max_diff, small_train_config, synthetic_training_set, trainer};
use proptest::prelude::*;

fn train_losses(log: &[LogRecord]) -> Vec<f64> {
    log.iter()
        .filter_map(|r| match r {
            LogRecord::Train { train_loss, .. } => Some(*train_loss),
            _ => None,
        })
        .collect()
}

fn eval_losses(log: &[LogRecord]) -> Vec<(usize, f64)> {
    log.iter()
        .filter_map(|r| match r {
            LogRecord::Eval { step, eval_loss } => Some((*step, *eval_loss)),
            _ => None,
        })
        .collect()
}

#[test]
fn initial_loss_is_near_uniform_over_the_vocabulary() {
    let set = Arc::new(synthetic_training_set(48, 21));
    let t = trainer::<f32>(0, small_train_config(1), &set, None);
    let loss = evaluate(t.model(), &set).unwrap();
    let uniform = (262f64).ln();
    assert!((loss - uniform).abs() <= 0.1 * uniform, "{loss}");
}

#[test]
fn two_hundred_steps_halve_the_loss_and_lower_held_out_loss() {
    let set = Arc::new(synthetic_training_set(512, 1));
    let held_out = Arc::new(synthetic_training_set(48, 2));
    let mut t = trainer::<f32>(0, small_train_config(200), &set, Some(&held_out));
    let init_eval = evaluate(t.model(), &held_out).unwrap();
    assert_eq!(evaluate(t.model(), &held_out).unwrap(), init_eval);
    let before = t.model().clone();
    evaluate(t.model(), &set).unwrap();
    assert_eq!(t.model(), &before);

    t.run_until(200, |_| {}).unwrap();
    let losses = train_losses(t.log());
    assert_eq!(losses.len(), 200);
    let tail = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.5 * losses[0], "initial {} final {tail}", losses[0]);

    // evaluated at the end of each 64-step epoch and at the last step
    let evals = eval_losses(t.log());
    let steps: Vec<usize> = evals.iter().map(|e| e.0).collect();
    assert_eq!(steps, vec![64, 128, 192, 200]);
    let final_eval = evals.last().unwrap().1;
    assert!(final_eval < init_eval, "{init_eval} -> {final_eval}");

    // the trained decoder reads the encoder through cross-attention
    let model = t.model();
    let ex = &set.examples[0];
    let h = model.encode(&ex.mel).unwrap();
    let zeros = HiddenStates::new(Tensor::zeros(&[h.n_frames(), h.d_model()])).unwrap();
    let prefix = &ex.tokens[..4];
    let a = model.decode_teacher_forced(&h, prefix).unwrap();
    let b = model.decode_teacher_forced(&zeros, prefix).unwrap();
    let gap = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
    assert!(gap > 1e-3, "{gap}");
    assert_eq!(prefix[0], BOS);
}

#[test]
fn accumulating_two_micro_batches_equals_one_double_batch() {
    let set = Arc::new(synthetic_training_set(24, 4));
    let diff = accumulation_max_diff(&set, 4, 3);
    assert!(diff < 1e-6, "{diff:.3e}");
}

#[test]
fn resumed_run_matches_an_uninterrupted_run() {
    let set = Arc::new(synthetic_training_set(64, 5));
    let held_out = Arc::new(synthetic_training_set(12, 6));
    let cfg = small_train_config(100);
    let dir = tempfile::tempdir().unwrap();

    let mut full = trainer::<f32>(1, cfg.clone(), &set, Some(&held_out));
    full.run_until(100, |_| {}).unwrap();

    let mut first = trainer::<f32>(1, cfg, &set, Some(&held_out));
    first.run_until(50, |_| {}).unwrap();
    first.save_state(dir.path()).unwrap();
    drop(first);
    let mut second =
        Trainer::resume(dir.path(), MixtureSpec::default(), set.clone(), Some(held_out.clone())).unwrap();
    assert_eq!(second.step_count(), 50);
    second.run_until(100, |_| {}).unwrap();

    let strip = |log: &[LogRecord]| log.iter().map(LogRecord::without_timing).collect::<Vec<_>>();
    assert_eq!(strip(full.log()), strip(second.log()));
    assert_eq!(model_hash(full.model()), model_hash(second.model()));
    assert_eq!(full.adam_state(), second.adam_state());
}

#[test]
fn fixed_seed_runs_write_identical_checkpoints() {
    let set = Arc::new(synthetic_training_set(32, 7));
    let run = |dir: &std::path::Path| {
        let cfg = TrainConfig {
            checkpoint_every: 10,
            ..small_train_config(25)
        };
        let paths = RunPaths::new(dir);
        let out = train_to_dir(trainer::<f32>(2, cfg, &set, None), &paths).unwrap();
        assert!(paths.checkpoint(10).join("model.bin").exists());
        assert!(paths.checkpoint(20).join("model.bin").exists());
        assert_eq!(read_loss_log(&paths.loss_log()).unwrap().len(), 25);
        (
            std::fs::read(paths.model()).unwrap(),
            std::fs::read(paths.encoder()).unwrap(),
            model_hash(&out.model),
        )
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn empty_filtered_corpus_is_a_data_error() {
    let records = vec![CorpusRecord {
        audio_path: "a.wav".into(),
        text: "x".repeat(500),
        domain: Domain::Music,
    }];
    let mel = synthetic_training_set(1, 0).examples[0].mel.clone();
    assert!(matches!(
        TrainingSet::from_parts(records, vec![mel], true),
        Err(Error::Data(_))
    ));
}

#[test]
fn finished_trainer_refuses_another_step() {
    let set = Arc::new(synthetic_training_set(8, 8));
    let mut t = trainer::<f32>(0, small_train_config(2), &set, None);
    t.run_until(10, |_| {}).unwrap();
    assert_eq!(t.step_count(), 2);
    assert!(matches!(t.step(), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn schedule_is_continuous_at_warmup_and_bounded(
        total in 1usize..5000,
        frac in 0.001f64..0.999,
        peak in 1e-7f64..1.0,
    ) {
        let warm = warmup_steps(total, frac);
        let mut prev: Option<f64> = None;
        for step in 0..=total {
            let lr = lr_at(step, total, peak, frac).unwrap();
            prop_assert!(lr >= 0.0 && lr <= peak * (1.0 + 1e-12));
            if let Some(p) = prev {
                // no jump larger than one warmup increment or one cosine step
                let ramp = peak / warm.max(1) as f64;
                let decay = peak * std::f64::consts::PI / 2.0 / total.saturating_sub(warm).max(1) as f64;
                prop_assert!((lr - p).abs() <= ramp.max(decay) * (1.0 + 1e-9));
            }
            prev = Some(lr);
        }
        prop_assert_eq!(lr_at(warm, total, peak, frac).unwrap(), peak);
        if warm < total {
            prop_assert!(lr_at(total, total, peak, frac).unwrap() < 1e-12);
        }
    }
}
