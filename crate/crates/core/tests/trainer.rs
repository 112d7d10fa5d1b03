use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};

use oafa_core::data::{batch_iterator, Dataset, SynthConfig};
use oafa_core::eval::{evaluate_with, EvalMetadata, EvalReport};
use oafa_core::losses::{LossWeights, QMode, StepBatch};
use oafa_core::networks::{generate, ModelConfig, NamedParams};
use oafa_core::trainer::{
    adam_tensor, decode_checkpoint, discriminator_phase, encode_checkpoint, generator_phase, load_checkpoint,
    parse_metrics_log, resume, save_checkpoint, train_loop, train_step, AdamConfig, TrainConfig, TrainState,
    CHECKPOINT_VERSION, FINAL_CHECKPOINT, METRICS_FILE,
};
use oafa_core::{Error, Shape, Tensor};

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        model: ModelConfig {
            image_size: 32,
            occupations: 3,
            encoder_widths: [4, 8, 8],
            residual_width: 4,
            up_widths: [4, 4],
            disc_widths: [4, 4, 8, 8],
        },
        ..TrainConfig::default()
    };
    cfg.data.synth = SynthConfig {
        image_size: 32,
        occupations: 3,
        young: 10,
        aged_per_occupation: 4,
        held_out: 4,
        ..SynthConfig::default()
    };
    cfg.trainer.epochs = 1;
    cfg.trainer.seed = 5;
    cfg
}

fn data(cfg: &TrainConfig) -> Dataset {
    Dataset::from_synth(&cfg.data.synth).unwrap()
}

fn first_batch(cfg: &TrainConfig, data: &Dataset) -> StepBatch {
    let t = &cfg.trainer;
    batch_iterator(data, t.batch_size, t.seed, t.q_mode).unwrap().batch(0, 0).unwrap()
}

fn digest<P: NamedParams<Tensor>>(params: &P) -> u64 {
    let mut h = DefaultHasher::new();
    params.visit("", &mut |name, t| {
        name.hash(&mut h);
        t.shape().dims().hash(&mut h);
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
    });
    h.finish()
}

#[test]
fn adam_single_step_matches_hand_computation() {
    let cfg = AdamConfig {
        lr: 2e-4,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    let (mut theta, mut m, mut v) = ([0.7f32], [0.0f32], [0.0f32]);
    adam_tensor(&mut theta, &[1.0], &mut m, &mut v, 1, &cfg);
    // m = 0.5, v = 0.001; bias-corrected both are 1, so the step is lr / (1 + eps).
    let expected = 0.7f64 - 2e-4 / (1.0 + 1e-8);
    assert!((f64::from(theta[0]) - expected).abs() < 1e-7);
    assert!((m[0] - 0.5).abs() < 1e-7);
    assert!((v[0] - 0.001).abs() < 1e-7);
}

#[test]
fn adam_zero_gradient_decays_moments_without_moving() {
    let cfg = AdamConfig {
        lr: 1e-2,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    let (mut theta, mut m, mut v) = ([0.3f32, -2.0], [0.4f32, -0.1], [0.2f32, 0.05]);
    for t in 1..=3 {
        let (m0, v0) = (m, v);
        adam_tensor(&mut theta, &[0.0, 0.0], &mut m, &mut v, t, &cfg);
        assert!(m[0].abs() < m0[0].abs() && m[1].abs() < m0[1].abs());
        assert!(v[0] <= v0[0] && v[1] <= v0[1]);
    }
    let (mut rest, mut m, mut v) = ([0.3f32], [0.0f32], [0.0f32]);
    for t in 1..=3 {
        adam_tensor(&mut rest, &[0.0], &mut m, &mut v, t, &cfg);
    }
    assert_eq!((rest, m, v), ([0.3], [0.0], [0.0]));
}

#[test]
fn adam_constant_gradient_descends() {
    let cfg = AdamConfig {
        lr: 1e-3,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    for g in [2.5f32, -0.01] {
        let (mut theta, mut m, mut v) = ([1.0f32], [0.0f32], [0.0f32]);
        for t in 1..=50 {
            let prev = theta[0];
            adam_tensor(&mut theta, &[g], &mut m, &mut v, t, &cfg);
            assert_eq!((theta[0] - prev).signum(), -g.signum());
        }
    }
}

#[test]
fn null_objective_changes_nothing() {
    let mut cfg = tiny_config();
    cfg.weights = LossWeights {
        lambda: 0.0,
        mu: 0.0,
        nu: 0.0,
        epsilon: 0.2,
    };
    let data = data(&cfg);
    let batch = first_batch(&cfg, &data);
    let mut state = TrainState::new(cfg).unwrap();
    let before = state.params.clone();
    for _ in 0..3 {
        train_step(&mut state, &batch, 1).unwrap();
    }
    assert_eq!(state.params, before);
    assert_eq!(state.step, 3);
}

#[test]
fn phases_touch_only_their_networks() {
    let cfg = tiny_config();
    let data = data(&cfg);
    let batch = first_batch(&cfg, &data);
    let mut state = TrainState::new(cfg).unwrap();
    let (g0, f0, d0) = (
        digest(&state.params.generator),
        digest(&state.params.decoder),
        digest(&state.params.discriminator),
    );
    let mut sg = discriminator_phase(&mut state, &batch).unwrap();
    let d1 = digest(&state.params.discriminator);
    assert_eq!(digest(&state.params.generator), g0);
    assert_eq!(digest(&state.params.decoder), f0);
    assert_ne!(d1, d0);

    generator_phase(&mut state, &batch, &mut sg, 1).unwrap();
    assert_eq!(digest(&state.params.discriminator), d1);
    assert_ne!(digest(&state.params.generator), g0);
    assert_ne!(digest(&state.params.decoder), f0);
}

#[test]
fn seeded_step_is_deterministic() {
    let cfg = tiny_config();
    let data = data(&cfg);
    let batch = first_batch(&cfg, &data);
    let run = || {
        let mut state = TrainState::new(cfg.clone()).unwrap();
        let m = train_step(&mut state, &batch, 1).unwrap();
        (m, state)
    };
    let (ma, sa) = run();
    let (mb, sb) = run();
    assert_eq!(ma, mb);
    assert_eq!(sa, sb);
    assert!(ma.l_per > 0.0 && ma.l_cgan_g > 0.0 && ma.l_cgan_d > 0.0);
}

#[test]
fn one_epoch_over_ten_samples_is_ten_steps() {
    let cfg = tiny_config();
    let state = train_loop(&cfg, &data(&cfg), None, &mut |_| {}).unwrap();
    assert_eq!(state.step, 10);
    assert_eq!(state.history.len(), 10);
    assert!(state.history.iter().all(|m| m.epoch == 1));
    let steps: Vec<u64> = state.history.iter().map(|m| m.step).collect();
    assert_eq!(steps, (1..=10).collect::<Vec<_>>());
}

#[test]
fn resume_matches_uninterrupted_training() {
    let mut cfg = tiny_config();
    cfg.trainer.epochs = 2;
    cfg.trainer.checkpoint_every = 7;
    let data = data(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let straight = train_loop(&cfg, &data, Some(dir.path()), &mut |_| {}).unwrap();
    assert_eq!(straight.step, 20);

    let mid = load_checkpoint(&dir.path().join("step-00000014.ckpt")).unwrap();
    assert_eq!(mid.step, 14);
    let resumed_dir = tempfile::tempdir().unwrap();
    let resumed = resume(mid, &data, Some(resumed_dir.path()), None, &mut |_| {}).unwrap();
    assert_eq!(resumed, straight);

    let log_a = fs::read(dir.path().join(METRICS_FILE)).unwrap();
    let log_b = fs::read(resumed_dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(parse_metrics_log(&String::from_utf8(log_a).unwrap()).unwrap(), straight.history);
    assert_eq!(
        fs::read(dir.path().join(FINAL_CHECKPOINT)).unwrap(),
        fs::read(resumed_dir.path().join(FINAL_CHECKPOINT)).unwrap()
    );
}

#[test]
fn resume_can_stop_early() {
    let cfg = tiny_config();
    let data = data(&cfg);
    let state = TrainState::new(cfg.clone()).unwrap();
    let part = resume(state, &data, None, Some(4), &mut |_| {}).unwrap();
    assert_eq!(part.step, 4);
    let full = resume(part, &data, None, None, &mut |_| {}).unwrap();
    assert_eq!(full, train_loop(&cfg, &data, None, &mut |_| {}).unwrap());
}

fn trained_state() -> TrainState {
    let mut cfg = tiny_config();
    cfg.data.synth.young = 3;
    train_loop(&cfg, &data(&cfg), None, &mut |_| {}).unwrap()
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let state = trained_state();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    save_checkpoint(&state, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded, state);
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(!dir.path().join("a.ckpt.tmp").exists());
}

#[test]
fn generate_is_bit_exact_after_reload() {
    let state = trained_state();
    let back = decode_checkpoint(&encode_checkpoint(&state)).unwrap();
    let y = Dataset::from_synth(&state.config.data.synth).unwrap().young[0].clone();
    for p in 1..=3 {
        let a = generate(&state.params.generator, &y, p).unwrap();
        let b = generate(&back.params.generator, &y, p).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

fn checkpoint_error(bytes: &[u8]) -> String {
    match decode_checkpoint(bytes) {
        Err(Error::Checkpoint(m)) => m,
        Err(other) => panic!("unexpected error kind: {other}"),
        Ok(_) => panic!("corrupt checkpoint accepted"),
    }
}

#[test]
fn corrupted_payload_fails_the_digest() {
    let bytes = encode_checkpoint(&trained_state());
    let mut bad = bytes.clone();
    let i = bad.len() - 40;
    bad[i] ^= 0x01;
    assert!(checkpoint_error(&bad).contains("digest"));
}

#[test]
fn version_truncation_and_magic_errors() {
    let bytes = encode_checkpoint(&trained_state());
    let mut bad = bytes.clone();
    bad[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(checkpoint_error(&bad).contains("version"));

    assert!(checkpoint_error(&bytes[..bytes.len() - 100]).contains("truncated"));
    assert!(checkpoint_error(&bytes[..30]).contains("truncated"));
    assert!(checkpoint_error(&bytes[..10]).contains("truncated"));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint_error(&bad).contains("magic"));

    let mut long = bytes;
    long.push(0);
    assert!(checkpoint_error(&long).contains("trailing"));
}

#[test]
fn load_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.ckpt");
    fs::write(&path, b"OAFACKPT").unwrap();
    let err = load_checkpoint(&path).unwrap_err().to_string();
    assert!(err.contains("junk.ckpt"), "{err}");
}

#[test]
fn non_finite_loss_aborts_naming_the_term() {
    let cfg = tiny_config();
    let data = data(&cfg);
    let batch = first_batch(&cfg, &data);
    let mut state = TrainState::new(cfg).unwrap();
    state.params.decoder.visit_mut("", &mut |name, t| {
        if name.contains("head") {
            t.data_mut().fill(f32::NAN);
        }
    });
    match train_step(&mut state, &batch, 1) {
        Err(Error::NonFinite { term, step }) => {
            assert_eq!(term, "L_PER");
            assert_eq!(step, 1);
        }
        other => panic!("expected abort, got {other:?}"),
    }
    assert!(state.history.is_empty());
}

#[test]
fn config_overrides_are_type_checked() {
    let cfg = TrainConfig::from_toml("", &["trainer.epochs=1".into(), "weights.lambda=5".into()]).unwrap();
    assert_eq!(cfg.trainer.epochs, 1);
    assert_eq!(cfg.weights.lambda, 5.0);
    assert!(TrainConfig::from_toml("", &["trainer.epochs=\"many\"".into()]).is_err());
    assert!(TrainConfig::from_toml("", &["trainer.nonsense=1".into()]).is_err());
    assert!(TrainConfig::from_toml("", &["trainer.lr=0".into()]).is_err());
    let text = tiny_config().to_toml();
    assert_eq!(TrainConfig::from_toml(&text, &[]).unwrap(), tiny_config());
    let q = TrainConfig::from_toml("[trainer]\nq_mode = \"sum-all\"\n", &[]).unwrap();
    assert_eq!(q.trainer.q_mode, QMode::SumAll);
}

#[test]
fn perfect_cycle_has_zero_identity_score() {
    let inputs: Vec<Tensor> = (0..4)
        .map(|i| Tensor::full(Shape::new(1, 3, 8, 8), 0.1 * i as f32 - 0.2))
        .collect();
    let report = evaluate_with(|y, _| Ok(y.clone()), |o| Ok(o.clone()), 3, &inputs, None, 0).unwrap();
    assert_eq!(report.identity, vec![0.0; 3]);
    assert_eq!(report.input_distance, vec![0.0; 3]);
    assert_eq!(report.mean_separation(), 0.0);
}

#[test]
fn separation_matrix_is_symmetric_with_zero_diagonal() {
    let inputs: Vec<Tensor> = (0..3).map(|i| Tensor::full(Shape::new(1, 3, 4, 4), 0.1 * i as f32)).collect();
    let shift = |y: &Tensor, p: oafa_core::networks::Occupation| Ok(y.map(|v| v + 0.1 * p.index() as f32));
    let report = evaluate_with(shift, |o| Ok(o.clone()), 3, &inputs, None, 9).unwrap();
    for p in 0..3 {
        assert_eq!(report.separation[p][p], 0.0);
        for q in 0..3 {
            assert_eq!(report.separation[p][q], report.separation[q][p]);
            let expected = 0.1 * (p as f64 - q as f64).abs();
            assert!((report.separation[p][q] - expected).abs() < 1e-6);
        }
    }
    assert!(evaluate_with(shift, |o| Ok(o.clone()), 3, &[], None, 0).is_err());
}

#[test]
fn report_round_trips_through_json() {
    let report = EvalReport {
        identity: vec![0.125, 0.5],
        separation: vec![vec![0.0, 0.3], vec![0.3, 0.0]],
        input_distance: vec![0.2, 0.1],
        fidelity: Some(0.9),
        metadata: EvalMetadata {
            step: 3600,
            inputs: 30,
            occupations: 2,
        },
    };
    assert_eq!(EvalReport::from_json(&report.to_json()).unwrap(), report);
    assert!(EvalReport::from_json("{}").is_err());
}
