use super::*;
use rand::Rng;

fn random_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> SeqData {
    SeqData {
        features: Array2::from_shape_fn((len, dim), |(_, j)| {
            if j >= OWN_FEATURES && (j - OWN_FEATURES) % SLOT_WIDTH == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        }),
        modes: (0..len).map(|_| rng.random_range(0..3)).collect(),
        actions: (0..len).map(|_| rng.random_range(0..3)).collect(),
        cont: Array2::from_shape_fn((len, CONT_ACTION_COUNT), |_| rng.random_range(-1.0..1.0)),
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        lstm_units: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let dim = OWN_FEATURES + SLOT_WIDTH;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seqs = [random_seq(&mut rng, 2, dim), random_seq(&mut rng, 1, dim)];
    let refs: Vec<&SeqData> = seqs.iter().collect();
    let batch = Batch::new(&refs);
    let noise = Array2::from_shape_fn((batch.steps * batch.batch, MODE_COUNT), |_| gumbel_noise(&mut rng));
    for kind in [ModelKind::Vae, ModelKind::Encoder] {
        let mut model = ReactModel::init(&small_config(), kind, Standardizer::identity(dim), dim, &mut rng);
        let (_, grad) = model.loss_and_grad(&batch, &noise);
        let theta = model.flat_params();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            model.set_flat_params(&t);
            let lp = model.loss(&batch, &noise).total;
            t[i] -= 2.0 * h;
            model.set_flat_params(&t);
            let lm = model.loss(&batch, &noise).total;
            let num = (lp - lm) / (2.0 * h);
            let err = (num - grad[i]).abs() / (num.abs() + grad[i].abs()).max(1e-4);
            worst = worst.max(err);
        }
        model.set_flat_params(&theta);
        assert!(worst < 1e-4, "{kind:?}: worst relative error {worst}");
    }
}

#[test]
fn padded_rows_do_not_change_loss() {
    let dim = OWN_FEATURES + SLOT_WIDTH;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let long = random_seq(&mut rng, 4, dim);
    let short = random_seq(&mut rng, 2, dim);
    let model = ReactModel::init(&small_config(), ModelKind::Encoder, Standardizer::identity(dim), dim, &mut rng);
    let alone = Batch::new(&[&short]);
    let zeros = Array2::zeros((8, MODE_COUNT));
    let l_alone = model.loss(&alone, &zeros).ce_enc * alone.rows as f64;
    let both = Batch::new(&[&long, &short]);
    let l_long = model.loss(&Batch::new(&[&long]), &zeros).ce_enc * 4.0;
    let l_both = model.loss(&both, &zeros).ce_enc * both.rows as f64;
    assert!((l_both - l_long - l_alone).abs() < 1e-10);
}

#[test]
fn gumbel_softmax_sampling_frequencies() {
    let logits = [1.0f64.ln(), 2.0f64.ln(), 7.0f64.ln()];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 40_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let z = gumbel_softmax_sample(&logits, 1.0, &mut rng);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        counts[argmax(&z)] += 1;
    }
    for (k, p) in [0.1, 0.2, 0.7].into_iter().enumerate() {
        let f = counts[k] as f64 / n as f64;
        assert!((f - p).abs() < 0.01, "class {k}: {f} vs {p}");
    }
}

#[test]
fn zero_weights_give_uniform_modes() {
    let dim = OWN_FEATURES + SLOT_WIDTH;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = ReactModel::init(&small_config(), ModelKind::Vae, Standardizer::identity(dim), dim, &mut rng);
    let zeros = vec![0.0; model.flat_params().len()];
    model.set_flat_params(&zeros);
    let s = random_seq(&mut rng, 5, dim);
    let out = model.predict(&s.features, Feedback::SelfFed).unwrap();
    for r in out {
        for p in r.mode_probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let dim = OWN_FEATURES + SLOT_WIDTH;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = ReactModel::init(&small_config(), ModelKind::Vae, Standardizer::identity(dim), dim, &mut rng);
    let mut st = model.new_encoder_state();
    assert!(matches!(
        model.encoder_step(0, &vec![0.0; dim + 1], &mut st),
        Err(ModelError::Dimension { .. })
    ));
}

fn separable(rng: &mut ChaCha8Rng, n: usize) -> Vec<SeqData> {
    let dim = OWN_FEATURES + SLOT_WIDTH;
    (0..n)
        .map(|_| {
            let mut s = random_seq(rng, 12, dim);
            for t in 0..12 {
                let m = if s.features[[t, 0]] > 0.3 {
                    1
                } else if s.features[[t, 0]] < -0.3 {
                    2
                } else {
                    0
                };
                s.modes[t] = m;
                s.actions[t] = m;
                s.cont[[t, 0]] = s.features[[t, 1]];
            }
            s
        })
        .collect()
}

#[test]
fn training_is_deterministic_and_learns() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = separable(&mut rng, 24);
    let config = ModelConfig {
        lstm_units: 8,
        epochs: 60,
        batch_size: 8,
        learning_rate: 1e-2,
        seed: 9,
        ..ModelConfig::default()
    };
    let (m1, c1) = train(&data, &config, ModelKind::Vae).unwrap();
    let (m2, c2) = train(&data, &config, ModelKind::Vae).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(c1, c2);
    assert_eq!(c1.len(), 61);
    let first = c1[0].loss.total;
    let last = c1.last().unwrap().loss.total;
    assert!(last < 0.5 * first, "{first} -> {last}");
    let mut right = 0;
    let mut total = 0;
    for s in &data {
        let p = m1.predict(&s.features, Feedback::TeacherForced(&s.modes)).unwrap();
        for (r, m) in p.iter().zip(&s.modes) {
            right += usize::from(r.mode == *m);
            total += 1;
        }
    }
    assert!(right as f64 / total as f64 > 0.9);
}

#[test]
fn save_load_round_trip() {
    let dim = OWN_FEATURES + 2 * SLOT_WIDTH;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = ReactModel::init(&small_config(), ModelKind::Vae, Standardizer::identity(dim), dim, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    let back = ReactModel::load(&path).unwrap();
    assert_eq!(model, back);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(ReactModel::load(&path), Err(ModelError::Format { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    for c in [
        ModelConfig { mode_count: 4, ..ModelConfig::default() },
        ModelConfig { gumbel_temperature: 0.0, ..ModelConfig::default() },
        ModelConfig { batch_size: 0, ..ModelConfig::default() },
    ] {
        assert!(c.validate().is_err());
    }
}
