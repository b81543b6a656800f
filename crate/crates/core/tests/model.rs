mod common;

use common::model::{mask, model_gradcheck, permutation_deviation, random_scene, randomized, tiny};
use proptest::prelude::*;
use rirecon_core::diffcore::Tape;
use rirecon_core::model::*;

#[test]
fn full_model_matches_finite_differences() {
    for seed in 0..3 {
        let err = model_gradcheck(tiny(16, 2), seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn ablated_models_match_finite_differences() {
    let base = tiny(16, 2);
    for cfg in [
        ModelConfig { use_sinusoidal: false, ..base },
        ModelConfig { use_segments: false, ..base },
        ModelConfig { use_refiner: false, ..base },
        ModelConfig { activation: Activation::Relu, ..base },
    ] {
        let err = model_gradcheck(cfg, 7);
        assert!(err < 1e-4, "{cfg:?}: {err}");
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let cfg = ModelConfig { d_model: 32, encoder_layers: 2, heads: 4, ff_dim: 64, k: 16, ..tiny(16, 2) };
    for seed in 0..100 {
        let dev = permutation_deviation(cfg, seed);
        assert!(dev < 1e-5, "seed {seed}: {dev}");
    }
    let raw = ModelConfig { use_sinusoidal: false, ..cfg };
    for seed in 0..10 {
        assert!(permutation_deviation(raw, seed) < 1e-5);
    }
}

#[test]
fn encoder_output_shape_for_any_token_count() {
    let cfg = tiny(16, 2);
    let model = RirFormer::<f64>::new(cfg).unwrap();
    for l in [1, 2, 5, 64] {
        let mut tape = Tape::new();
        let b = model.params().bind(&mut tape, |_| false);
        let x = tape.input(&[l, cfg.token_width()], vec![0.1; l * cfg.token_width()], false).unwrap();
        let y = model.encoder_forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.dims(y), (l, cfg.d_model));
    }
    let mut tape = Tape::new();
    let b = model.params().bind(&mut tape, |_| false);
    let x = tape.input(&[3, 5], vec![0.0; 15], false).unwrap();
    assert!(model.encoder_forward(&mut tape, &b, x).is_err());
}

#[test]
fn masked_rows_carry_no_signal_and_no_gradient() {
    let cfg = tiny(16, 2);
    let model: RirFormer<f64> = randomized(cfg, 3);
    let (_, mut sig) = random_scene(3, 5, 16);
    sig.row_mut(1).fill(0.0);
    let measured = [0, 1, 3];
    let mut tape = Tape::new();
    let b = model.params().bind(&mut tape, |_| true);
    let e = model.encode_signals(&mut tape, &b, &sig, &measured).unwrap();
    let d = cfg.d_model;
    let ev = tape.value(e).to_vec();
    for row in [2, 4] {
        assert!(ev[row * d..(row + 1) * d].iter().all(|&v| v == 0.0));
    }
    // a measured all-zero waveform still goes through the bias pathway
    assert!(ev[d..2 * d].iter().any(|&v| v != 0.0));

    // loss that only sees target rows: no gradient reaches the encoder
    let targets = tape.gather_rows(e, &[2, 4]).unwrap();
    let loss = tape.sum_squares(targets).unwrap();
    let grads = tape.backward(loss).unwrap();
    for name in ["signal.0.w", "signal.0.b", "signal.1.w", "signal.1.b"] {
        let id = model.params().id(name).unwrap();
        let g = grads.get(b.var(id));
        assert!(g.is_none_or(|g| g.iter().all(|&v| v == 0.0)), "{name}");
    }
}

#[test]
fn target_inputs_are_ignored() {
    let cfg = tiny(16, 2);
    let model: RirFormer<f64> = randomized(cfg, 4);
    let (pos, sig) = random_scene(4, 6, 16);
    let m = mask(&[0, 2, 5], &[1, 3, 4]);
    let a = model.predict(&SceneInput { positions: &pos, signals: &sig, mask: &m }).unwrap();
    let mut other = sig.clone();
    for &t in &m.target {
        other.row_mut(t).fill(123.0);
    }
    let b = model.predict(&SceneInput { positions: &pos, signals: &other, mask: &m }).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), (3, 16));
}

#[test]
fn heads_own_their_segments() {
    let cfg = ModelConfig { k: 1024, segments: 8, ..tiny(1024, 8) };
    let model: RirFormer<f64> = randomized(cfg, 5);
    for t in [0, 3, 7] {
        let mut m = model.clone();
        for id in m.head_param_ids(t).into_iter().skip(2) {
            m.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let (pos, sig) = random_scene(5, 4, 1024);
        let mk = mask(&[0, 1], &[2, 3]);
        let mut tape = Tape::new();
        let b = m.params().bind(&mut tape, |_| false);
        let out = m.forward(&mut tape, &b, &SceneInput { positions: &pos, signals: &sig, mask: &mk }).unwrap();
        let concat = tape.value(out.concat);
        assert_eq!(concat.len(), 2 * 1024);
        for row in 0..2 {
            for n in 0..1024 {
                let v = concat[row * 1024 + n];
                if n / 128 == t {
                    assert_eq!(v, 0.0);
                } else {
                    assert_ne!(v, 0.0);
                }
            }
        }
    }
    // the refiner adds exactly its residual
    let (pos, sig) = random_scene(6, 4, 1024);
    let mk = mask(&[0, 1], &[2, 3]);
    let mut tape = Tape::new();
    let b = model.params().bind(&mut tape, |_| false);
    let out = model.forward(&mut tape, &b, &SceneInput { positions: &pos, signals: &sig, mask: &mk }).unwrap();
    let (c, r, o) = (tape.value(out.concat), tape.value(out.residual.unwrap()), tape.value(out.output));
    for i in 0..o.len() {
        assert_eq!(o[i], c[i] + r[i]);
    }
}

#[test]
fn predict_is_a_single_pass() {
    let cfg = tiny(16, 2);
    let model = RirFormer::<f64>::new(cfg).unwrap();
    let (pos, sig) = random_scene(8, 6, 16);
    let m = mask(&[0, 1, 2], &[3, 4, 5]);
    let before = model.forward_calls();
    let out = model.predict(&SceneInput { positions: &pos, signals: &sig, mask: &m }).unwrap();
    assert_eq!(model.forward_calls(), before + 1);
    assert_eq!(out.shape(), (3, 16));
    let again = model.predict(&SceneInput { positions: &pos, signals: &sig, mask: &m }).unwrap();
    assert_eq!(out, again);
}

#[test]
fn forward_rejects_bad_masks() {
    let model = RirFormer::<f64>::new(tiny(16, 2)).unwrap();
    let (pos, sig) = random_scene(9, 4, 16);
    for m in [mask(&[0], &[1, 2, 3]), mask(&[0, 1, 2, 3], &[])] {
        let r = model.predict(&SceneInput { positions: &pos, signals: &sig, mask: &m });
        assert!(matches!(r, Err(ModelError::Contract(_))));
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig { use_segments: false, ..tiny(16, 2) };
    let model: RirFormer<f64> = randomized(cfg, 10);
    let ckpt = Checkpoint { model, meta: CheckpointMeta { epoch: 7, seed: 99, loss_history: vec![1.5, 0.25] } };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rirf");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back.meta, ckpt.meta);
    assert_eq!(back.model.config(), ckpt.model.config());
    let expected: usize = ckpt.model.params().iter().map(|(_, t)| t.len()).sum();
    assert_eq!(back.model.parameter_count(), expected);
    let (pos, sig) = random_scene(10, 5, 16);
    let m = mask(&[0, 1, 4], &[2, 3]);
    let input = SceneInput { positions: &pos, signals: &sig, mask: &m };
    let a = ckpt.model.predict(&input).unwrap();
    let b = back.model.predict(&input).unwrap();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );

    // 32-bit checkpoints load into a 64-bit model
    let small: RirFormer<f32> = randomized(cfg, 11);
    let bytes = Checkpoint { model: small, meta: CheckpointMeta::default() }.to_bytes();
    assert!(Checkpoint::<f64>::from_bytes(&bytes).is_ok());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(ModelError::Format(_))));
    let mut bad = bytes.clone();
    bad[100] ^= 1;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(ModelError::Format(_))));
    let mut bad = bytes;
    bad[4] = 9;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(ModelError::Format(m)) if m.contains("version")));
}

#[test]
fn default_parameter_count() {
    let model = RirFormer::<f32>::new(ModelConfig::default()).unwrap();
    let d = 256;
    let per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * 512 + 512) + (512 * d + d);
    let expected = (1024 * 512 + 512)
        + (512 * d + d)
        + ((36 + d) * d + d)
        + 4 * per_layer
        + 2 * d
        + 8 * ((d * 512 + 512) + (512 * 128 + 128))
        + (1024 * 256 + 256)
        + (256 * 256 + 256)
        + (256 * 1024 + 1024);
    assert_eq!(model.parameter_count(), expected);
}

fn dyadic() -> impl Strategy<Value = f64> {
    (-(1i64 << 20)..=(1i64 << 20)).prop_map(|n| n as f64 / (1u64 << 20) as f64)
}

proptest! {
    #[test]
    fn encoding_bounds_and_period(x in dyadic(), y in dyadic(), z in dyadic(), order in 1usize..8, axis in 0usize..3) {
        let p = [x, y, z];
        let g = positional_encode(p, order);
        prop_assert_eq!(g.len(), 6 * order);
        prop_assert!(g.iter().all(|v| (-1.0..=1.0).contains(v)));
        let mut shifted = p;
        shifted[axis] += 2.0;
        prop_assert_eq!(positional_encode(shifted, order), g.clone());
        shifted[axis] -= 4.0;
        prop_assert_eq!(positional_encode(shifted, order), g);
    }

    #[test]
    fn encoding_is_sin_cos_of_scaled_coordinates(x in -1.0..1.0f64) {
        let g = positional_encode([x, 0.0, 0.0], 6);
        for j in 0..6 {
            let w = (1u32 << j) as f64 * std::f64::consts::PI;
            prop_assert!((g[2 * j] - (w * x).sin()).abs() < 1e-12);
            prop_assert!((g[2 * j + 1] - (w * x).cos()).abs() < 1e-12);
        }
    }
}
