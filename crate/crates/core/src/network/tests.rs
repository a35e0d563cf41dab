use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::seed;
use crate::tensor::{Mode, Tape, Tensor};
use crate::Error;

fn small_builtin() -> ModelConfig {
    ModelConfig {
        backbone: BackboneMode::builtin(16),
        ..ModelConfig::default()
    }
}

fn random_images(n: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = seed::rng_for(seed, "images");
    Tensor::from_fn([n, size, size, 3], |_| rng.random_range(0.0..1.0))
}

fn unit(values: Vec<f32>) -> EmbeddingVector {
    let n = values.iter().map(|v| v * v).sum::<f32>().sqrt();
    EmbeddingVector::new(values.iter().map(|v| v / n).collect(), true).unwrap()
}

#[test]
fn default_network_layer_shapes() {
    let params = ModelParameters::<f32>::init(ModelConfig::default(), 0).unwrap();
    let shapes: Vec<(&[usize], &[usize])> = params
        .layers
        .iter()
        .map(|l| (l.weight.shape(), l.bias.shape()))
        .collect();
    assert_eq!(
        shapes,
        vec![
            (&[3, 3, 3, 16][..], &[16][..]),
            (&[3, 3, 16, 32][..], &[32][..]),
            (&[3, 3, 32, 64][..], &[64][..]),
            (&[4096, 128][..], &[128][..]),
        ]
    );
}

#[test]
fn builtin_forward_intermediate_shapes() {
    let params = ModelParameters::<f32>::init(ModelConfig::default(), 1).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(random_images(2, 64, 0));
    let mut rng = seed::rng_for(0, "t");
    let out = params
        .forward(&mut tape, &bound, x, Mode::Infer, &mut rng)
        .unwrap();
    assert_eq!(tape.shape(out), &[2, 128]);
    let seen: Vec<Vec<usize>> = tape
        .trace()
        .into_iter()
        .filter(|(op, _)| matches!(*op, "conv2d" | "maxpool2d" | "reshape" | "dense"))
        .map(|(_, s)| s[1..].to_vec())
        .collect();
    let expected: Vec<Vec<usize>> = vec![
        vec![64, 64, 16],
        vec![32, 32, 16],
        vec![32, 32, 32],
        vec![16, 16, 32],
        vec![16, 16, 64],
        vec![8, 8, 64],
        vec![4096],
        vec![128],
    ];
    assert_eq!(seen, expected);
}

#[test]
fn wrong_input_shape_is_rejected() {
    let params = ModelParameters::<f32>::init(small_builtin(), 0).unwrap();
    assert!(params.embed(&random_images(1, 32, 0)).is_err());
    let pre = ModelParameters::<f32>::init(
        ModelConfig {
            backbone: BackboneMode::Precomputed { feature_dim: 10 },
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    assert!(pre.embed(&Tensor::zeros([3, 11])).is_err());
    assert_eq!(pre.embed(&Tensor::zeros([3, 10])).unwrap().len(), 3);
}

#[test]
fn odd_resolution_head_dimension() {
    let cfg = ModelConfig {
        backbone: BackboneMode::builtin(20),
        ..ModelConfig::default()
    };
    // 20 → 10 → 5 → 3 after three ceil-halvings.
    assert_eq!(cfg.backbone.head_input_dim(), 3 * 3 * 64);
    let params = ModelParameters::<f32>::init(cfg, 0).unwrap();
    assert_eq!(params.embed(&random_images(2, 20, 1)).unwrap().len(), 2);
}

#[test]
fn infer_embeddings_are_deterministic_and_normalized() {
    let params = ModelParameters::<f32>::init(small_builtin(), 3).unwrap();
    let x = random_images(4, 16, 2);
    let a = params.embed(&x).unwrap();
    let b = params.embed(&x).unwrap();
    assert_eq!(a, b);
    for e in &a {
        assert_eq!(e.values().len(), EMBEDDING_DIM);
        let n: f64 = e
            .values()
            .iter()
            .map(|&v| f64::from(v).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }
}

#[test]
fn normalized_distances_are_bounded_by_two() {
    let params = ModelParameters::<f32>::init(small_builtin(), 5).unwrap();
    let x = random_images(1000, 16, 9);
    let emb = params.embed(&x).unwrap();
    for pair in emb.chunks(2) {
        let d = energy(&pair[0], &pair[1]).unwrap();
        assert!(d <= 2.0 + 1e-6, "distance {d}");
        let s = similarity_score(d, true).unwrap();
        assert!((0.0..=1.0 + 1e-6).contains(&s));
    }
}

#[test]
fn embedding_vector_invariants() {
    assert!(EmbeddingVector::new(vec![0.0; 127], false).is_err());
    assert!(EmbeddingVector::new(vec![0.5; 128], true).is_err());
    assert!(EmbeddingVector::new(vec![0.5; 128], false).is_ok());
    assert!(EmbeddingVector::new(vec![0.0; 128], true).is_ok());
}

#[test]
fn energy_examples() {
    let mut v = vec![0.0f32; 128];
    v[0] = 1.0;
    let a = EmbeddingVector::new(v.clone(), false).unwrap();
    assert_eq!(energy(&a, &a).unwrap(), 0.0);
    let mut w = v.clone();
    w[0] -= 3.0;
    w[1] -= 4.0;
    let b = EmbeddingVector::new(w, false).unwrap();
    assert_eq!(energy(&a, &b).unwrap(), 5.0);
    assert!(matches!(
        energy_slices(&[1.0], &[1.0, 2.0]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn similarity_score_examples() {
    assert_eq!(similarity_score(0.0, true).unwrap(), 0.0);
    assert_eq!(similarity_score(2.0, true).unwrap(), 1.0);
    assert_eq!(similarity_score(1.0, true).unwrap(), 0.5);
    assert_eq!(similarity_score(3.5, false).unwrap(), 3.5);
    assert!(similarity_score(-0.1, true).is_err());
    assert!(similarity_score(f64::NAN, true).is_err());
}

#[test]
fn energy_is_a_metric_on_sampled_triples() {
    let mut rng = seed::rng_for(11, "triples");
    for _ in 0..1000 {
        let mut draw = || {
            EmbeddingVector::new(
                (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
                false,
            )
            .unwrap()
        };
        let (a, b, c) = (draw(), draw(), draw());
        let ab = energy(&a, &b).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, energy(&b, &a).unwrap());
        let (ac, cb) = (energy(&a, &c).unwrap(), energy(&c, &b).unwrap());
        assert!(ab <= ac + cb + 1e-9);
    }
}

#[test]
fn decision_is_invariant_under_common_rotation() {
    // Rotate both embeddings in a random coordinate plane.
    let mut rng = seed::rng_for(2, "rotation");
    for _ in 0..200 {
        let a: Vec<f32> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (i, j) = (rng.random_range(0..64), rng.random_range(64..128));
        let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let rot = |v: &[f32]| {
            let mut r = v.to_vec();
            r[i] = theta.cos() * v[i] - theta.sin() * v[j];
            r[j] = theta.sin() * v[i] + theta.cos() * v[j];
            r
        };
        let (ua, ub) = (unit(a.clone()), unit(b.clone()));
        let (ra, rb) = (unit(rot(&a)), unit(rot(&b)));
        let d0 = energy(&ua, &ub).unwrap();
        let d1 = energy(&ra, &rb).unwrap();
        assert!((d0 - d1).abs() < 1e-5);
        let s0 = similarity_score(d0, true).unwrap();
        let s1 = similarity_score(d1, true).unwrap();
        if (s0 - 0.5).abs() > 1e-4 {
            assert_eq!(s0 < 0.5, s1 < 0.5);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for cfg in [
        small_builtin(),
        ModelConfig {
            backbone: BackboneMode::Precomputed { feature_dim: 7 },
            normalize: false,
            dropout: 0.35,
        },
    ] {
        let mut params = ModelParameters::<f32>::init(cfg, 4).unwrap();
        params.layers[0].bias.data_mut()[0] = f32::MIN_POSITIVE / 3.0;
        let bytes = encode_checkpoint(&params);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config, params.config);
        for (a, b) in params.tensors().zip(back.tensors()) {
            assert_eq!(a.shape(), b.shape());
            let abits: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bbits: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(abits, bbits);
        }
        assert_eq!(encode_checkpoint(&back), bytes);
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.snnc");
    let params = ModelParameters::<f32>::init(small_builtin(), 8).unwrap();
    save_checkpoint(&params, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), params);
    assert!(matches!(
        load_checkpoint(dir.path().join("missing")),
        Err(Error::Io(_))
    ));
}

#[test]
fn checkpoint_header_errors() {
    let params = ModelParameters::<f32>::init(small_builtin(), 0).unwrap();
    let good = encode_checkpoint(&params);

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(
        decode_checkpoint(&bad_magic),
        Err(Error::Format(_))
    ));

    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(matches!(
        decode_checkpoint(&bad_version),
        Err(Error::Format(_))
    ));

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(decode_checkpoint(&trailing).is_err());

    // A weight record whose dims disagree with the metadata resolution.
    let mut other = params.clone();
    other.config.backbone = BackboneMode::builtin(32);
    assert!(decode_checkpoint(&encode_checkpoint(&other)).is_err());
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let params = ModelParameters::<f32>::init(small_builtin(), 0).unwrap();
    let bytes = encode_checkpoint(&params);
    let mut rng = seed::rng_for(0, "truncate");
    for _ in 0..50 {
        let cut = rng.random_range(0..bytes.len());
        match decode_checkpoint(&bytes[..cut]) {
            Err(Error::Truncated(_)) => {}
            other => panic!("cut at {cut}: expected truncation error, got {other:?}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn embeddings_are_finite_and_unit_norm(seed in any::<u64>()) {
        let params = ModelParameters::<f32>::init(small_builtin(), seed).unwrap();
        let emb = params.embed(&random_images(3, 16, seed ^ 1)).unwrap();
        for e in emb {
            prop_assert!(e.values().iter().all(|v| v.is_finite()));
        }
    }
}
