use rand::Rng as _;

use super::*;
use crate::data::{make_split, SpeciesCatalog, SplitParams};
use crate::network::BackboneMode;

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut Rng) -> f32 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    ((-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()) as f32
}

const DIM: usize = 16;

/// Clustered feature vectors: one random centre per species plus noise.
fn clustered(
    species: usize,
    per_species: usize,
    noise: f32,
    seed: u64,
) -> (EmbeddingStore, SplitManifest) {
    let names: Vec<String> = (0..species).map(|s| format!("sp{s:02}")).collect();
    let counts: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), per_species)).collect();
    let catalog = SpeciesCatalog::from_counts(&counts).unwrap();
    let mut rng = seed::rng_for(seed, "clusters");
    let mut store = EmbeddingStore::new(DIM);
    for name in &names {
        let centre: Vec<f32> = (0..DIM).map(|_| gaussian(&mut rng)).collect();
        for id in &catalog.members()[name] {
            let v: Vec<f32> = centre
                .iter()
                .map(|c| c + noise * gaussian(&mut rng))
                .collect();
            store.insert(id.clone(), &v).unwrap();
        }
    }
    let params = SplitParams {
        min_count: 1,
        unseen_species: names[species - 2..].iter().cloned().collect(),
        ..SplitParams::default()
    };
    (store, make_split(&catalog, &params).unwrap())
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        pairs_per_epoch: Some(256),
        val_pairs: Some(64),
        model: ModelConfig {
            backbone: BackboneMode::Precomputed { feature_dim: DIM },
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn defaults() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.max_epochs, 100);
    assert_eq!(cfg.patience, 7);
    assert_eq!(cfg.batch_size, 32);
    assert_eq!(cfg.learning_rate, 1e-3);
    assert_eq!(
        cfg.adam,
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8
        }
    );
    assert_eq!(cfg.pos_ratio, 0.5);
    assert_eq!(TrainConfig::default_pairs(100), 400);
    assert_eq!(TrainConfig::default_pairs(1_000_000), 50_000);

    // Three species of four: 18 distinct positives and 48 negatives.
    let groups: BTreeMap<String, Vec<String>> = (0..3)
        .map(|s| (format!("s{s}"), (0..4).map(|i| format!("s{s}/{i}")).collect()))
        .collect();
    assert_eq!(TrainConfig::default_pairs_for(&groups, 0.5), 36);
    assert_eq!(TrainConfig::default_pairs_for(&groups, 1.0), 18);
    assert_eq!(TrainConfig::default_pairs_for(&groups, 0.0), 48);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = small_config(1);
    for cfg in [
        TrainConfig {
            max_epochs: 0,
            ..base.clone()
        },
        TrainConfig {
            patience: 0,
            ..base.clone()
        },
        TrainConfig {
            batch_size: 0,
            ..base.clone()
        },
        TrainConfig {
            learning_rate: -1.0,
            ..base.clone()
        },
        TrainConfig {
            pos_ratio: 1.5,
            ..base.clone()
        },
        TrainConfig {
            pairs_per_epoch: Some(0),
            ..base.clone()
        },
    ] {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn stopping_rule_examples() {
    // Loss improves through epoch 3, then freezes.
    let mut stop = EarlyStopping::new(7);
    let mut stopped_at = None;
    for epoch in 1..=100 {
        let loss = if epoch <= 3 {
            1.0 / epoch as f64
        } else {
            1.0 / 3.0
        };
        if stop.update(epoch, loss) == StopDecision::Stop {
            stopped_at = Some(epoch);
            break;
        }
    }
    assert_eq!(stopped_at, Some(10));
    assert_eq!(stop.best_epoch(), Some(3));

    let mut stop = EarlyStopping::new(7);
    for epoch in 1..=100 {
        assert_eq!(
            stop.update(epoch, 1.0 / epoch as f64),
            StopDecision::Improved
        );
    }
    assert_eq!(stop.best_epoch(), Some(100));
}

#[test]
fn stale_counter_resets_only_on_strict_improvement() {
    let mut stop = EarlyStopping::new(3);
    assert_eq!(stop.update(1, 0.5), StopDecision::Improved);
    assert_eq!(stop.update(2, 0.5), StopDecision::Stale);
    assert_eq!(stop.stale_epochs(), 1);
    assert_eq!(stop.update(3, 0.4), StopDecision::Improved);
    assert_eq!(stop.stale_epochs(), 0);
    assert_eq!(stop.update(4, 0.6), StopDecision::Stale);
    assert_eq!(stop.update(5, 0.4), StopDecision::Stale);
    assert_eq!(stop.update(6, 0.4), StopDecision::Stop);
}

#[test]
fn training_learns_clustered_features() {
    let (store, split) = clustered(8, 60, 0.3, 1);
    let out = train(&store, &split, &small_config(15)).unwrap();
    let last = out.log.epochs.last().unwrap();
    assert!(last.val_f1 >= 0.9, "validation F1 {}", last.val_f1);
    assert!(out.log.epochs[0].train_loss > last.train_loss);

    // The returned parameters are the best-validation ones.
    let best = out
        .log
        .epochs
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    let (val_loss, _) =
        validation_metrics(&out.params, &store, &out.val_pairs, &LossConfig::default()).unwrap();
    assert!((val_loss - best).abs() < 1e-9, "{val_loss} vs {best}");
    assert_eq!(out.log.epochs[out.best_epoch - 1].val_loss, best);

    let results =
        evaluate_protocols(&out.params, &store, &split, 200, 0.5, DEFAULT_THRESHOLD, 3).unwrap();
    let labels: Vec<String> = results.iter().map(ProtocolResult::label).collect();
    assert_eq!(
        labels,
        ["2 species (Zero-Shot)", "8 species (ALL)", "6 species"]
    );
    assert!(results[2].evaluation.report.f1 >= results[0].evaluation.report.f1 - 0.05);
    assert!(results[0].evaluation.report.f1 > 0.5);
}

#[test]
fn training_is_deterministic() {
    let (store, split) = clustered(5, 60, 0.5, 2);
    let cfg = small_config(3);
    let a = train(&store, &split, &cfg).unwrap();
    let b = train(&store, &split, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    let c = train(&store, &split, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let (store, split) = clustered(4, 60, 0.5, 3);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_config(3)
    };
    let init = ModelParameters::<f32>::init(cfg.model, cfg.seed).unwrap();
    let out = train_from(&store, &split, &cfg, init.clone()).unwrap();
    assert_eq!(out.log.epochs.len(), 3);
    for (a, b) in init.tensors().zip(out.params.tensors()) {
        let abits: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
        let bbits: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(abits, bbits);
    }
}

#[test]
fn one_step_moves_every_parameter_tensor() {
    let (store, split) = clustered(4, 60, 0.5, 4);
    let cfg = TrainConfig {
        pairs_per_epoch: Some(32),
        ..small_config(1)
    };
    let init = ModelParameters::<f32>::init(cfg.model, cfg.seed).unwrap();
    let mut adam = Adam::new(&init, cfg.learning_rate, cfg.adam);
    let mut params = init.clone();
    let pairs = sample_pairs(&split, Partition::Train, Scope::All, 32, 0.5, 0).unwrap();
    let ids: Vec<&str> = pairs
        .iter()
        .map(|p| p.id_a.as_str())
        .chain(pairs.iter().map(|p| p.id_b.as_str()))
        .collect();
    let labels: Vec<PairLabel> = pairs.iter().map(|p| p.label).collect();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(batch_tensor(&store, &ids, None).unwrap());
    let mut rng = seed::rng_for(0, "step");
    let emb = params
        .forward(&mut tape, &bound, x, Mode::Train, &mut rng)
        .unwrap();
    let loss = tape.contrastive_loss(emb, &labels, &cfg.loss).unwrap();
    tape.backward(loss).unwrap();
    for (t, v) in params.tensors_mut().zip(bound.all()) {
        *t = tape.take(v);
    }
    adam.step(&mut params).unwrap();
    for (a, b) in init.tensors().zip(params.tensors()) {
        assert_ne!(a, b);
    }
}

#[test]
fn constant_embedder_scores_half_accuracy() {
    let (store, split) = clustered(4, 60, 0.5, 5);
    let cfg = small_config(1);
    let mut params = ModelParameters::<f32>::init(cfg.model, 0).unwrap();
    for t in params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    params.layers.last_mut().unwrap().bias.data_mut()[0] = 1.0;
    let pairs = sample_pairs(&split, Partition::Test, Scope::All, 100, 0.5, 0).unwrap();
    let a = evaluate_model(&params, &store, &pairs, DEFAULT_THRESHOLD).unwrap();
    assert!(a.scores.iter().all(|&s| s == 0.0));
    assert_eq!(a.report.accuracy, 0.5);
    let b = evaluate_model(&params, &store, &pairs, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn identical_positive_pairs_drive_loss_down() {
    // Zero noise: every sample of a species shares one vector. All pairs are similar.
    let (store, split) = clustered(4, 60, 0.0, 6);
    let cfg = TrainConfig {
        pos_ratio: 1.0,
        patience: 50,
        pairs_per_epoch: Some(64),
        ..small_config(50)
    };
    let out = train(&store, &split, &cfg).unwrap();
    let losses: Vec<f64> = out.log.epochs.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 50);
    // Dropout keeps the twins apart, so compare 10-epoch means rather than single epochs.
    let means: Vec<f64> = losses
        .chunks(10)
        .map(|c| c.iter().sum::<f64>() / 10.0)
        .collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "windowed train loss rose: {means:?}");
    }
    assert!(means[4] < 0.7 * means[0], "{means:?}");
}

#[test]
fn training_errors() {
    let (store, split) = clustered(4, 60, 0.5, 7);
    let wrong_dim = TrainConfig {
        model: ModelConfig {
            backbone: BackboneMode::Precomputed {
                feature_dim: DIM + 1,
            },
            ..ModelConfig::default()
        },
        ..small_config(1)
    };
    assert!(matches!(
        train(&store, &split, &wrong_dim),
        Err(Error::Config(_))
    ));

    let mut partial = EmbeddingStore::new(DIM);
    let first = store.ids()[0].clone();
    partial
        .insert(first.clone(), store.get(&first).unwrap())
        .unwrap();
    assert!(matches!(
        train(&partial, &split, &small_config(1)),
        Err(Error::UnknownId(_))
    ));

    let mut no_val = split.clone();
    for row in &mut no_val.rows {
        if row.2 == Partition::Validation {
            row.2 = Partition::Train;
        }
    }
    assert!(matches!(
        train(&store, &no_val, &small_config(1)),
        Err(Error::Split(_))
    ));
}

#[test]
fn protocol_errors() {
    let (store, split) = clustered(4, 60, 0.5, 8);
    let mut one_unseen = split.clone();
    let dropped = split
        .unseen_species()
        .into_iter()
        .next()
        .unwrap()
        .to_string();
    one_unseen.rows.retain(|(_, s, _)| *s != dropped);
    assert!(protocol_pairs(&one_unseen, Scope::Unseen, 10, 0.5, 0).is_err());

    let params = ModelParameters::<f32>::init(small_config(1).model, 0).unwrap();
    let mut none_unseen = split.clone();
    let unseen: Vec<String> = split
        .unseen_species()
        .into_iter()
        .map(String::from)
        .collect();
    none_unseen.rows.retain(|(_, s, _)| !unseen.contains(s));
    none_unseen.params.unseen_species.clear();
    assert!(evaluate_protocols(&params, &store, &none_unseen, 10, 0.5, 0.5, 0).is_err());
}

#[test]
fn log_file_format() {
    let (store, split) = clustered(4, 60, 0.5, 9);
    let out = train(&store, &split, &small_config(2)).unwrap();
    let csv = out.log.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,val_f1,stale_epochs");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn sharded_gradients_do_not_depend_on_thread_count() {
    let (store, split) = clustered(4, 60, 0.5, 10);
    let mut cfg = small_config(1);
    cfg.model.dropout = 0.0;
    let params = ModelParameters::<f32>::init(cfg.model, 0).unwrap();
    let pairs = sample_pairs(&split, Partition::Train, Scope::All, 30, 0.5, 1).unwrap();
    let shards = || -> Vec<Shard> {
        pairs
            .chunks(SHARD_PAIRS)
            .enumerate()
            .map(|(k, part)| {
                let ids: Vec<&str> = part
                    .iter()
                    .map(|p| p.id_a.as_str())
                    .chain(part.iter().map(|p| p.id_b.as_str()))
                    .collect();
                Shard {
                    input: batch_tensor(&store, &ids, None).unwrap(),
                    labels: part.iter().map(|p| p.label).collect(),
                    rng: seed::rng_for_indexed(0, "shard", k as u64),
                }
            })
            .collect()
    };
    let (l1, g1) = batch_gradient(&params, shards(), &cfg.loss, 1).unwrap();
    for threads in [2, 3, 8] {
        let (l, g) = batch_gradient(&params, shards(), &cfg.loss, threads).unwrap();
        assert_eq!(l.to_bits(), l1.to_bits());
        assert_eq!(g, g1);
    }

    // Without dropout the weighted shard sum equals the whole-batch gradient.
    let ids: Vec<&str> = pairs
        .iter()
        .map(|p| p.id_a.as_str())
        .chain(pairs.iter().map(|p| p.id_b.as_str()))
        .collect();
    let whole = Shard {
        input: batch_tensor(&store, &ids, None).unwrap(),
        labels: pairs.iter().map(|p| p.label).collect(),
        rng: seed::rng_for(0, "whole"),
    };
    let (l, g) = shard_gradient(&params, whole, &cfg.loss).unwrap();
    assert!((l - l1).abs() < 1e-6 * l.abs().max(1e-3));
    for (a, b) in g.iter().zip(&g1) {
        let scale = a.iter().fold(0f32, |m, x| m.max(x.abs())).max(1e-6);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-4 * scale, "{x} vs {y}");
        }
    }
}
