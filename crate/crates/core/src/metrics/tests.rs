use proptest::prelude::*;

use super::*;

const SIM: PairLabel = PairLabel::Similar;
const DIS: PairLabel = PairLabel::Dissimilar;

/// Macro metrics recomputed from the four counts, written out longhand.
/// Returns (precision, recall, f1, accuracy).
fn macro_oracle(tp: f64, fn_: f64, fp: f64, tn: f64) -> (f64, f64, f64, f64) {
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let p_sim = div(tp, tp + fp);
    let r_sim = div(tp, tp + fn_);
    let p_dis = div(tn, tn + fn_);
    let r_dis = div(tn, tn + fp);
    let f = |p: f64, r: f64| div(2.0 * p * r, p + r);
    (
        (p_sim + p_dis) / 2.0,
        (r_sim + r_dis) / 2.0,
        (f(p_sim, r_sim) + f(p_dis, r_dis)) / 2.0,
        (tp + tn) / (tp + fn_ + fp + tn),
    )
}

fn assert_close(name: &str, got: f64, want: f64, tol: f64) {
    assert!(
        (got - want).abs() <= tol,
        "{name}: got {got}, want {want} ± {tol}"
    );
}

#[test]
fn decide_examples() {
    assert_eq!(decide(0.3, 0.5), Decision::Similar);
    assert_eq!(decide(0.5, 0.5), Decision::Dissimilar);
    assert_eq!(decide(0.9, 0.5), Decision::Dissimilar);
}

#[test]
fn confusion_examples() {
    let cm = confusion(&[SIM; 6], &[0.0; 6], 0.5).unwrap();
    assert_eq!(cm, ConfusionMatrix::new(6, 0, 0, 0));

    let cm = confusion(&[SIM, SIM, DIS, DIS], &[0.1, 0.9, 0.1, 0.9], 0.5).unwrap();
    assert_eq!(cm, ConfusionMatrix::new(1, 1, 1, 1));

    assert_eq!(
        confusion(&[], &[], 0.5).unwrap(),
        ConfusionMatrix::default()
    );
    assert!(confusion(&[SIM], &[0.1, 0.2], 0.5).is_err());
}

#[test]
fn published_confusion_tables_reproduce_aggregate_rows() {
    // (tp, fn, fp, tn) and the published (precision, recall, f1, accuracy).
    let cases = [
        (
            "zero-shot 21 species",
            (24, 18, 15, 27),
            Some((0.61, 0.61, 0.61, 0.61)),
        ),
        (
            "all 45 species",
            (61, 29, 43, 47),
            Some((0.61, 0.60, 0.60, 0.60)),
        ),
        (
            "seen 24 species",
            (3725, 1267, 1514, 3478),
            Some((0.73, 0.72, 0.72, 0.72)),
        ),
        (
            "resnet validation",
            (3197, 1123, 1243, 3077),
            Some((0.73, 0.72, 0.73, 0.72)),
        ),
        (
            "mobilenet validation",
            (2897, 1423, 1608, 2712),
            Some((0.65, 0.65, 0.65, 0.65)),
        ),
    ];
    for (name, (tp, fn_, fp, tn), published) in cases {
        let report = metrics_from_confusion(&ConfusionMatrix::new(tp, fn_, fp, tn)).unwrap();
        let (p, r, f, a) = macro_oracle(tp as f64, fn_ as f64, fp as f64, tn as f64);
        assert_close(name, report.precision, p, 1e-12);
        assert_close(name, report.recall, r, 1e-12);
        assert_close(name, report.f1, f, 1e-12);
        assert_close(name, report.accuracy, a, 1e-12);
        if let Some((pp, pr, pf, pa)) = published {
            assert_close(name, report.precision, pp, 0.015);
            assert_close(name, report.recall, pr, 0.015);
            assert_close(name, report.f1, pf, 0.015);
            assert_close(name, report.accuracy, pa, 0.015);
        }
    }
    // Hand arithmetic for the zero-shot table.
    let zsl = metrics_from_confusion(&ConfusionMatrix::new(24, 18, 15, 27)).unwrap();
    assert_close("zsl accuracy", zsl.accuracy, 51.0 / 84.0, 1e-12);
    assert_close(
        "zsl precision",
        zsl.precision,
        (24.0 / 39.0 + 27.0 / 45.0) / 2.0,
        1e-12,
    );
    assert_close(
        "all accuracy",
        metrics_from_confusion(&ConfusionMatrix::new(61, 29, 43, 47))
            .unwrap()
            .accuracy,
        0.6,
        1e-12,
    );
}

#[test]
fn degenerate_and_empty_matrices() {
    let r = metrics_from_confusion(&ConfusionMatrix::new(0, 0, 0, 4)).unwrap();
    assert_eq!(r.similar.precision, 0.0);
    assert_eq!(r.similar.recall, 0.0);
    assert_eq!(r.similar.f1, 0.0);
    assert_eq!(r.accuracy, 1.0);
    assert!(metrics_from_confusion(&ConfusionMatrix::default()).is_err());
}

#[test]
fn perfect_and_constant_scores() {
    let labels = [SIM, SIM, SIM, DIS, DIS, DIS];
    let perfect = evaluate_scores(&labels, &[0.1, 0.2, 0.0, 0.7, 0.5, 1.0], 0.5).unwrap();
    assert_eq!(perfect.f1, 1.0);
    assert_eq!(perfect.accuracy, 1.0);
    for c in [0.0, 0.5, 0.9] {
        let r = evaluate_scores(&labels, &[c; 6], 0.5).unwrap();
        assert_eq!(r.accuracy, 0.5);
    }
}

#[test]
fn sweep_examples() {
    let grid = parse_grid("0.1:0.9:0.1").unwrap();
    assert_eq!(grid, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
    let labels = [SIM, DIS, SIM, DIS];
    let reports = threshold_sweep(&labels, &[0.0; 4], &grid).unwrap();
    assert_eq!(reports.len(), 9);
    for r in &reports {
        assert_eq!(r.confusion, ConfusionMatrix::new(2, 0, 2, 0));
    }
    let scores = [0.2, 0.4, 0.6, 0.3];
    let one = threshold_sweep(&labels, &scores, &[0.35]).unwrap();
    assert_eq!(one, vec![evaluate_scores(&labels, &scores, 0.35).unwrap()]);
    let unordered = threshold_sweep(&labels, &scores, &[0.7, 0.1]).unwrap();
    assert_eq!(unordered[0].threshold, 0.1);
    assert!(threshold_sweep(&labels, &scores, &[]).is_err());
    assert!(threshold_sweep(&labels, &scores, &[-0.1]).is_err());
}

#[test]
fn grid_parsing() {
    assert_eq!(parse_grid("0.5:0.5:0.1").unwrap(), vec![0.5]);
    assert_eq!(parse_grid("0:1:0.25").unwrap().len(), 5);
    for bad in ["", "0.1:0.9", "a:b:c", "0.9:0.1:0.1", "0:1:0", "-1:1:0.5"] {
        assert!(parse_grid(bad).is_err(), "{bad}");
    }
}

#[test]
fn report_file_format() {
    let r = metrics_from_confusion(&ConfusionMatrix::new(24, 18, 15, 27)).unwrap();
    let csv = reports_to_csv(&[r]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    let row = lines.next().unwrap();
    assert!(row.ends_with(",24,18,15,27"), "{row}");
    assert!(format_confusion(&r.confusion).contains("24"));
}

fn toy_groups() -> BTreeMap<String, Vec<String>> {
    let mut g = BTreeMap::new();
    for (s, n) in [("a", 12), ("b", 9), ("c", 1), ("d", 30), ("e", 5)] {
        g.insert(s.to_string(), (0..n).map(|i| format!("{s}{i}")).collect());
    }
    g
}

/// Scores 0 for same-species pairs and 1 otherwise.
fn oracle_scores(pairs: &[Pair]) -> Result<Vec<f64>> {
    Ok(pairs
        .iter()
        .map(|p| if p.id_a[..1] == p.id_b[..1] { 0.0 } else { 1.0 })
        .collect())
}

#[test]
fn pair_matrix_shape_and_perfect_cells() {
    let groups = toy_groups();
    let names: Vec<String> = groups.keys().cloned().collect();
    let m = pair_f1_matrix(&groups, &names, &names, 40, 0.5, 3, oracle_scores).unwrap();
    assert_eq!(m.cells.len(), 5);
    for (i, line) in m.cells.iter().enumerate() {
        assert_eq!(line.len(), 5);
        for (j, cell) in line.iter().enumerate() {
            if i == j {
                assert!(cell.is_none());
                continue;
            }
            let cell = cell.unwrap();
            assert_eq!(cell.f1, 1.0);
            assert_eq!(cell.positives, cell.negatives);
        }
    }
    let csv = m.to_csv();
    assert!(csv.starts_with("species,a,b,c,d,e\n"));
    assert!(csv.contains("NA"));
}

#[test]
fn pair_matrix_is_deterministic() {
    let groups = toy_groups();
    let names: Vec<String> = groups.keys().cloned().collect();
    let mut calls = 0u64;
    let mut noisy = |pairs: &[Pair]| {
        calls += 1;
        Ok(pairs
            .iter()
            .map(|p| ((p.id_a.len() * 7 + p.id_b.as_bytes()[1] as usize) % 10) as f64 / 10.0)
            .collect())
    };
    let a = pair_f1_matrix(&groups, &names, &names, 20, 0.5, 9, &mut noisy).unwrap();
    let b = pair_f1_matrix(&groups, &names, &names, 20, 0.5, 9, &mut noisy).unwrap();
    assert_eq!(a, b);
    assert_eq!(calls, 40);
    assert!(pair_f1_matrix(
        &groups,
        &names,
        &["zz".to_string()],
        20,
        0.5,
        9,
        oracle_scores
    )
    .is_err());
}

#[test]
fn cell_pairs_are_balanced_and_sound() {
    let groups = toy_groups();
    let mut rng = seed::rng_for(0, "cells");
    for (r, c) in [("a", "b"), ("c", "d"), ("c", "e"), ("d", "a")] {
        let pairs = cell_pairs(&groups[r], &groups[c], 60, &mut rng);
        let pos: Vec<&Pair> = pairs.iter().filter(|p| p.label == SIM).collect();
        assert_eq!(pos.len() * 2, pairs.len(), "{r}/{c}");
        for p in &pairs {
            let same = p.id_a[..1] == p.id_b[..1];
            assert_eq!(same, p.label == SIM);
            assert!(p.id_a.starts_with(r) || p.id_a.starts_with(c));
        }
        let mut keys: Vec<(&str, &str)> = pairs
            .iter()
            .map(|p| (p.id_a.as_str(), p.id_b.as_str()))
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), pairs.len());
    }
    // A singleton species contributes no positives of its own.
    let pairs = cell_pairs(&groups["c"], &groups["e"], 60, &mut rng);
    assert!(pairs
        .iter()
        .filter(|p| p.label == SIM)
        .all(|p| p.id_a.starts_with('e')));
}

#[test]
fn species_choice_is_sorted_and_distinct() {
    let names: Vec<String> = (0..21).map(|i| format!("s{i:02}")).collect();
    let mut rng = seed::rng_for(4, "choose");
    let chosen = choose_species(&names, 5, &mut rng);
    assert_eq!(chosen.len(), 5);
    assert!(chosen.windows(2).all(|w| w[0] < w[1]));
}

fn labelled_scores() -> impl Strategy<Value = Vec<(bool, f64)>> {
    prop::collection::vec((any::<bool>(), 0.0..1.0f64), 1..200)
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval(v in labelled_scores(), t in 0.0..1.0f64) {
        let labels: Vec<PairLabel> = v.iter().map(|(s, _)| if *s { SIM } else { DIS }).collect();
        let scores: Vec<f64> = v.iter().map(|(_, x)| *x).collect();
        let r = evaluate_scores(&labels, &scores, t).unwrap();
        for x in [r.precision, r.recall, r.f1, r.accuracy] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        let cm = r.confusion;
        prop_assert_eq!(cm.true_pos + cm.false_neg, labels.iter().filter(|&&l| l == SIM).count() as u64);
        prop_assert_eq!(r.accuracy, (cm.true_pos + cm.true_neg) as f64 / cm.total() as f64);
    }

    #[test]
    fn lower_threshold_predicts_more_dissimilar(v in labelled_scores(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let labels: Vec<PairLabel> = v.iter().map(|(s, _)| if *s { SIM } else { DIS }).collect();
        let scores: Vec<f64> = v.iter().map(|(_, x)| *x).collect();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let low = confusion(&labels, &scores, lo).unwrap();
        let high = confusion(&labels, &scores, hi).unwrap();
        prop_assert!(low.true_neg + low.false_neg >= high.true_neg + high.false_neg);
        prop_assert_eq!(low.true_pos + low.false_neg, high.true_pos + high.false_neg);
        prop_assert_eq!(low.false_pos + low.true_neg, high.false_pos + high.true_neg);
    }

    #[test]
    fn sweep_matches_pointwise_evaluation(v in labelled_scores(), grid in prop::collection::vec(0.0..1.0f64, 1..12)) {
        let labels: Vec<PairLabel> = v.iter().map(|(s, _)| if *s { SIM } else { DIS }).collect();
        let scores: Vec<f64> = v.iter().map(|(_, x)| *x).collect();
        let swept = threshold_sweep(&labels, &scores, &grid).unwrap();
        for r in swept {
            prop_assert_eq!(r.confusion, confusion(&labels, &scores, r.threshold).unwrap());
        }
    }

    #[test]
    fn metrics_are_scale_invariant(tp in 0u64..500, fn_ in 0u64..500, fp in 0u64..500, tn in 1u64..500, k in 1u64..50) {
        let a = metrics_from_confusion(&ConfusionMatrix::new(tp, fn_, fp, tn)).unwrap();
        let b = metrics_from_confusion(&ConfusionMatrix::new(tp * k, fn_ * k, fp * k, tn * k)).unwrap();
        for (x, y) in [(a.precision, b.precision), (a.recall, b.recall), (a.f1, b.f1), (a.accuracy, b.accuracy)] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
