//! Thresholded verification decisions and the derived metrics.
//!
//! "Similar" is the positive class of the confusion matrix. Precision,
//! recall and F1 are reported per class and macro-averaged (unweighted mean
//! over the similar and dissimilar classes). A zero denominator yields 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::loss::PairLabel;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Similar,
    Dissimilar,
}

/// Scores strictly below the threshold are similar; ties are dissimilar.
pub fn decide(score: f64, threshold: f64) -> Decision {
    if score < threshold {
        Decision::Similar
    } else {
        Decision::Dissimilar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ConfusionMatrix {
    /// Actually similar, predicted similar.
    pub true_pos: u64,
    /// Actually similar, predicted dissimilar.
    pub false_neg: u64,
    /// Actually dissimilar, predicted similar.
    pub false_pos: u64,
    /// Actually dissimilar, predicted dissimilar.
    pub true_neg: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self {
            true_pos: tp,
            false_neg: fn_,
            false_pos: fp,
            true_neg: tn,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_neg + self.false_pos + self.true_neg
    }

    pub fn actual_similar(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    pub fn actual_dissimilar(&self) -> u64 {
        self.false_pos + self.true_neg
    }

    pub fn record(&mut self, label: PairLabel, decision: Decision) {
        match (label, decision) {
            (PairLabel::Similar, Decision::Similar) => self.true_pos += 1,
            (PairLabel::Similar, Decision::Dissimilar) => self.false_neg += 1,
            (PairLabel::Dissimilar, Decision::Similar) => self.false_pos += 1,
            (PairLabel::Dissimilar, Decision::Dissimilar) => self.true_neg += 1,
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self::new(
            self.true_pos + other.true_pos,
            self.false_neg + other.false_neg,
            self.false_pos + other.false_pos,
            self.true_neg + other.true_neg,
        )
    }
}

pub fn confusion(labels: &[PairLabel], scores: &[f64], threshold: f64) -> Result<ConfusionMatrix> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &s) in labels.iter().zip(scores) {
        cm.record(y, decide(s, threshold));
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    fn from_counts(hit: u64, predicted: u64, actual: u64) -> Self {
        let precision = ratio(hit, predicted);
        let recall = ratio(hit, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub threshold: f64,
    pub similar: ClassMetrics,
    pub dissimilar: ClassMetrics,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    metrics_at(cm, f64::NAN)
}

fn metrics_at(cm: &ConfusionMatrix, threshold: f64) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::InvalidArgument(
            "metrics need a non-empty confusion matrix".into(),
        ));
    }
    let similar =
        ClassMetrics::from_counts(cm.true_pos, cm.true_pos + cm.false_pos, cm.actual_similar());
    let dissimilar = ClassMetrics::from_counts(
        cm.true_neg,
        cm.true_neg + cm.false_neg,
        cm.actual_dissimilar(),
    );
    Ok(MetricsReport {
        threshold,
        similar,
        dissimilar,
        precision: (similar.precision + dissimilar.precision) / 2.0,
        recall: (similar.recall + dissimilar.recall) / 2.0,
        f1: (similar.f1 + dissimilar.f1) / 2.0,
        accuracy: (cm.true_pos + cm.true_neg) as f64 / cm.total() as f64,
        confusion: *cm,
    })
}

pub fn evaluate_scores(
    labels: &[PairLabel],
    scores: &[f64],
    threshold: f64,
) -> Result<MetricsReport> {
    metrics_at(&confusion(labels, scores, threshold)?, threshold)
}

/// One report per threshold, ascending, from a single sort of the scores.
pub fn threshold_sweep(
    labels: &[PairLabel],
    scores: &[f64],
    thresholds: &[f64],
) -> Result<Vec<MetricsReport>> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("threshold grid is empty".into()));
    }
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must be non-negative, got {t}"
        )));
    }
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&y, &s) in labels.iter().zip(scores) {
        match y {
            PairLabel::Similar => pos.push(s),
            PairLabel::Dissimilar => neg.push(s),
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut grid = thresholds.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.into_iter()
        .map(|t| {
            let below_pos = pos.partition_point(|&s| s < t) as u64;
            let below_neg = neg.partition_point(|&s| s < t) as u64;
            let cm = ConfusionMatrix::new(
                below_pos,
                pos.len() as u64 - below_pos,
                below_neg,
                neg.len() as u64 - below_neg,
            );
            metrics_at(&cm, t)
        })
        .collect()
}

/// Parse `start:stop:step` into an inclusive ascending grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidArgument(format!("grid must be `start:stop:step`, got `{spec}`"));
    let [a, b, c] = parts[..] else {
        return Err(bad());
    };
    let (start, stop, step): (f64, f64, f64) = (
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
        c.trim().parse().map_err(|_| bad())?,
    );
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "grid `{spec}` needs finite bounds and a positive step"
        )));
    }
    if start > stop {
        return Err(Error::InvalidArgument(format!(
            "grid `{spec}` starts above its stop"
        )));
    }
    if start < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "grid `{spec}` has negative thresholds"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // Round away accumulated binary error so 0.1 steps print as 0.3, not 0.30000000000000004.
    Ok((0..n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

pub const REPORT_HEADER: &str = "threshold,precision,recall,f1,accuracy,tp,fn,fp,tn";

pub fn report_row(r: &MetricsReport) -> String {
    let c = &r.confusion;
    format!(
        "{:.4},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
        r.threshold,
        r.precision,
        r.recall,
        r.f1,
        r.accuracy,
        c.true_pos,
        c.false_neg,
        c.false_pos,
        c.true_neg
    )
}

pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        out.push_str(&report_row(r));
        out.push('\n');
    }
    out
}

pub fn save_reports(path: impl AsRef<Path>, reports: &[MetricsReport]) -> Result<()> {
    fs::write(path, reports_to_csv(reports))?;
    Ok(())
}

/// Table-style rendering: one row per report with two-decimal metrics.
pub fn format_table(labels: &[String], reports: &[MetricsReport]) -> String {
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:width$}  Threshold  Precision  Recall  F1    Accuracy\n",
        ""
    );
    for (label, r) in labels.iter().zip(reports) {
        let _ = writeln!(
            out,
            "{label:width$}  {:<9.2}  {:<9.2}  {:<6.2}  {:<4.2}  {:.2}",
            r.threshold, r.precision, r.recall, r.f1, r.accuracy
        );
    }
    out
}

/// Text rendering of a confusion matrix in the "actually / predicted" layout.
pub fn format_confusion(cm: &ConfusionMatrix) -> String {
    format!(
        "                    Predicted similar  Predicted dissimilar\n\
         Actually similar    {:<17}  {}\n\
         Actually dissimilar {:<17}  {}\n",
        cm.true_pos, cm.false_neg, cm.false_pos, cm.true_neg
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCell {
    pub f1: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Macro F1 for every (row species, column species) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct PairF1Matrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub threshold: f64,
    /// `None` where no balanced pair set exists (same species, or too few samples).
    pub cells: Vec<Vec<Option<PairCell>>>,
}

fn all_pairs_within(ids: &[String]) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            v.push((i, j));
        }
    }
    v
}

/// Draw `k` distinct index pairs from a space of `capacity`, either by
/// enumeration (small spaces) or by rejection.
fn draw_distinct<R: Rng + ?Sized>(
    k: usize,
    capacity: usize,
    rng: &mut R,
    enumerate: impl Fn() -> Vec<(usize, usize)>,
    mut draw: impl FnMut(&mut R) -> (usize, usize),
) -> Vec<(usize, usize)> {
    let k = k.min(capacity);
    if capacity <= 4 * k {
        let mut all = enumerate();
        all.shuffle(rng);
        all.truncate(k);
        return all;
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let p = draw(rng);
        if seen.insert(p) {
            out.push(p);
        }
    }
    out
}

fn positives_from<R: Rng + ?Sized>(ids: &[String], k: usize, rng: &mut R) -> Vec<Pair> {
    let n = ids.len();
    if n < 2 || k == 0 {
        return Vec::new();
    }
    let chosen = draw_distinct(
        k,
        n * (n - 1) / 2,
        rng,
        || all_pairs_within(ids),
        |rng| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i.min(j), i.max(j))
        },
    );
    chosen
        .into_iter()
        .map(|(i, j)| Pair {
            id_a: ids[i].clone(),
            id_b: ids[j].clone(),
            label: PairLabel::Similar,
        })
        .collect()
}

/// The balanced pair set of one matrix cell.
pub fn cell_pairs<R: Rng + ?Sized>(
    row_ids: &[String],
    col_ids: &[String],
    pairs_per_cell: usize,
    rng: &mut R,
) -> Vec<Pair> {
    let cap = |n: usize| n * n.saturating_sub(1) / 2;
    let (cap_r, cap_c) = (cap(row_ids.len()), cap(col_ids.len()));
    let neg_cap = row_ids.len() * col_ids.len();
    let half = (pairs_per_cell / 2).min(cap_r + cap_c).min(neg_cap);
    if half == 0 {
        return Vec::new();
    }
    // Split positives between the two species, shifting any shortfall.
    let mut from_r = half.div_ceil(2).min(cap_r);
    let from_c = (half - from_r).min(cap_c);
    from_r = (half - from_c).min(cap_r);

    let mut pairs = positives_from(row_ids, from_r, rng);
    pairs.extend(positives_from(col_ids, from_c, rng));
    let (nr, nc) = (row_ids.len(), col_ids.len());
    let neg = draw_distinct(
        half,
        neg_cap,
        rng,
        || (0..nr).flat_map(|i| (0..nc).map(move |j| (i, j))).collect(),
        |rng| (rng.random_range(0..nr), rng.random_range(0..nc)),
    );
    pairs.extend(neg.into_iter().map(|(i, j)| Pair {
        id_a: row_ids[i].clone(),
        id_b: col_ids[j].clone(),
        label: PairLabel::Dissimilar,
    }));
    pairs
}

/// Per-cell macro F1 at `threshold`. `score` maps a pair list to scores.
pub fn pair_f1_matrix<F>(
    groups: &BTreeMap<String, Vec<String>>,
    rows: &[String],
    cols: &[String],
    pairs_per_cell: usize,
    threshold: f64,
    seed: u64,
    mut score: F,
) -> Result<PairF1Matrix>
where
    F: FnMut(&[Pair]) -> Result<Vec<f64>>,
{
    for s in rows.iter().chain(cols) {
        if groups.get(s).is_none_or(Vec::is_empty) {
            return Err(Error::Data(format!("species `{s}` is not in the dataset")));
        }
    }
    let mut cells = Vec::with_capacity(rows.len());
    for r in rows {
        let mut line = Vec::with_capacity(cols.len());
        for c in cols {
            if r == c {
                line.push(None);
                continue;
            }
            let mut rng = seed::rng_for(seed, &format!("pairf1/{r}/{c}"));
            let pairs = cell_pairs(&groups[r], &groups[c], pairs_per_cell, &mut rng);
            if pairs.is_empty() {
                line.push(None);
                continue;
            }
            let scores = score(&pairs)?;
            let labels: Vec<PairLabel> = pairs.iter().map(|p| p.label).collect();
            let report = evaluate_scores(&labels, &scores, threshold)?;
            let positives = labels.iter().filter(|&&l| l == PairLabel::Similar).count();
            line.push(Some(PairCell {
                f1: report.f1,
                positives,
                negatives: labels.len() - positives,
            }));
        }
        cells.push(line);
    }
    Ok(PairF1Matrix {
        rows: rows.to_vec(),
        cols: cols.to_vec(),
        threshold,
        cells,
    })
}

impl PairF1Matrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("species");
        for c in &self.cols {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, line) in self.rows.iter().zip(&self.cells) {
            out.push_str(r);
            for cell in line {
                match cell {
                    Some(c) => {
                        let _ = write!(out, ",{:.4}", c.f1);
                    }
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# threshold={}", self.threshold);
        for (r, line) in self.rows.iter().zip(&self.cells) {
            for (c, cell) in self.cols.iter().zip(line) {
                if let Some(cell) = cell {
                    let _ = writeln!(
                        out,
                        "# pairs {r}|{c} positives={} negatives={}",
                        cell.positives, cell.negatives
                    );
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Pick `k` distinct species at random (sorted), e.g. for matrix rows.
pub fn choose_species<R: Rng + ?Sized>(names: &[String], k: usize, rng: &mut R) -> Vec<String> {
    let mut v: Vec<String> = names.choose_multiple(rng, k).cloned().collect();
    v.sort();
    v
}

#[cfg(test)]
mod tests;
