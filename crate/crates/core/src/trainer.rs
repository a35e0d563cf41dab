//! Mini-batch contrastive training with early stopping, and evaluation of
//! trained models under the seen / unseen / all-species protocols.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;

use crate::data::{
    apply_ops, sample_pairs, sample_pairs_from, AugmentOps, Dataset, EmbeddingStore, Pair,
    Partition, Scope, SplitManifest,
};
use crate::error::{Error, Result};
use crate::loss::{self, LossConfig, PairLabel};
use crate::metrics::{self, MetricsReport};
use crate::network::{energy_slices, similarity_score, ModelConfig, ModelParameters};
use crate::seed::{self, Rng};
use crate::tensor::{Mode, Tape, Tensor};

/// Threshold used for validation F1 and as the default decision boundary.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
const PAIRS_PER_SAMPLE: usize = 4;
const MAX_PAIRS_PER_EPOCH: usize = 50_000;
const INFER_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Defaults to 4 × training samples, capped at 50 000.
    pub pairs_per_epoch: Option<usize>,
    /// Size of the fixed validation pair set; same default rule as above.
    pub val_pairs: Option<usize>,
    pub pos_ratio: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 7,
            batch_size: 32,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            pairs_per_epoch: None,
            val_pairs: None,
            pos_ratio: 0.5,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.pos_ratio) {
            return Err(Error::Config(format!(
                "pos_ratio must be in [0, 1], got {}",
                self.pos_ratio
            )));
        }
        if self.pairs_per_epoch == Some(0) || self.val_pairs == Some(0) {
            return Err(Error::Config("pair counts must be positive".into()));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    fn default_pairs(samples: usize) -> usize {
        (PAIRS_PER_SAMPLE * samples).clamp(1, MAX_PAIRS_PER_EPOCH)
    }

    /// Default pair count for a partition, shrunk so the distinct positive
    /// and negative pairs of `groups` can fill it at `pos_ratio`.
    fn default_pairs_for(groups: &BTreeMap<String, Vec<String>>, pos_ratio: f64) -> usize {
        let sizes: Vec<f64> = groups.values().map(|g| g.len() as f64).collect();
        let total: f64 = sizes.iter().sum();
        let pos_cap: f64 = sizes.iter().map(|n| n * (n - 1.0) / 2.0).sum();
        let neg_cap = (total * total - sizes.iter().map(|n| n * n).sum::<f64>()) / 2.0;
        let mut n = Self::default_pairs(total as usize) as f64;
        if pos_ratio > 0.0 {
            n = n.min((pos_cap / pos_ratio).floor());
        }
        if pos_ratio < 1.0 {
            n = n.min((neg_cap / (1.0 - pos_ratio)).floor());
        }
        (n as usize).max(1)
    }
}

/// Something that can turn a sample id into a network input.
pub trait InputSource {
    /// Per-sample input shape (no batch axis).
    fn sample_shape(&self) -> Vec<usize>;
    fn contains(&self, id: &str) -> bool;
    /// Append the input for `id` to `out`, augmented when `augment` is given.
    fn write_input(&self, id: &str, augment: Option<&mut Rng>, out: &mut Vec<f32>) -> Result<()>;
}

impl InputSource for Dataset {
    fn sample_shape(&self) -> Vec<usize> {
        self.samples()
            .first()
            .map(|s| s.pixels.shape().to_vec())
            .unwrap_or_default()
    }

    fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    fn write_input(&self, id: &str, augment: Option<&mut Rng>, out: &mut Vec<f32>) -> Result<()> {
        let sample = self
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        match augment {
            None => out.extend_from_slice(sample.pixels.data()),
            Some(rng) => {
                let s = sample.pixels.shape();
                let ops = AugmentOps::sample(rng, s[0] == s[1]);
                out.extend_from_slice(apply_ops(&sample.pixels, ops).data());
            }
        }
        Ok(())
    }
}

/// Precomputed feature vectors; augmentation does not apply.
impl InputSource for EmbeddingStore {
    fn sample_shape(&self) -> Vec<usize> {
        vec![self.dim()]
    }

    fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    fn write_input(&self, id: &str, _augment: Option<&mut Rng>, out: &mut Vec<f32>) -> Result<()> {
        let v = self
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        out.extend_from_slice(v);
        Ok(())
    }
}

fn batch_tensor<S: InputSource + ?Sized>(
    source: &S,
    ids: &[&str],
    mut augment: Option<&mut Rng>,
) -> Result<Tensor<f32>> {
    let shape = source.sample_shape();
    let mut data = Vec::with_capacity(ids.len() * shape.iter().product::<usize>());
    for id in ids {
        source.write_input(id, augment.as_deref_mut(), &mut data)?;
    }
    let mut full = vec![ids.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

fn check_source<S: InputSource + ?Sized>(model: &ModelConfig, source: &S) -> Result<()> {
    let want = model.backbone.sample_shape();
    let got = source.sample_shape();
    if want != got {
        return Err(Error::Config(format!(
            "{} backbone expects inputs of shape {want:?}, data provides {got:?}",
            model.backbone.name()
        )));
    }
    Ok(())
}

/// Adam optimizer state, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    learning_rate: f64,
    step: i32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ModelParameters<f32>, learning_rate: f64, cfg: AdamConfig) -> Self {
        let zeros = || params.tensors().map(|t| vec![0.0f32; t.len()]).collect();
        Self {
            cfg,
            learning_rate,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Apply one update using the gradients stored on each tensor.
    pub fn step(&mut self, params: &mut ModelParameters<f32>) -> Result<()> {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate as f32;
        let eps = self.cfg.eps as f32;
        let (b1, b2, c1, c2) = (b1 as f32, b2 as f32, c1 as f32, c2 as f32);
        for ((tensor, m), v) in params
            .tensors_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let grad = tensor
                .take_grad()
                .ok_or_else(|| Error::Shape("parameter tensor has no gradient".into()))?;
            for (((p, g), mi), vi) in tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let update = (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *p -= lr * update;
            }
        }
        Ok(())
    }
}

/// Patience-based stopping on a monitored loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Stale,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Stale
            }
        }
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub stale_epochs: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_f1,stale_epochs\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                r.epoch, r.train_loss, r.val_loss, r.val_f1, r.stale_epochs
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParameters<f32>,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub val_pairs: Vec<Pair>,
}

/// Train a fresh model on the train partition, monitoring validation loss.
pub fn train<S: InputSource + ?Sized>(
    source: &S,
    split: &SplitManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = ModelParameters::<f32>::init(cfg.model, cfg.seed)?;
    train_from(source, split, cfg, params)
}

/// Same as [`train`], starting from the given parameters.
pub fn train_from<S: InputSource + ?Sized>(
    source: &S,
    split: &SplitManifest,
    cfg: &TrainConfig,
    mut params: ModelParameters<f32>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    check_source(&params.config, source)?;
    let train_groups = split.groups(Partition::Train);
    let n_train = split.count(Partition::Train);
    let n_val = split.count(Partition::Validation);
    if n_train == 0 || n_val == 0 {
        return Err(Error::Split(format!(
            "training needs non-empty train and validation partitions (got {n_train} and {n_val})"
        )));
    }
    for (id, _, part) in &split.rows {
        if *part != Partition::Test && !source.contains(id) {
            return Err(Error::UnknownId(id.clone()));
        }
    }

    let pairs_per_epoch = cfg
        .pairs_per_epoch
        .unwrap_or_else(|| TrainConfig::default_pairs_for(&train_groups, cfg.pos_ratio));
    let val_pairs = sample_pairs(
        split,
        Partition::Validation,
        Scope::All,
        cfg.val_pairs
            .unwrap_or_else(|| {
                TrainConfig::default_pairs_for(&split.groups(Partition::Validation), cfg.pos_ratio)
            }),
        cfg.pos_ratio,
        seed::derive_seed(cfg.seed, "validation"),
    )?;

    let threads = std::thread::available_parallelism().map_or(1, usize::from);
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.adam);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.max_epochs {
        let e = epoch as u64;
        let mut pair_rng = seed::rng_for_indexed(cfg.seed, "train-pairs", e);
        let pairs =
            sample_pairs_from(&train_groups, pairs_per_epoch, cfg.pos_ratio, &mut pair_rng)?;
        let mut aug_rng = seed::rng_for_indexed(cfg.seed, "augment", e);
        let drop_seed = seed::derive_seed_indexed(cfg.seed, "dropout", e);

        let mut loss_sum = 0.0;
        let mut shard_index = 0u64;
        for (b, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            let mut shards = Vec::new();
            for part in batch.chunks(SHARD_PAIRS) {
                let ids: Vec<&str> = part
                    .iter()
                    .map(|p| p.id_a.as_str())
                    .chain(part.iter().map(|p| p.id_b.as_str()))
                    .collect();
                shards.push(Shard {
                    input: batch_tensor(source, &ids, Some(&mut aug_rng))?,
                    labels: part.iter().map(|p| p.label).collect(),
                    rng: seed::rng_for_indexed(drop_seed, "shard", shard_index),
                });
                shard_index += 1;
            }
            let (value, grads) = batch_gradient(&params, shards, &cfg.loss, threads)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss is {value} at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += value * batch.len() as f64;
            for (t, g) in params.tensors_mut().zip(grads) {
                t.set_grad(g)?;
            }
            adam.step(&mut params)?;
        }
        let train_loss = loss_sum / pairs.len() as f64;

        let (val_loss, val_report) = validation_metrics(&params, source, &val_pairs, &cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss is {val_loss} at epoch {epoch}"
            )));
        }
        let decision = stopper.update(epoch, val_loss);
        if decision == StopDecision::Improved {
            best = params.clone();
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_f1: val_report.f1,
            stale_epochs: stopper.stale_epochs(),
        };
        info!(
            "epoch {epoch}: train_loss={train_loss:.5} val_loss={val_loss:.5} val_f1={:.4} stale={}",
            val_report.f1,
            stopper.stale_epochs()
        );
        log.epochs.push(record);
        if decision == StopDecision::Stop {
            info!(
                "early stop after epoch {epoch}; best epoch {}",
                stopper.best_epoch().unwrap_or(0)
            );
            break;
        }
    }

    Ok(TrainOutcome {
        params: best,
        log,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        val_pairs,
    })
}

/// Pairs per gradient shard. The shards of a batch may run on separate
/// threads; they are reduced in index order, so the result does not depend
/// on the thread count.
const SHARD_PAIRS: usize = 8;

struct Shard {
    input: Tensor<f32>,
    labels: Vec<PairLabel>,
    rng: Rng,
}

/// Mean loss of one shard and the gradient of every parameter tensor.
fn shard_gradient(
    params: &ModelParameters<f32>,
    shard: Shard,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let Shard {
        input,
        labels,
        mut rng,
    } = shard;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(input);
    let emb = params.forward(&mut tape, &bound, x, Mode::Train, &mut rng)?;
    let loss = tape.contrastive_loss(emb, &labels, loss_cfg)?;
    let value = f64::from(tape.value(loss).data()[0]);
    tape.backward(loss)?;
    let grads = bound
        .all()
        .map(|v| {
            let mut t = tape.take(v);
            t.take_grad().unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    Ok((value, grads))
}

/// Mean loss and gradient over all shards of a batch, each shard weighted
/// by its pair count.
fn batch_gradient(
    params: &ModelParameters<f32>,
    shards: Vec<Shard>,
    loss_cfg: &LossConfig,
    threads: usize,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let sizes: Vec<usize> = shards.iter().map(|s| s.labels.len()).collect();
    let total: usize = sizes.iter().sum();
    let threads = threads.clamp(1, shards.len().max(1));
    let results: Vec<Result<(f64, Vec<Vec<f32>>)>> = if threads == 1 {
        shards
            .into_iter()
            .map(|s| shard_gradient(params, s, loss_cfg))
            .collect()
    } else {
        let per_thread = shards.len().div_ceil(threads);
        let mut groups: Vec<Vec<Shard>> = Vec::new();
        let mut rest = shards.into_iter().peekable();
        while rest.peek().is_some() {
            groups.push(rest.by_ref().take(per_thread).collect());
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = groups
                .into_iter()
                .map(|g| {
                    scope.spawn(move || {
                        g.into_iter()
                            .map(|s| shard_gradient(params, s, loss_cfg))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };

    let mut loss = 0.0;
    let mut grads: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
    for (result, n) in results.into_iter().zip(sizes) {
        let (value, shard_grads) = result?;
        let w = n as f64 / total as f64;
        loss += w * value;
        for (acc, g) in grads.iter_mut().zip(shard_grads) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += w as f32 * x;
            }
        }
    }
    Ok((loss, grads))
}

/// Inference-mode embeddings for each distinct id, computed in batches.
pub fn embed_ids<'a, S: InputSource + ?Sized>(
    model: &ModelParameters<f32>,
    source: &S,
    ids: impl IntoIterator<Item = &'a str>,
) -> Result<HashMap<String, Vec<f32>>> {
    check_source(&model.config, source)?;
    let mut unique: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if seen.insert(id) {
            unique.push(id);
        }
    }
    let mut out = HashMap::with_capacity(unique.len());
    for chunk in unique.chunks(INFER_BATCH) {
        let input = batch_tensor(source, chunk, None)?;
        let emb = model.embed(&input)?;
        for (id, e) in chunk.iter().zip(emb) {
            out.insert((*id).to_string(), e.values().to_vec());
        }
    }
    Ok(out)
}

/// Similarity scores for `pairs` under `model` (inference mode).
pub fn score_pairs<S: InputSource + ?Sized>(
    model: &ModelParameters<f32>,
    source: &S,
    pairs: &[Pair],
) -> Result<Vec<f64>> {
    for p in pairs {
        for id in [&p.id_a, &p.id_b] {
            if !source.contains(id) {
                return Err(Error::UnknownId(id.clone()));
            }
        }
    }
    let emb = embed_ids(
        model,
        source,
        pairs
            .iter()
            .flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()]),
    )?;
    pairs
        .iter()
        .map(|p| {
            let d = energy_slices(&emb[&p.id_a], &emb[&p.id_b])?;
            similarity_score(d, model.config.normalize)
        })
        .collect()
}

fn validation_metrics<S: InputSource + ?Sized>(
    model: &ModelParameters<f32>,
    source: &S,
    pairs: &[Pair],
    loss_cfg: &LossConfig,
) -> Result<(f64, MetricsReport)> {
    let emb = embed_ids(
        model,
        source,
        pairs
            .iter()
            .flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()]),
    )?;
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        let d = energy_slices(&emb[&p.id_a], &emb[&p.id_b])?;
        total += loss::contrastive_loss(d, p.label, loss_cfg)?;
        scores.push(similarity_score(d, model.config.normalize)?);
    }
    let labels: Vec<PairLabel> = pairs.iter().map(|p| p.label).collect();
    let report = metrics::evaluate_scores(&labels, &scores, DEFAULT_THRESHOLD)?;
    Ok((total / pairs.len() as f64, report))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub scores: Vec<f64>,
}

/// Score `pairs` and summarize at `threshold`.
pub fn evaluate_model<S: InputSource + ?Sized>(
    model: &ModelParameters<f32>,
    source: &S,
    pairs: &[Pair],
    threshold: f64,
) -> Result<Evaluation> {
    let scores = score_pairs(model, source, pairs)?;
    let labels: Vec<PairLabel> = pairs.iter().map(|p| p.label).collect();
    let report = metrics::evaluate_scores(&labels, &scores, threshold)?;
    Ok(Evaluation { report, scores })
}

#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub scope: Scope,
    pub species: usize,
    pub pairs: Vec<Pair>,
    pub evaluation: Evaluation,
}

impl ProtocolResult {
    pub fn label(&self) -> String {
        match self.scope {
            Scope::Unseen => format!("{} species (Zero-Shot)", self.species),
            Scope::All => format!("{} species (ALL)", self.species),
            Scope::Seen => format!("{} species", self.species),
        }
    }
}

/// Balanced test pairs for one scope of the test partition.
pub fn protocol_pairs(
    split: &SplitManifest,
    scope: Scope,
    n_pairs: usize,
    pos_ratio: f64,
    seed: u64,
) -> Result<Vec<Pair>> {
    let groups = crate::data::scoped_groups(split, Partition::Test, scope);
    if groups.len() < 2 {
        return Err(Error::Sampling(format!(
            "{scope} scope of the test partition has {} species; at least 2 are needed",
            groups.len()
        )));
    }
    sample_pairs(split, Partition::Test, scope, n_pairs, pos_ratio, seed)
}

/// Conventional zero-shot (unseen), generalized (all) and seen-only
/// evaluation on the test partition, in that order.
pub fn evaluate_protocols<S: InputSource + ?Sized>(
    model: &ModelParameters<f32>,
    source: &S,
    split: &SplitManifest,
    n_pairs: usize,
    pos_ratio: f64,
    threshold: f64,
    seed: u64,
) -> Result<Vec<ProtocolResult>> {
    if split.unseen_species().is_empty() {
        return Err(Error::Split("split has no unseen species".into()));
    }
    [Scope::Unseen, Scope::All, Scope::Seen]
        .into_iter()
        .map(|scope| {
            let pairs = protocol_pairs(split, scope, n_pairs, pos_ratio, seed)?;
            let evaluation = evaluate_model(model, source, &pairs, threshold)?;
            let species = crate::data::scoped_groups(split, Partition::Test, scope).len();
            Ok(ProtocolResult {
                scope,
                species,
                pairs,
                evaluation,
            })
        })
        .collect()
}

/// Per-species test members, for the pair-F1 matrix.
pub fn test_groups(split: &SplitManifest) -> BTreeMap<String, Vec<String>> {
    split.groups(Partition::Test)
}

#[cfg(test)]
mod tests;
