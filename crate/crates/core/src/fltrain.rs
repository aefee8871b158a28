//! A small federated trainer on a synthetic convex task.
//!
//! Each cluster trains a multinomial logistic-regression model with FedAvg,
//! where every round's average goes through [`crate::secagg`]. Inference
//! takes a majority vote over the cluster models.
//!
//! All randomness a user consumes in a round comes from a stream derived
//! from `(master seed, user, round)`. Dropping a user from a cluster
//! therefore leaves every other user's computation untouched, and retraining
//! without the user is bit-for-bit the same computation as training the
//! reduced cluster from scratch.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::shamir_threshold;
use crate::cohort::ClusterAssignment;
use crate::crypto::{CryptoError, Quantizer};
use crate::rng::{derive_key, derive_rng, derive_unit};
use crate::secagg::{run_round, RoundConfig, SecaggError};
use crate::topology::{communication_graph, HararyGraph};
use crate::{ClusterId, UserId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("local training diverged (non-finite loss {0})")]
    DivergenceError(f64),
    #[error("cluster has {0} members left; at least 2 are needed to train")]
    DegenerateCluster(usize),
    #[error("dataset and model disagree: {0}")]
    Shape(String),
    #[error(transparent)]
    Secagg(#[from] SecaggError),
}

impl From<CryptoError> for TrainError {
    fn from(e: CryptoError) -> Self {
        TrainError::Secagg(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Concatenation of several datasets.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a LocalDataset>) -> LocalDataset {
        let mut out = LocalDataset::default();
        for p in parts {
            out.features.extend(p.features.iter().cloned());
            out.labels.extend(&p.labels);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub n_users: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub samples_per_user: usize,
    pub test_samples: usize,
    /// Distance between any two class means.
    pub separation: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec { n_users: 60, dim: 10, n_classes: 2, samples_per_user: 20, test_samples: 2000, separation: 4.0 }
    }
}

/// Per-user training sets plus a shared held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub users: Vec<LocalDataset>,
    pub test: LocalDataset,
}

/// Mean of class `c`: `separation/√2` along axis `c mod dim`, so that any two
/// means are `separation` apart when `n_classes ≤ dim`.
fn class_mean(spec: &TaskSpec, c: usize) -> Vec<f64> {
    let mut m = vec![0.0; spec.dim];
    m[c % spec.dim] = spec.separation / std::f64::consts::SQRT_2;
    m
}

fn draw_samples<R: Rng + ?Sized>(spec: &TaskSpec, n: usize, rng: &mut R) -> LocalDataset {
    let means: Vec<Vec<f64>> = (0..spec.n_classes).map(|c| class_mean(spec, c)).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    labels.shuffle(rng);
    let features = labels
        .iter()
        .map(|&c| means[c].iter().map(|&mu| mu + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    LocalDataset { features, labels }
}

/// Gaussian class blobs with unit within-class variance, dealt IID across
/// users.
pub fn make_synthetic_task(spec: &TaskSpec, seed: u64) -> SyntheticTask {
    assert!(spec.n_users > 0 && spec.dim > 0 && spec.n_classes > 0, "task dimensions must be positive");
    let mut rng = derive_rng("fltrain/task", seed, &[]);
    let pooled = draw_samples(spec, spec.n_users * spec.samples_per_user, &mut rng);
    let users = (0..spec.n_users)
        .map(|u| {
            let range = u * spec.samples_per_user..(u + 1) * spec.samples_per_user;
            LocalDataset { features: pooled.features[range.clone()].to_vec(), labels: pooled.labels[range].to_vec() }
        })
        .collect();
    let test = draw_samples(spec, spec.test_samples, &mut rng);
    SyntheticTask { spec: *spec, users, test }
}

/// Linear classifier `argmax_c (W_c · x + b_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub round: u64,
}

impl GlobalModel {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        GlobalModel { weights: vec![vec![0.0; dim]; n_classes], bias: vec![0.0; n_classes], round: 0 }
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn n_params(&self) -> usize {
        self.n_classes() * (self.dim() + 1)
    }

    /// Parameters as `[W row 0, …, W row C−1, b]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(&self.bias).copied().collect()
    }

    /// Adds a flat parameter delta in the layout of [`GlobalModel::to_flat`].
    pub fn apply_delta(&mut self, delta: &[f64]) {
        let d = self.dim();
        for (c, row) in self.weights.iter_mut().enumerate() {
            row.iter_mut().zip(&delta[c * d..(c + 1) * d]).for_each(|(w, g)| *w += g);
        }
        let off = self.n_classes() * d;
        self.bias.iter_mut().zip(&delta[off..]).for_each(|(b, g)| *b += g);
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, x) + b).collect()
    }

    /// Class with the largest logit; ties go to the smallest class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    fn check(&self, data: &LocalDataset) -> Result<(), TrainError> {
        if let Some(x) = data.features.iter().find(|x| x.len() != self.dim()) {
            return Err(TrainError::Shape(format!("feature length {} vs model dim {}", x.len(), self.dim())));
        }
        if let Some(&y) = data.labels.iter().find(|&&y| y >= self.n_classes()) {
            return Err(TrainError::Shape(format!("label {y} outside {} classes", self.n_classes())));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax probabilities and cross-entropy of one sample.
fn softmax_ce(logits: &[f64], label: usize) -> (Vec<f64>, f64) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + m - logits[label];
    (exps.into_iter().map(|e| e / sum).collect(), loss)
}

/// Mean cross-entropy over `data` (0 for an empty set).
pub fn cross_entropy(model: &GlobalModel, data: &LocalDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let total: f64 = data.features.iter().zip(&data.labels).map(|(x, &y)| softmax_ce(&model.logits(x), y).1).sum();
    total / data.len() as f64
}

/// Regularized training objective: cross-entropy plus `l2/2 · ‖W‖²`.
pub fn objective(model: &GlobalModel, data: &LocalDataset, l2: f64) -> f64 {
    let reg: f64 = model.weights.iter().flatten().map(|w| w * w).sum();
    cross_entropy(model, data) + 0.5 * l2 * reg
}

pub fn accuracy(model: &GlobalModel, data: &LocalDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data.features.iter().zip(&data.labels).filter(|(x, &y)| model.predict(x) == y).count();
    hits as f64 / data.len() as f64
}

/// Majority vote of the models' predictions; ties go to the smallest class.
pub fn ensemble_predict(models: &[GlobalModel], x: &[f64]) -> usize {
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for m in models {
        *votes.entry(m.predict(x)).or_default() += 1;
    }
    let mut best = (0, 0);
    for (class, n) in votes {
        if n > best.1 {
            best = (class, n);
        }
    }
    best.0
}

pub fn ensemble_accuracy(models: &[GlobalModel], data: &LocalDataset) -> f64 {
    if data.is_empty() || models.is_empty() {
        return 0.0;
    }
    let hits = data.features.iter().zip(&data.labels).filter(|(x, &y)| ensemble_predict(models, x) == y).count();
    hits as f64 / data.len() as f64
}

/// Hyper-parameters of local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    /// Local epochs `E`.
    pub epochs: u32,
    pub lr: f64,
    /// Mini-batch size; 0 means full batch.
    pub batch_size: usize,
    pub l2: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig { epochs: 1, lr: 0.05, batch_size: 1, l2: 1e-3 }
    }
}

/// Flat gradient of the regularized objective on a batch.
fn batch_gradient(model: &GlobalModel, data: &LocalDataset, idx: &[usize], l2: f64) -> (Vec<f64>, f64) {
    let (c, d) = (model.n_classes(), model.dim());
    let mut g = vec![0.0; c * (d + 1)];
    let mut loss = 0.0;
    for &i in idx {
        let x = &data.features[i];
        let (p, l) = softmax_ce(&model.logits(x), data.labels[i]);
        loss += l;
        for (k, pk) in p.iter().enumerate() {
            let err = pk - if k == data.labels[i] { 1.0 } else { 0.0 };
            g[k * d..(k + 1) * d].iter_mut().zip(x).for_each(|(gk, xj)| *gk += err * xj);
            g[c * d + k] += err;
        }
    }
    let n = idx.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    for (k, row) in model.weights.iter().enumerate() {
        g[k * d..(k + 1) * d].iter_mut().zip(row).for_each(|(gk, w)| *gk += l2 * w);
    }
    (g, loss / n)
}

/// `E` epochs of mini-batch gradient descent from `model`; returns the
/// parameter delta `G_i`. Empty datasets yield a zero delta.
pub fn local_update<R: Rng + ?Sized>(
    model: &GlobalModel,
    data: &LocalDataset,
    cfg: &LocalConfig,
    rng: &mut R,
) -> Result<Vec<f64>, TrainError> {
    model.check(data)?;
    let start = model.to_flat();
    let mut m = model.clone();
    let batch = if cfg.batch_size == 0 { data.len() } else { cfg.batch_size };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(batch.max(1)) {
            let (g, loss) = batch_gradient(&m, data, idx, cfg.l2);
            if !loss.is_finite() {
                return Err(TrainError::DivergenceError(loss));
            }
            let step: Vec<f64> = g.iter().map(|v| -cfg.lr * v).collect();
            m.apply_delta(&step);
        }
    }
    let end = m.to_flat();
    if end.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::DivergenceError(f64::NAN));
    }
    Ok(end.iter().zip(&start).map(|(a, b)| a - b).collect())
}

/// Settings of federated training within clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub rounds: u64,
    pub local: LocalConfig,
    /// Shamir rate `ξ`; each round uses `t = ⌈ξ·|cluster|⌉`.
    pub xi: f64,
    /// Probability that a user drops out of a given round.
    pub dropout_rate: f64,
    pub master_seed: u64,
    pub scale_bits: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 30,
            local: LocalConfig::default(),
            xi: 0.7,
            dropout_rate: 0.0,
            master_seed: 0,
            scale_bits: crate::crypto::DEFAULT_SCALE_BITS,
        }
    }
}

impl TrainConfig {
    /// Whether `user` drops out of round `round`.
    pub fn drops(&self, user: UserId, round: u64) -> bool {
        self.dropout_rate > 0.0
            && derive_unit("fltrain/dropout", self.master_seed, &[user as u64, round]) < self.dropout_rate
    }

    fn nonce(&self, round: u64) -> u128 {
        let key = derive_key("fltrain/nonce", self.master_seed, &[round]);
        u128::from_le_bytes(key[..16].try_into().expect("16 bytes"))
    }
}

/// One cluster's view of one FedAvg round.
#[derive(Debug, Clone, Copy)]
pub struct ClusterRound<'a> {
    pub cluster_id: ClusterId,
    /// Ring order; matches the vertices of `graph`.
    pub members: &'a [UserId],
    pub graph: &'a HararyGraph,
    pub t: usize,
    pub dropouts: &'a BTreeSet<UserId>,
    pub round: u64,
}

/// One FedAvg round through secure aggregation.
///
/// Every alive member uploads its quantized delta; the server dequantizes
/// the aggregate and divides by the number of alive members holding data,
/// so a member without data contributes neither to the sum nor to the
/// weights.
pub fn cluster_round(
    model: &GlobalModel,
    r: &ClusterRound<'_>,
    datasets: &[LocalDataset],
    cfg: &TrainConfig,
) -> Result<GlobalModel, TrainError> {
    let q = Quantizer::with_scale_bits(cfg.scale_bits);
    let dataset = |u: UserId| datasets.get(u).ok_or_else(|| TrainError::Shape(format!("no dataset for user {u}")));
    let mut inputs = BTreeMap::new();
    let mut contributors = 0usize;
    for &u in r.members.iter().filter(|u| !r.dropouts.contains(u)) {
        let data = dataset(u)?;
        let mut rng = derive_rng("fltrain/local", cfg.master_seed, &[u as u64, r.round]);
        let delta = local_update(model, data, &cfg.local, &mut rng)?;
        contributors += usize::from(!data.is_empty());
        inputs.insert(u, q.quantize(&delta)?);
    }
    let round_cfg = RoundConfig { cluster_id: r.cluster_id, t: r.t, nonce: cfg.nonce(r.round), ..Default::default() };
    let tr = run_round(r.members, r.graph, &inputs, r.dropouts, &round_cfg)?;
    let mut next = model.clone();
    if contributors > 0 {
        let sum = q.dequantize(tr.aggregate.as_deref().unwrap_or_default());
        let avg: Vec<f64> = sum.iter().map(|v| v / contributors as f64).collect();
        next.apply_delta(&avg);
    }
    next.round = model.round + 1;
    Ok(next)
}

/// Plaintext FedAvg of the same round, used as an oracle for
/// [`cluster_round`].
pub fn plaintext_round(
    model: &GlobalModel,
    r: &ClusterRound<'_>,
    datasets: &[LocalDataset],
    cfg: &TrainConfig,
) -> Result<GlobalModel, TrainError> {
    let mut sum = vec![0.0; model.n_params()];
    let mut contributors = 0usize;
    for &u in r.members.iter().filter(|u| !r.dropouts.contains(u)) {
        let mut rng = derive_rng("fltrain/local", cfg.master_seed, &[u as u64, r.round]);
        let delta = local_update(model, &datasets[u], &cfg.local, &mut rng)?;
        contributors += usize::from(!datasets[u].is_empty());
        sum.iter_mut().zip(&delta).for_each(|(s, d)| *s += d);
    }
    let mut next = model.clone();
    if contributors > 0 {
        next.apply_delta(&sum.iter().map(|v| v / contributors as f64).collect::<Vec<_>>());
    }
    next.round = model.round + 1;
    Ok(next)
}

/// Per-round state of a cluster's training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrainer<'a> {
    pub cluster_id: ClusterId,
    members: Vec<UserId>,
    graph: HararyGraph,
    t: usize,
    datasets: &'a [LocalDataset],
    cfg: TrainConfig,
    pub model: GlobalModel,
    /// Rounds skipped because fewer than `t` members were alive.
    pub skipped_rounds: Vec<u64>,
}

impl<'a> ClusterTrainer<'a> {
    pub fn new(
        cluster_id: ClusterId,
        members: &[UserId],
        datasets: &'a [LocalDataset],
        cfg: &TrainConfig,
    ) -> Result<Self, TrainError> {
        if members.len() < 2 {
            return Err(TrainError::DegenerateCluster(members.len()));
        }
        let first = members[0];
        let data = datasets.get(first).ok_or_else(|| TrainError::Shape(format!("no dataset for user {first}")))?;
        let dim = data.features.first().map_or(0, Vec::len);
        let n_classes = datasets.iter().flat_map(|d| d.labels.iter()).max().map_or(1, |&m| m + 1);
        let k = members.len() as u64;
        let t = (shamir_threshold(k, cfg.xi) as usize).clamp(1, members.len());
        Ok(ClusterTrainer {
            cluster_id,
            members: members.to_vec(),
            graph: communication_graph(members.len()),
            t,
            datasets,
            cfg: *cfg,
            model: GlobalModel::zeros(n_classes, dim),
            skipped_rounds: Vec::new(),
        })
    }

    /// Starts from an explicit initial model instead of zeros.
    pub fn with_model(mut self, model: GlobalModel) -> Self {
        self.model = model;
        self
    }

    pub fn members(&self) -> &[UserId] {
        &self.members
    }

    /// Runs the next round. A round with fewer than `t` alive members is
    /// skipped and leaves the model unchanged.
    pub fn step(&mut self) -> Result<(), TrainError> {
        let round = self.model.round;
        let dropouts: BTreeSet<UserId> = self.members.iter().copied().filter(|&u| self.cfg.drops(u, round)).collect();
        let r = ClusterRound {
            cluster_id: self.cluster_id,
            members: &self.members,
            graph: &self.graph,
            t: self.t,
            dropouts: &dropouts,
            round,
        };
        match cluster_round(&self.model, &r, self.datasets, &self.cfg) {
            Ok(m) => self.model = m,
            Err(TrainError::Secagg(SecaggError::ReconstructionFailure { .. })) => {
                self.skipped_rounds.push(round);
                self.model.round += 1;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// The members' pooled training data.
    pub fn training_data(&self) -> LocalDataset {
        LocalDataset::pooled(self.members.iter().map(|&u| &self.datasets[u]))
    }
}

/// Model and per-round training loss of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedCluster {
    pub model: GlobalModel,
    /// Cross-entropy on the members' pooled data after each round.
    pub train_loss: Vec<f64>,
    pub skipped_rounds: Vec<u64>,
}

/// Trains a cluster from scratch for `cfg.rounds` rounds.
pub fn train_cluster(
    cluster_id: ClusterId,
    members: &[UserId],
    datasets: &[LocalDataset],
    cfg: &TrainConfig,
) -> Result<TrainedCluster, TrainError> {
    let mut tr = ClusterTrainer::new(cluster_id, members, datasets, cfg)?;
    let pooled = tr.training_data();
    let mut train_loss = Vec::with_capacity(cfg.rounds as usize);
    for _ in 0..cfg.rounds {
        tr.step()?;
        train_loss.push(cross_entropy(&tr.model, &pooled));
    }
    Ok(TrainedCluster { model: tr.model, train_loss, skipped_rounds: tr.skipped_rounds })
}

/// Retraining from scratch without the unlearned members.
pub fn retrain_cluster(
    cluster_id: ClusterId,
    members: &[UserId],
    unlearned: &BTreeSet<UserId>,
    datasets: &[LocalDataset],
    cfg: &TrainConfig,
) -> Result<GlobalModel, TrainError> {
    let remaining: Vec<UserId> = members.iter().copied().filter(|u| !unlearned.contains(u)).collect();
    if remaining.len() < 2 {
        return Err(TrainError::DegenerateCluster(remaining.len()));
    }
    Ok(train_cluster(cluster_id, &remaining, datasets, cfg)?.model)
}

/// One row of the training metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub round: u64,
    pub cluster_id: ClusterId,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub ensemble_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedRun {
    pub models: Vec<GlobalModel>,
    pub metrics: Vec<MetricRow>,
}

/// Trains every cluster of `assignment` side by side, recording per-round
/// metrics. Clusters run in parallel; results do not depend on scheduling.
pub fn train_federation(
    assignment: &ClusterAssignment,
    task: &SyntheticTask,
    cfg: &TrainConfig,
) -> Result<FederatedRun, TrainError> {
    let mut trainers: Vec<ClusterTrainer<'_>> =
        assignment.clusters().map(|(c, m)| ClusterTrainer::new(c, m, &task.users, cfg)).collect::<Result<_, _>>()?;
    let pooled: Vec<LocalDataset> = trainers.iter().map(ClusterTrainer::training_data).collect();
    let mut metrics = Vec::new();
    for round in 1..=cfg.rounds {
        trainers.par_iter_mut().map(ClusterTrainer::step).collect::<Result<Vec<()>, _>>()?;
        let models: Vec<GlobalModel> = trainers.iter().map(|t| t.model.clone()).collect();
        let ens = ensemble_accuracy(&models, &task.test);
        let rows: Vec<MetricRow> = trainers
            .par_iter()
            .zip(&pooled)
            .map(|(t, data)| MetricRow {
                round,
                cluster_id: t.cluster_id,
                train_loss: cross_entropy(&t.model, data),
                test_accuracy: accuracy(&t.model, &task.test),
                ensemble_accuracy: ens,
            })
            .collect();
        metrics.extend(rows);
    }
    Ok(FederatedRun { models: trainers.into_iter().map(|t| t.model).collect(), metrics })
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], w: &mut W) -> io::Result<()> {
    writeln!(w, "round,cluster_id,train_loss,test_accuracy,ensemble_accuracy")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.4},{:.4}",
            r.round, r.cluster_id, r.train_loss, r.test_accuracy, r.ensemble_accuracy
        )?;
    }
    Ok(())
}
