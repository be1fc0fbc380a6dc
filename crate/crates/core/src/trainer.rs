//! Training loops: the alternating boost/rectify schedule, the joint
//! concatenation baseline and uni-modal training.
//!
//! One round of boosting picks a modality `k`, trains only learner `k` on the
//! stage loss against the frozen rest for `T1` epochs, then runs `T2` epochs
//! of joint SGD on the ensemble cross-entropy (global rectification). All
//! methods draw their minibatch order from a [`BatchSchedule`]: epoch `e` of a
//! run seeded with `s` always visits samples in the same order, so methods
//! compared under one seed see identical batches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::MultiModalDataset;
use crate::ensemble::{dataset_inputs, BoostEnsemble, ModalityLearner, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::evalkit::logits_accuracy;
use crate::netcore::Gradients;
use crate::numkit::{softmax_rows, Matrix, RandomStream};
use crate::objective::{
    ce_grad_logits, ce_loss, grs_loss, one_hot, stage_grad_logits, stage_loss, StageLossBreakdown,
};

const TAG_SHUFFLE: u64 = 20_000;

/// Rule for picking the learner of the next boosting stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    RoundRobin,
    /// Lowest current loss first.
    S1,
    /// Highest current loss first.
    S2,
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round_robin" => Ok(Self::RoundRobin),
            "s1" => Ok(Self::S1),
            "s2" => Ok(Self::S2),
            other => Err(Error::Config(format!(
                "unknown selection `{other}` (expected round_robin, s1 or s2)"
            ))),
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RoundRobin => "round_robin",
            Self::S1 => "s1",
            Self::S2 => "s2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub alpha: f64,
    /// Boosting-stage learning rate γ; also used by the baselines.
    pub stage_lr: f64,
    /// Rectification learning rate η.
    pub grs_lr: f64,
    /// Epochs per boosting stage.
    pub t1: usize,
    /// Epochs per rectification stage.
    pub t2: usize,
    pub cycles: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub selection: Selection,
    pub clip_norm: Option<f64>,
    /// Rounds without held-out improvement before stopping. Needs a held-out
    /// split to take effect.
    pub early_stop_patience: Option<usize>,
    pub hidden: Vec<usize>,
    /// Epoch budget of the concat and uni-modal baselines; `None` means
    /// `cycles · (T1 + T2)`.
    pub baseline_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0 / 3.0,
            alpha: 0.1,
            stage_lr: 1e-2,
            grs_lr: 1e-2,
            t1: 4,
            t2: 4,
            cycles: 30,
            batch_size: 64,
            seed: 0,
            selection: Selection::RoundRobin,
            clip_norm: None,
            early_stop_patience: Some(10),
            hidden: DEFAULT_HIDDEN.to_vec(),
            baseline_epochs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.stage_lr > 0.0 && self.stage_lr.is_finite()) {
            return bad(format!("stage_lr must be > 0, got {}", self.stage_lr));
        }
        if !(self.grs_lr > 0.0 && self.grs_lr.is_finite()) {
            return bad(format!("grs_lr must be > 0, got {}", self.grs_lr));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.cycles == 0 {
            return bad("cycles must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be >= 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be >= 1".into());
        }
        Ok(())
    }

    pub fn baseline_epoch_budget(&self) -> usize {
        self.baseline_epochs.unwrap_or(self.cycles * (self.t1 + self.t2))
    }
}

/// Deterministic minibatch order: epoch `e` is a permutation drawn from a
/// stream derived from `(seed, e)` alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSchedule {
    seed: u64,
    epoch: u64,
}

impl BatchSchedule {
    pub fn new(seed: u64) -> Self {
        Self { seed, epoch: 0 }
    }

    /// Epochs handed out so far.
    pub fn epochs(&self) -> u64 {
        self.epoch
    }

    pub fn next_epoch(&mut self, n: usize) -> Vec<usize> {
        let order = RandomStream::new(self.seed)
            .child(TAG_SHUFFLE + self.epoch)
            .permutation(n);
        self.epoch += 1;
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Boost,
    Grs,
    Joint,
    Unimodal,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Boost => "boost",
            Self::Grs => "grs",
            Self::Joint => "joint",
            Self::Unimodal => "unimodal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub cycle: usize,
    pub round: usize,
    pub kind: StageKind,
    /// The trained modality; `None` for stages updating every learner.
    pub modality: Option<usize>,
    /// One entry per minibatch.
    pub batch_losses: Vec<StageLossBreakdown>,
    /// Mean of the minibatch entries of each epoch.
    pub epoch_losses: Vec<StageLossBreakdown>,
    /// Per epoch, the mean encoder-gradient norm of each learner over the
    /// epoch's minibatches. Recorded by stages that update every learner.
    pub grad_norms: Vec<Vec<f64>>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    /// Accuracy of each learner's logits alone.
    pub modality_train_acc: Vec<f64>,
    pub modality_test_acc: Vec<f64>,
}

impl StageRecord {
    fn new(cycle: usize, round: usize, kind: StageKind, modality: Option<usize>) -> Self {
        Self {
            cycle,
            round,
            kind,
            modality,
            batch_losses: Vec::new(),
            epoch_losses: Vec::new(),
            grad_norms: Vec::new(),
            train_acc: None,
            test_acc: None,
            modality_train_acc: Vec::new(),
            modality_test_acc: Vec::new(),
        }
    }

    fn close_epoch(&mut self, first_batch: usize) {
        if let Some(mean) = StageLossBreakdown::mean(&self.batch_losses[first_batch..]) {
            self.epoch_losses.push(mean);
        }
    }

    /// Fills the accuracy fields from the current ensemble.
    pub fn evaluate(
        &mut self,
        ens: &BoostEnsemble,
        train: &MultiModalDataset,
        test: Option<&MultiModalDataset>,
    ) -> Result<()> {
        let (acc, per) = ensemble_accuracies(ens, train)?;
        self.train_acc = Some(acc);
        self.modality_train_acc = per;
        if let Some(test) = test {
            let (acc, per) = ensemble_accuracies(ens, test)?;
            self.test_acc = Some(acc);
            self.modality_test_acc = per;
        }
        Ok(())
    }
}

/// Accuracy of `Φ_M` and of every learner alone.
pub fn ensemble_accuracies(ens: &BoostEnsemble, data: &MultiModalDataset) -> Result<(f64, Vec<f64>)> {
    let per = ens.all_learner_logits(&dataset_inputs(data))?;
    let overall = logits_accuracy(&ens.combine(&per)?, data.labels())?;
    let each = per
        .iter()
        .map(|l| logits_accuracy(l, data.labels()))
        .collect::<Result<Vec<_>>>()?;
    Ok((overall, each))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub stages: Vec<StageRecord>,
    /// Modality chosen by each boosting stage, in order.
    pub modality_sequence: Vec<usize>,
    pub stopped_early: bool,
    pub epochs_run: u64,
}

impl TrainReport {
    fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            stages: Vec::new(),
            modality_sequence: Vec::new(),
            stopped_early: false,
            epochs_run: 0,
        }
    }

    /// Test accuracy of the last evaluated stage.
    pub fn final_test_acc(&self) -> Option<f64> {
        self.stages.iter().rev().find_map(|s| s.test_acc)
    }

    pub fn final_train_acc(&self) -> Option<f64> {
        self.stages.iter().rev().find_map(|s| s.train_acc)
    }
}

/// Index of the learner to boost next; ties go to the lowest index.
pub fn select_next_modality(strategy: Selection, losses: &[f64], round: usize) -> Result<usize> {
    if losses.is_empty() {
        return Err(Error::invalid("selection needs one loss per modality"));
    }
    let pick = |better: fn(f64, f64) -> bool| {
        let mut best = 0;
        for (k, &l) in losses.iter().enumerate().skip(1) {
            if better(l, losses[best]) {
                best = k;
            }
        }
        best
    };
    Ok(match strategy {
        Selection::RoundRobin => round % losses.len(),
        Selection::S1 => pick(|a, b| a < b),
        Selection::S2 => pick(|a, b| a > b),
    })
}

fn check_data(ens: &BoostEnsemble, data: &MultiModalDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    if data.num_modalities() != ens.num_learners() {
        return Err(Error::invalid(format!(
            "dataset has {} modalities, ensemble has {} learners",
            data.num_modalities(),
            ens.num_learners()
        )));
    }
    if data.num_classes() != ens.num_classes() {
        return Err(Error::invalid("dataset and ensemble disagree on the number of classes"));
    }
    Ok(())
}

fn failure(record: &StageRecord, epoch: usize, batch: usize, detail: String) -> Error {
    let modality = record
        .modality
        .map_or_else(|| "all".to_string(), |k| k.to_string());
    Error::NumericalFailure(format!(
        "{} stage (cycle {}, round {}, modality {modality}) epoch {epoch} batch {batch}: {detail}",
        record.kind, record.cycle, record.round
    ))
}

/// Trains learner `k` alone for `T1` epochs on the stage loss against the
/// frozen leave-one-out score, then snapshots its training-set probabilities
/// as the next stage's MCR reference.
pub fn run_boost_stage(
    ens: &mut BoostEnsemble,
    k: usize,
    train: &MultiModalDataset,
    cfg: &TrainConfig,
    schedule: &mut BatchSchedule,
) -> Result<StageRecord> {
    ens.learner(k)?;
    check_data(ens, train)?;
    let mut record = StageRecord::new(ens.round / ens.num_learners(), ens.round, StageKind::Boost, Some(k));
    if cfg.t1 == 0 {
        return Ok(record);
    }
    let inputs = dataset_inputs(train);
    let y_dim = ens.num_classes();
    let mut per = Vec::with_capacity(ens.num_learners());
    for j in 0..ens.num_learners() {
        per.push(if j == k {
            Matrix::zeros(train.len(), y_dim)
        } else {
            ens.learner_logits(j, inputs[j])?
        });
    }
    let rest = ens.combine_without(&per, k)?;
    drop(per);
    let prev = match ens.prev_updated {
        Some(p) => {
            let learner = ens.learner(p)?;
            Some(match &learner.frozen_probs {
                Some(probs) if probs.rows() == train.len() => probs.clone(),
                _ => softmax_rows(&learner.net.predict_logits(inputs[p])?)?,
            })
        }
        None => None,
    };
    let targets: Vec<Vec<f64>> = train.labels().iter().map(|&y| one_hot(y, y_dim)).collect();
    let features = inputs[k];
    let net = &mut ens.learner_mut(k)?.net;

    for epoch in 0..cfg.t1 {
        let order = schedule.next_epoch(train.len());
        let first = record.batch_losses.len();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = features.select_rows(idx);
            let (logits, cache) = net.forward(&x)?;
            let mut dlogits = Matrix::zeros(idx.len(), y_dim);
            let mut losses = Vec::with_capacity(idx.len());
            for (r, &i) in idx.iter().enumerate() {
                let z = logits.row(r);
                let p = prev.as_ref().map(|m| m.row(i));
                let y = &targets[i];
                let bd = stage_loss(z, rest.row(i), p, y, cfg.lambda, cfg.alpha)
                    .map_err(|e| failure(&record, epoch, b, e.to_string()))?;
                losses.push(bd);
                let g = stage_grad_logits(z, rest.row(i), p, y, cfg.lambda, cfg.alpha)
                    .map_err(|e| failure(&record, epoch, b, e.to_string()))?;
                dlogits.row_mut(r).copy_from_slice(&g);
            }
            let mean = StageLossBreakdown::mean(&losses).expect("non-empty batch");
            if !mean.is_finite() {
                return Err(failure(&record, epoch, b, format!("non-finite loss {mean:?}")));
            }
            record.batch_losses.push(mean);
            let grads = net.backward(&cache, &dlogits)?;
            net.sgd_step(&grads, cfg.stage_lr, cfg.clip_norm)?;
        }
        record.close_epoch(first);
    }
    let probs = softmax_rows(&net.predict_logits(features)?)?;
    ens.learner_mut(k)?.frozen_probs = Some(probs);
    ens.prev_updated = Some(k);
    Ok(record)
}

/// Learners that share one classifier bias in the concatenation baseline:
/// only learner 0 keeps a trainable head bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadBias {
    PerLearner,
    Shared,
}

/// One epoch of joint SGD on the CE of `Φ_M`, updating every learner.
fn joint_epoch(
    ens: &mut BoostEnsemble,
    train: &MultiModalDataset,
    targets: &[Vec<f64>],
    order: &[usize],
    lr: f64,
    clip_norm: Option<f64>,
    batch_size: usize,
    bias: HeadBias,
    record: &mut StageRecord,
    epoch: usize,
) -> Result<()> {
    let inputs = dataset_inputs(train);
    let m = ens.num_learners();
    let y_dim = ens.num_classes();
    let weights = ens.fusion_weights().to_vec();
    let first = record.batch_losses.len();
    let mut norm_sums = vec![0.0; m];
    let mut batches = 0usize;
    for (b, idx) in order.chunks(batch_size).enumerate() {
        let mut logits = Vec::with_capacity(m);
        let mut caches = Vec::with_capacity(m);
        for (k, x) in inputs.iter().enumerate() {
            let (z, c) = ens.learners()[k].net.forward(&x.select_rows(idx))?;
            logits.push(z);
            caches.push(c);
        }
        let mut dlogits = vec![Matrix::zeros(idx.len(), y_dim); m];
        let mut total = 0.0;
        for (r, &i) in idx.iter().enumerate() {
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|k| logits[k].row(r).iter().map(|v| weights[k] * v).collect())
                .collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let g = grs_loss(&refs, &targets[i]).map_err(|e| failure(record, epoch, b, e.to_string()))?;
            total += g.loss;
            for (k, grad) in g.learner_grads.iter().enumerate() {
                for (d, v) in dlogits[k].row_mut(r).iter_mut().zip(grad) {
                    *d = weights[k] * v;
                }
            }
        }
        let loss = total / idx.len() as f64;
        if !loss.is_finite() {
            return Err(failure(record, epoch, b, format!("non-finite ensemble loss {loss}")));
        }
        record.batch_losses.push(StageLossBreakdown::plain(loss));
        for k in 0..m {
            let learner = &mut ens.learner_mut(k)?.net;
            let mut grads: Gradients = learner.backward(&caches[k], &dlogits[k])?;
            if bias == HeadBias::Shared && k > 0 {
                grads.layers.last_mut().expect("head layer").bias.iter_mut().for_each(|g| *g = 0.0);
            }
            norm_sums[k] += grads.encoder_norm();
            learner.sgd_step(&grads, lr, clip_norm)?;
        }
        batches += 1;
    }
    record.close_epoch(first);
    record
        .grad_norms
        .push(norm_sums.iter().map(|s| s / batches.max(1) as f64).collect());
    Ok(())
}

/// Global rectification: `T2` epochs of joint SGD on the ensemble CE with
/// learning rate η.
pub fn run_grs_stage(
    ens: &mut BoostEnsemble,
    train: &MultiModalDataset,
    cfg: &TrainConfig,
    schedule: &mut BatchSchedule,
) -> Result<StageRecord> {
    check_data(ens, train)?;
    let mut record = StageRecord::new(ens.round / ens.num_learners(), ens.round, StageKind::Grs, None);
    let targets: Vec<Vec<f64>> = train
        .labels()
        .iter()
        .map(|&y| one_hot(y, ens.num_classes()))
        .collect();
    for epoch in 0..cfg.t2 {
        let order = schedule.next_epoch(train.len());
        joint_epoch(
            ens,
            train,
            &targets,
            &order,
            cfg.grs_lr,
            cfg.clip_norm,
            cfg.batch_size,
            HeadBias::PerLearner,
            &mut record,
            epoch,
        )?;
    }
    Ok(record)
}

/// Mean CE of every learner's logits alone on `data`.
pub fn learner_losses(ens: &BoostEnsemble, data: &MultiModalDataset) -> Result<Vec<f64>> {
    let per = ens.all_learner_logits(&dataset_inputs(data))?;
    per.iter()
        .map(|logits| {
            let mut total = 0.0;
            for (i, &y) in data.labels().iter().enumerate() {
                total += ce_loss(logits.row(i), &one_hot(y, ens.num_classes()))?;
            }
            Ok(total / data.len() as f64)
        })
        .collect()
}

/// Full boosting schedule: `cycles · M` rounds of one boosting stage followed
/// by one rectification stage. With a held-out split, stops early once its
/// accuracy has not improved for `early_stop_patience` rounds.
pub fn train_reconboost(
    train: &MultiModalDataset,
    holdout: Option<&MultiModalDataset>,
    cfg: &TrainConfig,
) -> Result<(BoostEnsemble, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let mut ens = BoostEnsemble::init_for(train, &cfg.hidden, cfg.seed)?;
    let mut schedule = BatchSchedule::new(cfg.seed);
    let mut report = TrainReport::new("reconboost");
    let m = train.num_modalities();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0usize;
    'outer: for cycle in 0..cfg.cycles {
        for _ in 0..m {
            let round = ens.round;
            let losses = match cfg.selection {
                Selection::RoundRobin => vec![0.0; m],
                _ => learner_losses(&ens, train)?,
            };
            let k = select_next_modality(cfg.selection, &losses, round)?;
            report.modality_sequence.push(k);

            let mut boost = run_boost_stage(&mut ens, k, train, cfg, &mut schedule)?;
            boost.cycle = cycle;
            boost.evaluate(&ens, train, holdout)?;
            report.stages.push(boost);

            let mut grs = run_grs_stage(&mut ens, train, cfg, &mut schedule)?;
            grs.cycle = cycle;
            grs.evaluate(&ens, train, holdout)?;
            let held = grs.test_acc;
            report.stages.push(grs);
            ens.round += 1;

            if let (Some(patience), Some(acc)) = (cfg.early_stop_patience, held) {
                if acc > best {
                    best = acc;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        report.stopped_early = true;
                        break 'outer;
                    }
                }
            }
        }
    }
    report.epochs_run = schedule.epochs();
    Ok((ens, report))
}

/// Joint training of all modalities through one linear classifier over the
/// concatenated encoder outputs. The classifier is stored block-wise as the
/// learners' heads: `W·[F_1 : … : F_M] + b = Σ_k W_k·F_k + b`, with `b` held
/// by learner 0 alone.
pub fn train_joint_concat(
    train: &MultiModalDataset,
    holdout: Option<&MultiModalDataset>,
    cfg: &TrainConfig,
) -> Result<(BoostEnsemble, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let mut ens = BoostEnsemble::init_for(train, &cfg.hidden, cfg.seed)?;
    let mut schedule = BatchSchedule::new(cfg.seed);
    let mut report = TrainReport::new("concat");
    let targets: Vec<Vec<f64>> = train
        .labels()
        .iter()
        .map(|&y| one_hot(y, train.num_classes()))
        .collect();
    for epoch in 0..cfg.baseline_epoch_budget() {
        let mut record = StageRecord::new(0, epoch, StageKind::Joint, None);
        let order = schedule.next_epoch(train.len());
        joint_epoch(
            &mut ens,
            train,
            &targets,
            &order,
            cfg.stage_lr,
            cfg.clip_norm,
            cfg.batch_size,
            HeadBias::Shared,
            &mut record,
            0,
        )?;
        record.evaluate(&ens, train, holdout)?;
        report.stages.push(record);
    }
    report.epochs_run = schedule.epochs();
    Ok((ens, report))
}

/// Plain minibatch SGD on the cross-entropy of modality `k` alone.
pub fn train_unimodal(
    train: &MultiModalDataset,
    holdout: Option<&MultiModalDataset>,
    k: usize,
    cfg: &TrainConfig,
) -> Result<(ModalityLearner, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let features = train.features(k)?;
    let y_dim = train.num_classes();
    let mut learner = ModalityLearner::init(k, features.cols(), &cfg.hidden, y_dim, cfg.seed)?;
    let mut schedule = BatchSchedule::new(cfg.seed);
    let mut report = TrainReport::new(&format!("unimodal:{k}"));
    let test_features = holdout.map(|h| h.features(k)).transpose()?;
    for epoch in 0..cfg.baseline_epoch_budget() {
        let mut record = StageRecord::new(0, epoch, StageKind::Unimodal, Some(k));
        let order = schedule.next_epoch(train.len());
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = features.select_rows(idx);
            let (logits, cache) = learner.net.forward(&x)?;
            let mut dlogits = Matrix::zeros(idx.len(), y_dim);
            let mut total = 0.0;
            for (r, &i) in idx.iter().enumerate() {
                let y = one_hot(train.labels()[i], y_dim);
                total += ce_loss(logits.row(r), &y)?;
                dlogits.row_mut(r).copy_from_slice(&ce_grad_logits(logits.row(r), &y)?);
            }
            let loss = total / idx.len() as f64;
            if !loss.is_finite() {
                return Err(failure(&record, epoch, b, format!("non-finite loss {loss}")));
            }
            record.batch_losses.push(StageLossBreakdown::plain(loss));
            let grads = learner.net.backward(&cache, &dlogits)?;
            learner.net.sgd_step(&grads, cfg.stage_lr, cfg.clip_norm)?;
        }
        record.close_epoch(0);
        let acc = logits_accuracy(&learner.net.predict_logits(features)?, train.labels())?;
        record.train_acc = Some(acc);
        record.modality_train_acc = vec![acc];
        if let (Some(h), Some(x)) = (holdout, test_features) {
            let acc = logits_accuracy(&learner.net.predict_logits(x)?, h.labels())?;
            record.test_acc = Some(acc);
            record.modality_test_acc = vec![acc];
        }
        report.stages.push(record);
    }
    report.epochs_run = schedule.epochs();
    Ok((learner, report))
}
