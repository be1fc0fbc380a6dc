//! The additive multi-modal score model.
//!
//! `Φ_M(x) = Σ_k w_k·φ_k(m^k)` over one [`ModalityLearner`] per modality.
//! `Φ_{M/k}` drops learner `k`. With the default weights (all one) this is the
//! plain sum used during training; learned weights are a post-training option.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::MultiModalDataset;
use crate::error::{Error, Result};
use crate::netcore::Mlp;
use crate::numkit::{argmax, log_sum_exp, softmax, Matrix, RandomStream};

/// Default hidden layers of every modality learner.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

const TAG_LEARNER: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityLearner {
    pub modality: usize,
    pub net: Mlp,
    /// Softmax outputs on the training set captured at the end of this
    /// learner's last boosting stage; the next stage's MCR reference.
    pub frozen_probs: Option<Matrix>,
}

impl ModalityLearner {
    /// Fresh learner for modality `k`. The initialization stream depends only
    /// on `(seed, k)`, so every training method starts from the same weights.
    pub fn init(k: usize, input_dim: usize, hidden: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        let mut stream = RandomStream::new(seed).child(TAG_LEARNER + k as u64);
        Ok(Self {
            modality: k,
            net: Mlp::init(&dims, &mut stream)?,
            frozen_probs: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostEnsemble {
    learners: Vec<ModalityLearner>,
    fusion_weights: Vec<f64>,
    pub round: usize,
    pub prev_updated: Option<usize>,
}

/// Borrowed per-modality feature matrices of a dataset.
pub fn dataset_inputs(data: &MultiModalDataset) -> Vec<&Matrix> {
    data.modalities().iter().map(|m| &m.features).collect()
}

impl BoostEnsemble {
    pub fn new(learners: Vec<ModalityLearner>) -> Result<Self> {
        if learners.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one learner"));
        }
        let y = learners[0].net.output_dim();
        for (k, l) in learners.iter().enumerate() {
            if l.modality != k {
                return Err(Error::invalid(format!(
                    "learner at position {k} claims modality {}",
                    l.modality
                )));
            }
            if l.net.output_dim() != y {
                return Err(Error::invalid("learners disagree on the number of classes"));
            }
        }
        let m = learners.len();
        Ok(Self {
            learners,
            fusion_weights: vec![1.0; m],
            round: 0,
            prev_updated: None,
        })
    }

    /// One freshly initialized learner per modality of `data`.
    pub fn init_for(data: &MultiModalDataset, hidden: &[usize], seed: u64) -> Result<Self> {
        let learners = data
            .dims()
            .iter()
            .enumerate()
            .map(|(k, &d)| ModalityLearner::init(k, d, hidden, data.num_classes(), seed))
            .collect::<Result<Vec<_>>>()?;
        Self::new(learners)
    }

    pub fn num_learners(&self) -> usize {
        self.learners.len()
    }

    pub fn num_classes(&self) -> usize {
        self.learners[0].net.output_dim()
    }

    pub fn learners(&self) -> &[ModalityLearner] {
        &self.learners
    }

    pub fn learner(&self, k: usize) -> Result<&ModalityLearner> {
        self.learners
            .get(k)
            .ok_or_else(|| Error::invalid(format!("learner {k} out of range ({})", self.learners.len())))
    }

    pub fn learner_mut(&mut self, k: usize) -> Result<&mut ModalityLearner> {
        let m = self.learners.len();
        self.learners
            .get_mut(k)
            .ok_or_else(|| Error::invalid(format!("learner {k} out of range ({m})")))
    }

    pub fn fusion_weights(&self) -> &[f64] {
        &self.fusion_weights
    }

    pub fn set_fusion_weights(&mut self, w: Vec<f64>) -> Result<()> {
        if w.len() != self.learners.len() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("fusion weights must be finite, one per learner"));
        }
        self.fusion_weights = w;
        Ok(())
    }

    /// Per-learner parameter digests.
    pub fn digests(&self) -> Vec<String> {
        self.learners.iter().map(|l| l.net.digest()).collect()
    }

    fn check_inputs(&self, inputs: &[&Matrix]) -> Result<usize> {
        if inputs.len() != self.learners.len() {
            return Err(Error::invalid(format!(
                "expected features for {} modalities, got {}",
                self.learners.len(),
                inputs.len()
            )));
        }
        let n = inputs[0].rows();
        if inputs.iter().any(|m| m.rows() != n) {
            return Err(Error::invalid("modalities disagree on the number of samples"));
        }
        Ok(n)
    }

    /// `φ_k` on a batch of modality-`k` features.
    pub fn learner_logits(&self, k: usize, features: &Matrix) -> Result<Matrix> {
        self.learner(k)?.net.predict_logits(features)
    }

    /// Logits of every learner on its own modality.
    pub fn all_learner_logits(&self, inputs: &[&Matrix]) -> Result<Vec<Matrix>> {
        self.check_inputs(inputs)?;
        self.learners
            .iter()
            .zip(inputs)
            .map(|(l, x)| l.net.predict_logits(x))
            .collect()
    }

    /// `Σ_{k ∈ include} w_k·L_k`, accumulated in learner order.
    fn weighted_sum(&self, per_learner: &[Matrix], include: impl Fn(usize) -> bool) -> Matrix {
        let (n, y) = per_learner[0].shape();
        let mut out = Matrix::zeros(n, y);
        for (k, logits) in per_learner.iter().enumerate() {
            if include(k) {
                out.add_scaled(logits, self.fusion_weights[k])
                    .expect("learner logits share a shape");
            }
        }
        out
    }

    /// Combines precomputed per-learner logits into `Φ_M`.
    pub fn combine(&self, per_learner: &[Matrix]) -> Result<Matrix> {
        if per_learner.len() != self.learners.len() {
            return Err(Error::invalid("one logits matrix per learner is required"));
        }
        Ok(self.weighted_sum(per_learner, |_| true))
    }

    /// Combines precomputed per-learner logits into `Φ_{M/k}` by direct summation.
    pub fn combine_without(&self, per_learner: &[Matrix], k: usize) -> Result<Matrix> {
        self.learner(k)?;
        if per_learner.len() != self.learners.len() {
            return Err(Error::invalid("one logits matrix per learner is required"));
        }
        Ok(self.weighted_sum(per_learner, |j| j != k))
    }

    /// `Φ_M` for a batch.
    pub fn score(&self, inputs: &[&Matrix]) -> Result<Matrix> {
        let per = self.all_learner_logits(inputs)?;
        self.combine(&per)
    }

    /// `Φ_{M/k}` for a batch, summed directly over `j ≠ k`.
    pub fn leave_one_out(&self, inputs: &[&Matrix], k: usize) -> Result<Matrix> {
        self.learner(k)?;
        let per = self.all_learner_logits(inputs)?;
        self.combine_without(&per, k)
    }

    /// `Φ_M − w_k·φ_k`, the subtraction route to the leave-one-out score.
    pub fn leave_one_out_by_subtraction(&self, inputs: &[&Matrix], k: usize) -> Result<Matrix> {
        self.learner(k)?;
        let per = self.all_learner_logits(inputs)?;
        let mut full = self.combine(&per)?;
        full.add_scaled(&per[k], -self.fusion_weights[k])?;
        Ok(full)
    }

    /// Arg-max class of `Φ_M` per sample, ties to the lowest index.
    pub fn predict(&self, inputs: &[&Matrix]) -> Result<Vec<usize>> {
        let scores = self.score(inputs)?;
        Ok(scores.row_iter().map(argmax).collect())
    }

    fn single_sample(sample: &[&[f64]]) -> Result<Vec<Matrix>> {
        sample
            .iter()
            .map(|s| Matrix::from_vec(1, s.len(), s.to_vec()))
            .collect()
    }

    /// `Φ_M(x)` for one sample given as one feature vector per modality.
    pub fn ensemble_score(&self, sample: &[&[f64]]) -> Result<Vec<f64>> {
        let rows = Self::single_sample(sample)?;
        let refs: Vec<&Matrix> = rows.iter().collect();
        Ok(self.score(&refs)?.into_vec())
    }

    pub fn leave_one_out_score(&self, sample: &[&[f64]], k: usize) -> Result<Vec<f64>> {
        let rows = Self::single_sample(sample)?;
        let refs: Vec<&Matrix> = rows.iter().collect();
        Ok(self.leave_one_out(&refs, k)?.into_vec())
    }

    pub fn predict_one(&self, sample: &[&[f64]]) -> Result<usize> {
        Ok(argmax(&self.ensemble_score(sample)?))
    }

    /// Learns fusion weights by full-batch gradient descent on the mean CE of
    /// `Σ_k w_k·φ_k` over `validation`; learners stay frozen. Returns the new
    /// weights (also stored on the ensemble).
    pub fn fit_fusion_weights(
        &mut self,
        validation: &MultiModalDataset,
        steps: usize,
        lr: f64,
    ) -> Result<Vec<f64>> {
        if validation.is_empty() {
            return Err(Error::invalid("fusion weights need a non-empty validation split"));
        }
        let inputs = dataset_inputs(validation);
        let per = self.all_learner_logits(&inputs)?;
        let labels = validation.labels();
        let n = labels.len() as f64;
        for _ in 0..steps {
            let scores = self.combine(&per)?;
            let mut grad = vec![0.0; self.learners.len()];
            for (i, &y) in labels.iter().enumerate() {
                let mut residual = softmax(scores.row(i))?;
                residual[y] -= 1.0;
                for (k, g) in grad.iter_mut().enumerate() {
                    *g += residual
                        .iter()
                        .zip(per[k].row(i))
                        .map(|(r, z)| r * z)
                        .sum::<f64>();
                }
            }
            for (w, g) in self.fusion_weights.iter_mut().zip(&grad) {
                *w -= lr * g / n;
            }
            if self.fusion_weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NumericalFailure("fusion weights diverged".into()));
            }
        }
        Ok(self.fusion_weights.clone())
    }

    /// Mean CE of `Φ_M` on a dataset.
    pub fn mean_ce(&self, data: &MultiModalDataset) -> Result<f64> {
        let scores = self.score(&dataset_inputs(data))?;
        let mut total = 0.0;
        for (i, &y) in data.labels().iter().enumerate() {
            total += log_sum_exp(scores.row(i))? - scores.get(i, y);
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Writes `manifest.json` plus one `learner_<k>.bin` parameter snapshot per
    /// learner into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = EnsembleManifest {
            num_learners: self.learners.len(),
            num_classes: self.num_classes(),
            modality_dims: self.learners.iter().map(|l| l.net.input_dim()).collect(),
            fusion_weights: self.fusion_weights.clone(),
            round: self.round,
            prev_updated: self.prev_updated,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(&path, e))?;
        for (k, l) in self.learners.iter().enumerate() {
            l.net.save_snapshot(&dir.join(format!("learner_{k}.bin")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut learners = Vec::with_capacity(manifest.num_learners);
        for k in 0..manifest.num_learners {
            let net = Mlp::load_snapshot(&dir.join(format!("learner_{k}.bin")))?;
            if manifest.modality_dims.get(k) != Some(&net.input_dim()) {
                return Err(Error::Format {
                    path: path.clone(),
                    message: format!("learner {k} input width disagrees with the manifest"),
                });
            }
            learners.push(ModalityLearner {
                modality: k,
                net,
                frozen_probs: None,
            });
        }
        let mut ens = Self::new(learners)?;
        ens.set_fusion_weights(manifest.fusion_weights)?;
        ens.round = manifest.round;
        ens.prev_updated = manifest.prev_updated;
        Ok(ens)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    num_learners: usize,
    num_classes: usize,
    modality_dims: Vec<usize>,
    fusion_weights: Vec<f64>,
    round: usize,
    prev_updated: Option<usize>,
}
