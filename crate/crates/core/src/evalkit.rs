//! Accuracy, frozen-encoder linear probes and modality-competition
//! diagnostics.
//!
//! * MIR (modality imbalance ratio): `acc(strong) / acc(weak)`, where the
//!   strong modality is fixed once per experiment by uni-modal accuracy.
//! * DMC (degree of modality competition): `MIR_multi / MIR_uni`; above one
//!   means joint training widened the gap.
//! * MI proxy: `acc(all modalities) − acc(the others alone)`, the information
//!   a modality adds on top of the rest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::Mlp;
use crate::numkit::{argmax, softmax, Matrix, RandomStream};

/// Fraction of `predictions` equal to `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Arg-max accuracy of a logits matrix.
pub fn logits_accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let preds: Vec<usize> = logits.row_iter().map(argmax).collect();
    accuracy(&preds, labels)
}

/// Linear-probe protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Fraction of the feature set used to fit the probe; the rest scores it.
    pub train_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            epochs: 200,
            lr: 0.1,
            seed: 0,
        }
    }
}

/// Fits a fresh affine softmax classifier on `features` (full-batch gradient
/// descent from zero weights) and returns its accuracy on the held-out part.
/// Features are standardized with statistics of the probe's training part.
pub fn linear_probe(features: &Matrix, labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<f64> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} feature rows for {} labels", labels.len())));
    }
    if num_classes < 2 || n < 2 * num_classes {
        return Err(Error::invalid(format!(
            "probe needs at least 2·Y = {} samples, got {n}",
            2 * num_classes
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) || !(cfg.lr > 0.0) {
        return Err(Error::invalid("probe needs 0 < train_fraction < 1 and lr > 0"));
    }
    let n_fit = (cfg.train_fraction * n as f64).floor() as usize;
    if n_fit == 0 || n_fit == n {
        return Err(Error::invalid("degenerate probe split"));
    }
    let order = RandomStream::new(cfg.seed).permutation(n);
    let (fit_idx, eval_idx) = order.split_at(n_fit);
    let mut x_fit = features.select_rows(fit_idx);
    let mut x_eval = features.select_rows(eval_idx);
    standardize_with(&mut x_fit, &mut x_eval);
    let y_fit: Vec<usize> = fit_idx.iter().map(|&i| labels[i]).collect();
    let y_eval: Vec<usize> = eval_idx.iter().map(|&i| labels[i]).collect();

    let d = features.cols();
    let mut w = Matrix::zeros(d, num_classes);
    let mut b = vec![0.0; num_classes];
    let scale = 1.0 / n_fit as f64;
    for _ in 0..cfg.epochs {
        let mut logits = x_fit.matmul(&w)?;
        for (i, &y) in y_fit.iter().enumerate() {
            let row = logits.row_mut(i);
            for (z, bj) in row.iter_mut().zip(&b) {
                *z += bj;
            }
            let mut p = softmax(row)?;
            p[y] -= 1.0;
            row.copy_from_slice(&p);
        }
        let gw = x_fit.t_matmul(&logits)?;
        w.add_scaled(&gw, -cfg.lr * scale)?;
        for j in 0..num_classes {
            let gb: f64 = (0..n_fit).map(|i| logits.get(i, j)).sum();
            b[j] -= cfg.lr * scale * gb;
        }
        if !w.is_finite() {
            return Err(Error::NumericalFailure("linear probe diverged".into()));
        }
    }
    let mut logits = x_eval.matmul(&w)?;
    for i in 0..logits.rows() {
        for (z, bj) in logits.row_mut(i).iter_mut().zip(&b) {
            *z += bj;
        }
    }
    logits_accuracy(&logits, &y_eval)
}

fn standardize_with(fit: &mut Matrix, other: &mut Matrix) {
    let (n, d) = fit.shape();
    for j in 0..d {
        let mean = (0..n).map(|i| fit.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (fit.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
        for m in [&mut *fit, &mut *other] {
            for i in 0..m.rows() {
                let v = (m.get(i, j) - mean) * inv;
                m.set(i, j, v);
            }
        }
    }
}

/// Probes the encoder output of `net` on `inputs`. The network is only read.
pub fn probe_encoder(
    net: &Mlp,
    inputs: &Matrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let features = net.encode(inputs)?;
    linear_probe(&features, labels, num_classes, cfg)
}

/// Modality imbalance ratio `acc_strong / acc_weak`. Not clamped to be ≥ 1.
pub fn mir(acc_strong: f64, acc_weak: f64) -> Result<f64> {
    if !(acc_weak > 0.0) || !(acc_strong >= 0.0) || !acc_strong.is_finite() {
        return Err(Error::invalid(format!(
            "mir needs acc_strong >= 0 and acc_weak > 0, got {acc_strong} / {acc_weak}"
        )));
    }
    Ok(acc_strong / acc_weak)
}

/// Degree of modality competition `mir_multi / mir_uni`.
pub fn dmc(mir_multi: f64, mir_uni: f64) -> Result<f64> {
    if !(mir_multi > 0.0) || !(mir_uni > 0.0) || !mir_multi.is_finite() || !mir_uni.is_finite() {
        return Err(Error::invalid(format!(
            "dmc needs positive ratios, got {mir_multi} / {mir_uni}"
        )));
    }
    Ok(mir_multi / mir_uni)
}

/// Geometric mean of per-pair DMC values.
pub fn dmc_geometric(pair_dmcs: &[f64]) -> Result<f64> {
    if pair_dmcs.is_empty() || pair_dmcs.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("geometric DMC needs a non-empty list of positive values"));
    }
    let mean_log = pair_dmcs.iter().map(|v| v.ln()).sum::<f64>() / pair_dmcs.len() as f64;
    Ok(mean_log.exp())
}

/// Gain of the full model over a model lacking one modality. Inputs are
/// fractions; the result may be negative.
pub fn mi_proxy(acc_multi: f64, acc_without: f64) -> Result<f64> {
    for a in [acc_multi, acc_without] {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!("accuracy {a} outside [0, 1]")));
        }
    }
    Ok(acc_multi - acc_without)
}

/// Unordered modality pairs `(strong, weak)`, oriented by uni-modal accuracy
/// with ties going to the lower index as numerator.
pub fn oriented_pairs(uni_acc: &[f64]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for a in 0..uni_acc.len() {
        for b in a + 1..uni_acc.len() {
            if uni_acc[b] > uni_acc[a] {
                pairs.push((b, a));
            } else {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub strong: usize,
    pub weak: usize,
    pub mir_uni: f64,
    pub mir_multi: f64,
    pub dmc: f64,
}

/// Competition diagnostics of one multi-modal model against uni-modal
/// references. Everything derived is a pure function of the stored
/// accuracies; [`DiagnosticsReport::recompute`] rebuilds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub modality_names: Vec<String>,
    /// Test accuracy of each uni-modally trained learner.
    pub uni_acc: Vec<f64>,
    /// Linear-probe accuracy of each uni-modally trained encoder.
    pub uni_probe_acc: Vec<f64>,
    /// Linear-probe accuracy of each encoder of the multi-modal model.
    pub probe_acc: Vec<f64>,
    /// Test accuracy of the multi-modal model.
    pub overall_acc: f64,
    pub pairs: Vec<PairDiagnostics>,
    pub dmc_geometric: Option<f64>,
    /// `overall_acc − acc(best other modality alone)` per modality.
    pub mi_proxy: Vec<f64>,
}

impl DiagnosticsReport {
    pub fn from_accuracies(
        modality_names: Vec<String>,
        uni_acc: Vec<f64>,
        uni_probe_acc: Vec<f64>,
        probe_acc: Vec<f64>,
        overall_acc: f64,
    ) -> Result<Self> {
        let m = modality_names.len();
        if m == 0 || uni_acc.len() != m || uni_probe_acc.len() != m || probe_acc.len() != m {
            return Err(Error::invalid("one accuracy per modality is required"));
        }
        for a in uni_acc.iter().chain(&uni_probe_acc).chain(&probe_acc).chain([&overall_acc]) {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::invalid(format!("accuracy {a} outside [0, 1]")));
            }
        }
        let mut pairs = Vec::new();
        for (strong, weak) in oriented_pairs(&uni_acc) {
            let mir_uni = mir(uni_probe_acc[strong], uni_probe_acc[weak])?;
            let mir_multi = mir(probe_acc[strong], probe_acc[weak])?;
            pairs.push(PairDiagnostics {
                strong,
                weak,
                mir_uni,
                mir_multi,
                dmc: dmc(mir_multi, mir_uni)?,
            });
        }
        let dmc_geometric = if pairs.len() > 1 {
            Some(dmc_geometric(&pairs.iter().map(|p| p.dmc).collect::<Vec<_>>())?)
        } else {
            None
        };
        let mut mi = Vec::with_capacity(m);
        for k in 0..m {
            let without = (0..m)
                .filter(|&j| j != k)
                .map(|j| uni_acc[j])
                .fold(f64::NEG_INFINITY, f64::max);
            mi.push(if m == 1 { overall_acc } else { mi_proxy(overall_acc, without)? });
        }
        Ok(Self {
            modality_names,
            uni_acc,
            uni_probe_acc,
            probe_acc,
            overall_acc,
            pairs,
            dmc_geometric,
            mi_proxy: mi,
        })
    }

    /// Rebuilds every derived value from the stored accuracies.
    pub fn recompute(&self) -> Result<Self> {
        Self::from_accuracies(
            self.modality_names.clone(),
            self.uni_acc.clone(),
            self.uni_probe_acc.clone(),
            self.probe_acc.clone(),
            self.overall_acc,
        )
    }

    /// MIR of the first pair under the multi-modal model.
    pub fn primary_mir(&self) -> Option<f64> {
        self.pairs.first().map(|p| p.mir_multi)
    }

    /// Geometric DMC when available, else the single pair's DMC.
    pub fn primary_dmc(&self) -> Option<f64> {
        self.dmc_geometric.or_else(|| self.pairs.first().map(|p| p.dmc))
    }
}
