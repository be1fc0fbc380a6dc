//! Loss terms of the boosting objective and their gradients with respect to
//! logits.
//!
//! Notation used below, per sample:
//! * `ρ = softmax(φ_k)`: the learner being updated,
//! * `σ = softmax(Φ_{M/k})`: the frozen sum of all other learners,
//! * `y`: the (one-hot) target.
//!
//! The stage loss for learner `k` is
//! `CE(φ_k, y) − λ·KL(σ ‖ ρ) + α·‖ρ − ρ_prev‖²`, and its logit gradient has
//! the closed form `(1−λ)·ρ + λ·σ − y + α·2·J(ρ)(ρ − ρ_prev)` with
//! `J(ρ) = diag(ρ) − ρρᵀ`. At `λ = 1, α = 0` this is `σ − y`, the gradient of
//! cross-entropy against the pseudo-label `y − σ`: fitting the stage loss is
//! the same as fitting the ensemble's negative functional gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{log_softmax, softmax, squared_norm};

/// Per-sample or batch-mean decomposition of the stage loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLossBreakdown {
    pub agreement: f64,
    pub kl_reconcilement: f64,
    pub mcr: f64,
    pub total: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl StageLossBreakdown {
    pub fn new(agreement: f64, kl_reconcilement: f64, mcr: f64, lambda: f64, alpha: f64) -> Self {
        Self {
            agreement,
            kl_reconcilement,
            mcr,
            total: agreement - lambda * kl_reconcilement + alpha * mcr,
            lambda,
            alpha,
        }
    }

    /// Breakdown for a plain cross-entropy objective (GRS and baselines).
    pub fn plain(ce: f64) -> Self {
        Self::new(ce, 0.0, 0.0, 0.0, 0.0)
    }

    /// Component-wise mean; `total` is recomputed from the means so the
    /// invariant holds exactly. Returns `None` for an empty input.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a StageLossBreakdown>) -> Option<Self> {
        let mut n = 0usize;
        let (mut a, mut k, mut m) = (0.0, 0.0, 0.0);
        let mut first: Option<&StageLossBreakdown> = None;
        for b in items {
            first.get_or_insert(b);
            a += b.agreement;
            k += b.kl_reconcilement;
            m += b.mcr;
            n += 1;
        }
        let f = first?;
        let n = n as f64;
        Some(Self::new(a / n, k / n, m / n, f.lambda, f.alpha))
    }

    pub fn is_finite(&self) -> bool {
        self.agreement.is_finite()
            && self.kl_reconcilement.is_finite()
            && self.mcr.is_finite()
            && self.total.is_finite()
    }
}

/// A real-valued target vector; may have negative entries (pseudo-labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget(pub Vec<f64>);

impl SoftTarget {
    pub fn one_hot(label: usize, num_classes: usize) -> Result<Self> {
        if label >= num_classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        let mut v = vec![0.0; num_classes];
        v[label] = 1.0;
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

fn check_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "{what}: length mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `−Σⱼ tⱼ·ln softmax(z)ⱼ`.
pub fn ce_loss(logits: &[f64], target: &[f64]) -> Result<f64> {
    check_len(logits, target, "ce_loss")?;
    let logp = log_softmax(logits)?;
    Ok(-target.iter().zip(&logp).map(|(t, lp)| t * lp).sum::<f64>())
}

/// `(Σⱼ tⱼ)·ρ − t`; reduces to `ρ − y` for a one-hot target.
pub fn ce_grad_logits(logits: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_len(logits, target, "ce_grad_logits")?;
    let rho = softmax(logits)?;
    let mass: f64 = target.iter().sum();
    Ok(rho.iter().zip(target).map(|(r, t)| mass * r - t).collect())
}

/// Negative functional gradient of the ensemble CE at `ensemble_logits`:
/// `y − softmax(ensemble_logits)`.
pub fn pseudo_label(ensemble_logits: &[f64], y: &[f64]) -> Result<SoftTarget> {
    check_len(ensemble_logits, y, "pseudo_label")?;
    let sigma = softmax(ensemble_logits)?;
    Ok(SoftTarget(y.iter().zip(&sigma).map(|(a, s)| a - s).collect()))
}

/// `KL(σ ‖ ρ) = Σⱼ σⱼ·ln(σⱼ/ρⱼ)` with `σ = softmax(rest)`, `ρ = softmax(learner)`.
/// `σ` is a constant of the stage; see [`kl_grad_logits`].
pub fn kl_reconcilement(ensemble_rest_logits: &[f64], learner_logits: &[f64]) -> Result<f64> {
    check_len(ensemble_rest_logits, learner_logits, "kl_reconcilement")?;
    let log_sigma = log_softmax(ensemble_rest_logits)?;
    let log_rho = log_softmax(learner_logits)?;
    Ok(log_sigma
        .iter()
        .zip(&log_rho)
        .map(|(ls, lr)| {
            let s = ls.exp();
            if s == 0.0 {
                0.0
            } else {
                s * (ls - lr)
            }
        })
        .sum())
}

/// Gradient of [`kl_reconcilement`] with respect to the learner's logits: `ρ − σ`.
pub fn kl_grad_logits(ensemble_rest_logits: &[f64], learner_logits: &[f64]) -> Result<Vec<f64>> {
    check_len(ensemble_rest_logits, learner_logits, "kl_grad_logits")?;
    let sigma = softmax(ensemble_rest_logits)?;
    let rho = softmax(learner_logits)?;
    Ok(rho.iter().zip(&sigma).map(|(r, s)| r - s).collect())
}

/// Memory consolidation term `‖ρ − ρ_prev‖²`. The label cancels out of the
/// defining difference of CE gradients; see [`mcr_gradient_difference`].
pub fn mcr_loss(learner_logits: &[f64], prev_learner_probs: &[f64], y: &[f64]) -> Result<f64> {
    check_len(learner_logits, prev_learner_probs, "mcr_loss")?;
    check_len(learner_logits, y, "mcr_loss")?;
    let rho = softmax(learner_logits)?;
    Ok(rho
        .iter()
        .zip(prev_learner_probs)
        .map(|(r, p)| (r - p) * (r - p))
        .sum())
}

/// The defining form `‖(ρ − y) − (ρ_prev − y)‖²`, kept as an independent route
/// for checking [`mcr_loss`].
pub fn mcr_gradient_difference(
    learner_logits: &[f64],
    prev_learner_probs: &[f64],
    y: &[f64],
) -> Result<f64> {
    check_len(learner_logits, prev_learner_probs, "mcr_gradient_difference")?;
    let current = ce_grad_logits(learner_logits, y)?;
    let mass: f64 = y.iter().sum();
    let previous: Vec<f64> = prev_learner_probs
        .iter()
        .zip(y)
        .map(|(p, t)| mass * p - t)
        .collect();
    let diff: Vec<f64> = current.iter().zip(&previous).map(|(a, b)| a - b).collect();
    Ok(squared_norm(&diff))
}

/// `2·J(ρ)·(ρ − ρ_prev)` with `J(ρ) = diag(ρ) − ρρᵀ`.
pub fn mcr_grad_logits(learner_logits: &[f64], prev_learner_probs: &[f64]) -> Result<Vec<f64>> {
    check_len(learner_logits, prev_learner_probs, "mcr_grad_logits")?;
    let rho = softmax(learner_logits)?;
    Ok(mcr_grad_from_probs(&rho, prev_learner_probs))
}

fn mcr_grad_from_probs(rho: &[f64], prev: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = rho.iter().zip(prev).map(|(r, p)| 2.0 * (r - p)).collect();
    let rv: f64 = rho.iter().zip(&v).map(|(r, x)| r * x).sum();
    rho.iter().zip(&v).map(|(r, x)| r * x - r * rv).collect()
}

fn check_weights(lambda: f64, alpha: f64) -> Result<()> {
    if !(lambda >= 0.0) || !(alpha >= 0.0) || !lambda.is_finite() || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "lambda and alpha must be finite and >= 0 (got {lambda}, {alpha})"
        )));
    }
    Ok(())
}

/// Per-sample stage loss `CE(φ_k, y) − λ·KL(σ‖ρ) + α·MCR`.
/// Without a previous-learner snapshot the MCR term is zero.
pub fn stage_loss(
    learner_logits: &[f64],
    ensemble_rest_logits: &[f64],
    prev_learner_probs: Option<&[f64]>,
    y: &[f64],
    lambda: f64,
    alpha: f64,
) -> Result<StageLossBreakdown> {
    check_weights(lambda, alpha)?;
    let agreement = ce_loss(learner_logits, y)?;
    let kl = kl_reconcilement(ensemble_rest_logits, learner_logits)?;
    let mcr = match prev_learner_probs {
        Some(prev) => mcr_loss(learner_logits, prev, y)?,
        None => 0.0,
    };
    Ok(StageLossBreakdown::new(agreement, kl, mcr, lambda, alpha))
}

/// Closed-form logit gradient of [`stage_loss`]:
/// `(Σy − λ)·ρ + λ·σ − y` (+ the MCR pullback when a snapshot is present and
/// `α > 0`).
pub fn stage_grad_logits(
    learner_logits: &[f64],
    ensemble_rest_logits: &[f64],
    prev_learner_probs: Option<&[f64]>,
    y: &[f64],
    lambda: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_weights(lambda, alpha)?;
    check_len(learner_logits, y, "stage_grad_logits")?;
    check_len(ensemble_rest_logits, y, "stage_grad_logits")?;
    let rho = softmax(learner_logits)?;
    let sigma = softmax(ensemble_rest_logits)?;
    let mass: f64 = y.iter().sum();
    let rho_coef = mass - lambda;
    let mut grad: Vec<f64> = rho
        .iter()
        .zip(&sigma)
        .zip(y)
        .map(|((r, s), t)| rho_coef * r + lambda * s - t)
        .collect();
    if let Some(prev) = prev_learner_probs {
        check_len(prev, y, "stage_grad_logits")?;
        if alpha != 0.0 {
            for (g, m) in grad.iter_mut().zip(mcr_grad_from_probs(&rho, prev)) {
                *g += alpha * m;
            }
        }
    }
    Ok(grad)
}

/// Result of [`grs_loss`]: the ensemble CE and one logit gradient per learner.
#[derive(Debug, Clone, PartialEq)]
pub struct GrsLoss {
    pub loss: f64,
    pub learner_grads: Vec<Vec<f64>>,
}

/// Cross-entropy of the summed learner logits. Every learner receives the same
/// logit gradient `softmax(Σφ) − y`.
pub fn grs_loss(all_learner_logits: &[&[f64]], y: &[f64]) -> Result<GrsLoss> {
    let first = all_learner_logits
        .first()
        .ok_or_else(|| Error::invalid("grs_loss needs at least one learner"))?;
    let mut summed = vec![0.0; first.len()];
    for logits in all_learner_logits {
        check_len(logits, &summed, "grs_loss")?;
        for (s, v) in summed.iter_mut().zip(logits.iter()) {
            *s += v;
        }
    }
    let loss = ce_loss(&summed, y)?;
    let shared = ce_grad_logits(&summed, y)?;
    Ok(GrsLoss {
        loss,
        learner_grads: vec![shared; all_learner_logits.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RandomStream;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    /// Central differences of a scalar function of a logit vector.
    fn fd(f: impl Fn(&[f64]) -> f64, z: &[f64], eps: f64) -> Vec<f64> {
        (0..z.len())
            .map(|j| {
                let mut p = z.to_vec();
                let mut m = z.to_vec();
                p[j] += eps;
                m[j] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn random_vec(s: &mut RandomStream, n: usize, std: f64) -> Vec<f64> {
        s.gaussian(n, 0.0, std).unwrap()
    }

    #[test]
    fn ce_examples() {
        assert!((ce_loss(&[0.0, 0.0], &[1.0, 0.0]).unwrap() - LN2).abs() < 1e-15);
        assert!(ce_loss(&[40.0, 0.0, 5.0], &[1.0, 0.0, 0.0]).unwrap() < 1e-12);
        assert!((ce_loss(&[0.0, 0.0], &[0.5, 0.5]).unwrap() - LN2).abs() < 1e-15);
        assert!(ce_loss(&[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn ce_grad_examples() {
        assert_eq!(ce_grad_logits(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), vec![-0.5, 0.5]);
        // Zero-mass target: gradient is −t regardless of logits.
        for z in [[0.0, 0.0], [3.0, -2.0], [-10.0, 7.5]] {
            let g = ce_grad_logits(&z, &[0.5, -0.5]).unwrap();
            assert!(max_abs_diff(&g, &[-0.5, 0.5]) < 1e-15);
        }
    }

    #[test]
    fn ce_grad_matches_fd() {
        let mut s = RandomStream::new(10);
        for _ in 0..30 {
            let z = random_vec(&mut s, 5, 2.0);
            let t = random_vec(&mut s, 5, 1.0);
            let g = ce_grad_logits(&z, &t).unwrap();
            let n = fd(|v| ce_loss(v, &t).unwrap(), &z, 1e-5);
            assert!(max_abs_diff(&g, &n) < 1e-8);
        }
    }

    #[test]
    fn pseudo_label_examples() {
        assert_eq!(pseudo_label(&[0.0, 0.0], &[1.0, 0.0]).unwrap().0, vec![0.5, -0.5]);
        let converged = pseudo_label(&[35.0, 0.0, 1.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(converged.0.iter().all(|v| v.abs() < 1e-12));
        assert!(pseudo_label(&[0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert!(kl_reconcilement(&[1.0, 2.0, 3.0], &[11.0, 12.0, 13.0]).unwrap().abs() < 1e-12);
        // σ = (0.5, 0.5), ρ = (0.25, 0.75): logits (0, ln 3).
        let v = kl_reconcilement(&[0.0, 0.0], &[0.0, 3f64.ln()]).unwrap();
        let direct = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.143_841_036).abs() < 1e-9);
    }

    #[test]
    fn kl_grad_matches_fd() {
        let mut s = RandomStream::new(12);
        for _ in 0..30 {
            let rest = random_vec(&mut s, 4, 2.0);
            let z = random_vec(&mut s, 4, 2.0);
            let g = kl_grad_logits(&rest, &z).unwrap();
            let n = fd(|v| kl_reconcilement(&rest, v).unwrap(), &z, 1e-5);
            assert!(max_abs_diff(&g, &n) < 1e-8);
        }
    }

    #[test]
    fn stage_degenerates_to_ce() {
        let z = [0.3, -1.2, 2.0];
        let y = [0.0, 0.0, 1.0];
        let b = stage_loss(&z, &[1.0, 1.0, -1.0], None, &y, 0.0, 0.0).unwrap();
        assert_eq!(b.total, ce_loss(&z, &y).unwrap());
        let g = stage_grad_logits(&z, &[1.0, 1.0, -1.0], None, &y, 0.0, 0.0).unwrap();
        assert_eq!(g, ce_grad_logits(&z, &y).unwrap());
    }

    #[test]
    fn stage_grad_pinned_values() {
        let z = [0.0, 0.0];
        let rest = [3f64.ln(), 0.0];
        let y = [1.0, 0.0];
        let g1 = stage_grad_logits(&z, &rest, None, &y, 1.0, 0.0).unwrap();
        assert!(max_abs_diff(&g1, &[-0.25, 0.25]) < 1e-15);
        let g5 = stage_grad_logits(&z, &rest, None, &y, 0.5, 0.0).unwrap();
        assert!(max_abs_diff(&g5, &[-0.375, 0.375]) < 1e-15);
        for (lambda, g) in [(1.0, &g1), (0.5, &g5)] {
            let n = fd(
                |v| stage_loss(v, &rest, None, &y, lambda, 0.0).unwrap().total,
                &z,
                1e-5,
            );
            assert!(max_abs_diff(g, &n) < 1e-9);
        }
    }

    #[test]
    fn stage_grad_matches_fd_for_all_lambdas() {
        let mut s = RandomStream::new(14);
        for lambda in [0.0, 0.25, 1.0 / 3.0, 0.5, 1.0] {
            for alpha in [0.0, 0.1, 0.7] {
                for _ in 0..10 {
                    let z = random_vec(&mut s, 6, 1.5);
                    let rest = random_vec(&mut s, 6, 1.5);
                    let prev = softmax(&random_vec(&mut s, 6, 1.5)).unwrap();
                    let y = one_hot((s.next_u64() % 6) as usize, 6);
                    let g = stage_grad_logits(&z, &rest, Some(&prev), &y, lambda, alpha).unwrap();
                    let n = fd(
                        |v| stage_loss(v, &rest, Some(&prev), &y, lambda, alpha).unwrap().total,
                        &z,
                        1e-5,
                    );
                    assert!(max_abs_diff(&g, &n) < 1e-8, "lambda {lambda} alpha {alpha}");
                }
            }
        }
    }

    #[test]
    fn mcr_examples() {
        let z = [0.4, -0.3, 1.1];
        let rho = softmax(&z).unwrap();
        assert_eq!(mcr_loss(&z, &rho, &[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let g = stage_grad_logits(&z, &[0.0; 3], Some(&rho), &[1.0, 0.0, 0.0], 0.3, 0.9).unwrap();
        let g0 = stage_grad_logits(&z, &[0.0; 3], None, &[1.0, 0.0, 0.0], 0.3, 0.9).unwrap();
        assert_eq!(g, g0);
        // ρ ≈ (1, 0), ρ_prev = (0, 1).
        let v = mcr_loss(&[60.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!(mcr_loss(&[0.0, 0.0], &[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn mcr_grad_matches_fd() {
        let mut s = RandomStream::new(16);
        for _ in 0..30 {
            let z = random_vec(&mut s, 5, 2.0);
            let prev = softmax(&random_vec(&mut s, 5, 2.0)).unwrap();
            let y = one_hot(2, 5);
            let g = mcr_grad_logits(&z, &prev).unwrap();
            let n = fd(|v| mcr_loss(v, &prev, &y).unwrap(), &z, 1e-5);
            assert!(max_abs_diff(&g, &n) < 1e-9);
        }
    }

    #[test]
    fn grs_examples() {
        let a = [0.5, -1.0, 2.0];
        let y = [0.0, 1.0, 0.0];
        let single = grs_loss(&[&a], &y).unwrap();
        assert_eq!(single.loss, ce_loss(&a, &y).unwrap());
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let cancel = grs_loss(&[&a, &neg], &y).unwrap();
        assert!((cancel.loss - 3f64.ln()).abs() < 1e-12);
        assert!(grs_loss(&[], &y).is_err());
    }

    #[test]
    fn grs_shared_gradient_matches_fd() {
        let mut s = RandomStream::new(18);
        for _ in 0..20 {
            let ls: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut s, 4, 1.0)).collect();
            let y = one_hot(1, 4);
            let refs: Vec<&[f64]> = ls.iter().map(Vec::as_slice).collect();
            let out = grs_loss(&refs, &y).unwrap();
            for g in &out.learner_grads {
                assert_eq!(g, &out.learner_grads[0]);
            }
            for k in 0..3 {
                let n = fd(
                    |v| {
                        let mut refs: Vec<&[f64]> = ls.iter().map(Vec::as_slice).collect();
                        refs[k] = v;
                        grs_loss(&refs, &y).unwrap().loss
                    },
                    &ls[k],
                    1e-5,
                );
                assert!(max_abs_diff(&out.learner_grads[k], &n) < 1e-9);
            }
        }
    }

    #[test]
    fn breakdown_mean_keeps_invariant() {
        let a = StageLossBreakdown::new(1.0, 0.5, 0.2, 0.25, 0.1);
        let b = StageLossBreakdown::new(2.0, 1.5, 0.0, 0.25, 0.1);
        let m = StageLossBreakdown::mean([&a, &b]).unwrap();
        assert_eq!(m.agreement, 1.5);
        assert!((m.total - (1.5 - 0.25 * 1.0 + 0.1 * 0.1)).abs() < 1e-12);
        assert!(StageLossBreakdown::mean(std::iter::empty()).is_none());
    }

    proptest! {
        #[test]
        fn pseudo_label_sums_to_zero(z in prop::collection::vec(-40.0f64..40.0, 2..9), k in 0usize..9) {
            let y = one_hot(k % z.len(), z.len());
            let t = pseudo_label(&z, &y).unwrap();
            prop_assert!(t.0.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn kl_is_non_negative(a in prop::collection::vec(-20.0f64..20.0, 3), b in prop::collection::vec(-20.0f64..20.0, 3)) {
            prop_assert!(kl_reconcilement(&a, &b).unwrap() >= -1e-12);
        }

        #[test]
        fn mcr_forms_agree_for_any_label(
            z in prop::collection::vec(-10.0f64..10.0, 4),
            p in prop::collection::vec(-10.0f64..10.0, 4),
            k in 0usize..4,
        ) {
            let prev = softmax(&p).unwrap();
            let y = one_hot(k, 4);
            let a = mcr_loss(&z, &prev, &y).unwrap();
            let b = mcr_gradient_difference(&z, &prev, &y).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let other = one_hot((k + 1) % 4, 4);
            prop_assert_eq!(a, mcr_loss(&z, &prev, &other).unwrap());
        }

        #[test]
        fn breakdown_invariant(z in prop::collection::vec(-5.0f64..5.0, 3), r in prop::collection::vec(-5.0f64..5.0, 3),
                               lambda in 0.0f64..2.0, alpha in 0.0f64..2.0) {
            let prev = [0.2, 0.3, 0.5];
            let b = stage_loss(&z, &r, Some(&prev), &[0.0, 1.0, 0.0], lambda, alpha).unwrap();
            prop_assert!((b.total - (b.agreement - lambda * b.kl_reconcilement + alpha * b.mcr)).abs() < 1e-12);
        }
    }
}
