//! Numerical verification battery for the loss identities.
//!
//! Each check draws random instances from a seeded stream, measures the
//! largest deviation between two independent routes to the same quantity and
//! compares it with a tolerance. The gradient kernels under test are passed
//! in as [`Kernels`], so a deliberately broken kernel can be shown to fail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::{Modality, MultiModalDataset};
use crate::ensemble::{dataset_inputs, BoostEnsemble};
use crate::error::{Error, Result};
use crate::netcore::{fd_gradient, max_relative_error, Mlp};
use crate::numkit::{softmax, Matrix, RandomStream};
use crate::objective::{
    ce_grad_logits, ce_loss, grs_loss, kl_grad_logits, kl_reconcilement, mcr_grad_logits, mcr_gradient_difference,
    mcr_loss, one_hot, pseudo_label, stage_loss,
};

/// `(logits, other) → gradient` signature shared by the kernels.
pub type GradKernel = fn(&[f64], &[f64]) -> Result<Vec<f64>>;

/// Logit-gradient kernels the stage gradient is assembled from.
#[derive(Clone, Copy)]
pub struct Kernels {
    /// `(logits, target) → ∇ CE`.
    pub ce_grad: GradKernel,
    /// `(rest logits, learner logits) → ∇ KL(σ‖ρ)` with respect to the learner.
    pub kl_grad: GradKernel,
    /// `(learner logits, previous probabilities) → ∇ MCR`.
    pub mcr_grad: GradKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            ce_grad: ce_grad_logits,
            kl_grad: kl_grad_logits,
            mcr_grad: mcr_grad_logits,
        }
    }
}

fn flipped_kl_grad(rest: &[f64], learner: &[f64]) -> Result<Vec<f64>> {
    Ok(kl_grad_logits(rest, learner)?.into_iter().map(|g| -g).collect())
}

impl Kernels {
    /// Kernels with the sign of the KL gradient inverted.
    pub fn with_flipped_kl_sign() -> Self {
        Self {
            kl_grad: flipped_kl_grad,
            ..Self::default()
        }
    }

    /// `∇CE − λ·∇KL + α·∇MCR`.
    pub fn stage_grad(
        &self,
        learner: &[f64],
        rest: &[f64],
        prev: Option<&[f64]>,
        y: &[f64],
        lambda: f64,
        alpha: f64,
    ) -> Result<Vec<f64>> {
        let mut g = (self.ce_grad)(learner, y)?;
        for (a, b) in g.iter_mut().zip((self.kl_grad)(rest, learner)?) {
            *a -= lambda * b;
        }
        if let Some(p) = prev {
            for (a, b) in g.iter_mut().zip((self.mcr_grad)(learner, p)?) {
                *a += alpha * b;
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub description: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Random instances per check.
    pub instances: usize,
    pub seed: u64,
    /// Replaces every default tolerance.
    pub global_tolerance: Option<f64>,
    /// Per-check tolerance overrides, by check name.
    pub tolerances: BTreeMap<String, f64>,
    pub fd_eps: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            global_tolerance: None,
            tolerances: BTreeMap::new(),
            fd_eps: 1e-5,
        }
    }
}

/// Check names with their default tolerances.
pub const CHECKS: &[(&str, f64, &str)] = &[
    ("lambda1_equivalence", 1e-8, "λ=1, α=0: parameter gradient of the stage loss equals that of CE against y − σ"),
    ("interpolation_identity", 1e-12, "assembled stage gradient equals (1−λ)ρ + λσ − y"),
    ("stage_closed_form_fd", 1e-8, "(1−λ)ρ + λσ − y matches finite differences for λ ∈ {0, 1/4, 1/3, 1/2, 1}"),
    ("fd_ce", 1e-6, "CE logit gradient vs finite differences"),
    ("fd_kl", 1e-6, "KL logit gradient vs finite differences"),
    ("fd_mcr", 1e-6, "MCR logit gradient vs finite differences"),
    ("fd_stage", 1e-6, "stage-loss logit gradient vs finite differences"),
    ("fd_grs", 1e-6, "GRS per-learner logit gradients vs finite differences"),
    ("fd_network_stage", 1e-6, "stage-loss parameter gradient through an MLP vs finite differences"),
    ("mcr_label_independence", 1e-12, "MCR value does not depend on the label"),
    ("mcr_identity", 1e-12, "MCR equals the squared distance of the two CE gradients"),
    ("grs_shared_gradient", 1e-12, "every learner gets softmax(Σφ) − y under GRS"),
    ("loo_two_path", 1e-12, "leave-one-out by direct sum equals subtraction"),
    ("kl_nonnegative", 1e-12, "KL(σ‖ρ) ≥ 0"),
    ("kl_zero_at_equality", 1e-12, "KL(σ‖σ) = 0"),
];

const LAMBDAS: [f64; 5] = [0.0, 0.25, 1.0 / 3.0, 0.5, 1.0];

struct Sampler {
    stream: RandomStream,
}

impl Sampler {
    fn logits(&mut self, y: usize) -> Vec<f64> {
        self.stream.gaussian(y, 0.0, 2.0).expect("positive std")
    }

    fn probs(&mut self, y: usize) -> Vec<f64> {
        softmax(&self.logits(y)).expect("finite logits")
    }

    fn classes(&mut self) -> usize {
        2 + (self.stream.next_u64() % 5) as usize
    }

    fn label(&mut self, y: usize) -> usize {
        (self.stream.next_u64() % y as u64) as usize
    }

    fn one_hot(&mut self, y: usize) -> Vec<f64> {
        let l = self.label(y);
        one_hot(l, y)
    }

    fn unit(&mut self) -> f64 {
        self.stream.uniform()
    }
}

fn fd_logits(f: impl Fn(&[f64]) -> f64, z: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = z.to_vec();
    (0..z.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random ensemble with one batch of inputs; returns the learner to update.
fn random_ensemble(s: &mut Sampler) -> Result<(BoostEnsemble, MultiModalDataset, usize)> {
    let m = 2 + (s.stream.next_u64() % 2) as usize;
    let y = s.classes();
    let n = 3 + (s.stream.next_u64() % 4) as usize;
    let mut modalities = Vec::new();
    for k in 0..m {
        let d = 2 + k;
        let features = Matrix::from_vec(n, d, s.stream.gaussian(n * d, 0.0, 1.0)?)?;
        modalities.push(Modality { name: format!("m{k}"), features });
    }
    let labels: Vec<usize> = (0..n).map(|_| s.label(y)).collect();
    let data = MultiModalDataset::new(modalities, labels, y)?;
    let seed = s.stream.next_u64();
    let ens = BoostEnsemble::init_for(&data, &[4], seed)?;
    let k = (s.stream.next_u64() % m as u64) as usize;
    Ok((ens, data, k))
}

struct Battery<'a> {
    kernels: &'a Kernels,
    opts: &'a VerifyOptions,
    sampler: Sampler,
}

impl Battery<'_> {
    fn lambda1_equivalence(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let (ens, data, k) = random_ensemble(&mut self.sampler)?;
            let inputs = dataset_inputs(&data);
            let rest = ens.leave_one_out(&inputs, k)?;
            let net = &ens.learner(k)?.net;
            let (logits, cache) = net.forward(inputs[k])?;
            let y_dim = data.num_classes();
            let mut d_stage = Matrix::zeros(data.len(), y_dim);
            let mut d_pseudo = Matrix::zeros(data.len(), y_dim);
            for (i, &label) in data.labels().iter().enumerate() {
                let y = one_hot(label, y_dim);
                let g = self.kernels.stage_grad(logits.row(i), rest.row(i), None, &y, 1.0, 0.0)?;
                d_stage.row_mut(i).copy_from_slice(&g);
                let target = pseudo_label(rest.row(i), &y)?;
                d_pseudo
                    .row_mut(i)
                    .copy_from_slice(&(self.kernels.ce_grad)(logits.row(i), target.as_slice())?);
            }
            let a = net.backward(&cache, &d_stage)?.flat();
            let b = net.backward(&cache, &d_pseudo)?.flat();
            worst = worst.max(max_relative_error(&b, &a));
        }
        Ok(worst)
    }

    fn interpolation_identity(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for &lambda in &LAMBDAS {
            for _ in 0..self.opts.instances {
                let y_dim = self.sampler.classes();
                let (z, rest, y) = (self.sampler.logits(y_dim), self.sampler.logits(y_dim), self.sampler.one_hot(y_dim));
                let assembled = self.kernels.stage_grad(&z, &rest, None, &y, lambda, 0.0)?;
                worst = worst.max(max_abs_diff(&assembled, &closed_form(&z, &rest, &y, lambda)?));
            }
        }
        Ok(worst)
    }

    fn stage_closed_form_fd(&mut self) -> Result<f64> {
        let eps = self.opts.fd_eps;
        let mut worst = 0.0f64;
        for &lambda in &LAMBDAS {
            for _ in 0..self.opts.instances {
                let y_dim = self.sampler.classes();
                let (z, rest, y) = (self.sampler.logits(y_dim), self.sampler.logits(y_dim), self.sampler.one_hot(y_dim));
                let fd = fd_logits(
                    |v| stage_loss(v, &rest, None, &y, lambda, 0.0).map(|b| b.total).unwrap_or(f64::NAN),
                    &z,
                    eps,
                );
                worst = worst.max(max_relative_error(&closed_form(&z, &rest, &y, lambda)?, &fd));
            }
        }
        Ok(worst)
    }

    fn fd_ce(&mut self) -> Result<f64> {
        let eps = self.opts.fd_eps;
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let (z, y) = (self.sampler.logits(y_dim), self.sampler.one_hot(y_dim));
            let fd = fd_logits(|v| ce_loss(v, &y).unwrap_or(f64::NAN), &z, eps);
            worst = worst.max(max_relative_error(&(self.kernels.ce_grad)(&z, &y)?, &fd));
        }
        Ok(worst)
    }

    fn fd_kl(&mut self) -> Result<f64> {
        let eps = self.opts.fd_eps;
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let (z, rest) = (self.sampler.logits(y_dim), self.sampler.logits(y_dim));
            let fd = fd_logits(|v| kl_reconcilement(&rest, v).unwrap_or(f64::NAN), &z, eps);
            worst = worst.max(max_relative_error(&(self.kernels.kl_grad)(&rest, &z)?, &fd));
        }
        Ok(worst)
    }

    fn fd_mcr(&mut self) -> Result<f64> {
        let eps = self.opts.fd_eps;
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let (z, prev, y) = (self.sampler.logits(y_dim), self.sampler.probs(y_dim), self.sampler.one_hot(y_dim));
            let fd = fd_logits(|v| mcr_loss(v, &prev, &y).unwrap_or(f64::NAN), &z, eps);
            worst = worst.max(max_relative_error(&(self.kernels.mcr_grad)(&z, &prev)?, &fd));
        }
        Ok(worst)
    }

    fn fd_stage(&mut self) -> Result<f64> {
        let eps = self.opts.fd_eps;
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let (z, rest, prev, y) = (
                self.sampler.logits(y_dim),
                self.sampler.logits(y_dim),
                self.sampler.probs(y_dim),
                self.sampler.one_hot(y_dim),
            );
            let (lambda, alpha) = (self.sampler.unit(), self.sampler.unit());
            let fd = fd_logits(
                |v| {
                    stage_loss(v, &rest, Some(&prev), &y, lambda, alpha)
                        .map(|b| b.total)
                        .unwrap_or(f64::NAN)
                },
                &z,
                eps,
            );
            let g = self.kernels.stage_grad(&z, &rest, Some(&prev), &y, lambda, alpha)?;
            worst = worst.max(max_relative_error(&g, &fd));
        }
        Ok(worst)
    }

    fn fd_grs(&mut self) -> Result<f64> {
        let eps = self.opts.fd_eps;
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let m = 2 + (self.sampler.stream.next_u64() % 3) as usize;
            let all: Vec<Vec<f64>> = (0..m).map(|_| self.sampler.logits(y_dim)).collect();
            let y = self.sampler.one_hot(y_dim);
            let refs: Vec<&[f64]> = all.iter().map(Vec::as_slice).collect();
            let grads = grs_loss(&refs, &y)?.learner_grads;
            for k in 0..m {
                let fd = fd_logits(
                    |v| {
                        let mut r = refs.clone();
                        r[k] = v;
                        grs_loss(&r, &y).map(|g| g.loss).unwrap_or(f64::NAN)
                    },
                    &all[k],
                    eps,
                );
                worst = worst.max(max_relative_error(&grads[k], &fd));
            }
        }
        Ok(worst)
    }

    fn fd_network_stage(&mut self) -> Result<f64> {
        let eps = self.opts.fd_eps;
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let n = 4;
            let d = 3;
            let mut init = RandomStream::new(self.sampler.stream.next_u64());
            let net = Mlp::init(&[d, 5, y_dim], &mut init)?;
            let x = Matrix::from_vec(n, d, self.sampler.stream.gaussian(n * d, 0.0, 1.0)?)?;
            let rest: Vec<Vec<f64>> = (0..n).map(|_| self.sampler.logits(y_dim)).collect();
            let prev: Vec<Vec<f64>> = (0..n).map(|_| self.sampler.probs(y_dim)).collect();
            let ys: Vec<Vec<f64>> = (0..n).map(|_| self.sampler.one_hot(y_dim)).collect();
            let (lambda, alpha) = (self.sampler.unit(), self.sampler.unit());
            let mean_loss = |net: &Mlp| -> f64 {
                let Ok(z) = net.predict_logits(&x) else { return f64::NAN };
                (0..n)
                    .map(|i| {
                        stage_loss(z.row(i), &rest[i], Some(&prev[i]), &ys[i], lambda, alpha)
                            .map(|b| b.total)
                            .unwrap_or(f64::NAN)
                    })
                    .sum::<f64>()
                    / n as f64
            };
            let (z, cache) = net.forward(&x)?;
            let mut dz = Matrix::zeros(n, y_dim);
            for i in 0..n {
                let g = self
                    .kernels
                    .stage_grad(z.row(i), &rest[i], Some(&prev[i]), &ys[i], lambda, alpha)?;
                dz.row_mut(i).copy_from_slice(&g);
            }
            let analytic = net.backward(&cache, &dz)?.flat();
            let fd = fd_gradient(mean_loss, &net, eps)?.flat();
            worst = worst.max(max_relative_error(&analytic, &fd));
        }
        Ok(worst)
    }

    fn mcr_label_independence(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let (z, prev) = (self.sampler.logits(y_dim), self.sampler.probs(y_dim));
            let values = (0..y_dim)
                .map(|l| mcr_gradient_difference(&z, &prev, &one_hot(l, y_dim)))
                .collect::<Result<Vec<_>>>()?;
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(hi - lo);
        }
        Ok(worst)
    }

    fn mcr_identity(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let (z, prev, y) = (self.sampler.logits(y_dim), self.sampler.probs(y_dim), self.sampler.one_hot(y_dim));
            let direct = mcr_loss(&z, &prev, &y)?;
            worst = worst.max((direct - mcr_gradient_difference(&z, &prev, &y)?).abs());
        }
        Ok(worst)
    }

    fn grs_shared_gradient(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let m = 1 + (self.sampler.stream.next_u64() % 4) as usize;
            let all: Vec<Vec<f64>> = (0..m).map(|_| self.sampler.logits(y_dim)).collect();
            let y = self.sampler.one_hot(y_dim);
            let refs: Vec<&[f64]> = all.iter().map(Vec::as_slice).collect();
            let grads = grs_loss(&refs, &y)?.learner_grads;
            let mut sum = vec![0.0; y_dim];
            for l in &all {
                for (s, v) in sum.iter_mut().zip(l) {
                    *s += v;
                }
            }
            let expected: Vec<f64> = softmax(&sum)?.iter().zip(&y).map(|(p, t)| p - t).collect();
            for g in &grads {
                worst = worst.max(max_abs_diff(g, &expected));
            }
        }
        Ok(worst)
    }

    fn loo_two_path(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let (mut ens, data, k) = random_ensemble(&mut self.sampler)?;
            let w: Vec<f64> = (0..ens.num_learners()).map(|_| 2.0 * self.sampler.unit() - 0.5).collect();
            ens.set_fusion_weights(w)?;
            let inputs = dataset_inputs(&data);
            let direct = ens.leave_one_out(&inputs, k)?;
            let sub = ens.leave_one_out_by_subtraction(&inputs, k)?;
            worst = worst.max(max_abs_diff(direct.as_slice(), sub.as_slice()));
        }
        Ok(worst)
    }

    fn kl_nonnegative(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let (a, b) = (self.sampler.logits(y_dim), self.sampler.logits(y_dim));
            worst = worst.max(-kl_reconcilement(&a, &b)?);
        }
        Ok(worst.max(0.0))
    }

    fn kl_zero_at_equality(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..self.opts.instances {
            let y_dim = self.sampler.classes();
            let a = self.sampler.logits(y_dim);
            let mut shifted = a.clone();
            let c = self.sampler.unit() * 10.0;
            shifted.iter_mut().for_each(|v| *v += c);
            worst = worst.max(kl_reconcilement(&a, &a)?.abs());
            worst = worst.max(kl_reconcilement(&a, &shifted)?.abs());
        }
        Ok(worst)
    }
}

fn closed_form(z: &[f64], rest: &[f64], y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let rho = softmax(z)?;
    let sigma = softmax(rest)?;
    Ok(rho
        .iter()
        .zip(&sigma)
        .zip(y)
        .map(|((r, s), t)| (1.0 - lambda) * r + lambda * s - t)
        .collect())
}

/// Runs every check with `kernels`.
pub fn run_battery(kernels: &Kernels, opts: &VerifyOptions) -> Result<VerificationReport> {
    if opts.instances == 0 {
        return Err(Error::invalid("verification needs at least one instance per check"));
    }
    for name in opts.tolerances.keys() {
        if !CHECKS.iter().any(|(n, _, _)| n == name) {
            return Err(Error::Config(format!("unknown verification check `{name}`")));
        }
    }
    let mut battery = Battery {
        kernels,
        opts,
        sampler: Sampler {
            stream: RandomStream::new(opts.seed),
        },
    };
    let mut checks = Vec::with_capacity(CHECKS.len());
    for (i, &(name, default_tol, description)) in CHECKS.iter().enumerate() {
        battery.sampler.stream = RandomStream::new(opts.seed).child(i as u64);
        let observed = match name {
            "lambda1_equivalence" => battery.lambda1_equivalence(),
            "interpolation_identity" => battery.interpolation_identity(),
            "stage_closed_form_fd" => battery.stage_closed_form_fd(),
            "fd_ce" => battery.fd_ce(),
            "fd_kl" => battery.fd_kl(),
            "fd_mcr" => battery.fd_mcr(),
            "fd_stage" => battery.fd_stage(),
            "fd_grs" => battery.fd_grs(),
            "fd_network_stage" => battery.fd_network_stage(),
            "mcr_label_independence" => battery.mcr_label_independence(),
            "mcr_identity" => battery.mcr_identity(),
            "grs_shared_gradient" => battery.grs_shared_gradient(),
            "loo_two_path" => battery.loo_two_path(),
            "kl_nonnegative" => battery.kl_nonnegative(),
            "kl_zero_at_equality" => battery.kl_zero_at_equality(),
            _ => unreachable!("check table and dispatch diverged: {name}"),
        }?;
        let tolerance = opts
            .tolerances
            .get(name)
            .copied()
            .or(opts.global_tolerance)
            .unwrap_or(default_tol);
        let instances = match name {
            "interpolation_identity" | "stage_closed_form_fd" => opts.instances * LAMBDAS.len(),
            _ => opts.instances,
        };
        checks.push(CheckResult {
            name: name.to_string(),
            description: description.to_string(),
            instances,
            max_error: observed,
            tolerance,
            passed: observed.is_finite() && observed <= tolerance,
        });
    }
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(VerificationReport { checks, all_passed })
}

/// Runs the battery with the shipped kernels.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerificationReport> {
    run_battery(&Kernels::default(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_kernels_pass_everything() {
        let report = run_verify(&VerifyOptions::default()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
            assert!(c.instances >= 20);
        }
        assert!(report.all_passed);
        assert_eq!(report.checks.len(), CHECKS.len());
    }

    #[test]
    fn flipped_kl_sign_is_caught() {
        let report = run_battery(&Kernels::with_flipped_kl_sign(), &VerifyOptions::default()).unwrap();
        assert!(!report.all_passed);
        assert!(!report.check("lambda1_equivalence").unwrap().passed);
        assert!(!report.check("fd_kl").unwrap().passed);
        assert!(report.check("fd_ce").unwrap().passed);
    }

    #[test]
    fn tiny_tolerance_reports_real_errors() {
        let opts = VerifyOptions { global_tolerance: Some(1e-15), ..VerifyOptions::default() };
        let report = run_verify(&opts).unwrap();
        let fd = report.check("fd_ce").unwrap();
        assert!(!fd.passed);
        assert!(fd.max_error > 1e-15 && fd.max_error < 1e-6);
        assert!(!report.all_passed);
    }

    #[test]
    fn per_check_override_wins() {
        let mut opts = VerifyOptions { global_tolerance: Some(1e-15), ..VerifyOptions::default() };
        opts.tolerances.insert("fd_ce".into(), 1e-3);
        let report = run_verify(&opts).unwrap();
        assert!(report.check("fd_ce").unwrap().passed);
        opts.tolerances.insert("no_such_check".into(), 1.0);
        assert!(run_verify(&opts).is_err());
    }

    #[test]
    fn battery_is_deterministic() {
        let a = run_verify(&VerifyOptions::default()).unwrap();
        let b = run_verify(&VerifyOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
