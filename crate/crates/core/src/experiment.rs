//! End-to-end experiment runs: data preparation, training, diagnostics and
//! the emitted report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig, Fusion, Method};
use crate::datagen::{
    corrupt_gaussian, generate_synthetic, load_feature_table, split, MultiModalDataset, SyntheticSpec,
    DOMINANCE_BENCHMARK_VERSION,
};
use crate::ensemble::{BoostEnsemble, ModalityLearner};
use crate::error::{Error, Result};
use crate::evalkit::{probe_encoder, DiagnosticsReport};
use crate::trainer::{train_joint_concat, train_reconboost, train_unimodal, StageRecord, TrainReport};
use crate::verify::{run_verify, VerificationReport, VerifyOptions};

pub const REPORT_FILE: &str = "report.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const MODEL_DIR: &str = "model";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

const TAG_CORRUPT: u64 = 30_000;
const TAG_LW_SPLIT: u64 = 30_001;

pub const HISTORY_HEADER: &str =
    "cycle,round,stage_kind,modality,epoch,agreement,kl,mcr,total,train_acc,test_acc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub data_ms: u128,
    pub train_ms: u128,
    pub diagnostics_ms: u128,
    pub total_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub build: String,
    pub config: ExperimentConfig,
    /// The configuration as `key = value` text.
    pub config_text: String,
    pub dataset: DatasetSummary,
    pub method: String,
    pub train: TrainReport,
    pub fusion_weights: Vec<f64>,
    pub test_acc: f64,
    pub diagnostics: Option<DiagnosticsReport>,
    pub verification: Option<VerificationReport>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub modality_names: Vec<String>,
    pub modality_dims: Vec<usize>,
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
}

/// Build identifier recorded in every report.
pub fn build_id() -> String {
    format!("reconboost {}", env!("CARGO_PKG_VERSION"))
}

/// Train and test splits for an experiment, after optional corruption and
/// standardization.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(MultiModalDataset, MultiModalDataset, String)> {
    let seed = cfg.train.seed;
    let (mut data, source) = match &cfg.dataset {
        DatasetSource::Dominance => (
            generate_synthetic(&SyntheticSpec::dominance_benchmark(cfg.num_samples), seed)?,
            format!("synthetic:{DOMINANCE_BENCHMARK_VERSION}"),
        ),
        DatasetSource::Table(path) => (load_feature_table(path)?, path.display().to_string()),
    };
    if let Some(c) = &cfg.corruption {
        data = corrupt_gaussian(&data, c.modality, c.fraction, c.sigma, seed.wrapping_add(TAG_CORRUPT))?;
    }
    if cfg.standardize {
        data.standardize();
    }
    let (train, test) = split(&data, cfg.test_fraction, seed, true)?;
    Ok((train, test, source))
}

/// A trained model of any method, viewed as an ensemble.
pub struct TrainedModel {
    pub ensemble: BoostEnsemble,
    pub report: TrainReport,
}

/// Trains `method` on `train`, monitoring `test`.
pub fn train_method(
    cfg: &ExperimentConfig,
    train: &MultiModalDataset,
    test: &MultiModalDataset,
) -> Result<TrainedModel> {
    let t = &cfg.train;
    let (ensemble, report) = match &cfg.method {
        Method::Reconboost => {
            if cfg.fusion == Fusion::Lw {
                let (fit, val) = split(train, cfg.lw_fraction, t.seed.wrapping_add(TAG_LW_SPLIT), true)?;
                let (mut ens, report) = train_reconboost(&fit, Some(test), t)?;
                ens.fit_fusion_weights(&val, cfg.lw_steps, cfg.lw_lr)?;
                (ens, report)
            } else {
                train_reconboost(train, Some(test), t)?
            }
        }
        Method::Concat => train_joint_concat(train, Some(test), t)?,
        Method::Unimodal(k) => {
            let (learner, report) = train_unimodal(train, Some(test), *k, t)?;
            (single_learner_ensemble(learner)?, report)
        }
    };
    Ok(TrainedModel { ensemble, report })
}

/// Wraps a uni-modal learner as a one-member ensemble over the
/// single-modality view of the data.
fn single_learner_ensemble(mut learner: ModalityLearner) -> Result<BoostEnsemble> {
    learner.modality = 0;
    BoostEnsemble::new(vec![learner])
}

/// Test accuracy of a trained model; uni-modal models only see their own
/// modality.
pub fn model_accuracy(cfg: &ExperimentConfig, model: &BoostEnsemble, test: &MultiModalDataset) -> Result<f64> {
    let data = match cfg.method {
        Method::Unimodal(k) => test.single_modality(k)?,
        _ => test.clone(),
    };
    let (acc, _) = crate::trainer::ensemble_accuracies(model, &data)?;
    Ok(acc)
}

/// Linear-probe accuracy of every encoder of `ens` on the test split.
pub fn probe_all(ens: &BoostEnsemble, test: &MultiModalDataset, cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let probe = crate::evalkit::ProbeConfig { seed: cfg.train.seed, ..cfg.probe };
    ens.learners()
        .iter()
        .map(|l| probe_encoder(&l.net, test.features(l.modality)?, test.labels(), test.num_classes(), &probe))
        .collect()
}

/// Uni-modal references (test accuracy and probe accuracy per modality)
/// trained with the experiment's configuration.
pub fn unimodal_references(
    cfg: &ExperimentConfig,
    train: &MultiModalDataset,
    test: &MultiModalDataset,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let probe = crate::evalkit::ProbeConfig { seed: cfg.train.seed, ..cfg.probe };
    let mut acc = Vec::new();
    let mut probe_acc = Vec::new();
    for k in 0..train.num_modalities() {
        let (learner, report) = train_unimodal(train, Some(test), k, &cfg.train)?;
        acc.push(
            report
                .final_test_acc()
                .ok_or_else(|| Error::InvalidState("uni-modal run recorded no test accuracy".into()))?,
        );
        probe_acc.push(probe_encoder(&learner.net, test.features(k)?, test.labels(), test.num_classes(), &probe)?);
    }
    Ok((acc, probe_acc))
}

/// Full experiment without touching the filesystem (besides reading a
/// feature table). The trained ensemble is returned alongside the report.
pub fn run_experiment_in_memory(cfg: &ExperimentConfig) -> Result<(ExperimentReport, BoostEnsemble)> {
    cfg.validate()?;
    let start = Instant::now();
    let (train, test, source) = prepare_data(cfg)?;
    let data_ms = start.elapsed().as_millis();

    let t = Instant::now();
    let model = train_method(cfg, &train, &test)?;
    let train_ms = t.elapsed().as_millis();
    let test_acc = model_accuracy(cfg, &model.ensemble, &test)?;

    let t = Instant::now();
    let diagnostics = match cfg.method {
        Method::Unimodal(_) => None,
        _ if !cfg.diagnostics => None,
        _ => {
            let (uni_acc, uni_probe) = unimodal_references(cfg, &train, &test)?;
            let probe_acc = probe_all(&model.ensemble, &test, cfg)?;
            Some(DiagnosticsReport::from_accuracies(train.names(), uni_acc, uni_probe, probe_acc, test_acc)?)
        }
    };
    let diagnostics_ms = t.elapsed().as_millis();
    let verification = if cfg.verify {
        Some(run_verify(&VerifyOptions::default())?)
    } else {
        None
    };
    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        build: build_id(),
        config: cfg.clone(),
        config_text: cfg.to_config_text(),
        dataset: DatasetSummary {
            source,
            modality_names: train.names(),
            modality_dims: train.dims(),
            num_classes: train.num_classes(),
            train_size: train.len(),
            test_size: test.len(),
        },
        method: cfg.method.to_string(),
        fusion_weights: model.ensemble.fusion_weights().to_vec(),
        train: model.report,
        test_acc,
        diagnostics,
        verification,
        timings: Timings {
            data_ms,
            train_ms,
            diagnostics_ms,
            total_ms: start.elapsed().as_millis(),
        },
    };
    Ok((report, model.ensemble))
}

/// Runs an experiment and writes `report.json`, `history.csv` and (unless
/// disabled) the model snapshot into the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (report, ensemble) = run_experiment_in_memory(cfg)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_report(&report, &out.join(REPORT_FILE))?;
    let history = out.join(HISTORY_FILE);
    fs::write(&history, history_csv(&report.train.stages)).map_err(|e| Error::io(&history, e))?;
    if cfg.save_model {
        ensemble.save(&out.join(MODEL_DIR))?;
    }
    Ok(report)
}

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per stage-epoch. Accuracy columns carry the post-stage values.
pub fn history_csv(stages: &[StageRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for s in stages {
        let modality = s.modality.map(|k| k.to_string()).unwrap_or_default();
        for (e, l) in s.epoch_losses.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.cycle,
                s.round,
                s.kind,
                modality,
                e,
                l.agreement,
                l.kl_reconcilement,
                l.mcr,
                l.total,
                opt(s.train_acc),
                opt(s.test_acc)
            )
            .expect("writing to a string");
        }
    }
    out
}

/// Number of stage-epoch rows [`history_csv`] writes.
pub fn stage_epoch_count(stages: &[StageRecord]) -> usize {
    stages.iter().map(|s| s.epoch_losses.len()).sum()
}

/// Tidy plot tables produced by [`emit_plot_data`].
pub const CURVES_FILE: &str = "curves.csv";
pub const BARS_FILE: &str = "bars.csv";
const PLOT_HEADER: &str = "curve,x,y,seed";

/// Writes `curves.csv` (loss and accuracy curves over global epochs) and
/// `bars.csv` (diagnostic values) for the given reports. With more than one
/// report, every `(curve, x)` group also gets `mean` and `std` rows.
pub fn emit_plot_data(report_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report_paths.is_empty() {
        return Err(Error::invalid("no reports given"));
    }
    let reports = report_paths
        .iter()
        .map(|p| load_report(p))
        .collect::<Result<Vec<_>>>()?;
    let mut curves: Vec<(String, f64, f64, u64)> = Vec::new();
    let mut bars: Vec<(String, f64, f64, u64)> = Vec::new();
    for r in &reports {
        let seed = r.config.train.seed;
        let mut x = 0usize;
        for s in &r.train.stages {
            for l in &s.epoch_losses {
                let prefix = format!("{}:{}", r.method, s.kind);
                curves.push((format!("{prefix}:total"), x as f64, l.total, seed));
                curves.push((format!("{prefix}:agreement"), x as f64, l.agreement, seed));
                curves.push((format!("{prefix}:kl"), x as f64, l.kl_reconcilement, seed));
                curves.push((format!("{prefix}:mcr"), x as f64, l.mcr, seed));
                x += 1;
            }
            if let Some(a) = s.train_acc {
                curves.push((format!("{}:train_acc", r.method), x as f64, a, seed));
            }
            if let Some(a) = s.test_acc {
                curves.push((format!("{}:test_acc", r.method), x as f64, a, seed));
            }
        }
        bars.push((format!("{}:test_acc", r.method), 0.0, r.test_acc, seed));
        if let Some(d) = &r.diagnostics {
            for (k, name) in d.modality_names.iter().enumerate() {
                bars.push((format!("{}:probe_acc:{name}", r.method), 0.0, d.probe_acc[k], seed));
                bars.push((format!("uni:probe_acc:{name}"), 0.0, d.uni_probe_acc[k], seed));
                bars.push((format!("uni:test_acc:{name}"), 0.0, d.uni_acc[k], seed));
                bars.push((format!("{}:mi_proxy:{name}", r.method), 0.0, d.mi_proxy[k], seed));
            }
            for p in &d.pairs {
                let pair = format!("{}/{}", d.modality_names[p.strong], d.modality_names[p.weak]);
                bars.push((format!("{}:mir:{pair}", r.method), 0.0, p.mir_multi, seed));
                bars.push((format!("uni:mir:{pair}"), 0.0, p.mir_uni, seed));
                bars.push((format!("{}:dmc:{pair}", r.method), 0.0, p.dmc, seed));
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let aggregate = reports.len() > 1;
    let mut written = Vec::new();
    for (name, rows) in [(CURVES_FILE, curves), (BARS_FILE, bars)] {
        let path = out_dir.join(name);
        fs::write(&path, tidy_csv(&rows, aggregate)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn tidy_csv(rows: &[(String, f64, f64, u64)], aggregate: bool) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for (curve, x, y, seed) in rows {
        writeln!(out, "{curve},{x},{y},{seed}").expect("writing to a string");
    }
    if aggregate {
        let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
        for (curve, x, y, _) in rows {
            groups.entry((curve.clone(), x.to_bits())).or_default().push(*y);
        }
        for ((curve, xbits), ys) in groups {
            let x = f64::from_bits(xbits);
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            writeln!(out, "{curve},{x},{mean},mean").expect("writing to a string");
            writeln!(out, "{curve},{x},{},std", var.sqrt()).expect("writing to a string");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny(method: Method, dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.method = method;
        cfg.output_dir = dir.to_path_buf();
        cfg.num_samples = 120;
        cfg.train.cycles = 1;
        cfg.train.t1 = 1;
        cfg.train.t2 = 1;
        cfg.train.hidden = vec![8];
        cfg.train.early_stop_patience = None;
        cfg.probe.epochs = 20;
        cfg
    }

    #[test]
    fn experiment_writes_consistent_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Method::Reconboost, dir.path());
        let report = run_experiment(&cfg).unwrap();
        let history = fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
        assert_eq!(history.lines().count(), 1 + stage_epoch_count(&report.train.stages));
        assert_eq!(stage_epoch_count(&report.train.stages), 4);
        let back = load_report(&dir.path().join(REPORT_FILE)).unwrap();
        assert_eq!(back.train, report.train);
        let d = back.diagnostics.clone().unwrap();
        assert_eq!(d.recompute().unwrap(), d);
        let ens = BoostEnsemble::load(&dir.path().join(MODEL_DIR)).unwrap();
        assert_eq!(ens.num_learners(), 2);
    }

    #[test]
    fn history_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&tiny(Method::Concat, a.path())).unwrap();
        run_experiment(&tiny(Method::Concat, b.path())).unwrap();
        let read = |d: &Path| fs::read(d.join(HISTORY_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn unimodal_method_has_no_diagnostics() {
        let (report, ens) = run_experiment_in_memory(&tiny(Method::Unimodal(1), Path::new("unused"))).unwrap();
        assert!(report.diagnostics.is_none());
        assert_eq!(ens.num_learners(), 1);
        assert!(run_experiment_in_memory(&tiny(Method::Unimodal(2), Path::new("unused"))).is_err());
    }

    #[test]
    fn learned_weighting_changes_weights() {
        let mut cfg = tiny(Method::Reconboost, Path::new("unused"));
        cfg.fusion = Fusion::Lw;
        cfg.diagnostics = false;
        let (report, _) = run_experiment_in_memory(&cfg).unwrap();
        assert_ne!(report.fusion_weights, vec![1.0, 1.0]);
    }

    #[test]
    fn plot_data_aggregates_seeds() {
        let root = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for seed in 0..2 {
            let dir = root.path().join(format!("s{seed}"));
            let mut cfg = tiny(Method::Reconboost, &dir);
            cfg.train.seed = seed;
            cfg.save_model = false;
            run_experiment(&cfg).unwrap();
            paths.push(dir.join(REPORT_FILE));
        }
        let out = root.path().join("plots");
        emit_plot_data(&paths[..1], &out).unwrap();
        let curves = fs::read_to_string(out.join(CURVES_FILE)).unwrap();
        let total_rows = curves.lines().filter(|l| l.starts_with("reconboost:boost:total")).count()
            + curves.lines().filter(|l| l.starts_with("reconboost:grs:total")).count();
        assert_eq!(total_rows, 4);
        assert!(!curves.contains(",mean"));
        emit_plot_data(&paths, &out).unwrap();
        let curves = fs::read_to_string(out.join(CURVES_FILE)).unwrap();
        assert!(curves.lines().any(|l| l.ends_with(",mean")));
        assert!(curves.lines().any(|l| l.ends_with(",std")));
        let bars = fs::read_to_string(out.join(BARS_FILE)).unwrap();
        assert!(bars.contains("reconboost:dmc:"));
        assert!(emit_plot_data(&[], &out).is_err());
        assert!(emit_plot_data(&[root.path().join("missing.json")], &out).is_err());
    }
}
