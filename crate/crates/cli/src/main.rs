use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand};
use reconboost_core::config::{ExperimentConfig, SEED_ENV};
use reconboost_core::datagen::{
    corrupt_gaussian, generate_synthetic, load_feature_table, save_feature_table, SyntheticSpec,
};
use reconboost_core::ensemble::BoostEnsemble;
use reconboost_core::evalkit::{probe_encoder, ProbeConfig};
use reconboost_core::experiment::{emit_plot_data, run_experiment, ExperimentReport};
use reconboost_core::verify::{run_battery, Kernels, VerificationReport, VerifyOptions};
use reconboost_core::Error;
use reconboost_cli::schema;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "reconboost", version, about = "Modality-alternating boosting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dominance benchmark as a feature table.
    GenData(GenDataArgs),
    /// Add Gaussian noise to a fraction of one modality's rows.
    Corrupt(CorruptArgs),
    /// Run an experiment from a config file.
    Train(TrainArgs),
    /// Linear-probe the encoders of a saved model.
    Probe(ProbeArgs),
    /// Run the numerical invariant battery.
    Verify(VerifyArgs),
    /// Validate reports, re-derive their diagnostics and emit plot data.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    num_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    modality: usize,
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    /// Noise standard deviation.
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Runs one experiment per seed into `<output_dir>/seed_<s>`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Runs the seeds of `--seeds` as parallel child processes.
    #[arg(long, requires = "seeds")]
    parallel: bool,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature-table directory to probe on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Per-check tolerance override, `name=value`. Repeatable.
    #[arg(long = "tol", value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
    /// Replaces every default tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes the verification report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Test fixture: swaps in a broken kernel.
    #[arg(long, hide = true)]
    inject: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory for `curves.csv` and `bars.csv`.
    #[arg(long)]
    out: PathBuf,
    reports: Vec<PathBuf>,
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let value: f64 = value.parse().map_err(|_| format!("bad tolerance `{value}`"))?;
    Ok((name.trim().to_string(), value))
}

enum Failure {
    Check(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::GenData(a) => gen_data(a),
        Cmd::Corrupt(a) => corrupt(a),
        Cmd::Train(a) => train(a),
        Cmd::Probe(a) => probe(a),
        Cmd::Verify(a) => verify(a),
        Cmd::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::NumericalFailure(_) => ExitCode::from(EXIT_NUMERICAL),
                _ => ExitCode::from(EXIT_USAGE),
            }
        }
    }
}

fn gen_data(a: GenDataArgs) -> CmdResult {
    let data = generate_synthetic(&SyntheticSpec::dominance_benchmark(a.num_samples), a.seed)?;
    save_feature_table(&data, &a.out)?;
    println!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

fn corrupt(a: CorruptArgs) -> CmdResult {
    let data = load_feature_table(&a.input)?;
    let noisy = corrupt_gaussian(&data, a.modality, a.fraction, a.sigma, a.seed)?;
    save_feature_table(&noisy, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load_config(a: &TrainArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    cfg.apply_env_seed()?;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn print_summary(report: &ExperimentReport) {
    println!(
        "{} seed {}: test accuracy {:.4} ({} epochs{})",
        report.method,
        report.config.train.seed,
        report.test_acc,
        report.train.epochs_run,
        if report.train.stopped_early { ", stopped early" } else { "" }
    );
    if let Some(d) = &report.diagnostics {
        for (k, name) in d.modality_names.iter().enumerate() {
            println!(
                "  {name}: uni acc {:.4}, uni probe {:.4}, probe {:.4}, mi proxy {:.4}",
                d.uni_acc[k], d.uni_probe_acc[k], d.probe_acc[k], d.mi_proxy[k]
            );
        }
        for p in &d.pairs {
            println!(
                "  {}/{}: mir uni {:.4}, mir multi {:.4}, dmc {:.4}",
                d.modality_names[p.strong], d.modality_names[p.weak], p.mir_uni, p.mir_multi, p.dmc
            );
        }
    }
    println!("  report: {}", report.config.output_dir.join("report.json").display());
}

fn train(a: TrainArgs) -> CmdResult {
    let base = load_config(&a)?;
    if a.seeds.is_empty() {
        print_summary(&run_experiment(&base)?);
        return Ok(());
    }
    let seed_dir = |s: u64| base.output_dir.join(format!("seed_{s}"));
    if a.parallel {
        let exe = std::env::current_exe().map_err(|e| Error::Config(format!("cannot locate executable: {e}")))?;
        let children = a
            .seeds
            .iter()
            .map(|&s| {
                Command::new(&exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&a.config)
                    .arg("--output-dir")
                    .arg(seed_dir(s))
                    .env(SEED_ENV, s.to_string())
                    .spawn()
                    .map(|c| (s, c))
                    .map_err(|e| Error::Config(format!("cannot spawn seed {s}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut worst = 0;
        for (s, mut child) in children {
            let status = child.wait().map_err(|e| Error::Config(format!("seed {s}: {e}")))?;
            let code = status.code().unwrap_or(EXIT_USAGE as i32);
            if code != 0 {
                eprintln!("seed {s} exited with {code}");
                worst = worst.max(code);
            }
        }
        return match worst {
            0 => Ok(()),
            3 => Err(Error::NumericalFailure("at least one seed failed numerically".into()).into()),
            _ => Err(Error::Config("at least one seed failed".into()).into()),
        };
    }
    for &s in &a.seeds {
        let mut cfg = base.clone();
        cfg.train.seed = s;
        cfg.output_dir = seed_dir(s);
        print_summary(&run_experiment(&cfg)?);
    }
    Ok(())
}

fn probe(a: ProbeArgs) -> CmdResult {
    let ens = BoostEnsemble::load(&a.model)?;
    let data = load_feature_table(&a.data)?;
    let cfg = ProbeConfig {
        train_fraction: a.train_fraction,
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
    };
    for l in ens.learners() {
        let features = data.features(l.modality)?;
        let acc = probe_encoder(&l.net, features, data.labels(), data.num_classes(), &cfg)?;
        println!("{}: probe accuracy {acc:.4}", data.names()[l.modality]);
    }
    Ok(())
}

fn print_verification(report: &VerificationReport) {
    for c in &report.checks {
        println!(
            "{} {:<24} instances {:>3}  max error {:.3e}  tolerance {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.instances,
            c.max_error,
            c.tolerance
        );
    }
}

fn verify(a: VerifyArgs) -> CmdResult {
    let kernels = match a.inject.as_deref() {
        None => Kernels::default(),
        Some("kl-sign") => Kernels::with_flipped_kl_sign(),
        Some(other) => return Err(Error::Config(format!("unknown injection `{other}`")).into()),
    };
    let opts = VerifyOptions {
        instances: a.instances,
        seed: a.seed,
        global_tolerance: a.tolerance,
        tolerances: a.tol.into_iter().collect::<BTreeMap<_, _>>(),
        ..VerifyOptions::default()
    };
    let report = run_battery(&kernels, &opts)?;
    print_verification(&report);
    if let Some(path) = &a.json {
        write_json(path, &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    }
    if report.all_passed {
        Ok(())
    } else {
        let names: Vec<_> = report.failures().iter().map(|c| c.name.clone()).collect();
        Err(Failure::Check(format!("failed checks: {}", names.join(", "))))
    }
}

fn write_json(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, format!("{text}\n")).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn report(a: ReportArgs) -> CmdResult {
    if a.reports.is_empty() {
        return Err(Error::Config("no reports given".into()).into());
    }
    let mut mismatched = Vec::new();
    for path in &a.reports {
        schema::validate_report_file(path)?;
        let report = reconboost_core::experiment::load_report(path)?;
        if let Some(d) = &report.diagnostics {
            if &d.recompute()? != d {
                mismatched.push(path.display().to_string());
            }
        }
    }
    let written = emit_plot_data(&a.reports, &a.out)?;
    for p in written {
        println!("wrote {}", p.display());
    }
    if mismatched.is_empty() {
        println!("{} report(s) valid; diagnostics re-derive exactly", a.reports.len());
        Ok(())
    } else {
        Err(Failure::Check(format!("stored diagnostics differ from recomputed ones in {}", mismatched.join(", "))))
    }
}
