//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed checks or numerical errors, 2 bad
//! arguments or config, 3 unreadable or malformed files.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::io::analyze::{analysis_csv, analyze_snapshots};
use crate::io::config::{load_config, parse_config, RunConfig};
use crate::io::manifest::{load_manifest, write_manifest, RunManifest, SnapshotEntry};
use crate::io::report::write_report;
use crate::io::snapshot::write_snapshot;
use crate::io::trace::{read_trace, TraceWriter};
use crate::model::MATRIX_NAMES;
use crate::telemetry::{phase_report, predict_thresholds, EpsilonMode, PhaseOptions, PhaseReport};
use crate::train::{train, TrainSummary};
use crate::verification::{check_descent_lemma, check_inequality_suite, finite_diff_gradcheck, Lemma, SuiteReport};

/// Relative output directories are placed under this variable when set.
pub const OUT_ROOT_VAR: &str = "SOSD_OUT_ROOT";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TRACE_FILE: &str = "trace.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const ANALYSIS_FILE: &str = "analysis.csv";

#[derive(Parser, Debug)]
#[command(name = "sosd", version, about = "Spectral dynamics of a toy attention model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a config and write trace, snapshots and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute spectral metrics over the snapshots of a run.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the randomized inequality and gradient checks.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Restrict the lemma suite to one lemma, e.g. L3.
        #[arg(long)]
        lemma: Option<String>,
    },
    /// Predicted stabilization thresholds for a finished run.
    PredictThresholds {
        #[arg(long)]
        manifest: PathBuf,
        /// Constant in front of T*.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
    /// Render an SVG of loss and SD variation with onset markers.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model width; read from a sibling manifest when omitted.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Suite {
    Lemmas,
    Gradcheck,
    Descent,
    All,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { .. } | Error::Snapshot { .. } | Error::Trace { .. } | Error::Manifest { .. } => 3,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_owned(),
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train { config, out } => {
            let config = load_config(&config)?;
            let out = out_path(&out);
            let (manifest, summary) = train_to_dir(&config, &out)?;
            println!("run_id = {}", manifest.run_id);
            println!("out = {}", out.display());
            let last = summary.records.last().expect("at least one record");
            println!("steps = {}", last.step);
            println!("final_loss = {:e}", last.loss);
            print_phase(&phase_report(&summary.records, &phase_options(&config))?);
            Ok(0)
        }
        Command::Analyze { manifest, out } => {
            let (m, base) = load_manifest(&manifest)?;
            let rows = analyze_snapshots(&m, &base)?;
            let out = out_path(&out);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let path = out.join(ANALYSIS_FILE);
            std::fs::write(&path, analysis_csv(&rows)).map_err(|e| Error::io(&path, e))?;
            println!("rows = {}", rows.len());
            println!("analysis = {}", path.display());
            Ok(0)
        }
        Command::Verify { suite, trials, seed, lemma } => {
            let reports = run_suites(suite, trials, seed, lemma.as_deref())?;
            let mut failed = false;
            for r in &reports {
                println!("{r}\n");
                failed |= !r.passed();
            }
            Ok(if failed { 1 } else { 0 })
        }
        Command::PredictThresholds { manifest, c } => {
            let (m, base) = load_manifest(&manifest)?;
            let constants = m.constants.ok_or_else(|| Error::Manifest {
                index: 0,
                path: manifest.display().to_string(),
                reason: "manifest has no [constants]".into(),
            })?;
            let k = constants.threshold_constants(c);
            let t = predict_thresholds(&k)?;
            println!("epsilon = {:e}", k.epsilon);
            println!("g = {:e}", k.g);
            println!("c_v = {:e}", k.c_v);
            println!("c_m = {:e}", k.c_m);
            println!("lambda = {:e}", t.lambda);
            println!("t_v = {:e}", t.t_v);
            println!("t_qk = {:e}", t.t_qk);
            println!("t_qk_exact = {:e}", t.t_qk_exact);
            println!("t_star = {:e}", t.t_star);
            println!("qk_already_stable = {}", t.qk_already_stable);
            if let (Some(trace), Some(config)) = (&m.trace, &m.config) {
                let records = read_trace(&m.resolve(&base, trace))?;
                let p = phase_report(&records, &phase_options(config))?;
                print_phase(&p);
            }
            Ok(0)
        }
        Command::Report { trace, out, dim, window } => {
            let records = read_trace(&trace)?;
            let sibling = trace.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
            let config = if sibling.is_file() {
                let text = std::fs::read_to_string(&sibling).map_err(|e| Error::io(&sibling, e))?;
                Some(parse_config(&text)?)
            } else {
                None
            };
            let mut opts = match (dim, &config) {
                (Some(d), _) => PhaseOptions::new(d),
                (None, Some(c)) => phase_options(c),
                (None, None) => {
                    return Err(Error::invalid("--dim is required without a sibling manifest.toml"))
                }
            };
            if let Some(w) = window {
                opts.window = w;
            }
            let p = phase_report(&records, &opts)?;
            let out = out_path(&out);
            write_report(&out, &records, p.onsets)?;
            println!("report = {}", out.display());
            print_phase(&p);
            Ok(0)
        }
    }
}

pub fn phase_options(config: &RunConfig) -> PhaseOptions {
    let mut opts = PhaseOptions::new(config.model.d);
    opts.window = config.train.onset_window;
    if let Some(e) = config.train.epsilon {
        opts.epsilon = EpsilonMode::Fixed(e);
    }
    opts
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

fn print_phase(p: &PhaseReport) {
    for (name, o) in MATRIX_NAMES.iter().zip(p.onsets) {
        println!("onset_{} = {}", name.to_lowercase(), fmt_opt(o));
    }
    println!("t_f = {}", p.t_f);
    println!("t_s = {}", fmt_opt(p.t_s));
    println!("t_beta = {}", fmt_opt(p.t_beta));
    println!("phase1_mean_dl = {:e}", p.phase1_mean_dl);
    println!("phase2_mean_dl = {}", fmt_opt(p.phase2_mean_dl.map(|v| format!("{v:e}"))));
    println!("p_hat = {}", fmt_opt(p.p_hat));
    println!("phase1_bound = {:e}", p.phase1_bound);
}

fn run_suites(suite: Suite, trials: usize, seed: u64, lemma: Option<&str>) -> Result<Vec<SuiteReport>> {
    if trials == 0 {
        return Err(Error::invalid("--trials must be at least 1"));
    }
    let mut out = Vec::new();
    if matches!(suite, Suite::Lemmas | Suite::All) {
        let lemmas = match lemma {
            Some(s) => vec![s.parse::<Lemma>()?],
            None => Lemma::ALL.to_vec(),
        };
        for l in lemmas {
            out.push(check_inequality_suite(l, trials, seed, 2..=16)?);
        }
    }
    if matches!(suite, Suite::Gradcheck | Suite::All) {
        out.push(finite_diff_gradcheck(trials.min(20), seed)?);
    }
    if matches!(suite, Suite::Descent | Suite::All) {
        out.push(check_descent_lemma(1.0, 1.0, trials, seed)?);
        out.push(check_descent_lemma(4.0, 0.3, trials, seed)?);
    }
    Ok(out)
}

/// Trains and writes `trace.csv`, `snapshots/` and `manifest.toml` into `out`.
pub fn train_to_dir(config: &RunConfig, out: &Path) -> Result<(RunManifest, TrainSummary)> {
    config.validate()?;
    let snap_dir = out.join(SNAPSHOT_DIR);
    std::fs::create_dir_all(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
    let mut manifest = RunManifest::new(config);
    manifest.trace = Some(TRACE_FILE.into());
    let mut writer = TraceWriter::create(&out.join(TRACE_FILE))?;
    let mut entries = Vec::new();
    let summary = train(config, |view| {
        writer.append(view.record)?;
        let step = view.record.step;
        if config.train.snapshot_due(step) {
            for (name, w) in MATRIX_NAMES.iter().zip(view.state.trainable()) {
                let rel = format!("{SNAPSHOT_DIR}/{}_{step:07}.bin", name.to_lowercase());
                write_snapshot(&out.join(&rel), w)?;
                entries.push(SnapshotEntry {
                    step,
                    matrix: name.to_string(),
                    path: rel,
                });
            }
        }
        Ok(())
    })?;
    manifest.snapshots = entries;
    manifest.constants = Some(summary.constants);
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    Ok((manifest, summary))
}
