//! Command-line front end. Exit codes: 0 success, 1 usage, 2 invalid input,
//! 3 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::detector::{DetectorConfig, DetectorError, DetectorModel};
use crate::metrics::{compute_metrics, DetectionMetrics};
use crate::run::{run_scenario, train_detector};
use crate::scenario::{load_scenario, DetectorSetup, DetectorSource, ScenarioConfig, SignalId};
use crate::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Overrides a scenario's `output` directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "SHIPGRID_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "shipgrid",
    about = "Shipboard MVDC microgrid cyber-attack co-simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write <out>/<name>.csv.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a detector on an attack-free dry run and save the model.
    TrainDetector {
        scenario: PathBuf,
        /// Monitored signal, e.g. v_bar_0 or i_pu_1.
        #[arg(long)]
        channel: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario with a trained detector interposed and report metrics.
    Detect {
        scenario: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "v_bar_0")]
        channel: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Print the version.
    Version,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INVALID,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn main<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if informational {
                let _ = write!(stdout, "{text}");
                return EXIT_OK;
            }
            let _ = write!(stderr, "{text}");
            return EXIT_USAGE;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    load_scenario(path).map_err(Failure::invalid)
}

fn output_dir(flag: Option<PathBuf>, cfg: &ScenarioConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.clone())
}

fn parse_signal(s: &str, cfg: &ScenarioConfig) -> Result<SignalId, Failure> {
    let signal: SignalId = s.parse().map_err(|e: String| Failure {
        code: EXIT_USAGE,
        message: e,
    })?;
    if signal.agent >= cfg.n_agents() {
        return Err(Failure {
            code: EXIT_USAGE,
            message: format!("signal `{s}` names agent {} of {}", signal.agent, cfg.n_agents()),
        });
    }
    Ok(signal)
}

fn execute(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Version => {
            let _ = writeln!(stdout, "shipgrid {}", env!("CARGO_PKG_VERSION"));
        }
        Command::Validate { scenario } => {
            let cfg = load(&scenario)?;
            let _ = writeln!(
                stdout,
                "{}: ok ({} agents, {} steps, {} attacks, {} detectors)",
                cfg.name,
                cfg.n_agents(),
                cfg.steps(),
                cfg.attacks.len(),
                cfg.detectors.len()
            );
        }
        Command::Run { scenario, out } => {
            let cfg = load(&scenario)?;
            let dir = output_dir(out, &cfg);
            simulate(&cfg, &dir, stdout)?;
        }
        Command::Detect {
            scenario,
            model,
            channel,
            out,
        } => {
            let mut cfg = load(&scenario)?;
            let signal = parse_signal(&channel, &cfg)?;
            DetectorModel::load(&model).map_err(Failure::invalid)?;
            cfg.detectors = vec![DetectorSetup {
                signal,
                source: DetectorSource::Model(model),
                reconstruct: true,
            }];
            let dir = output_dir(out, &cfg);
            simulate(&cfg, &dir, stdout)?;
        }
        Command::TrainDetector {
            scenario,
            channel,
            out,
        } => {
            let cfg = load(&scenario)?;
            let signal = parse_signal(&channel, &cfg)?;
            let dcfg = cfg
                .detectors
                .iter()
                .find_map(|d| match &d.source {
                    DetectorSource::Train(c) if d.signal == signal => Some(c.clone()),
                    _ => None,
                })
                .unwrap_or_else(|| DetectorConfig {
                    seed: cfg.seed,
                    ..DetectorConfig::default()
                });
            let model = match train_detector(&cfg, signal, &dcfg) {
                Ok(m) => m,
                Err(Error::Detector(DetectorError::DidNotConverge {
                    model,
                    mse,
                    tolerance,
                    ..
                })) => {
                    let _ = writeln!(
                        stderr,
                        "warning: training stopped at MSE {mse:e} (tolerance {tolerance:e}); saving anyway"
                    );
                    *model
                }
                Err(e) => return Err(Failure::runtime(e)),
            };
            model.save(&out).map_err(Failure::runtime)?;
            let _ = writeln!(
                stdout,
                "{}: epochs={} mse={:e} max_residual={:e} radius={:e}",
                out.display(),
                model.epochs,
                model.achieved_mse,
                model.max_residual,
                model.radius
            );
        }
    }
    Ok(())
}

fn simulate(cfg: &ScenarioConfig, dir: &Path, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (ts, models) = run_scenario(cfg).map_err(|e| match e {
        Error::Detector(DetectorError::Io { .. } | DetectorError::Format(_)) => Failure::invalid(e),
        e => Failure::runtime(e),
    })?;
    std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("{}.csv", cfg.name));
    ts.write_csv_file(&path).map_err(Failure::runtime)?;
    let _ = writeln!(stdout, "wrote {} ({} rows)", path.display(), ts.len());
    for (d, m) in cfg.detectors.iter().zip(&models) {
        let _ = writeln!(stdout, "detector {}: radius={:e}", d.signal, m.radius);
    }
    if !cfg.detectors.is_empty() {
        let metrics = compute_metrics(&ts).map_err(Failure::runtime)?;
        print_metrics(&metrics, stdout);
    }
    Ok(())
}

fn print_metrics(m: &DetectionMetrics, out: &mut dyn Write) {
    let latency = |l: Option<f64>| l.map_or("none".to_string(), |v| format!("{v:.3}"));
    for c in &m.channels {
        let _ = writeln!(
            out,
            "{}: tp={} fp={} tn={} fn={} latency={}",
            c.signal,
            c.true_positive_samples,
            c.false_positive_samples,
            c.true_negative_samples,
            c.false_negative_samples,
            latency(c.detection_latency)
        );
    }
    let _ = writeln!(
        out,
        "total: tp={} fp={} tn={} fn={} latency={}",
        m.true_positive_samples,
        m.false_positive_samples,
        m.true_negative_samples,
        m.false_negative_samples,
        latency(m.detection_latency)
    );
}
