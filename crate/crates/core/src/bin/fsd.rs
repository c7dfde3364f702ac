use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use fsd_core::conenet::{self, generate_dataset, Dataset, DatasetConfig, TrainConfig};
use fsd_core::harness::metrics::METRICS_HEADER;
use fsd_core::harness::output::{beliefs_csv, metrics_row};
use fsd_core::harness::{
    read_belief_csv, replay_beliefs, run_episode, write_run, ControllerKind, EpisodeConfig, EpisodeLog,
    HarnessError,
};
use fsd_core::planner::reference_csv;
use fsd_core::sensors::parse_log;
use fsd_core::track::{generate_loop, TrackSpec};

#[derive(Parser)]
#[command(name = "fsd", version, about = "Driverless racecar simulator and autonomy stack")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Mpc,
    Pp,
}

#[derive(clap::Args)]
struct EpisodeArgs {
    /// Episode configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one setting, e.g. `--set mpc.speed_ref=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode.
    Sim {
        #[command(flatten)]
        episode: EpisodeArgs,
        #[arg(long, value_enum)]
        controller: Option<ControllerArg>,
        /// Print the full configuration and exit.
        #[arg(long)]
        dump_config: bool,
        /// Also report metrics computed on the estimator belief.
        #[arg(long)]
        on_belief: bool,
    },
    /// Generate a random closed track and write its cone layout.
    GenTrack {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        turns: usize,
        #[arg(long, default_value_t = 8.0)]
        min_radius: f64,
        #[arg(long, default_value_t = 4.0)]
        width: f64,
        #[arg(long, default_value_t = 5.0)]
        spacing: f64,
        /// Cone layout CSV; the centerline goes next to it with a `.reference.csv` suffix.
        #[arg(long, default_value = "track.csv")]
        out: PathBuf,
    },
    /// Generate a cone classification dataset.
    GenDataset {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Train the cone classifier.
    Train {
        /// Dataset CSV; generated from `--seed` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        /// Directory for `model.cnet` and `train_metrics.csv`.
        #[arg(long, default_value = "conenet")]
        out: PathBuf,
    },
    /// Report per-cone accuracy of a trained classifier.
    EvalConenet {
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV; generated from `--seed` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 10.0)]
        range: f64,
    },
    /// Run MPC and pure pursuit on the same episode and tabulate metrics.
    Compare {
        #[command(flatten)]
        episode: EpisodeArgs,
    },
    /// Re-run the estimator over a run directory's measurement log.
    Replay {
        run_dir: PathBuf,
        /// Where to write the replayed belief log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_file(path: &Path, text: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_config(args: &EpisodeArgs) -> Result<EpisodeConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::Usage(format!("config file not found: {}", path.display())));
            }
            EpisodeConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => EpisodeConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn summary(log: &EpisodeLog) -> String {
    let mut s = format!(
        "{} seed {}: {} {}",
        log.config.controller.as_str(),
        log.config.seed,
        log.status.as_str(),
        log.status.detail()
    );
    if let Ok(m) = log.metrics() {
        let _ = write!(
            s,
            "\n  lateral accel std {:.4} m/s², mean |e_y| {:.4} m, speed {:.4} m/s, |sideslip| {:.5} rad",
            m.lat_accel_std, m.mean_abs_lateral_error, m.avg_speed, m.avg_abs_sideslip
        );
    }
    s
}

fn load_dataset(data: &Option<PathBuf>, n: usize, seed: u64) -> Result<Dataset, Failure> {
    match data {
        Some(path) => Dataset::from_csv(&read_file(path)?).map_err(runtime),
        None => generate_dataset(&DatasetConfig::default(), n, seed).map_err(runtime),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sim {
            episode,
            controller,
            dump_config,
            on_belief,
        } => {
            let mut cfg = load_config(&episode)?;
            if let Some(c) = controller {
                cfg.controller = match c {
                    ControllerArg::Mpc => ControllerKind::Mpc,
                    ControllerArg::Pp => ControllerKind::PurePursuit,
                };
            }
            if dump_config {
                print!("{}", cfg.to_text());
                return Ok(());
            }
            let log = run_episode(&cfg)?;
            write_run(&log, &cfg.out)?;
            println!("{}", summary(&log));
            if on_belief {
                match log.metrics_on_belief() {
                    Ok(m) => println!(
                        "  on belief: lateral accel std {:.4}, mean |e_y| {:.4}, speed {:.4}, |sideslip| {:.5}",
                        m.lat_accel_std, m.mean_abs_lateral_error, m.avg_speed, m.avg_abs_sideslip
                    ),
                    Err(e) => println!("  on belief: {e}"),
                }
            }
            println!("wrote {}", cfg.out.display());
        }
        Command::GenTrack {
            seed,
            turns,
            min_radius,
            width,
            spacing,
            out,
        } => {
            let spec = TrackSpec {
                n_segments: turns,
                min_radius,
                width,
                spacing,
            };
            let track = generate_loop(&spec, seed).map_err(|e| match e {
                fsd_core::track::TrackError::BadSpec(m) => Failure::Usage(m),
                e => runtime(e),
            })?;
            write_file(&out, track.layout().to_csv())?;
            write_file(&out.with_extension("reference.csv"), reference_csv(&track.reference))?;
            println!(
                "{}: {:.1} m, {} blue and {} red cones",
                out.display(),
                track.lap_length(),
                track.blue_cones.len(),
                track.red_cones.len()
            );
        }
        Command::GenDataset { seed, n, out } => {
            let data = generate_dataset(&DatasetConfig::default(), n, seed).map_err(runtime)?;
            write_file(&out, data.to_csv())?;
            println!("{}: {} samples", out.display(), data.len());
        }
        Command::Train {
            data,
            seed,
            epochs,
            out,
        } => {
            let cfg = TrainConfig {
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let n = cfg.n_train + cfg.n_val + cfg.n_test;
            let dataset = load_dataset(&data, n, seed)?;
            let result = conenet::train(&cfg, &dataset).map_err(runtime)?;
            let mut curve = String::from("epoch,train_loss,val_loss,val_accuracy\n");
            for m in &result.metrics {
                let _ = writeln!(curve, "{},{},{},{}", m.epoch, m.train_loss, m.val_loss, m.val_accuracy);
            }
            write_file(&out.join("model.cnet"), conenet::io::encode_model(&result.network))?;
            write_file(&out.join("train_metrics.csv"), curve)?;
            println!(
                "best epoch {}, test accuracy {:.4}, test loss {:.5}; wrote {}",
                result.best_epoch,
                result.test_accuracy,
                result.test_loss,
                out.display()
            );
        }
        Command::EvalConenet {
            model,
            data,
            seed,
            n,
            range,
        } => {
            let bytes = std::fs::read(&model).map_err(|e| Failure::Runtime(format!("{}: {e}", model.display())))?;
            let net = conenet::io::decode_model(&bytes).map_err(runtime)?;
            let dataset = load_dataset(&data, n, seed)?;
            let (acc, loss) = conenet::train::evaluate(&net, &dataset.samples, range);
            println!("{} samples: accuracy {acc:.4} within {range} m, loss {loss:.5}", dataset.len());
        }
        Command::Compare { episode } => {
            let cfg = load_config(&episode)?;
            let runs: Vec<(ControllerKind, EpisodeConfig)> = [ControllerKind::Mpc, ControllerKind::PurePursuit]
                .into_iter()
                .map(|c| {
                    let mut k = cfg.clone();
                    k.controller = c;
                    k.out = cfg.out.join(c.as_str());
                    (c, k)
                })
                .collect();
            let logs: Vec<Result<EpisodeLog, HarnessError>> = std::thread::scope(|s| {
                let handles: Vec<_> = runs.iter().map(|(_, k)| s.spawn(move || run_episode(k))).collect();
                handles.into_iter().map(|h| h.join().expect("episode thread panicked")).collect()
            });
            let mut table = format!("{METRICS_HEADER}\n");
            for ((_, k), log) in runs.iter().zip(logs) {
                let log = log?;
                write_run(&log, &k.out)?;
                println!("{}", summary(&log));
                table.push_str(&metrics_row(&log));
                table.push('\n');
            }
            write_file(&cfg.out.join("metrics.csv"), table)?;
            println!("wrote {}", cfg.out.join("metrics.csv").display());
        }
        Command::Replay { run_dir, out } => {
            let config_path = run_dir.join("config.ini");
            if !config_path.is_file() {
                return Err(Failure::Usage(format!("config file not found: {}", config_path.display())));
            }
            let cfg = EpisodeConfig::load(&config_path)?;
            let measurements = parse_log(&read_file(&run_dir.join("measurements.csv"))?).map_err(runtime)?;
            let original = read_belief_csv(&read_file(&run_dir.join("belief.csv"))?)?;
            let t_end = original
                .last()
                .map(|r| r[0])
                .or_else(|| measurements.last().map(|m| m.t))
                .unwrap_or(0.0);
            let replayed = replay_beliefs(&cfg, &measurements, t_end)?;
            let mut max_diff: f64 = 0.0;
            for (a, b) in original.iter().zip(&replayed) {
                max_diff = max_diff.max((a[0] - b.t).abs());
                for i in 0..6 {
                    max_diff = max_diff.max((a[i + 1] - b.mean[i]).abs());
                }
            }
            let out = out.unwrap_or_else(|| run_dir.join("belief_replay.csv"));
            write_file(&out, beliefs_csv(&replayed))?;
            println!(
                "replayed {} beliefs ({} logged), max abs difference {max_diff:e}; wrote {}",
                replayed.len(),
                original.len(),
                out.display()
            );
            if replayed.len() != original.len() {
                return Err(Failure::Runtime("replayed belief count differs from the log".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    info!("starting");
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run `fsd --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn invoke(args: &[&str]) -> Result<(), Failure> {
        run(Cli::try_parse_from(std::iter::once("fsd").chain(args.iter().copied())).expect("arguments parse"))
    }

    #[test]
    fn missing_config_is_a_usage_error_naming_the_path() {
        match invoke(&["sim", "--config", "/nonexistent/episode.toml"]) {
            Err(Failure::Usage(m)) => assert!(m.contains("/nonexistent/episode.toml"), "{m}"),
            _ => panic!("expected a usage error"),
        }
    }

    #[test]
    fn unknown_flag_is_rejected() {
        let err = Cli::try_parse_from(["fsd", "sim", "--no-such-flag"]).err().expect("parse fails");
        assert!(err.use_stderr());
    }

    #[test]
    fn bad_override_is_a_usage_error() {
        assert!(matches!(invoke(&["sim", "--set", "mpc.nonsense=1"]), Err(Failure::Usage(_))));
    }

    #[test]
    fn compare_writes_one_metrics_row_per_controller() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        invoke(&["compare", "--seed", "7", "--out", out]).unwrap_or_else(|_| panic!("compare failed"));
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("mpc,7,completed,"), "{}", lines[1]);
        assert!(lines[2].starts_with("pure_pursuit,7,completed,"), "{}", lines[2]);
        assert!(dir.path().join("mpc/telemetry.csv").is_file());
        assert!(dir.path().join("pure_pursuit/telemetry.csv").is_file());
    }

    #[test]
    fn replay_reproduces_logged_beliefs() {
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path().join("run");
        let replay = dir.path().join("replay.csv");
        invoke(&["sim", "--seed", "3", "--set", "episode.duration=10", "--out", run_dir.to_str().unwrap()])
            .unwrap_or_else(|_| panic!("sim failed"));
        invoke(&["replay", run_dir.to_str().unwrap(), "--out", replay.to_str().unwrap()])
            .unwrap_or_else(|_| panic!("replay failed"));
        let logged = read_belief_csv(&std::fs::read_to_string(run_dir.join("belief.csv")).unwrap()).unwrap();
        let replayed = read_belief_csv(&std::fs::read_to_string(&replay).unwrap()).unwrap();
        assert_eq!(logged.len(), replayed.len());
        for (a, b) in logged.iter().zip(&replayed) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
            }
        }
    }
}
