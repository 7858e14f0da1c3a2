//! Command-line driver: train sensitivity functions, run scenarios, evaluate
//! reach-set accuracy, benchmark tube computation time, and replay recorded
//! pedestrian tracks through the intent estimator.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing artifacts
//! (sensitivity files), 4 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use reachmon::control::Mode;
use reachmon::error::Error;
use reachmon::math::Vec2;
use reachmon::reach::{self, BetaPair, TrainingConfig};
use reachmon::scenario::{PredictMap, ScenarioConfig};
use reachmon::sim::{self, RunLog};

#[derive(Parser)]
#[command(
    name = "reachmon",
    about = "Closed-loop pedestrian-aware safety monitoring simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Trackspeed,
    Brake,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Trackspeed => Mode::Trackspeed,
            ModeArg::Brake => Mode::Brake,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learn a sensitivity function off-line from sampled trajectory pairs.
    LearnSensitivity {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Number of trajectory pairs to sample (at least 20).
        #[arg(long, default_value_t = 40)]
        pairs: usize,
        /// Training horizon in seconds; reach queries must stay below it.
        #[arg(long, default_value_t = 5.5)]
        horizon: f64,
        /// Time-bin width of the learned exponents, seconds.
        #[arg(long, default_value_t = 0.5)]
        bin_width: f64,
        /// Output file (conventionally sensitivity_<mode>.json).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenario supplying the path, gains, and vehicle parameters;
        /// defaults to the built-in crossing scenario.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one closed-loop scenario and write a JSON-lines log.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding sensitivity_trackspeed.json and sensitivity_brake.json.
        #[arg(long)]
        beta_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay run logs and report the reach-set accuracy grid.
    EvaluateAccuracy {
        /// Glob over run logs, e.g. 'logs/*.jsonl'.
        #[arg(long)]
        logs: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the beta directory recorded in the logs.
        #[arg(long)]
        beta_dir: Option<PathBuf>,
        /// Comma-separated look-ahead grid, seconds.
        #[arg(long, default_value = "3.0,3.5,4.0,4.5,5.0", value_delimiter = ',')]
        tlook: Vec<f64>,
        /// Check all five state dimensions instead of position only.
        #[arg(long, default_value_t = false)]
        full_state: bool,
    },
    /// Benchmark reach-tube computation time across look-ahead horizons.
    Bench {
        #[arg(long)]
        beta_dir: PathBuf,
        #[arg(long, default_value = "3.0,3.5,4.0,4.5,5.0", value_delimiter = ',')]
        tlook: Vec<f64>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Scenario supplying the path and vehicle; defaults to the built-in
        /// crossing scenario.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay a recorded pedestrian track through the intent estimator.
    PredictIntent {
        /// CSV of `t,x,y` samples, one pedestrian track.
        #[arg(long)]
        track: PathBuf,
        /// TOML map file: goals, obstacles, force-law and filter settings.
        #[arg(long)]
        map: PathBuf,
        /// Output JSON-lines file of per-step estimates.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the built-in example scenarios as TOML files.
    WriteScenarios {
        #[arg(long, default_value = "scenarios")]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::LearnSensitivity { mode, pairs, horizon, bin_width, out, seed, config } => {
            let config = load_or_default_config(config.as_deref())?;
            let prepared = config.prepare()?;
            let cl = prepared.closed_loop();
            let training = TrainingConfig {
                pairs,
                horizon,
                bin_width,
                offset_radii: config.monitor.confidence_radii.high,
                dt: config.monitor.tube_dt,
            };
            let mode: Mode = mode.into();
            let beta = reach::learn_sensitivity(mode, &cl, &training, seed)?;
            beta.save(&out)?;
            println!(
                "trained {mode} sensitivity over {pairs} pairs, horizon {horizon} s -> {}",
                out.display()
            );
            Ok(())
        }
        Command::Run { config, beta_dir, seed, out } => {
            let mut config = ScenarioConfig::load(&config)?;
            config.monitor.beta_dir = Some(beta_dir.display().to_string());
            let betas = BetaPair::load_dir(&beta_dir)?;
            let log = sim::run_scenario(&config, &betas, seed)?;
            log.save(&out)?;
            println!(
                "{}: {:.1} s simulated, {} brake decisions, min pedestrian distance {}, log -> {}",
                config.name,
                log.summary.duration,
                log.summary.brake_decisions,
                log.summary
                    .min_ped_distance
                    .map_or("n/a".to_string(), |d| format!("{d:.2} m")),
                out.display()
            );
            Ok(())
        }
        Command::EvaluateAccuracy { logs, out, beta_dir, tlook, full_state } => {
            let paths = expand_glob(&logs)?;
            if paths.is_empty() {
                return Err(Error::InvalidInput(format!("no logs match `{logs}`")));
            }
            let mut runs = Vec::with_capacity(paths.len());
            for p in &paths {
                runs.push(RunLog::load(p)?);
            }
            let betas = match beta_dir {
                Some(dir) => BetaPair::load_dir(&dir)?,
                None => {
                    let dir = runs[0]
                        .header
                        .config
                        .monitor
                        .beta_dir
                        .clone()
                        .ok_or_else(|| {
                            Error::MissingArtifact(
                                "logs carry no beta_dir; pass --beta-dir".into(),
                            )
                        })?;
                    BetaPair::load_dir(Path::new(&dir))?
                }
            };
            let report = sim::evaluate_accuracy(&runs, &betas, &tlook, full_state)?;
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            print!("{}", report.render());
            fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!("report -> {}", out.display());
            Ok(())
        }
        Command::Bench { beta_dir, tlook, reps, out, config } => {
            let config = load_or_default_config(config.as_deref())?;
            let betas = BetaPair::load_dir(&beta_dir)?;
            let report = sim::bench_compute_time(&config, &betas, &tlook, reps)?;
            print!("{}", report.render());
            fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!("report -> {}", out.display());
            Ok(())
        }
        Command::PredictIntent { track, map, out, seed } => {
            let map = PredictMap::load(&map)?;
            let track = read_track(&track)?;
            let records = sim::predict_intent_replay(&track, &map, seed)?;
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            fs::write(&out, text)?;
            println!("{} estimates -> {}", records.len(), out.display());
            Ok(())
        }
        Command::WriteScenarios { dir } => {
            fs::create_dir_all(&dir)?;
            for config in [ScenarioConfig::example_crossing(), ScenarioConfig::example_parallel()]
            {
                let path = dir.join(format!("{}.toml", config.name));
                fs::write(&path, config.to_toml_string()?)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn load_or_default_config(path: Option<&Path>) -> Result<ScenarioConfig, Error> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::example_crossing()),
    }
}

fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>, Error> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Error::InvalidInput(format!("bad glob `{pattern}`: {e}")))?
        .filter_map(|entry| entry.ok())
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads a `t,x,y` CSV track. Blank lines and `#` comments are skipped; a
/// single header line is tolerated.
fn read_track(path: &Path) -> Result<Vec<(f64, Vec2)>, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let mut track = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        match parsed {
            Some(values) if values.len() == 3 => {
                track.push((values[0], Vec2::new(values[1], values[2])));
            }
            _ if track.is_empty() && lineno == 0 => continue, // header row
            _ => {
                return Err(Error::InvalidInput(format!(
                    "{}:{}: expected `t,x,y`, got `{line}`",
                    path.display(),
                    lineno + 1
                )));
            }
        }
    }
    Ok(track)
}
