//! The multi-rate closed-loop simulator and the evaluation drivers.
//!
//! A 100 Hz master loop advances the true vehicle and pedestrians; the
//! controller samples at 50 Hz, the decision module at 10 Hz, and the intent
//! estimator at 5 Hz (all configurable divisors of the master rate). Every
//! run is fully determined by (config, seed); only wall-clock timing fields
//! differ between repeated runs.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{Mode, PathController};
use crate::decision::{self, Decision, TubeParams};
use crate::error::{Error, Result};
use crate::intent::{self, FilterState};
use crate::math::{linear_fit, median, Vec2};
use crate::pedestrian::{self, PedestrianState, PredictedTrajectory, StateSpaceModel};
use crate::reach::{
    self, BetaPair, Confidence, NestedInitialSets, ReachTube, StateBox, Stopwatch,
};
use crate::scenario::{PredictMap, ScenarioConfig, MASTER_HZ};
use crate::vehicle::{self, VehicleState, STATE_DIMS};

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Downsampled reach tube for the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeSummary {
    pub confidence: Confidence,
    pub mode: Mode,
    pub times: Vec<f64>,
    pub boxes: Vec<StateBox>,
}

impl TubeSummary {
    fn from_tube(tube: &ReachTube, stride: usize) -> TubeSummary {
        let idx: Vec<usize> = (0..tube.times.len()).step_by(stride.max(1)).collect();
        TubeSummary {
            confidence: tube.confidence,
            mode: tube.mode,
            times: idx.iter().map(|&k| tube.times[k]).collect(),
            boxes: idx.iter().map(|&k| tube.boxes[k]).collect(),
        }
    }
}

/// Everything the decision module produced at one DM tick.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision: Decision,
    pub ped_conflicts: Vec<bool>,
    /// Wall clock, stripped before determinism comparisons.
    pub compute_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tubes: Option<Vec<TubeSummary>>,
}

/// Per-pedestrian fields of one tick.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PedTickRecord {
    pub active: bool,
    pub true_position: Vec2,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<Vec2>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intents: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<(Vec2, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub vehicle_true: VehicleState,
    pub mode: Mode,
    pub pedestrians: Vec<PedTickRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vehicle_est: Option<VehicleState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub duration: f64,
    pub finished_path: bool,
    pub controller_calls: u64,
    pub dm_calls: u64,
    pub pie_calls: u64,
    pub brake_decisions: u64,
    pub min_ped_distance: Option<f64>,
    /// Wall clock for the whole run, stripped before determinism comparisons.
    pub compute_time_s: f64,
}

/// One record per JSON line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(Box<HeaderRecord>),
    Tick(Box<TickRecord>),
    Summary(SummaryRecord),
}

/// A complete run: header, per-tick records, summary.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub header: HeaderRecord,
    pub ticks: Vec<TickRecord>,
    pub summary: SummaryRecord,
}

impl RunLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &LogRecord::Header(Box::new(self.header.clone())))?;
        out.write_all(b"\n")?;
        for tick in &self.ticks {
            serde_json::to_writer(&mut out, &LogRecord::Tick(Box::new(tick.clone())))?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &LogRecord::Summary(self.summary.clone()))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<RunLog> {
        let mut header = None;
        let mut ticks = Vec::new();
        let mut summary = None;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogRecord>(&line)? {
                LogRecord::Header(h) => header = Some(*h),
                LogRecord::Tick(t) => ticks.push(*t),
                LogRecord::Summary(s) => summary = Some(s),
            }
        }
        Ok(RunLog {
            header: header.ok_or_else(|| Error::Config("log has no header record".into()))?,
            ticks,
            summary: summary.ok_or_else(|| Error::Config("log has no summary record".into()))?,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<RunLog> {
        let file = std::fs::File::open(path)?;
        RunLog::read_jsonl(std::io::BufReader::new(file))
    }
}

struct PedSim {
    script_index: usize,
    state: PedestrianState,
    truth_model: StateSpaceModel,
    filter: Option<FilterState>,
    prediction: Option<(PredictedTrajectory, f64)>,
    intents: Option<Vec<f64>>,
    process_rng: ChaCha8Rng,
    measure_rng: ChaCha8Rng,
    filter_seeds: ChaCha8Rng,
}

/// Runs one scenario to completion. Deterministic given (config, seed).
/// The closed-loop simulator as a steppable value: construct it, then call
/// [`Simulation::step`] until it returns `None`. [`run_scenario`] drives it
/// to completion and packages the log.
pub struct Simulation {
    prepared: crate::scenario::PreparedScenario,
    betas: BetaPair,
    seed: u64,
    tube_params: TubeParams,
    controller: PathController,
    vehicle_state: VehicleState,
    held_input: vehicle::VehicleInput,
    mode: Mode,
    peds: Vec<PedSim>,
    est_noise_rng: ChaCha8Rng,
    k: usize,
    steps: usize,
    controller_calls: u64,
    dm_calls: u64,
    pie_calls: u64,
    brake_decisions: u64,
    min_ped_distance: Option<f64>,
    finished_path: bool,
    arc_hint: f64,
    duration: f64,
    watch: Stopwatch,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig, betas: &BetaPair, seed: u64) -> Result<Simulation> {
        let prepared = config.prepare()?;
        let cfg = &prepared.config;
        let t_look = cfg.monitor.t_look;
        if t_look > betas.min_horizon() + 1e-9 {
            return Err(Error::HorizonExceeded { t_look, horizon: betas.min_horizon() });
        }
        let master_dt = 1.0 / MASTER_HZ as f64;

        // fixed-order stream derivation keeps runs reproducible
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let est_noise_rng = ChaCha8Rng::seed_from_u64(master.gen());
        let mut peds: Vec<PedSim> = Vec::with_capacity(cfg.pedestrians.len());
        for (i, script) in cfg.pedestrians.iter().enumerate() {
            // the scripted walk runs at the master rate; scale the
            // per-estimator-step noise std so diffusion per second matches
            let scale = (master_dt / cfg.pedestrian_model.dt).sqrt();
            let truth_model = StateSpaceModel::new(
                master_dt,
                script.behavioral_noise_std * scale,
                cfg.pedestrian_model.measurement_noise_std,
            )?;
            peds.push(PedSim {
                script_index: i,
                state: PedestrianState {
                    position: script.start,
                    velocity: script.start_velocity,
                },
                truth_model,
                filter: None,
                prediction: None,
                intents: None,
                process_rng: ChaCha8Rng::seed_from_u64(master.gen()),
                measure_rng: ChaCha8Rng::seed_from_u64(master.gen()),
                filter_seeds: ChaCha8Rng::seed_from_u64(master.gen()),
            });
        }

        let tube_params = TubeParams {
            m_cap: cfg.monitor.m_cap,
            t_look,
            dt: cfg.monitor.tube_dt,
        };
        let controller = PathController::new(&cfg.control);
        let vehicle_state = cfg.vehicle.start.constrained(&cfg.vehicle.params);
        let steps = (cfg.run.max_duration * MASTER_HZ as f64).round() as usize;
        Ok(Simulation {
            prepared,
            betas: betas.clone(),
            seed,
            tube_params,
            controller,
            vehicle_state,
            held_input: vehicle::VehicleInput::ZERO,
            mode: Mode::Trackspeed,
            peds,
            est_noise_rng,
            k: 0,
            steps,
            controller_calls: 0,
            dm_calls: 0,
            pie_calls: 0,
            brake_decisions: 0,
            min_ped_distance: None,
            finished_path: false,
            arc_hint: 0.0,
            duration: 0.0,
            watch: Stopwatch::start(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.prepared.config
    }

    pub fn path(&self) -> &crate::spline::Path {
        &self.prepared.path
    }

    pub fn time(&self) -> f64 {
        self.k as f64 / MASTER_HZ as f64
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn vehicle_state(&self) -> VehicleState {
        self.vehicle_state
    }

    pub fn pedestrian_positions(&self) -> Vec<Vec2> {
        self.peds.iter().map(|p| p.state.position).collect()
    }

    pub fn finished(&self) -> bool {
        self.finished_path || self.k >= self.steps
    }

    pub fn header(&self) -> HeaderRecord {
        HeaderRecord {
            schema_version: LOG_SCHEMA_VERSION,
            seed: self.seed,
            config: self.prepared.config.clone(),
        }
    }

    pub fn summary(&self) -> SummaryRecord {
        SummaryRecord {
            duration: self.duration,
            finished_path: self.finished_path,
            controller_calls: self.controller_calls,
            dm_calls: self.dm_calls,
            pie_calls: self.pie_calls,
            brake_decisions: self.brake_decisions,
            min_ped_distance: self.min_ped_distance,
            compute_time_s: self.watch.elapsed_s(),
        }
    }

    /// Advances one master tick; returns the tick record, or `None` once the
    /// run has ended (path finished or max duration reached).
    pub fn step(&mut self) -> Result<Option<TickRecord>> {
        if self.finished() {
            return Ok(None);
        }
        let master_dt = 1.0 / MASTER_HZ as f64;
        let cfg = &self.prepared.config;
        let controller_every = (MASTER_HZ / cfg.rates.controller_hz) as usize;
        let dm_every = (MASTER_HZ / cfg.rates.dm_hz) as usize;
        let pie_every = (MASTER_HZ / cfg.rates.pie_hz) as usize;
        let pie_dt = 1.0 / cfg.rates.pie_hz as f64;
        let k = self.k;
        let t = k as f64 * master_dt;

        // --- intent estimation tick ---
        let mut measured: Vec<Option<Vec2>> = vec![None; self.peds.len()];
        let mut fresh_estimates: Vec<bool> = vec![false; self.peds.len()];
        if k % pie_every == 0 {
            self.pie_calls += 1;
            for (i, ped) in self.peds.iter_mut().enumerate() {
                if t + 1e-9 < cfg.pedestrians[ped.script_index].start_time {
                    continue;
                }
                let meas = pedestrian::measure_with_rng(
                    &ped.state,
                    &self.prepared.model,
                    &mut ped.measure_rng,
                );
                measured[i] = Some(meas);
                match &ped.filter {
                    None => {
                        let filter = intent::init_filter(
                            meas,
                            &cfg.environment,
                            &cfg.filter,
                            ped.filter_seeds.gen(),
                        )?;
                        ped.intents = Some(filter.intent_distribution().probabilities);
                        ped.filter = Some(filter);
                    }
                    Some(filter) => {
                        let out = intent::estimate_step(
                            filter,
                            meas,
                            &self.prepared.model,
                            &cfg.environment,
                            &cfg.gpfa,
                            pie_dt,
                            cfg.run.rollout_horizon,
                            ped.filter_seeds.gen(),
                        )?;
                        ped.filter = Some(out.filter);
                        ped.intents = Some(out.intents.probabilities);
                        ped.prediction = Some((out.trajectory, t));
                        fresh_estimates[i] = true;
                    }
                }
            }
        }

        // --- decision tick ---
        let mut vehicle_est = None;
        let mut decision_record = None;
        if k % dm_every == 0 {
            self.dm_calls += 1;
            let estimate = noisy_estimate(
                &self.vehicle_state,
                &cfg.noise.vehicle_estimate_std,
                &mut self.est_noise_rng,
            )
            .constrained(&cfg.vehicle.params);
            vehicle_est = Some(estimate);
            let sets = NestedInitialSets::around(estimate, &cfg.monitor.confidence_radii)?;
            let ped_trajs: Vec<PredictedTrajectory> = self
                .peds
                .iter()
                .filter_map(|p| p.prediction.as_ref())
                .map(|(traj, made_at)| traj.advance(t - made_at))
                .collect();
            let cl = self.prepared.closed_loop();
            let outcome = decision::decide(
                &sets,
                &ped_trajs,
                cfg.monitor.risk_level,
                &self.betas,
                &self.tube_params,
                &cl,
                cfg.monitor.r_ped,
                cfg.monitor.footprint_radius,
            )?;
            if outcome.decision.mode == Mode::Brake {
                self.brake_decisions += 1;
            }
            self.mode = outcome.decision.mode;
            let tubes = if cfg.run.log_tubes {
                let stride = cfg.run.tube_log_stride;
                let mut summaries = vec![
                    TubeSummary::from_tube(&outcome.tubes.low, stride),
                    TubeSummary::from_tube(&outcome.tubes.medium, stride),
                    TubeSummary::from_tube(&outcome.tubes.high, stride),
                ];
                if let Some(brake_tube) = &outcome.brake_tube {
                    summaries.push(TubeSummary::from_tube(brake_tube, stride));
                }
                Some(summaries)
            } else {
                None
            };
            decision_record = Some(DecisionRecord {
                decision: outcome.decision,
                ped_conflicts: outcome.ped_conflicts,
                compute_time_s: outcome.compute_time_s,
                tubes,
            });
        }

        // --- controller tick ---
        if k % controller_every == 0 {
            self.controller_calls += 1;
            self.held_input = self.controller.control(
                &self.vehicle_state,
                &self.prepared.path,
                self.mode,
                cfg.path.v_r,
                &cfg.vehicle.params,
                1.0 / cfg.rates.controller_hz as f64,
            );
        }

        // --- the tick record (state at time t, actions chosen at time t) ---
        let ped_records: Vec<PedTickRecord> = self
            .peds
            .iter()
            .enumerate()
            .map(|(i, ped)| {
                let active = t + 1e-9 >= cfg.pedestrians[ped.script_index].start_time;
                PedTickRecord {
                    active,
                    true_position: ped.state.position,
                    measured: measured[i],
                    intents: if k % pie_every == 0 && measured[i].is_some() {
                        ped.intents.clone()
                    } else {
                        None
                    },
                    predicted: if fresh_estimates[i] {
                        ped.prediction.as_ref().map(|(traj, _)| traj.points.clone())
                    } else {
                        None
                    },
                }
            })
            .collect();
        let record = TickRecord {
            t,
            vehicle_true: self.vehicle_state,
            mode: self.mode,
            pedestrians: ped_records,
            vehicle_est,
            decision: decision_record,
        };

        // --- advance the plant ---
        self.vehicle_state = vehicle::rk4_step(
            &self.vehicle_state,
            &self.held_input,
            &cfg.vehicle.params,
            master_dt,
        )?;
        for ped in self.peds.iter_mut() {
            let script = &cfg.pedestrians[ped.script_index];
            if t + 1e-9 >= script.start_time {
                let goal = cfg.environment.goals[script.true_intent];
                ped.state = pedestrian::step_with_rng(
                    &ped.state,
                    goal,
                    &ped.truth_model,
                    &cfg.environment,
                    &cfg.gpfa,
                    &mut ped.process_rng,
                )?;
                let d = ped
                    .state
                    .position
                    .distance(Vec2::new(self.vehicle_state.x, self.vehicle_state.y));
                self.min_ped_distance = Some(match self.min_ped_distance {
                    Some(cur) => cur.min(d),
                    None => d,
                });
            }
        }
        self.k += 1;
        self.duration = self.k as f64 * master_dt;

        // --- termination: path finished ---
        let pos = Vec2::new(self.vehicle_state.x, self.vehicle_state.y);
        self.arc_hint = self.prepared.path.nearest(pos, Some(self.arc_hint));
        let end = self.prepared.path.point_at(self.prepared.path.total_length());
        if self.arc_hint >= self.prepared.path.total_length() - 0.3 && pos.distance(end) < 1.0 {
            self.finished_path = true;
        }
        Ok(Some(record))
    }
}

/// Runs one scenario to completion. Deterministic given (config, seed).
pub fn run_scenario(config: &ScenarioConfig, betas: &BetaPair, seed: u64) -> Result<RunLog> {
    let mut sim = Simulation::new(config, betas, seed)?;
    let mut ticks = Vec::new();
    while let Some(tick) = sim.step()? {
        ticks.push(tick);
    }
    Ok(RunLog { header: sim.header(), ticks, summary: sim.summary() })
}

fn noisy_estimate(
    truth: &VehicleState,
    std: &[f64; STATE_DIMS],
    rng: &mut ChaCha8Rng,
) -> VehicleState {
    let mut arr = truth.to_array();
    for d in 0..STATE_DIMS {
        if std[d] > 0.0 {
            arr[d] += Normal::new(0.0, std[d]).unwrap().sample(rng);
        }
    }
    VehicleState::from_array(arr)
}

/// Accuracy grid: rows are confidence levels, columns look-ahead times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub t_looks: Vec<f64>,
    /// cells[level][column]; level order low, medium, high.
    pub cells: Vec<Vec<f64>>,
    pub tick_counts: Vec<Vec<u64>>,
    pub runs: usize,
    pub full_state: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl AccuracyReport {
    pub fn cell(&self, level: Confidence, column: usize) -> f64 {
        let row = match level {
            Confidence::Low => 0,
            Confidence::Medium => 1,
            Confidence::High => 2,
        };
        self.cells[row][column]
    }

    /// Plain-text table in the shape of the reach-set accuracy grid.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("T_look (s)   ");
        for t in &self.t_looks {
            out.push_str(&format!("{t:>8.1}"));
        }
        out.push('\n');
        for (row, level) in ["Low", "Medium", "High"].iter().enumerate() {
            out.push_str(&format!("{level:<12} "));
            for c in 0..self.t_looks.len() {
                out.push_str(&format!("{:>8.3}", 100.0 * self.cells[row][c]));
            }
            out.push('\n');
        }
        out
    }
}

/// Replays logged runs against freshly computed tubes and aggregates the
/// per-tick containment accuracy into a (confidence, T_look) grid.
///
/// Tubes are recomputed from the logged vehicle estimates (the computation
/// is deterministic), evaluated once at the largest look-ahead and truncated
/// for the smaller columns. Ticks whose remaining truth window is shorter
/// than the largest look-ahead are skipped.
pub fn evaluate_accuracy(
    logs: &[RunLog],
    betas: &BetaPair,
    t_looks: &[f64],
    full_state: bool,
) -> Result<AccuracyReport> {
    if logs.is_empty() {
        return Err(Error::InvalidInput("no run logs supplied".into()));
    }
    if t_looks.is_empty() {
        return Err(Error::InvalidInput("empty T_look grid".into()));
    }
    let t_max = t_looks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if t_max > betas.min_horizon() + 1e-9 {
        return Err(Error::HorizonExceeded { t_look: t_max, horizon: betas.min_horizon() });
    }

    let mut sums = vec![vec![0.0; t_looks.len()]; 3];
    let mut counts = vec![vec![0u64; t_looks.len()]; 3];

    for log in logs {
        let prepared = log.header.config.prepare()?;
        let cfg = &prepared.config;
        let cl = prepared.closed_loop();
        let master_dt = 1.0 / MASTER_HZ as f64;
        let window = (t_max / master_dt).round() as usize;

        for (idx, tick) in log.ticks.iter().enumerate() {
            let Some(estimate) = tick.vehicle_est else { continue };
            if tick.decision.is_none() {
                continue;
            }
            if idx + window >= log.ticks.len() {
                break; // not enough truth left for the largest column
            }
            let truth: Vec<(f64, VehicleState)> = log.ticks[idx..=idx + window]
                .iter()
                .map(|tk| (tk.t - tick.t, tk.vehicle_true))
                .collect();

            // replay the trackspeed tube: it is the set the monitor computes
            // at every tick (brake tubes are only an unavoidability check)
            let sets = NestedInitialSets::around(estimate, &cfg.monitor.confidence_radii)?;
            let tubes = reach::nested_tubes(
                &sets,
                Mode::Trackspeed,
                &betas.trackspeed,
                cfg.monitor.m_cap,
                t_max,
                cfg.monitor.tube_dt,
                &cl,
            )?;
            for (row, tube) in [&tubes.low, &tubes.medium, &tubes.high].iter().enumerate() {
                for (col, t_look) in t_looks.iter().enumerate() {
                    let truncated = tube.truncated(*t_look)?;
                    let acc = truncated.containment_accuracy(&truth, full_state)?;
                    sums[row][col] += acc;
                    counts[row][col] += 1;
                }
            }
        }
    }

    let cells = sums
        .iter()
        .zip(&counts)
        .map(|(s_row, c_row)| {
            s_row
                .iter()
                .zip(c_row)
                .map(|(s, c)| if *c > 0 { s / *c as f64 } else { f64::NAN })
                .collect()
        })
        .collect();
    let warning = if logs.len() < 20 {
        Some(format!("only {} runs; the grid is statistically thin (20+ recommended)", logs.len()))
    } else {
        None
    };
    Ok(AccuracyReport {
        t_looks: t_looks.to_vec(),
        cells,
        tick_counts: counts,
        runs: logs.len(),
        full_state,
        warning,
    })
}

/// Wall-clock timing of reach-tube computation across look-ahead times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub t_looks: Vec<f64>,
    pub medians_s: Vec<f64>,
    pub repetitions: usize,
    pub slope_s_per_s: f64,
    pub intercept_s: f64,
    pub r_squared: f64,
}

impl TimingReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("T_look (s)        ");
        for t in &self.t_looks {
            out.push_str(&format!("{t:>9.1}"));
        }
        out.push('\n');
        out.push_str("median time (ms)  ");
        for m in &self.medians_s {
            out.push_str(&format!("{:>9.3}", 1000.0 * m));
        }
        out.push('\n');
        out.push_str(&format!(
            "linear fit: {:.4} ms/s, intercept {:.4} ms, R^2 = {:.4}\n",
            1000.0 * self.slope_s_per_s,
            1000.0 * self.intercept_s,
            self.r_squared
        ));
        out
    }
}

/// Times `compute_reach_tube` at each look-ahead over `repetitions` calls
/// (after warm-up) and reports medians plus a linear fit.
pub fn bench_compute_time(
    config: &ScenarioConfig,
    betas: &BetaPair,
    t_looks: &[f64],
    repetitions: usize,
) -> Result<TimingReport> {
    if t_looks.is_empty() || repetitions == 0 {
        return Err(Error::InvalidInput("bench needs a T_look grid and repetitions".into()));
    }
    let prepared = config.prepare()?;
    let cfg = &prepared.config;
    let cl = prepared.closed_loop();
    let theta = reach::InitialSet {
        center: cfg.vehicle.start.constrained(&cfg.vehicle.params),
        radii: cfg.monitor.confidence_radii.medium,
        confidence: Confidence::Medium,
    };

    let mut medians_s = Vec::with_capacity(t_looks.len());
    for &t_look in t_looks {
        // warm-up
        for _ in 0..3 {
            reach::compute_reach_tube(
                &theta,
                Mode::Trackspeed,
                &betas.trackspeed,
                cfg.monitor.m_cap,
                t_look,
                cfg.monitor.tube_dt,
                &cl,
            )?;
        }
        let mut samples = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let tube = reach::compute_reach_tube(
                &theta,
                Mode::Trackspeed,
                &betas.trackspeed,
                cfg.monitor.m_cap,
                t_look,
                cfg.monitor.tube_dt,
                &cl,
            )?;
            samples.push(tube.compute_time_s);
        }
        medians_s.push(median(&samples));
    }
    let (slope, intercept, r2) = linear_fit(t_looks, &medians_s);
    Ok(TimingReport {
        t_looks: t_looks.to_vec(),
        medians_s,
        repetitions,
        slope_s_per_s: slope,
        intercept_s: intercept,
        r_squared: r2,
    })
}

/// One output line of the offline intent replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub t: f64,
    pub measurement: Vec2,
    pub intents: Vec<f64>,
    pub map_intent: usize,
    pub trajectory: Vec<(Vec2, f64)>,
    pub reached_goal: bool,
}

/// Replays a recorded pedestrian track (timestamped positions) through the
/// intent estimator, emitting one record per measurement after the first.
pub fn predict_intent_replay(
    track: &[(f64, Vec2)],
    map: &PredictMap,
    seed: u64,
) -> Result<Vec<ReplayRecord>> {
    if track.len() < 2 {
        return Err(Error::InvalidInput("track needs at least two samples".into()));
    }
    for w in track.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::InvalidInput(format!(
                "track timestamps must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
    }
    let model = map.model()?;
    let horizon = map.rollout_horizon.unwrap_or(20.0);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut filter = intent::init_filter(track[0].1, &map.environment, &map.filter, seeds.gen())?;
    let mut records = Vec::with_capacity(track.len() - 1);
    for w in track.windows(2) {
        let (t_prev, _) = w[0];
        let (t, meas) = w[1];
        let out = intent::estimate_step(
            &filter,
            meas,
            &model,
            &map.environment,
            &map.gpfa,
            t - t_prev,
            horizon,
            seeds.gen(),
        )?;
        filter = out.filter;
        let map_intent = out.intents.argmax();
        records.push(ReplayRecord {
            t,
            measurement: meas,
            intents: out.intents.probabilities,
            map_intent,
            trajectory: out.trajectory.points,
            reached_goal: out.trajectory.reached_goal,
        });
    }
    Ok(records)
}

/// Strips wall-clock fields (`compute_time_s`) from a JSON value, recursively.
pub fn strip_wall_clock(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("compute_time_s");
            for (_, v) in map.iter_mut() {
                strip_wall_clock(v);
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                strip_wall_clock(v);
            }
        }
        _ => {}
    }
}

/// Compares two JSONL logs for equality modulo wall-clock fields.
pub fn logs_equal_modulo_wall_clock(a: &str, b: &str) -> Result<bool> {
    let parse = |text: &str| -> Result<Vec<serde_json::Value>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l)?;
                strip_wall_clock(&mut v);
                Ok(v)
            })
            .collect()
    };
    Ok(parse(a)? == parse(b)?)
}
