//! Browser demo: three interactive views over the core library, exposed
//! through wasm-bindgen and drawn by the static page in `index.html`.
//!
//! * `ScenarioPlayer` — steps a full closed-loop run (vehicle, pedestrian,
//!   intent estimation, reach tubes, braking decisions) tick by tick.
//! * `IntentLab` — a synthetic pedestrian walking toward a chosen goal with
//!   adjustable measurement noise, showing the live intent distribution.
//! * `TubeExplorer` — nested reach tubes from an arbitrary state with
//!   adjustable look-ahead, uncertainty scale, and partition cap.
//!
//! Sensitivity functions are trained inside the constructors (a fraction of
//! a second of simulation), so the page needs no data files.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use reachmon::control::Mode;
use reachmon::intent::{self, FilterConfig, FilterState};
use reachmon::math::Vec2;
use reachmon::pedestrian::{self, EnvironmentMap, PedestrianState, StateSpaceModel};
use reachmon::reach::{
    self, BetaPair, Confidence, NestedInitialSets, ReachTube, TrainingConfig,
};
use reachmon::scenario::ScenarioConfig;
use reachmon::sim::{DecisionRecord, Simulation, TubeSummary};
use reachmon::vehicle::VehicleState;

fn err_to_js(e: reachmon::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn train_betas(config: &ScenarioConfig, pairs: usize, horizon: f64) -> Result<BetaPair, JsValue> {
    let prepared = config.prepare().map_err(err_to_js)?;
    let cl = prepared.closed_loop();
    let training = TrainingConfig {
        pairs,
        horizon,
        bin_width: 0.5,
        offset_radii: config.monitor.confidence_radii.high,
        dt: config.monitor.tube_dt,
    };
    Ok(BetaPair {
        trackspeed: reach::learn_sensitivity(Mode::Trackspeed, &cl, &training, 11)
            .map_err(err_to_js)?,
        brake: reach::learn_sensitivity(Mode::Brake, &cl, &training, 12).map_err(err_to_js)?,
    })
}

#[derive(Serialize)]
struct XyBox {
    min: [f64; 2],
    max: [f64; 2],
}

fn xy_boxes(summary: &TubeSummary) -> Vec<XyBox> {
    summary
        .boxes
        .iter()
        .map(|b| XyBox { min: [b.min[0], b.min[1]], max: [b.max[0], b.max[1]] })
        .collect()
}

fn tube_xy(tube: &ReachTube, stride: usize) -> Vec<XyBox> {
    tube.boxes
        .iter()
        .step_by(stride.max(1))
        .map(|b| XyBox { min: [b.min[0], b.min[1]], max: [b.max[0], b.max[1]] })
        .collect()
}

#[derive(Serialize)]
struct PlayerFrame {
    t: f64,
    mode: String,
    vehicle: VehicleState,
    goals: Vec<[f64; 2]>,
    ped_true: Vec<[f64; 2]>,
    ped_measured: Vec<Option<[f64; 2]>>,
    intents: Vec<Option<Vec<f64>>>,
    predicted: Vec<Option<Vec<[f64; 2]>>>,
    tubes: Vec<Vec<XyBox>>,
    brake_tube: Option<Vec<XyBox>>,
    conflict_time: Option<f64>,
    unavoidable: bool,
    brake_decisions: u64,
    min_ped_distance: Option<f64>,
    finished: bool,
}

/// A full closed-loop run, steppable from JavaScript.
#[wasm_bindgen]
pub struct ScenarioPlayer {
    sim: Simulation,
    path_polyline: Vec<[f64; 2]>,
    last_decision: Option<DecisionRecord>,
    last_measured: Vec<Option<Vec2>>,
    last_intents: Vec<Option<Vec<f64>>>,
    last_predicted: Vec<Option<Vec<(Vec2, f64)>>>,
}

#[wasm_bindgen]
impl ScenarioPlayer {
    /// `scenario` is "crossing" or "parallel"; `noise_scale` multiplies every
    /// configured noise std; `risk` is "low" / "medium" / "high".
    #[wasm_bindgen(constructor)]
    pub fn new(scenario: &str, seed: u32, noise_scale: f64, risk: &str) -> Result<ScenarioPlayer, JsValue> {
        let mut config = match scenario {
            "parallel" => ScenarioConfig::example_parallel(),
            _ => ScenarioConfig::example_crossing(),
        };
        config.monitor.risk_level = match risk {
            "low" => Confidence::Low,
            "high" => Confidence::High,
            _ => Confidence::Medium,
        };
        let scale = noise_scale.clamp(0.0, 4.0);
        config.pedestrian_model.measurement_noise_std *= scale;
        for std in config.noise.vehicle_estimate_std.iter_mut() {
            *std *= scale;
        }
        for ped in config.pedestrians.iter_mut() {
            ped.behavioral_noise_std = ped.behavioral_noise_std * scale;
        }

        let betas = train_betas(&config, 24, config.monitor.t_look + 0.5)?;
        let sim = Simulation::new(&config, &betas, seed as u64).map_err(err_to_js)?;
        let n_peds = config.pedestrians.len();
        let path = sim.path();
        let n = 120usize;
        let path_polyline = (0..=n)
            .map(|k| {
                let s = path.total_length() * k as f64 / n as f64;
                let p = path.point_at(s);
                [p.x, p.y]
            })
            .collect();
        Ok(ScenarioPlayer {
            sim,
            path_polyline,
            last_decision: None,
            last_measured: vec![None; n_peds],
            last_intents: vec![None; n_peds],
            last_predicted: vec![None; n_peds],
        })
    }

    /// Advances `n` master ticks (10 ms each).
    pub fn tick(&mut self, n: u32) -> Result<(), JsValue> {
        for _ in 0..n {
            match self.sim.step().map_err(err_to_js)? {
                None => break,
                Some(record) => {
                    if record.decision.is_some() {
                        self.last_decision = record.decision.clone();
                    }
                    for (i, ped) in record.pedestrians.iter().enumerate() {
                        if let Some(m) = ped.measured {
                            self.last_measured[i] = Some(m);
                        }
                        if let Some(ints) = &ped.intents {
                            self.last_intents[i] = Some(ints.clone());
                        }
                        if let Some(pred) = &ped.predicted {
                            self.last_predicted[i] = Some(pred.clone());
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finished(&self) -> bool {
        self.sim.finished()
    }

    /// Path polyline as JSON (constant per scenario).
    pub fn path_json(&self) -> String {
        serde_json::to_string(&self.path_polyline).unwrap()
    }

    /// Current drawing state as JSON.
    pub fn frame_json(&self) -> String {
        let summary = self.sim.summary();
        let cfg = self.sim.config();
        let (tubes, brake_tube, conflict_time, unavoidable) = match &self.last_decision {
            Some(d) => {
                let mut levels: Vec<Vec<XyBox>> = Vec::new();
                let mut brake = None;
                if let Some(summaries) = &d.tubes {
                    for s in summaries {
                        if s.mode == Mode::Brake {
                            brake = Some(xy_boxes(s));
                        } else {
                            levels.push(xy_boxes(s));
                        }
                    }
                }
                (levels, brake, d.decision.first_conflict_time, d.decision.unavoidable)
            }
            None => (Vec::new(), None, None, false),
        };
        let frame = PlayerFrame {
            t: self.sim.time(),
            mode: self.sim.mode().to_string(),
            vehicle: self.sim.vehicle_state(),
            goals: cfg.environment.goals.iter().map(|g| [g.x, g.y]).collect(),
            ped_true: self
                .sim
                .pedestrian_positions()
                .iter()
                .map(|p| [p.x, p.y])
                .collect(),
            ped_measured: self.last_measured.iter().map(|m| m.map(|v| [v.x, v.y])).collect(),
            intents: self.last_intents.clone(),
            predicted: self
                .last_predicted
                .iter()
                .map(|p| p.as_ref().map(|pts| pts.iter().map(|(v, _)| [v.x, v.y]).collect()))
                .collect(),
            tubes,
            brake_tube,
            conflict_time,
            unavoidable,
            brake_decisions: summary.brake_decisions,
            min_ped_distance: summary.min_ped_distance,
            finished: self.sim.finished(),
        };
        serde_json::to_string(&frame).unwrap()
    }
}

#[derive(Serialize)]
struct IntentFrame {
    t: f64,
    walker: [f64; 2],
    measurement: [f64; 2],
    goals: Vec<[f64; 2]>,
    true_goal: usize,
    intents: Vec<f64>,
    map_intent: usize,
    predicted: Vec<[f64; 2]>,
    reached_goal: bool,
}

/// A lone pedestrian with adjustable measurement noise; the estimator runs
/// at 5 Hz against the scripted walk.
#[wasm_bindgen]
pub struct IntentLab {
    env: EnvironmentMap,
    gpfa: pedestrian::GpfaParams,
    model: StateSpaceModel,
    filter_cfg: FilterConfig,
    filter: Option<FilterState>,
    walker: PedestrianState,
    true_goal: usize,
    t: f64,
    rng_seed: u64,
    counter: u64,
}

#[wasm_bindgen]
impl IntentLab {
    #[wasm_bindgen(constructor)]
    pub fn new(measurement_noise: f64, seed: u32) -> Result<IntentLab, JsValue> {
        let env = EnvironmentMap {
            goals: vec![Vec2::new(9.0, 0.0), Vec2::new(0.0, 9.0), Vec2::new(-9.0, 0.0)],
            obstacles: vec![],
        };
        let gpfa = pedestrian::GpfaParams { v_ped_max: 1.5, ..Default::default() };
        let model = StateSpaceModel::new(
            0.2,
            Vec2::new(0.02, 0.02),
            measurement_noise.clamp(0.0, 2.0),
        )
        .map_err(err_to_js)?;
        Ok(IntentLab {
            env,
            gpfa,
            model,
            filter_cfg: FilterConfig::default(),
            filter: None,
            walker: PedestrianState::at_rest(Vec2::ZERO),
            true_goal: 0,
            t: 0.0,
            rng_seed: seed as u64,
            counter: 0,
        })
    }

    /// Restarts the walker at (x, y) heading for `goal`.
    pub fn reset(&mut self, x: f64, y: f64, goal: usize) {
        self.walker = PedestrianState::at_rest(Vec2::new(x, y));
        self.true_goal = goal.min(self.env.goals.len() - 1);
        self.filter = None;
        self.t = 0.0;
    }

    pub fn set_noise(&mut self, measurement_noise: f64) {
        self.model.measurement_noise_std = measurement_noise.clamp(0.0, 2.0);
    }

    /// One 0.2 s estimator step; returns the drawing state as JSON.
    pub fn step_json(&mut self) -> Result<String, JsValue> {
        self.counter += 1;
        let walk_seed = self.rng_seed.wrapping_mul(31).wrapping_add(self.counter);
        self.walker = pedestrian::step(
            &self.walker,
            self.env.goals[self.true_goal],
            &self.model,
            &self.env,
            &self.gpfa,
            walk_seed,
        )
        .map_err(err_to_js)?;
        self.t += 0.2;
        let meas = pedestrian::measure(&self.walker, &self.model, walk_seed.wrapping_add(1));

        let frame = match &self.filter {
            None => {
                let filter =
                    intent::init_filter(meas, &self.env, &self.filter_cfg, self.rng_seed)
                        .map_err(err_to_js)?;
                let intents = filter.intent_distribution().probabilities;
                self.filter = Some(filter);
                IntentFrame {
                    t: self.t,
                    walker: [self.walker.position.x, self.walker.position.y],
                    measurement: [meas.x, meas.y],
                    goals: self.env.goals.iter().map(|g| [g.x, g.y]).collect(),
                    true_goal: self.true_goal,
                    map_intent: 0,
                    intents,
                    predicted: vec![],
                    reached_goal: false,
                }
            }
            Some(filter) => {
                let out = intent::estimate_step(
                    filter,
                    meas,
                    &self.model,
                    &self.env,
                    &self.gpfa,
                    0.2,
                    25.0,
                    walk_seed.wrapping_add(2),
                )
                .map_err(err_to_js)?;
                let frame = IntentFrame {
                    t: self.t,
                    walker: [self.walker.position.x, self.walker.position.y],
                    measurement: [meas.x, meas.y],
                    goals: self.env.goals.iter().map(|g| [g.x, g.y]).collect(),
                    true_goal: self.true_goal,
                    map_intent: out.intents.argmax(),
                    intents: out.intents.probabilities.clone(),
                    predicted: out
                        .trajectory
                        .points
                        .iter()
                        .map(|(p, _)| [p.x, p.y])
                        .collect(),
                    reached_goal: out.trajectory.reached_goal,
                };
                self.filter = Some(out.filter);
                frame
            }
        };
        Ok(serde_json::to_string(&frame).unwrap())
    }
}

#[derive(Serialize)]
struct ExplorerFrame {
    path: Vec<[f64; 2]>,
    low: Vec<XyBox>,
    medium: Vec<XyBox>,
    high: Vec<XyBox>,
    center_trace: Vec<[f64; 2]>,
}

/// Nested reach tubes from an arbitrary start state.
#[wasm_bindgen]
pub struct TubeExplorer {
    config: ScenarioConfig,
    betas: BetaPair,
}

#[wasm_bindgen]
impl TubeExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<TubeExplorer, JsValue> {
        let mut config = ScenarioConfig::example_crossing();
        config.pedestrians.clear();
        let betas = train_betas(&config, 30, 5.5)?;
        Ok(TubeExplorer { config, betas })
    }

    /// Computes the nested tubes for a state on/near the path.
    ///
    /// `arc` places the vehicle along the path; `lateral` offsets it;
    /// `radii_scale` scales the default confidence radii; `mode` is
    /// "trackspeed" or "brake".
    #[allow(clippy::too_many_arguments)]
    pub fn compute_json(
        &self,
        arc: f64,
        lateral: f64,
        speed: f64,
        t_look: f64,
        radii_scale: f64,
        m_cap: u32,
        mode: &str,
    ) -> Result<String, JsValue> {
        let prepared = self.config.prepare().map_err(err_to_js)?;
        let cl = prepared.closed_loop();
        let path = &prepared.path;
        let s = arc.clamp(0.0, path.total_length());
        let point = path.point_at(s);
        let tangent = path.tangent_at(s);
        let normal = Vec2::new(-tangent.y, tangent.x);
        let pos = point + normal * lateral.clamp(-3.0, 3.0);
        let heading = tangent.y.atan2(tangent.x);
        let center = VehicleState::new(pos.x, pos.y, 0.0, speed.clamp(0.0, 5.0), heading);

        let mut radii = self.config.monitor.confidence_radii;
        let scale = radii_scale.clamp(0.1, 3.0);
        for level in [&mut radii.low, &mut radii.medium, &mut radii.high] {
            for r in level.iter_mut() {
                *r *= scale;
            }
        }
        let sets = NestedInitialSets::around(center, &radii).map_err(err_to_js)?;
        let mode = match mode {
            "brake" => Mode::Brake,
            _ => Mode::Trackspeed,
        };
        let t_look = t_look.clamp(1.0, self.betas.min_horizon());
        let tubes = reach::nested_tubes(
            &sets,
            mode,
            self.betas.for_mode(mode),
            (m_cap as usize).max(1),
            t_look,
            self.config.monitor.tube_dt,
            &cl,
        )
        .map_err(err_to_js)?;
        let trace = cl
            .simulate(&center, mode, self.config.monitor.tube_dt, t_look)
            .map_err(err_to_js)?;

        let n = 100usize;
        let polyline = (0..=n)
            .map(|k| {
                let s = path.total_length() * k as f64 / n as f64;
                let p = path.point_at(s);
                [p.x, p.y]
            })
            .collect();
        let frame = ExplorerFrame {
            path: polyline,
            low: tube_xy(&tubes.low, 10),
            medium: tube_xy(&tubes.medium, 10),
            high: tube_xy(&tubes.high, 10),
            center_trace: trace.iter().map(|(_, st)| [st.x, st.y]).collect(),
        };
        Ok(serde_json::to_string(&frame).unwrap())
    }
}
