//! Scenario configuration: a single TOML file describes the path, vehicle,
//! environment, pedestrian scripts, noise, rates, and monitor settings of a
//! closed-loop run. Two example scenarios (a crossing pedestrian and a
//! parallel one) ship as constructors and as files under `scenarios/`.

use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::control::{ClosedLoop, ControlGains};
use crate::error::{Error, Result};
use crate::intent::FilterConfig;
use crate::math::Vec2;
use crate::pedestrian::{EnvironmentMap, GpfaParams, StateSpaceModel};
use crate::reach::{Confidence, ConfidenceRadii};
use crate::spline::Path;
use crate::vehicle::{VehicleParams, VehicleState, STATE_DIMS};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
/// Master simulation rate; all module rates must divide it.
pub const MASTER_HZ: u32 = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleSection {
    pub start: VehicleState,
    #[serde(flatten)]
    pub params: VehicleParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSection {
    pub waypoints: Vec<Vec2>,
    /// Reference speed for the trackspeed mode, m/s.
    pub v_r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PedestrianModelSection {
    /// Estimator timestep, s; must equal 1 / rates.pie_hz.
    pub dt: f64,
    pub process_noise_std: Vec2,
    pub measurement_noise_std: f64,
}

/// One scripted pedestrian: where they appear, what they actually want, and
/// how noisy their walk is.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PedestrianScript {
    pub start: Vec2,
    #[serde(default)]
    pub start_velocity: Vec2,
    /// Index into the environment goals; the pedestrian's actual intent.
    pub true_intent: usize,
    /// Simulation time at which the pedestrian appears, s.
    #[serde(default)]
    pub start_time: f64,
    /// Process noise of the scripted walk, meters per estimator step.
    pub behavioral_noise_std: Vec2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSection {
    /// Vehicle state-estimate noise std per dimension (x, y, phi, v, theta).
    pub vehicle_estimate_std: [f64; STATE_DIMS],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatesSection {
    pub controller_hz: u32,
    pub dm_hz: u32,
    pub pie_hz: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorSection {
    /// Look-ahead horizon of the on-line monitor, s.
    pub t_look: f64,
    pub risk_level: Confidence,
    /// Pedestrian bloat radius, m.
    pub r_ped: f64,
    /// Vehicle collision-geometry inflation, m.
    pub footprint_radius: f64,
    /// Cap on partition simulations per reach query.
    pub m_cap: usize,
    /// Reach-tube time resolution, s; must equal 1 / MASTER_HZ.
    pub tube_dt: f64,
    pub confidence_radii: ConfidenceRadii,
    /// Directory holding the trained sensitivity files; resolved by the CLI.
    #[serde(default)]
    pub beta_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub max_duration: f64,
    /// Horizon for predicted-trajectory rollouts, s.
    pub rollout_horizon: f64,
    /// Include downsampled tube boxes in decision records.
    #[serde(default = "default_true")]
    pub log_tubes: bool,
    /// Keep every Nth tube box in the log.
    #[serde(default = "default_stride")]
    pub tube_log_stride: usize,
}

fn default_true() -> bool {
    true
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub vehicle: VehicleSection,
    pub path: PathSection,
    pub control: ControlGains,
    pub environment: EnvironmentMap,
    pub gpfa: GpfaParams,
    pub pedestrian_model: PedestrianModelSection,
    pub filter: FilterConfig,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianScript>,
    pub noise: NoiseSection,
    pub rates: RatesSection,
    pub monitor: MonitorSection,
    pub run: RunSection,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<ScenarioConfig> {
        let config: ScenarioConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &FsPath) -> Result<ScenarioConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ScenarioConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.vehicle.params.validate()?;
        self.control.validate()?;
        self.gpfa.validate()?;
        self.environment.validate(self.gpfa.goal_radius)?;
        self.filter.validate()?;
        if self.path.waypoints.len() < 2 {
            return Err(Error::Config("path needs at least two waypoints".into()));
        }
        if self.path.v_r <= 0.0 {
            return Err(Error::Config("reference speed must be positive".into()));
        }

        for (name, hz) in [
            ("controller_hz", self.rates.controller_hz),
            ("dm_hz", self.rates.dm_hz),
            ("pie_hz", self.rates.pie_hz),
        ] {
            if hz == 0 || hz > MASTER_HZ || MASTER_HZ % hz != 0 {
                return Err(Error::Config(format!(
                    "{name} = {hz} must divide the {MASTER_HZ} Hz master rate"
                )));
            }
        }
        let pie_dt = 1.0 / self.rates.pie_hz as f64;
        if (self.pedestrian_model.dt - pie_dt).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "pedestrian_model.dt = {} must equal 1/pie_hz = {pie_dt}",
                self.pedestrian_model.dt
            )));
        }
        let master_dt = 1.0 / MASTER_HZ as f64;
        if (self.monitor.tube_dt - master_dt).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "monitor.tube_dt = {} must equal the master step {master_dt}",
                self.monitor.tube_dt
            )));
        }

        if self.monitor.t_look < 1.0 {
            return Err(Error::Config("monitor.t_look must be at least 1 s".into()));
        }
        if self.monitor.m_cap == 0 {
            return Err(Error::Config("monitor.m_cap must be at least 1".into()));
        }
        if self.monitor.r_ped <= 0.0 || self.monitor.footprint_radius < 0.0 {
            return Err(Error::Config("monitor radii out of range".into()));
        }
        // radii nesting is checked by constructing the triple
        crate::reach::NestedInitialSets::around(self.vehicle.start, &self.monitor.confidence_radii)
            .map_err(|e| Error::Config(format!("confidence radii: {e}")))?;

        for (i, ped) in self.pedestrians.iter().enumerate() {
            if ped.true_intent >= self.environment.goals.len() {
                return Err(Error::Config(format!(
                    "pedestrian {i}: true_intent {} out of range ({} goals)",
                    ped.true_intent,
                    self.environment.goals.len()
                )));
            }
            if ped.start_time < 0.0 {
                return Err(Error::Config(format!("pedestrian {i}: negative start_time")));
            }
            if ped.behavioral_noise_std.x < 0.0 || ped.behavioral_noise_std.y < 0.0 {
                return Err(Error::Config(format!("pedestrian {i}: negative noise std")));
            }
        }
        if self.noise.vehicle_estimate_std.iter().any(|s| *s < 0.0) {
            return Err(Error::Config("vehicle estimate noise stds must be nonnegative".into()));
        }
        if self.run.max_duration <= 0.0 || self.run.rollout_horizon <= 0.0 {
            return Err(Error::Config("run durations must be positive".into()));
        }
        if self.run.tube_log_stride == 0 {
            return Err(Error::Config("tube_log_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Builds the derived objects used by the simulator.
    pub fn prepare(&self) -> Result<PreparedScenario> {
        self.validate()?;
        let path = Path::fit(&self.path.waypoints)?;
        let model = StateSpaceModel::new(
            self.pedestrian_model.dt,
            self.pedestrian_model.process_noise_std,
            self.pedestrian_model.measurement_noise_std,
        )?;
        Ok(PreparedScenario { config: self.clone(), path, model })
    }

    /// The default curved-lane scenario with a pedestrian scripted to cross
    /// the lane ahead of the vehicle.
    pub fn example_crossing() -> ScenarioConfig {
        let mut config = base_scenario("crossing");
        config.pedestrians = vec![PedestrianScript {
            // mid-stride on the near side, 4 m from the lane, heading across
            start: Vec2::new(11.0, -2.75),
            start_velocity: Vec2::new(0.0, 1.2),
            true_intent: 0, // far-side goal: cross the lane
            start_time: 0.0,
            behavioral_noise_std: Vec2::new(0.02, 0.02),
        }];
        config
    }

    /// The same lane with the pedestrian walking parallel to it at a safe
    /// lateral offset.
    pub fn example_parallel() -> ScenarioConfig {
        let mut config = base_scenario("parallel");
        config.pedestrians = vec![PedestrianScript {
            // mid-stride on the near side, ~4.2 m from the lane, walking along it
            start: Vec2::new(15.7, -1.8),
            start_velocity: Vec2::new(1.2, 0.4),
            true_intent: 1, // parallel-ahead goal on the same side
            start_time: 0.0,
            behavioral_noise_std: Vec2::new(0.02, 0.02),
        }];
        config
    }
}

/// A validated configuration plus the objects built from it.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub path: Path,
    pub model: StateSpaceModel,
}

impl PreparedScenario {
    pub fn closed_loop(&self) -> ClosedLoop<'_> {
        ClosedLoop {
            path: &self.path,
            v_r: self.config.path.v_r,
            gains: self.config.control,
            vehicle: self.config.vehicle.params,
            controller_period: 1.0 / self.config.rates.controller_hz as f64,
        }
    }
}

fn base_scenario(name: &str) -> ScenarioConfig {
    // gently left-curving lane, roughly 25 m of arc
    let waypoints = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(6.0, 0.4),
        Vec2::new(12.0, 1.5),
        Vec2::new(18.0, 3.3),
        Vec2::new(24.0, 5.8),
    ];
    // goal 0: across the lane (far side); goals 1/2: parallel walks on the
    // near side, ahead and behind, all >4 m laterally off the lane
    let goals = vec![Vec2::new(10.9, 5.9), Vec2::new(23.7, 1.0), Vec2::new(7.8, -3.7)];
    ScenarioConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        name: name.to_string(),
        vehicle: VehicleSection {
            start: VehicleState::new(0.0, 0.0, 0.0, 2.0, 0.066),
            params: VehicleParams::default(),
        },
        path: PathSection { waypoints, v_r: 2.0 },
        control: ControlGains::default(),
        environment: EnvironmentMap { goals, obstacles: vec![] },
        gpfa: GpfaParams {
            attraction_gain: 1.5,
            repulsion_gain: 1.0,
            repulsion_cutoff: 3.0,
            accel_max: 3.0,
            goal_radius: 0.3,
            damping: 1.2,
            v_ped_max: 2.0,
        },
        pedestrian_model: PedestrianModelSection {
            dt: 0.2,
            process_noise_std: Vec2::new(0.02, 0.02),
            measurement_noise_std: 0.25,
        },
        filter: FilterConfig::default(),
        pedestrians: vec![],
        noise: NoiseSection { vehicle_estimate_std: [0.1, 0.1, 0.01, 0.05, 0.02] },
        rates: RatesSection { controller_hz: 50, dm_hz: 10, pie_hz: 5 },
        monitor: MonitorSection {
            t_look: 3.0,
            risk_level: Confidence::Medium,
            r_ped: 0.5,
            footprint_radius: 1.5,
            m_cap: 8,
            tube_dt: 0.01,
            confidence_radii: ConfidenceRadii::default(),
            beta_dir: None,
        },
        run: RunSection {
            max_duration: 40.0,
            rollout_horizon: 20.0,
            log_tubes: true,
            tube_log_stride: 10,
        },
    }
}

/// Map file for the offline intent-replay command: the environment and
/// estimator settings without any vehicle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictMap {
    pub schema_version: u32,
    pub environment: EnvironmentMap,
    pub gpfa: GpfaParams,
    pub pedestrian_model: PedestrianModelSection,
    pub filter: FilterConfig,
    #[serde(default)]
    pub rollout_horizon: Option<f64>,
}

impl PredictMap {
    pub fn from_toml_str(text: &str) -> Result<PredictMap> {
        let map: PredictMap = toml::from_str(text)?;
        if map.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "map schema version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                map.schema_version
            )));
        }
        map.gpfa.validate()?;
        map.environment.validate(map.gpfa.goal_radius)?;
        map.filter.validate()?;
        if map.pedestrian_model.dt <= 0.0 {
            return Err(Error::Config("pedestrian_model.dt must be positive".into()));
        }
        Ok(map)
    }

    pub fn load(path: &FsPath) -> Result<PredictMap> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        PredictMap::from_toml_str(&text)
    }

    pub fn model(&self) -> Result<StateSpaceModel> {
        StateSpaceModel::new(
            self.pedestrian_model.dt,
            self.pedestrian_model.process_noise_std,
            self.pedestrian_model.measurement_noise_std,
        )
    }
}
