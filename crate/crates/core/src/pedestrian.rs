//! Pedestrian dynamics: a discrete-time double-integrator driven by
//! potential-field forces (goal sinks attract, obstacle sources repel), plus
//! noiseless rollouts that predict where a pedestrian ends up.
//!
//! All randomness is seeded explicitly; every operation here is a pure
//! function of its arguments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec2;

/// Position and velocity of one pedestrian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl PedestrianState {
    pub fn at_rest(position: Vec2) -> Self {
        PedestrianState { position, velocity: Vec2::ZERO }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

/// A repulsive source in the map: a point or a line segment, with a gain
/// multiplier applied on top of the global repulsion gain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Point { point: Vec2, #[serde(default = "one")] gain: f64 },
    Segment { a: Vec2, b: Vec2, #[serde(default = "one")] gain: f64 },
}

fn one() -> f64 {
    1.0
}

impl Obstacle {
    /// Closest point of the obstacle to `p`.
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        match *self {
            Obstacle::Point { point, .. } => point,
            Obstacle::Segment { a, b, .. } => {
                let ab = b - a;
                let len2 = ab.norm_squared();
                if len2 == 0.0 {
                    return a;
                }
                let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
                a + ab * t
            }
        }
    }

    pub fn gain(&self) -> f64 {
        match *self {
            Obstacle::Point { gain, .. } | Obstacle::Segment { gain, .. } => gain,
        }
    }
}

/// Candidate goal locations (the intent hypotheses) and repulsive obstacles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentMap {
    pub goals: Vec<Vec2>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl EnvironmentMap {
    /// Checks the map invariants: at least one goal, goals pairwise separated
    /// by more than `goal_radius`.
    pub fn validate(&self, goal_radius: f64) -> Result<()> {
        if self.goals.is_empty() {
            return Err(Error::Config("environment map needs at least one goal".into()));
        }
        for g in &self.goals {
            if !g.is_finite() {
                return Err(Error::Config("goal coordinates must be finite".into()));
            }
        }
        for i in 0..self.goals.len() {
            for j in (i + 1)..self.goals.len() {
                if self.goals[i].distance(self.goals[j]) <= goal_radius {
                    return Err(Error::Config(format!(
                        "goals {i} and {j} are closer than the goal radius {goal_radius}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Force-law constants for the potential field.
///
/// Attraction is a constant-magnitude pull toward the goal that vanishes
/// inside `goal_radius`; each obstacle repels with gain/d^2 falloff cut off
/// at `repulsion_cutoff`; viscous damping opposes the current velocity. The
/// summed acceleration is clipped to `accel_max` and resulting speeds to
/// `v_ped_max`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GpfaParams {
    pub attraction_gain: f64,
    pub repulsion_gain: f64,
    pub repulsion_cutoff: f64,
    pub accel_max: f64,
    pub goal_radius: f64,
    pub damping: f64,
    pub v_ped_max: f64,
}

impl Default for GpfaParams {
    fn default() -> Self {
        GpfaParams {
            attraction_gain: 2.0,
            repulsion_gain: 1.0,
            repulsion_cutoff: 3.0,
            accel_max: 3.0,
            goal_radius: 0.3,
            damping: 1.0,
            v_ped_max: 2.0,
        }
    }
}

impl GpfaParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.attraction_gain >= 0.0
            && self.repulsion_gain >= 0.0
            && self.repulsion_cutoff > 0.0
            && self.accel_max > 0.0
            && self.goal_radius > 0.0
            && self.damping >= 0.0
            && self.v_ped_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("potential-field parameters out of range".into()))
        }
    }
}

/// Discrete-time state-space model of the pedestrian.
///
/// The transition/control matrices are the exact zero-order-hold
/// discretization of a 2-D double integrator at timestep `dt`; the
/// measurement matrix selects the position components. Process noise is
/// additive on position (std in meters per step), measurement noise is
/// isotropic on the measured position.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StateSpaceModel {
    pub dt: f64,
    pub process_noise_std: Vec2,
    pub measurement_noise_std: f64,
}

impl StateSpaceModel {
    pub fn new(dt: f64, process_noise_std: Vec2, measurement_noise_std: f64) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::Config(format!("pedestrian model dt must be positive, got {dt}")));
        }
        if process_noise_std.x < 0.0 || process_noise_std.y < 0.0 || measurement_noise_std < 0.0 {
            return Err(Error::Config("noise standard deviations must be nonnegative".into()));
        }
        Ok(StateSpaceModel { dt, process_noise_std, measurement_noise_std })
    }

    /// Same model at a different timestep.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        StateSpaceModel::new(dt, self.process_noise_std, self.measurement_noise_std)
    }

    /// State transition matrix (zero-order hold, block form).
    pub fn transition_matrix(&self) -> [[f64; 4]; 4] {
        let dt = self.dt;
        [
            [1.0, 0.0, dt, 0.0],
            [0.0, 1.0, 0.0, dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Control matrix mapping a 2-D acceleration into the state update.
    pub fn control_matrix(&self) -> [[f64; 2]; 4] {
        let dt = self.dt;
        let h = 0.5 * dt * dt;
        [[h, 0.0], [0.0, h], [dt, 0.0], [0.0, dt]]
    }

    /// Measurement matrix (position selector).
    pub fn measurement_matrix(&self) -> [[f64; 4]; 2] {
        [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]
    }
}

/// Potential-field acceleration on a pedestrian heading for `goal`.
pub fn gpfa_accel(
    state: &PedestrianState,
    goal: Vec2,
    env: &EnvironmentMap,
    params: &GpfaParams,
) -> Result<Vec2> {
    if !state.is_finite() || !goal.is_finite() {
        return Err(Error::InvalidInput("non-finite pedestrian state or goal".into()));
    }
    let mut accel = Vec2::ZERO;

    let to_goal = goal - state.position;
    if to_goal.norm() > params.goal_radius {
        accel += to_goal.unit_or_zero(1e-12) * params.attraction_gain;
    }

    for obstacle in &env.obstacles {
        let source = obstacle.closest_point(state.position);
        let away = state.position - source;
        let d = away.norm();
        if d > 0.0 && d < params.repulsion_cutoff {
            let magnitude = params.repulsion_gain * obstacle.gain() / (d * d);
            accel += away.unit_or_zero(1e-12) * magnitude;
        }
    }

    accel += -state.velocity * params.damping;
    Ok(accel.clamp_norm(params.accel_max))
}

/// One step of the state-space model with process noise drawn from `seed`.
pub fn step(
    state: &PedestrianState,
    goal: Vec2,
    model: &StateSpaceModel,
    env: &EnvironmentMap,
    params: &GpfaParams,
    seed: u64,
) -> Result<PedestrianState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    step_with_rng(state, goal, model, env, params, &mut rng)
}

/// One step of the state-space model drawing process noise from `rng`.
pub fn step_with_rng(
    state: &PedestrianState,
    goal: Vec2,
    model: &StateSpaceModel,
    env: &EnvironmentMap,
    params: &GpfaParams,
    rng: &mut ChaCha8Rng,
) -> Result<PedestrianState> {
    let accel = gpfa_accel(state, goal, env, params)?;
    let noise = sample_process_noise(model, rng);
    Ok(advance(state, accel, model, noise, params))
}

fn sample_process_noise(model: &StateSpaceModel, rng: &mut ChaCha8Rng) -> Vec2 {
    let mut draw = |std: f64| {
        if std > 0.0 {
            Normal::new(0.0, std).unwrap().sample(rng)
        } else {
            0.0
        }
    };
    Vec2::new(draw(model.process_noise_std.x), draw(model.process_noise_std.y))
}

/// x_t = F x_{t-1} + G u + w, followed by the speed clip.
fn advance(
    state: &PedestrianState,
    accel: Vec2,
    model: &StateSpaceModel,
    position_noise: Vec2,
    params: &GpfaParams,
) -> PedestrianState {
    let dt = model.dt;
    let position = state.position + state.velocity * dt + accel * (0.5 * dt * dt) + position_noise;
    let velocity = (state.velocity + accel * dt).clamp_norm(params.v_ped_max);
    PedestrianState { position, velocity }
}

/// Position measurement y = H x + v with isotropic Gaussian noise.
pub fn measure(state: &PedestrianState, model: &StateSpaceModel, seed: u64) -> Vec2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    measure_with_rng(state, model, &mut rng)
}

pub fn measure_with_rng(
    state: &PedestrianState,
    model: &StateSpaceModel,
    rng: &mut ChaCha8Rng,
) -> Vec2 {
    let std = model.measurement_noise_std;
    if std <= 0.0 {
        return state.position;
    }
    let normal = Normal::new(0.0, std).unwrap();
    state.position + Vec2::new(normal.sample(rng), normal.sample(rng))
}

/// A predicted location-time path ending at (or short of) a goal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    /// (position, time) samples; the first time is always 0.
    pub points: Vec<(Vec2, f64)>,
    /// Index of the goal this trajectory heads for.
    pub goal_index: usize,
    /// False when the rollout hit its horizon before reaching the goal.
    pub reached_goal: bool,
}

impl PredictedTrajectory {
    pub fn final_point(&self) -> Vec2 {
        self.points.last().expect("trajectory is never empty").0
    }

    pub fn duration(&self) -> f64 {
        self.points.last().expect("trajectory is never empty").1
    }

    /// Position at `t`, linearly interpolated; clamped to the endpoints.
    pub fn position_at(&self, t: f64) -> Vec2 {
        let pts = &self.points;
        if t <= pts[0].1 {
            return pts[0].0;
        }
        for w in pts.windows(2) {
            let (p0, t0) = w[0];
            let (p1, t1) = w[1];
            if t <= t1 {
                let alpha = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return p0 + (p1 - p0) * alpha;
            }
        }
        pts[pts.len() - 1].0
    }

    /// The same trajectory re-based `offset` seconds later. Points before the
    /// offset are dropped and an interpolated sample becomes the new origin.
    pub fn advance(&self, offset: f64) -> PredictedTrajectory {
        if offset <= 0.0 {
            return self.clone();
        }
        let mut points = vec![(self.position_at(offset), 0.0)];
        for &(p, t) in &self.points {
            if t > offset {
                points.push((p, t - offset));
            }
        }
        PredictedTrajectory { points, goal_index: self.goal_index, reached_goal: self.reached_goal }
    }
}

/// Noiseless forward simulation from `start` toward `goal`.
///
/// Terminates once within the goal radius or at `max_horizon`, whichever
/// comes first; a horizon hit is flagged, not an error.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    start: Vec2,
    start_velocity: Vec2,
    goal_index: usize,
    model: &StateSpaceModel,
    env: &EnvironmentMap,
    params: &GpfaParams,
    dt: f64,
    max_horizon: f64,
) -> Result<PredictedTrajectory> {
    if dt <= 0.0 || max_horizon < dt {
        return Err(Error::InvalidInput(format!(
            "rollout needs dt > 0 and max_horizon >= dt (dt={dt}, max_horizon={max_horizon})"
        )));
    }
    let goal = *env
        .goals
        .get(goal_index)
        .ok_or_else(|| Error::InvalidInput(format!("goal index {goal_index} out of range")))?;

    let model = model.with_dt(dt)?;
    let mut state = PedestrianState { position: start, velocity: start_velocity };
    let mut points = vec![(state.position, 0.0)];

    if start.distance(goal) <= params.goal_radius {
        return Ok(PredictedTrajectory { points, goal_index, reached_goal: true });
    }

    let steps = (max_horizon / dt).round() as usize;
    let mut reached = false;
    for k in 1..=steps {
        let accel = gpfa_accel(&state, goal, env, params)?;
        state = advance(&state, accel, &model, Vec2::ZERO, params);
        points.push((state.position, k as f64 * dt));
        if state.position.distance(goal) <= params.goal_radius {
            reached = true;
            break;
        }
    }
    Ok(PredictedTrajectory { points, goal_index, reached_goal: reached })
}
