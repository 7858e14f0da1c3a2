//! Velocity and waypoint-following control: a PID speed loop with
//! trackspeed/brake modes and a PID steering loop on lateral path deviation.
//!
//! The steering PID produces a steering-angle setpoint from the cross-track
//! error; the commanded steering velocity drives the wheel toward that
//! setpoint with a first-order time constant. Braking is realized as the
//! speed PID tracking a zero reference.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::spline::Path;
use crate::vehicle::{self, VehicleInput, VehicleParams, VehicleState};

/// Controller regime chosen by the decision module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Trackspeed,
    Brake,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Trackspeed => write!(f, "trackspeed"),
            Mode::Brake => write!(f, "brake"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Anti-windup clamp on the integral term.
    pub integral_limit: f64,
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        if self.kp < 0.0 || self.ki < 0.0 || self.kd < 0.0 || self.integral_limit < 0.0 {
            return Err(Error::Config("PID gains must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One PID loop with carried integral and derivative memory.
#[derive(Debug, Clone)]
pub struct Pid {
    gains: PidGains,
    integral: f64,
    prev_error: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        Pid { gains, integral: 0.0, prev_error: None }
    }

    /// Clears integral and derivative memory.
    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        self.integral = (self.integral + error * dt)
            .clamp(-self.gains.integral_limit, self.gains.integral_limit);
        let derivative = match self.prev_error {
            Some(prev) if dt > 0.0 => (error - prev) / dt,
            _ => 0.0,
        };
        self.prev_error = Some(error);
        self.gains.kp * error + self.gains.ki * self.integral + self.gains.kd * derivative
    }
}

/// Gains for both loops plus the steering servo time constant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlGains {
    pub speed: PidGains,
    pub steering: PidGains,
    /// Time constant for driving the steering angle to its setpoint, s.
    pub steer_tau: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        ControlGains {
            speed: PidGains { kp: 3.0, ki: 0.1, kd: 0.0, integral_limit: 1.0 },
            steering: PidGains { kp: 0.9, ki: 0.0, kd: 1.5, integral_limit: 0.5 },
            steer_tau: 0.1,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        self.speed.validate()?;
        self.steering.validate()?;
        if self.steer_tau <= 0.0 {
            return Err(Error::Config("steer_tau must be positive".into()));
        }
        Ok(())
    }
}

/// The waypoint-following controller. Owns its PID state; construct a fresh
/// instance per simulated trajectory.
#[derive(Debug, Clone)]
pub struct PathController {
    gains: ControlGains,
    speed_pid: Pid,
    steer_pid: Pid,
    last_mode: Option<Mode>,
    arc_hint: Option<f64>,
}

impl PathController {
    pub fn new(gains: &ControlGains) -> Self {
        PathController {
            gains: *gains,
            speed_pid: Pid::new(gains.speed),
            steer_pid: Pid::new(gains.steering),
            last_mode: None,
            arc_hint: None,
        }
    }

    /// Clears all PID memory (used at mode switches).
    pub fn reset(&mut self) {
        self.speed_pid.reset();
        self.steer_pid.reset();
    }

    pub fn speed_integral(&self) -> f64 {
        self.speed_pid.integral()
    }

    /// Computes actuator commands for one controller period `dt`.
    ///
    /// Steering runs in both modes; the speed reference is `v_r` in
    /// trackspeed and zero in brake. Outputs are saturated to the actuator
    /// bounds.
    pub fn control(
        &mut self,
        state: &VehicleState,
        path: &Path,
        mode: Mode,
        v_r: f64,
        params: &VehicleParams,
        dt: f64,
    ) -> VehicleInput {
        if self.last_mode.is_some() && self.last_mode != Some(mode) {
            self.reset();
        }
        self.last_mode = Some(mode);

        let (cte, arc) = path.cross_track_error(Vec2::new(state.x, state.y), self.arc_hint);
        self.arc_hint = Some(arc);
        let phi_setpoint =
            self.steer_pid.step(-cte, dt).clamp(-params.phi_max, params.phi_max);
        let u = (phi_setpoint - state.phi) / self.gains.steer_tau;

        let v_ref = match mode {
            Mode::Trackspeed => v_r,
            Mode::Brake => 0.0,
        };
        let a = self.speed_pid.step(v_ref - state.v, dt);

        VehicleInput { a, u }.saturated(params)
    }
}

/// Everything needed to simulate the vehicle in closed loop: the path, the
/// speed reference, controller gains, vehicle parameters, and the controller
/// sampling period.
#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    pub path: &'a Path,
    pub v_r: f64,
    pub gains: ControlGains,
    pub vehicle: VehicleParams,
    /// Controller sampling period, s (50 Hz by default).
    pub controller_period: f64,
}

impl ClosedLoop<'_> {
    /// Simulates from `start` under a fixed mode with a fresh controller.
    ///
    /// The controller is sampled every `controller_period` and its commands
    /// are zero-order held between samples, exactly like the live loop in
    /// the simulation harness.
    pub fn simulate(
        &self,
        start: &VehicleState,
        mode: Mode,
        dt: f64,
        t_end: f64,
    ) -> Result<Vec<(f64, VehicleState)>> {
        if dt <= 0.0 || t_end < dt {
            return Err(Error::InvalidInput(format!(
                "simulation needs dt > 0 and t_end >= dt (dt={dt}, t_end={t_end})"
            )));
        }
        let mut controller = PathController::new(&self.gains);
        let mut held = VehicleInput::ZERO;
        let mut next_sample = 0.0;
        let steps = (t_end / dt).round() as usize;
        let mut current = start.constrained(&self.vehicle);
        let mut trajectory = Vec::with_capacity(steps + 1);
        trajectory.push((0.0, current));
        for k in 0..steps {
            let t = k as f64 * dt;
            if t + 1e-9 >= next_sample {
                held = controller.control(
                    &current,
                    self.path,
                    mode,
                    self.v_r,
                    &self.vehicle,
                    self.controller_period,
                );
                next_sample += self.controller_period;
            }
            current = vehicle::rk4_step(&current, &held, &self.vehicle, dt)?;
            trajectory.push(((k + 1) as f64 * dt, current));
        }
        Ok(trajectory)
    }
}
