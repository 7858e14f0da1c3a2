//! Five-dimensional kinematic bicycle model and its fixed-step RK4
//! integration under a closed-loop controller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::wrap_angle;

/// Number of state dimensions and their canonical order.
pub const STATE_DIMS: usize = 5;
pub const DIM_NAMES: [&str; STATE_DIMS] = ["x", "y", "phi", "v", "theta"];

/// Vehicle state: position, steering angle, speed, heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Steering angle, rad.
    pub phi: f64,
    /// Speed, m/s (never negative).
    pub v: f64,
    /// Heading angle, rad, wrapped to (-pi, pi].
    pub theta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, phi: f64, v: f64, theta: f64) -> Self {
        VehicleState { x, y, phi, v, theta }
    }

    pub fn to_array(self) -> [f64; STATE_DIMS] {
        [self.x, self.y, self.phi, self.v, self.theta]
    }

    pub fn from_array(a: [f64; STATE_DIMS]) -> Self {
        VehicleState { x: a[0], y: a[1], phi: a[2], v: a[3], theta: a[4] }
    }

    /// Re-applies the state constraints: nonnegative speed, steering clamp,
    /// wrapped heading.
    pub fn constrained(mut self, params: &VehicleParams) -> Self {
        self.v = self.v.max(0.0);
        self.phi = self.phi.clamp(-params.phi_max, params.phi_max);
        self.theta = wrap_angle(self.theta);
        self
    }
}

/// Acceleration and steering-velocity commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleInput {
    pub a: f64,
    pub u: f64,
}

impl VehicleInput {
    pub const ZERO: VehicleInput = VehicleInput { a: 0.0, u: 0.0 };

    /// Saturates both commands to the actuator bounds.
    pub fn saturated(self, params: &VehicleParams) -> Self {
        VehicleInput {
            a: self.a.clamp(-params.a_max, params.a_max),
            u: self.u.clamp(-params.u_max, params.u_max),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Wheelbase, m.
    pub wheelbase: f64,
    pub phi_max: f64,
    pub a_max: f64,
    pub u_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams { wheelbase: 2.4, phi_max: 0.61, a_max: 2.5, u_max: 1.0 }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if self.wheelbase <= 0.0 {
            return Err(Error::Config("wheelbase must be positive".into()));
        }
        if self.phi_max <= 0.0 || self.phi_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("phi_max must lie in (0, pi/2)".into()));
        }
        if self.a_max <= 0.0 || self.u_max <= 0.0 {
            return Err(Error::Config("actuator bounds must be positive".into()));
        }
        Ok(())
    }
}

/// The five state derivatives:
/// x' = v cos(theta), y' = v sin(theta), phi' = u, v' = a,
/// theta' = (v / L) tan(phi).
pub fn derivative(
    state: &VehicleState,
    input: &VehicleInput,
    params: &VehicleParams,
) -> Result<[f64; STATE_DIMS]> {
    if state.phi.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::SteeringSingularity(state.phi.abs()));
    }
    let input = input.saturated(params);
    Ok([
        state.v * state.theta.cos(),
        state.v * state.theta.sin(),
        input.u,
        input.a,
        state.v / params.wheelbase * state.phi.tan(),
    ])
}

/// One classical RK4 step with the input held constant, followed by the
/// state constraints.
pub fn rk4_step(
    state: &VehicleState,
    input: &VehicleInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    let y0 = state.to_array();
    let k1 = derivative(state, input, params)?;
    let k2 = derivative(&VehicleState::from_array(add_scaled(y0, k1, dt / 2.0)), input, params)?;
    let k3 = derivative(&VehicleState::from_array(add_scaled(y0, k2, dt / 2.0)), input, params)?;
    let k4 = derivative(&VehicleState::from_array(add_scaled(y0, k3, dt)), input, params)?;
    let mut y = y0;
    for d in 0..STATE_DIMS {
        y[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
    }
    Ok(VehicleState::from_array(y).constrained(params))
}

fn add_scaled(y: [f64; STATE_DIMS], k: [f64; STATE_DIMS], h: f64) -> [f64; STATE_DIMS] {
    let mut out = y;
    for d in 0..STATE_DIMS {
        out[d] += h * k[d];
    }
    out
}

/// Integrates a continuous closed loop for `t_end` seconds at fixed step
/// `dt`, sampling the state at every step (t = 0 included).
///
/// `controller` must be a (pure) feedback law of state and time; it is
/// evaluated at every RK4 stage, which keeps the integrator at full fourth
/// order. Digitally sampled controllers with held outputs live in
/// [`crate::control::ClosedLoop`] instead.
pub fn integrate<C>(
    state: &VehicleState,
    mut controller: C,
    params: &VehicleParams,
    dt: f64,
    t_end: f64,
) -> Result<Vec<(f64, VehicleState)>>
where
    C: FnMut(&VehicleState, f64) -> VehicleInput,
{
    if dt <= 0.0 || t_end < dt {
        return Err(Error::InvalidInput(format!(
            "integration needs dt > 0 and t_end >= dt (dt={dt}, t_end={t_end})"
        )));
    }
    let steps = (t_end / dt).round() as usize;
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut current = state.constrained(params);
    trajectory.push((0.0, current));
    let eval = |s: &VehicleState, t: f64, c: &mut C| -> Result<[f64; STATE_DIMS]> {
        let input = c(s, t).saturated(params);
        derivative(s, &input, params)
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        let y0 = current.to_array();
        let k1 = eval(&current, t, &mut controller)?;
        let s2 = VehicleState::from_array(add_scaled(y0, k1, dt / 2.0));
        let k2 = eval(&s2, t + dt / 2.0, &mut controller)?;
        let s3 = VehicleState::from_array(add_scaled(y0, k2, dt / 2.0));
        let k3 = eval(&s3, t + dt / 2.0, &mut controller)?;
        let s4 = VehicleState::from_array(add_scaled(y0, k3, dt));
        let k4 = eval(&s4, t + dt, &mut controller)?;
        let mut y = y0;
        for d in 0..STATE_DIMS {
            y[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        current = VehicleState::from_array(y).constrained(params);
        trajectory.push(((k + 1) as f64 * dt, current));
    }
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_derivative() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let d = derivative(&s, &VehicleInput::ZERO, &VehicleParams::default()).unwrap();
        assert_eq!(d, [1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stationary_car_cannot_turn() {
        let s = VehicleState::new(0.0, 0.0, 0.5, 0.0, 1.0);
        let d = derivative(&s, &VehicleInput::ZERO, &VehicleParams::default()).unwrap();
        assert_eq!(d[4], 0.0);
    }

    #[test]
    fn yaw_rate_formula() {
        let s = VehicleState::new(0.0, 0.0, 0.1, 2.0, 0.0);
        let d = derivative(&s, &VehicleInput::ZERO, &VehicleParams::default()).unwrap();
        let expected = 2.0 * (0.1f64).tan() / 2.4;
        assert!((d[4] - expected).abs() < 1e-12);
        assert!((expected - 0.08364).abs() < 1e-4);
    }

    #[test]
    fn singularity_detected() {
        let s = VehicleState::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 1.0, 0.0);
        assert!(matches!(
            derivative(&s, &VehicleInput::ZERO, &VehicleParams::default()),
            Err(Error::SteeringSingularity(_))
        ));
    }

    #[test]
    fn constant_velocity_endpoint() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let traj =
            integrate(&s, |_, _| VehicleInput::ZERO, &VehicleParams::default(), 0.01, 1.0).unwrap();
        let (t, last) = traj[traj.len() - 1];
        assert!((t - 1.0).abs() < 1e-12);
        assert!((last.x - 1.0).abs() < 1e-9);
        assert!(last.y.abs() < 1e-9);
    }

    #[test]
    fn constant_acceleration_closed_form() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0);
        let a = 1.5;
        let traj = integrate(
            &s,
            |_, _| VehicleInput { a, u: 0.0 },
            &VehicleParams::default(),
            0.01,
            2.0,
        )
        .unwrap();
        let last = traj.last().unwrap().1;
        assert!((last.x - 0.5 * a * 4.0).abs() < 1e-6);
        assert!((last.v - 2.0 * a).abs() < 1e-9);
    }

    // Fixed steering at constant speed traces a circle of radius
    // L / tan(phi); compare against the analytic arc.
    #[test]
    fn constant_curvature_matches_analytic_circle() {
        let params = VehicleParams::default();
        let phi = 0.2;
        let v = 1.0;
        let s = VehicleState::new(0.0, 0.0, phi, v, 0.0);
        let t_end = 5.0;
        let traj = integrate(&s, |_, _| VehicleInput::ZERO, &params, 0.01, t_end).unwrap();

        let omega = v * phi.tan() / params.wheelbase;
        let radius = params.wheelbase / phi.tan();
        for &(t, state) in &traj {
            let expected_x = radius * (omega * t).sin();
            let expected_y = radius * (1.0 - (omega * t).cos());
            assert!(
                ((state.x - expected_x).powi(2) + (state.y - expected_y).powi(2)).sqrt() < 1e-4,
                "t={t}: ({}, {}) vs ({expected_x}, {expected_y})",
                state.x,
                state.y
            );
        }
    }

    // Halving the step changes a 5 s endpoint by less than 1e-6 m.
    #[test]
    fn step_halving_convergence() {
        let params = VehicleParams::default();
        let s = VehicleState::new(0.0, 0.0, 0.15, 1.5, 0.3);
        // smooth feedback, mild enough that no saturation or clamp kicks in
        let controller = |state: &VehicleState, t: f64| VehicleInput {
            a: 0.3 * (2.0 - state.v),
            u: 0.1 * (0.5 * t).sin() - 0.3 * state.phi,
        };
        let coarse = integrate(&s, controller, &params, 0.01, 5.0).unwrap();
        let fine = integrate(&s, controller, &params, 0.005, 5.0).unwrap();
        let e_coarse = coarse.last().unwrap().1;
        let e_fine = fine.last().unwrap().1;
        let dist = ((e_coarse.x - e_fine.x).powi(2) + (e_coarse.y - e_fine.y).powi(2)).sqrt();
        assert!(dist < 1e-6, "endpoint moved {dist} m under step halving");
    }

    #[test]
    fn constraints_hold_along_trajectory() {
        let params = VehicleParams::default();
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.3, 3.0);
        let traj = integrate(
            &s,
            |_, _| VehicleInput { a: -2.0, u: 5.0 },
            &params,
            0.01,
            4.0,
        )
        .unwrap();
        for &(_, state) in &traj {
            assert!(state.v >= 0.0);
            assert!(state.phi.abs() <= params.phi_max + 1e-12);
            assert!(state.theta > -std::f64::consts::PI && state.theta <= std::f64::consts::PI);
        }
        // braking below zero speed pins v at 0
        assert_eq!(traj.last().unwrap().1.v, 0.0);
    }

    #[test]
    fn input_saturation() {
        let params = VehicleParams::default();
        let i = VehicleInput { a: 99.0, u: -99.0 }.saturated(&params);
        assert_eq!(i.a, params.a_max);
        assert_eq!(i.u, -params.u_max);
    }
}
