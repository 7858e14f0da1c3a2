//! The decision module: builds pedestrian unsafe tubes by constant bloating
//! of predicted trajectories, intersects them with the vehicle reach tube,
//! and picks the controller mode. Evaluation runs largest set first so a
//! safe verdict on a big set proves every nested smaller set safe; when the
//! configured risk level still conflicts, a brake-mode tube is checked for
//! an unavoidable collision.

use serde::{Deserialize, Serialize};

use crate::control::{ClosedLoop, Mode};
use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::pedestrian::PredictedTrajectory;
use crate::reach::{
    self, BetaPair, Confidence, NestedInitialSets, NestedTubes, ReachTube, Stopwatch,
};

/// A disc around a predicted pedestrian position.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Disc {
    pub center: Vec2,
    pub radius: f64,
}

/// Time-indexed pedestrian unsafe set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnsafeTube {
    pub times: Vec<f64>,
    pub discs: Vec<Disc>,
}

/// Interpolates the predicted trajectory onto the tube grid and bloats every
/// point into a disc of radius `r_ped`. Past the trajectory's final time the
/// pedestrian is held at its goal point.
pub fn pedestrian_unsafe_set(
    traj: &PredictedTrajectory,
    r_ped: f64,
    dt: f64,
    t_look: f64,
) -> Result<UnsafeTube> {
    if traj.points.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if r_ped <= 0.0 || dt <= 0.0 || t_look < 0.0 {
        return Err(Error::InvalidInput(format!(
            "need r_ped > 0, dt > 0, t_look >= 0 (r_ped={r_ped}, dt={dt}, t_look={t_look})"
        )));
    }
    let steps = (t_look / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut discs = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        times.push(t);
        discs.push(Disc { center: traj.position_at(t), radius: r_ped });
    }
    Ok(UnsafeTube { times, discs })
}

/// Earliest time at which the tube's (x, y) face, inflated by the vehicle
/// footprint, touches the pedestrian disc. Boundary contact counts as a
/// conflict.
pub fn check_conflict(
    vehicle_tube: &ReachTube,
    unsafe_tube: &UnsafeTube,
    footprint_radius: f64,
) -> Result<Option<f64>> {
    if vehicle_tube.times.len() != unsafe_tube.times.len() {
        return Err(Error::GridMismatch(format!(
            "vehicle tube has {} steps, unsafe tube {}",
            vehicle_tube.times.len(),
            unsafe_tube.times.len()
        )));
    }
    for (tv, tu) in vehicle_tube.times.iter().zip(&unsafe_tube.times) {
        if (tv - tu).abs() > 1e-9 {
            return Err(Error::GridMismatch(format!("time grids diverge at {tv} vs {tu}")));
        }
    }
    for (k, t) in vehicle_tube.times.iter().enumerate() {
        let b = &vehicle_tube.boxes[k];
        let disc = &unsafe_tube.discs[k];
        // clamp the disc center onto the box's xy face
        let cx = disc.center.x.clamp(b.min[0], b.max[0]);
        let cy = disc.center.y.clamp(b.min[1], b.max[1]);
        let dist = Vec2::new(cx - disc.center.x, cy - disc.center.y).norm();
        if dist <= disc.radius + footprint_radius {
            return Ok(Some(*t));
        }
    }
    Ok(None)
}

/// Outcome of one decision query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decision {
    pub mode: Mode,
    /// The confidence level whose tube decided the verdict.
    pub confidence_used: Confidence,
    /// Present exactly when `mode` is brake.
    pub first_conflict_time: Option<f64>,
    /// True when even the brake-mode tube conflicts.
    pub unavoidable: bool,
}

/// Decision plus everything computed on the way, for logging and display.
#[derive(Debug, Clone)]
pub struct DecisionOutcome {
    pub decision: Decision,
    /// Nested trackspeed tubes (always computed; they share simulations).
    pub tubes: NestedTubes,
    /// Brake-mode tube at the risk level, when the trackspeed tube conflicted.
    pub brake_tube: Option<ReachTube>,
    /// Conflict flag per pedestrian at the deciding confidence level.
    pub ped_conflicts: Vec<bool>,
    /// Wall-clock seconds for the whole decision (not deterministic).
    pub compute_time_s: f64,
}

/// Tube query parameters shared by every decision.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TubeParams {
    pub m_cap: usize,
    pub t_look: f64,
    pub dt: f64,
}

/// Runs the full decision procedure for one tick.
///
/// Trackspeed tubes are evaluated largest-first down to `risk_level`; the
/// first conflict-free level proves all smaller levels safe and stops the
/// search. If the risk-level tube still conflicts, the mode is brake and the
/// brake tube determines the unavoidable flag.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    sets: &NestedInitialSets,
    ped_trajs: &[PredictedTrajectory],
    risk_level: Confidence,
    betas: &BetaPair,
    tube: &TubeParams,
    cl: &ClosedLoop<'_>,
    r_ped: f64,
    footprint_radius: f64,
) -> Result<DecisionOutcome> {
    let watch = Stopwatch::start();
    let tubes =
        reach::nested_tubes(sets, Mode::Trackspeed, &betas.trackspeed, tube.m_cap, tube.t_look, tube.dt, cl)?;

    let unsafe_tubes: Vec<UnsafeTube> = ped_trajs
        .iter()
        .map(|traj| pedestrian_unsafe_set(traj, r_ped, tube.dt, tube.t_look))
        .collect::<Result<_>>()?;

    // largest set first; stop as soon as a level at or above the configured
    // risk is conflict-free
    let mut decision = None;
    let mut ped_conflicts = vec![false; ped_trajs.len()];
    for level in [Confidence::High, Confidence::Medium, Confidence::Low] {
        if level < risk_level {
            break;
        }
        let mut earliest: Option<f64> = None;
        let mut conflicts = vec![false; ped_trajs.len()];
        for (i, unsafe_tube) in unsafe_tubes.iter().enumerate() {
            if let Some(t) = check_conflict(tubes.at(level), unsafe_tube, footprint_radius)? {
                conflicts[i] = true;
                earliest = Some(match earliest {
                    Some(cur) => t.min(cur),
                    None => t,
                });
            }
        }
        match earliest {
            None => {
                // safe at this level; nesting makes every smaller level safe
                decision = Some(Decision {
                    mode: Mode::Trackspeed,
                    confidence_used: level,
                    first_conflict_time: None,
                    unavoidable: false,
                });
                ped_conflicts = conflicts;
                break;
            }
            Some(t) if level == risk_level => {
                decision = Some(Decision {
                    mode: Mode::Brake,
                    confidence_used: level,
                    first_conflict_time: Some(t),
                    unavoidable: false,
                });
                ped_conflicts = conflicts;
            }
            Some(_) => {} // conflicted above the risk level; try the next smaller set
        }
    }
    let mut decision = decision.expect("risk level is always evaluated");

    let brake_tube = if decision.mode == Mode::Brake {
        let tube_brake = reach::compute_reach_tube(
            sets.at(risk_level),
            Mode::Brake,
            &betas.brake,
            tube.m_cap,
            tube.t_look,
            tube.dt,
            cl,
        )?;
        let mut unavoidable = false;
        for unsafe_tube in &unsafe_tubes {
            if check_conflict(&tube_brake, unsafe_tube, footprint_radius)?.is_some() {
                unavoidable = true;
                break;
            }
        }
        decision.unavoidable = unavoidable;
        Some(tube_brake)
    } else {
        None
    };

    Ok(DecisionOutcome {
        decision,
        tubes,
        brake_tube,
        ped_conflicts,
        compute_time_s: watch.elapsed_s(),
    })
}
