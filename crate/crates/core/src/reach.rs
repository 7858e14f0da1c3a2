//! On-line reachability: learn a per-dimension sensitivity function from
//! sampled closed-loop trajectory pairs off-line, then compute reach tubes
//! on-line by partitioning the initial set, simulating one representative
//! per part, and bloating each simulation with the learned bound.
//!
//! The sensitivity function is piecewise exponential in time:
//! beta_d(delta, t) = delta * exp(sum over elapsed bins of gamma_{d,j} * dt_j).
//! Exponents are fitted per time bin by least squares on log divergence
//! ratios and then inflated so the bound dominates every training pair at
//! every bin boundary. beta(0, t) = 0 exactly and beta is monotone in delta,
//! so nested initial sets produce boxwise-nested tubes when they share
//! partition centers.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::control::{ClosedLoop, Mode};
use crate::error::{Error, Result};
use crate::vehicle::{VehicleState, STATE_DIMS};

/// Schema version of the serialized sensitivity file.
pub const SENSITIVITY_SCHEMA_VERSION: u32 = 1;

/// Confidence level of an initial-set estimate; higher confidence means a
/// larger set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

impl Confidence {
    pub const ALL: [Confidence; 3] = [Confidence::Low, Confidence::Medium, Confidence::High];

    pub fn label(self) -> &'static str {
        match self {
            Confidence::Low => "low",
            Confidence::Medium => "medium",
            Confidence::High => "high",
        }
    }
}

/// A box of initial states around a state estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InitialSet {
    pub center: VehicleState,
    /// Per-dimension half-widths in the canonical (x, y, phi, v, theta) order.
    pub radii: [f64; STATE_DIMS],
    pub confidence: Confidence,
}

impl InitialSet {
    pub fn validate(&self) -> Result<()> {
        if self.radii.iter().any(|r| *r < 0.0 || !r.is_finite()) {
            return Err(Error::InvalidInput("initial-set radii must be nonnegative".into()));
        }
        Ok(())
    }
}

/// The three nested initial sets of one reachability query.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NestedInitialSets {
    pub low: InitialSet,
    pub medium: InitialSet,
    pub high: InitialSet,
}

impl NestedInitialSets {
    /// Builds the triple around a state estimate from per-level radii.
    pub fn around(center: VehicleState, radii: &ConfidenceRadii) -> Result<NestedInitialSets> {
        let sets = NestedInitialSets {
            low: InitialSet { center, radii: radii.low, confidence: Confidence::Low },
            medium: InitialSet { center, radii: radii.medium, confidence: Confidence::Medium },
            high: InitialSet { center, radii: radii.high, confidence: Confidence::High },
        };
        sets.validate()?;
        Ok(sets)
    }

    pub fn validate(&self) -> Result<()> {
        self.low.validate()?;
        self.medium.validate()?;
        self.high.validate()?;
        for d in 0..STATE_DIMS {
            if self.low.radii[d] > self.medium.radii[d] || self.medium.radii[d] > self.high.radii[d]
            {
                return Err(Error::InvalidInput(format!(
                    "confidence radii are not nested in dimension {d}"
                )));
            }
        }
        Ok(())
    }

    pub fn at(&self, level: Confidence) -> &InitialSet {
        match level {
            Confidence::Low => &self.low,
            Confidence::Medium => &self.medium,
            Confidence::High => &self.high,
        }
    }
}

/// Per-level initial-set radii, nested componentwise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfidenceRadii {
    pub low: [f64; STATE_DIMS],
    pub medium: [f64; STATE_DIMS],
    pub high: [f64; STATE_DIMS],
}

impl Default for ConfidenceRadii {
    fn default() -> Self {
        // position / steering / speed / heading scales chosen to bracket the
        // configured state-estimate noise
        ConfidenceRadii {
            low: [0.10, 0.10, 0.02, 0.05, 0.02],
            medium: [0.25, 0.25, 0.05, 0.10, 0.05],
            high: [0.50, 0.50, 0.10, 0.20, 0.10],
        }
    }
}

/// Training metadata stored alongside the learned exponents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub pair_count: usize,
    pub horizon: f64,
    pub sim_dt: f64,
    pub seed: u64,
}

/// Learned per-dimension, piecewise-exponential divergence bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityFunction {
    pub schema_version: u32,
    /// Mode the function was trained for; `None` for generic fits.
    pub mode: Option<Mode>,
    pub dims: usize,
    /// Width of each time bin, s.
    pub bin_width: f64,
    /// Trained horizon, s; evaluation clamps t to it.
    pub horizon: f64,
    /// Exponents gamma[dim][bin], 1/s.
    pub gammas: Vec<Vec<f64>>,
    pub training: TrainingMeta,
}

impl SensitivityFunction {
    /// beta_d(delta, t): the divergence bound for an initial offset `delta`
    /// in dimension `dim` after `t` seconds.
    pub fn eval(&self, dim: usize, delta: f64, t: f64) -> f64 {
        debug_assert!(dim < self.dims);
        if delta == 0.0 {
            return 0.0;
        }
        let t = t.clamp(0.0, self.horizon);
        let mut exponent = 0.0;
        for (j, gamma) in self.gammas[dim].iter().enumerate() {
            let bin_start = j as f64 * self.bin_width;
            if t <= bin_start {
                break;
            }
            let dt_in_bin = (t - bin_start).min(self.bin_width);
            exponent += gamma * dt_in_bin;
        }
        delta.abs() * exponent.exp()
    }

    pub fn n_bins(&self) -> usize {
        self.gammas.first().map_or(0, |g| g.len())
    }

    /// Serializes to a self-describing JSON file.
    pub fn save(&self, path: &FsPath) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<SensitivityFunction> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::MissingArtifact(format!("sensitivity file {}: {e}", path.display()))
        })?;
        let beta: SensitivityFunction = serde_json::from_str(&text)?;
        if beta.schema_version != SENSITIVITY_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "sensitivity file {} has schema version {}, expected {}",
                path.display(),
                beta.schema_version,
                SENSITIVITY_SCHEMA_VERSION
            )));
        }
        Ok(beta)
    }

    /// Conventional file name for a trained mode inside a beta directory.
    pub fn file_name(mode: Mode) -> String {
        format!("sensitivity_{mode}.json")
    }
}

/// The trackspeed and brake sensitivity functions together.
#[derive(Debug, Clone)]
pub struct BetaPair {
    pub trackspeed: SensitivityFunction,
    pub brake: SensitivityFunction,
}

impl BetaPair {
    pub fn load_dir(dir: &FsPath) -> Result<BetaPair> {
        let load = |mode: Mode| -> Result<SensitivityFunction> {
            let path: PathBuf = dir.join(SensitivityFunction::file_name(mode));
            let beta = SensitivityFunction::load(&path)?;
            if beta.mode != Some(mode) {
                return Err(Error::Config(format!(
                    "{} is trained for {:?}, expected {mode}",
                    path.display(),
                    beta.mode
                )));
            }
            Ok(beta)
        };
        Ok(BetaPair { trackspeed: load(Mode::Trackspeed)?, brake: load(Mode::Brake)? })
    }

    pub fn for_mode(&self, mode: Mode) -> &SensitivityFunction {
        match mode {
            Mode::Trackspeed => &self.trackspeed,
            Mode::Brake => &self.brake,
        }
    }

    pub fn min_horizon(&self) -> f64 {
        self.trackspeed.horizon.min(self.brake.horizon)
    }
}

/// One sampled pair of nearby trajectories, time-major states.
#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    pub times: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// Fits the piecewise-exponential bound from trajectory pairs.
///
/// Per dimension and bin the exponent is the least-squares slope of the log
/// divergence ratio, then raised until the cumulative bound dominates every
/// pair's observed divergence (including within-bin peaks) at each bin
/// boundary. Pairs with zero initial offset in a dimension are skipped for
/// that dimension; a dimension with no usable pairs is a config error.
pub fn fit_sensitivity(
    pairs: &[TrajectoryPair],
    bin_width: f64,
    horizon: f64,
) -> Result<SensitivityFunction> {
    if pairs.is_empty() {
        return Err(Error::Config("sensitivity fit needs at least one trajectory pair".into()));
    }
    if bin_width <= 0.0 || horizon < bin_width {
        return Err(Error::Config(format!(
            "need bin_width > 0 and horizon >= bin_width (bin_width={bin_width}, horizon={horizon})"
        )));
    }
    let dims = pairs[0].a[0].len();
    let n_bins = (horizon / bin_width).ceil() as usize;
    // divergence smaller than this is treated as converged, not log(0)
    const FLOOR: f64 = 1e-9;

    let mut gammas = vec![vec![0.0; n_bins]; dims];
    for dim in 0..dims {
        // per pair: log(ratio) at each bin boundary, using the in-bin peak
        // so mid-bin excursions are covered at the next boundary
        let mut boundary_logs: Vec<Vec<f64>> = Vec::new();
        for pair in pairs {
            let delta0 = (pair.a[0][dim] - pair.b[0][dim]).abs();
            if delta0 <= 0.0 {
                continue; // degenerate in this dimension
            }
            let mut logs = Vec::with_capacity(n_bins + 1);
            logs.push(0.0);
            let mut bin_peak = 0.0f64;
            let mut bin_end = bin_width;
            for (k, &t) in pair.times.iter().enumerate() {
                if t > horizon + 1e-9 {
                    break;
                }
                let div = (pair.a[k][dim] - pair.b[k][dim]).abs();
                bin_peak = bin_peak.max(div);
                // close every bin this sample ends; the boundary sample also
                // seeds the next bin's peak
                while t + 1e-9 >= bin_end && logs.len() <= n_bins {
                    logs.push((bin_peak.max(FLOOR) / delta0).ln());
                    bin_peak = div;
                    bin_end += bin_width;
                }
            }
            while logs.len() <= n_bins {
                logs.push((bin_peak.max(FLOOR) / delta0).ln());
            }
            boundary_logs.push(logs);
        }
        if boundary_logs.is_empty() {
            return Err(Error::Config(format!(
                "no usable training pairs for dimension {dim} (all initial offsets were zero)"
            )));
        }

        // least-squares slope per bin (mean of per-pair increments), then the
        // max-residual correction
        let mut cumulative = 0.0;
        for j in 0..n_bins {
            let mut slope_sum = 0.0;
            for logs in &boundary_logs {
                slope_sum += (logs[j + 1] - logs[j]) / bin_width;
            }
            let ls = slope_sum / boundary_logs.len() as f64;
            let needed = boundary_logs
                .iter()
                .map(|logs| (logs[j + 1] - cumulative) / bin_width)
                .fold(f64::NEG_INFINITY, f64::max);
            let gamma = ls.max(needed);
            gammas[dim][j] = gamma;
            cumulative += gamma * bin_width;
        }
    }

    Ok(SensitivityFunction {
        schema_version: SENSITIVITY_SCHEMA_VERSION,
        mode: None,
        dims,
        bin_width,
        horizon: n_bins as f64 * bin_width,
        gammas,
        training: TrainingMeta { pair_count: pairs.len(), horizon, sim_dt: 0.0, seed: 0 },
    })
}

/// Knobs for the off-line sensitivity training run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub pairs: usize,
    pub horizon: f64,
    pub bin_width: f64,
    /// Largest per-dimension initial offsets to sample (use the high
    /// confidence radii so every on-line query stays inside the trained
    /// envelope).
    pub offset_radii: [f64; STATE_DIMS],
    /// Simulation step, s.
    pub dt: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            pairs: 40,
            horizon: 5.5,
            bin_width: 0.5,
            offset_radii: ConfidenceRadii::default().high,
            dt: 0.01,
        }
    }
}

/// Samples pairs of nearby operating points along the path, simulates both
/// closed loop under `mode`, and fits the divergence bound.
pub fn learn_sensitivity(
    mode: Mode,
    cl: &ClosedLoop<'_>,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<SensitivityFunction> {
    if cfg.pairs < 20 {
        return Err(Error::Config(format!(
            "sensitivity training needs at least 20 pairs, got {}",
            cfg.pairs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(cfg.pairs);
    for _ in 0..cfg.pairs {
        let base = sample_operating_point(cl, &mut rng);
        let mut offset = [0.0; STATE_DIMS];
        for (d, o) in offset.iter_mut().enumerate() {
            let r = cfg.offset_radii[d];
            if r > 0.0 {
                // keep offsets away from zero so the log ratios stay conditioned
                let magnitude = rng.gen_range(0.25 * r..=r);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                *o = sign * magnitude;
            }
        }
        specs.push((base, offset));
    }

    let simulate_pair = |(base, offset): &(VehicleState, [f64; STATE_DIMS])| -> Result<TrajectoryPair> {
        let mut shifted = base.to_array();
        for d in 0..STATE_DIMS {
            shifted[d] += offset[d];
        }
        let traj_a = cl.simulate(base, mode, cfg.dt, cfg.horizon)?;
        let traj_b =
            cl.simulate(&VehicleState::from_array(shifted), mode, cfg.dt, cfg.horizon)?;
        Ok(TrajectoryPair {
            times: traj_a.iter().map(|(t, _)| *t).collect(),
            a: traj_a.iter().map(|(_, s)| s.to_array().to_vec()).collect(),
            b: traj_b.iter().map(|(_, s)| s.to_array().to_vec()).collect(),
        })
    };

    #[cfg(feature = "parallel")]
    let pairs: Result<Vec<TrajectoryPair>> = specs.par_iter().map(simulate_pair).collect();
    #[cfg(not(feature = "parallel"))]
    let pairs: Result<Vec<TrajectoryPair>> = specs.iter().map(simulate_pair).collect();
    let pairs = pairs?;

    let mut beta = fit_sensitivity(&pairs, cfg.bin_width, cfg.horizon)?;
    beta.mode = Some(mode);
    beta.training = TrainingMeta {
        pair_count: cfg.pairs,
        horizon: cfg.horizon,
        sim_dt: cfg.dt,
        seed,
    };
    Ok(beta)
}

/// Draws a plausible tracking state: near the path, roughly at the reference
/// speed, heading along the local tangent.
fn sample_operating_point(cl: &ClosedLoop<'_>, rng: &mut ChaCha8Rng) -> VehicleState {
    // keep a margin at the path end so the horizon stays on the path
    let margin = (cl.v_r * 6.0).min(0.5 * cl.path.total_length());
    let s = rng.gen_range(0.0..(cl.path.total_length() - margin).max(1.0));
    let point = cl.path.point_at(s);
    let tangent = cl.path.tangent_at(s);
    let heading = tangent.y.atan2(tangent.x);
    let lateral = rng.gen_range(-0.3..0.3);
    let normal = crate::math::Vec2::new(-tangent.y, tangent.x);
    VehicleState {
        x: point.x + normal.x * lateral,
        y: point.y + normal.y * lateral,
        phi: rng.gen_range(-0.05..0.05),
        v: (cl.v_r * rng.gen_range(0.6..1.1)).max(0.1),
        theta: crate::math::wrap_angle(heading + rng.gen_range(-0.1..0.1)),
    }
}

/// Axis-aligned box over the five state dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub min: [f64; STATE_DIMS],
    pub max: [f64; STATE_DIMS],
}

impl StateBox {
    pub fn around(state: &VehicleState, half_widths: &[f64; STATE_DIMS]) -> StateBox {
        let c = state.to_array();
        let mut min = c;
        let mut max = c;
        for d in 0..STATE_DIMS {
            min[d] -= half_widths[d];
            max[d] += half_widths[d];
        }
        StateBox { min, max }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &StateBox) -> StateBox {
        let mut min = self.min;
        let mut max = self.max;
        for d in 0..STATE_DIMS {
            min[d] = min[d].min(other.min[d]);
            max[d] = max[d].max(other.max[d]);
        }
        StateBox { min, max }
    }

    pub fn contains(&self, state: &VehicleState, position_only: bool) -> bool {
        let a = state.to_array();
        let dims = if position_only { 2 } else { STATE_DIMS };
        (0..dims).all(|d| a[d] >= self.min[d] - 1e-12 && a[d] <= self.max[d] + 1e-12)
    }

    pub fn contains_box(&self, inner: &StateBox) -> bool {
        (0..STATE_DIMS)
            .all(|d| self.min[d] <= inner.min[d] + 1e-12 && self.max[d] + 1e-12 >= inner.max[d])
    }
}

/// Time-indexed over-approximation of the reachable states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachTube {
    pub times: Vec<f64>,
    pub boxes: Vec<StateBox>,
    pub mode: Mode,
    pub confidence: Confidence,
    /// Wall-clock seconds spent computing the tube (not deterministic).
    pub compute_time_s: f64,
}

impl ReachTube {
    pub fn dt(&self) -> f64 {
        if self.times.len() >= 2 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    /// Index of the tube step nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let dt = self.dt();
        if dt <= 0.0 {
            return 0;
        }
        ((t / dt).round() as usize).min(self.times.len() - 1)
    }

    /// Boxwise nesting check against a larger tube on the same grid.
    pub fn is_nested_in(&self, outer: &ReachTube) -> bool {
        self.boxes.len() == outer.boxes.len()
            && self
                .boxes
                .iter()
                .zip(&outer.boxes)
                .all(|(inner, out)| out.contains_box(inner))
    }

    /// Truncated copy covering `[0, t_look]`; the tube must extend that far.
    pub fn truncated(&self, t_look: f64) -> Result<ReachTube> {
        let dt = self.dt();
        if dt <= 0.0 {
            return Err(Error::GridMismatch("tube has no time grid".into()));
        }
        let n = (t_look / dt).round() as usize;
        if n + 1 > self.times.len() {
            return Err(Error::HorizonExceeded {
                t_look,
                horizon: *self.times.last().unwrap_or(&0.0),
            });
        }
        Ok(ReachTube {
            times: self.times[..=n].to_vec(),
            boxes: self.boxes[..=n].to_vec(),
            mode: self.mode,
            confidence: self.confidence,
            compute_time_s: self.compute_time_s,
        })
    }

    /// Fraction of truth samples inside the tube box nearest their time.
    ///
    /// Position dimensions are always checked; the remaining dimensions only
    /// when `full_state` is set.
    pub fn containment_accuracy(
        &self,
        truth: &[(f64, VehicleState)],
        full_state: bool,
    ) -> Result<f64> {
        let t_end = *self.times.last().ok_or(Error::EmptyOverlap)?;
        let dt = self.dt();
        let mut inside = 0usize;
        let mut total = 0usize;
        for (t, state) in truth {
            if *t < -1e-9 || *t > t_end + 0.5 * dt {
                continue;
            }
            let idx = self.nearest_index(*t);
            total += 1;
            if self.boxes[idx].contains(state, !full_state) {
                inside += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyOverlap);
        }
        Ok(inside as f64 / total as f64)
    }
}

/// Partition geometry: per-dimension split counts and the resulting centers.
#[derive(Debug, Clone)]
struct Partition {
    /// Offsets of each sub-rectangle center from the set center.
    center_offsets: Vec<[f64; STATE_DIMS]>,
    /// Split count per dimension (1 everywhere except the two largest).
    counts: [usize; STATE_DIMS],
}

/// Splits the box along its two largest-radius dimensions into at most
/// `m_cap` congruent sub-rectangles.
fn partition(radii: &[f64; STATE_DIMS], m_cap: usize) -> Partition {
    let mut counts = [1usize; STATE_DIMS];
    // the two largest radii, ties toward the lower dimension index
    let mut order: Vec<usize> = (0..STATE_DIMS).collect();
    order.sort_by(|&a, &b| radii[b].partial_cmp(&radii[a]).unwrap().then(a.cmp(&b)));
    let primary = order[0];
    let secondary = order[1];

    // the most balanced split pair with n1 * n2 <= m_cap and n1 >= n2
    let mut best = (1usize, 1usize);
    for n2 in 1..=m_cap {
        let n1 = m_cap / n2;
        if n1 < n2 {
            break;
        }
        if n1 * n2 > best.0 * best.1 || (n1 * n2 == best.0 * best.1 && n2 > best.1) {
            best = (n1, n2);
        }
    }
    if radii[primary] > 0.0 {
        counts[primary] = best.0;
    }
    if radii[secondary] > 0.0 {
        counts[secondary] = best.1;
    }

    let mut center_offsets = vec![[0.0; STATE_DIMS]];
    for d in 0..STATE_DIMS {
        if counts[d] == 1 {
            continue;
        }
        let mut expanded = Vec::with_capacity(center_offsets.len() * counts[d]);
        for base in &center_offsets {
            for i in 0..counts[d] {
                let mut offset = *base;
                // centers of `counts[d]` equal slices of [-r, r]
                offset[d] = -radii[d] + (2.0 * i as f64 + 1.0) * radii[d] / counts[d] as f64;
                expanded.push(offset);
            }
        }
        center_offsets = expanded;
    }
    Partition { center_offsets, counts }
}

/// Wall-clock stopwatch; reads 0.0 on wasm where `Instant` is unavailable.
pub(crate) struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    started: std::time::Instant,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            started: std::time::Instant::now(),
        }
    }

    pub(crate) fn elapsed_s(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.started.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Simulates every partition center of `theta` in closed loop and returns
/// the per-timestep interval hull of the bloated samples.
#[allow(clippy::too_many_arguments)]
pub fn compute_reach_tube(
    theta: &InitialSet,
    mode: Mode,
    beta: &SensitivityFunction,
    m_cap: usize,
    t_look: f64,
    dt: f64,
    cl: &ClosedLoop<'_>,
) -> Result<ReachTube> {
    theta.validate()?;
    check_query(mode, beta, m_cap, t_look)?;
    let watch = Stopwatch::start();

    let part = partition(&theta.radii, m_cap);
    let sims = simulate_partition(&theta.center, &part, mode, dt, t_look, cl)?;
    let half_widths = sub_rectangle_half_widths(&theta.radii, &part.counts);
    let (times, boxes) = bloat_and_hull(&sims, beta, &half_widths);

    Ok(ReachTube {
        times,
        boxes,
        mode,
        confidence: theta.confidence,
        compute_time_s: watch.elapsed_s(),
    })
}

/// The three nested tubes of one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NestedTubes {
    pub low: ReachTube,
    pub medium: ReachTube,
    pub high: ReachTube,
}

impl NestedTubes {
    pub fn at(&self, level: Confidence) -> &ReachTube {
        match level {
            Confidence::Low => &self.low,
            Confidence::Medium => &self.medium,
            Confidence::High => &self.high,
        }
    }
}

/// Computes the low/medium/high tubes from one set of simulations.
///
/// All three levels share the partition centers of the largest set and
/// differ only in bloat radii, which guarantees boxwise nesting at every
/// timestep.
#[allow(clippy::too_many_arguments)]
pub fn nested_tubes(
    sets: &NestedInitialSets,
    mode: Mode,
    beta: &SensitivityFunction,
    m_cap: usize,
    t_look: f64,
    dt: f64,
    cl: &ClosedLoop<'_>,
) -> Result<NestedTubes> {
    sets.validate()?;
    check_query(mode, beta, m_cap, t_look)?;
    let watch = Stopwatch::start();

    let part = partition(&sets.high.radii, m_cap);
    let sims = simulate_partition(&sets.high.center, &part, mode, dt, t_look, cl)?;

    let mut tubes = Vec::with_capacity(3);
    for level in Confidence::ALL {
        let set = sets.at(level);
        let half_widths = sub_rectangle_half_widths(&set.radii, &part.counts);
        let (times, boxes) = bloat_and_hull(&sims, beta, &half_widths);
        tubes.push(ReachTube {
            times,
            boxes,
            mode,
            confidence: level,
            compute_time_s: 0.0,
        });
    }
    let elapsed = watch.elapsed_s();
    for tube in &mut tubes {
        tube.compute_time_s = elapsed;
    }
    let high = tubes.pop().unwrap();
    let medium = tubes.pop().unwrap();
    let low = tubes.pop().unwrap();
    Ok(NestedTubes { low, medium, high })
}

fn check_query(mode: Mode, beta: &SensitivityFunction, m_cap: usize, t_look: f64) -> Result<()> {
    if beta.mode != Some(mode) {
        return Err(Error::UntrainedMode(mode));
    }
    if beta.dims != STATE_DIMS {
        return Err(Error::Config(format!(
            "sensitivity function has {} dimensions, the vehicle model needs {STATE_DIMS}",
            beta.dims
        )));
    }
    if t_look > beta.horizon + 1e-9 {
        return Err(Error::HorizonExceeded { t_look, horizon: beta.horizon });
    }
    if m_cap == 0 {
        return Err(Error::InvalidInput("m_cap must be at least 1".into()));
    }
    Ok(())
}

fn sub_rectangle_half_widths(
    radii: &[f64; STATE_DIMS],
    counts: &[usize; STATE_DIMS],
) -> [f64; STATE_DIMS] {
    let mut half = *radii;
    for d in 0..STATE_DIMS {
        half[d] /= counts[d] as f64;
    }
    half
}

fn simulate_partition(
    center: &VehicleState,
    part: &Partition,
    mode: Mode,
    dt: f64,
    t_look: f64,
    cl: &ClosedLoop<'_>,
) -> Result<Vec<Vec<(f64, VehicleState)>>> {
    let starts: Vec<VehicleState> = part
        .center_offsets
        .iter()
        .map(|offset| {
            let mut s = center.to_array();
            for d in 0..STATE_DIMS {
                s[d] += offset[d];
            }
            VehicleState::from_array(s)
        })
        .collect();

    #[cfg(feature = "parallel")]
    {
        starts.par_iter().map(|s| cl.simulate(s, mode, dt, t_look)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        starts.iter().map(|s| cl.simulate(s, mode, dt, t_look)).collect()
    }
}

fn bloat_and_hull(
    sims: &[Vec<(f64, VehicleState)>],
    beta: &SensitivityFunction,
    half_widths: &[f64; STATE_DIMS],
) -> (Vec<f64>, Vec<StateBox>) {
    let n = sims[0].len();
    let mut times = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for k in 0..n {
        let t = sims[0][k].0;
        let mut bloat = [0.0; STATE_DIMS];
        for d in 0..STATE_DIMS {
            bloat[d] = beta.eval(d, half_widths[d], t);
        }
        let mut hull: Option<StateBox> = None;
        for sim in sims {
            let member = StateBox::around(&sim[k].1, &bloat);
            hull = Some(match hull {
                Some(h) => h.hull(&member),
                None => member,
            });
        }
        times.push(t);
        boxes.push(hull.unwrap());
    }
    (times, boxes)
}
