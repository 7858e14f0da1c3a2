//! Multi-hypothesis particle filter over pedestrian intents.
//!
//! Each particle carries a pedestrian state plus a fixed hypothesis about
//! which goal the pedestrian is heading for. Prediction advances every
//! particle toward its own hypothesized goal, the update reweights by how
//! well the predicted position explains the measurement, and systematic
//! resampling keeps the population healthy. Summing weights per hypothesis
//! yields the intent distribution; the most likely intent drives the
//! predicted trajectory.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::pedestrian::{
    self, EnvironmentMap, GpfaParams, PedestrianState, PredictedTrajectory, StateSpaceModel,
};

/// One weighted hypothesis sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Particle {
    pub state: PedestrianState,
    pub intent_index: usize,
    pub weight: f64,
}

/// Filter tuning knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Particles allocated to each intent at initialization.
    pub particles_per_intent: usize,
    /// Std of the Gaussian measurement likelihood, meters.
    pub likelihood_std: f64,
    /// Std of initial particle positions around the first measurement, meters.
    pub position_init_std: f64,
    /// Std of initial particle velocities, meters/second.
    pub velocity_init_std: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            particles_per_intent: 200,
            likelihood_std: 0.25,
            position_init_std: 0.25,
            velocity_init_std: 0.1,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles_per_intent == 0 {
            return Err(Error::Config("particles_per_intent must be positive".into()));
        }
        if self.likelihood_std <= 0.0 {
            return Err(Error::Config("likelihood_std must be positive".into()));
        }
        if self.position_init_std < 0.0 || self.velocity_init_std < 0.0 {
            return Err(Error::Config("init stds must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Probability over the intent set; entries sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentDistribution {
    pub probabilities: Vec<f64>,
}

impl IntentDistribution {
    /// Most likely intent; ties break toward the lowest goal index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

/// The filter as a value: particles plus elapsed time and configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterState {
    pub particles: Vec<Particle>,
    pub time: f64,
    pub config: FilterConfig,
    pub n_intents: usize,
    /// Count of degeneracy resets (all likelihoods underflowed to zero).
    pub degeneracy_resets: u32,
}

impl FilterState {
    pub fn intent_distribution(&self) -> IntentDistribution {
        let mut probabilities = vec![0.0; self.n_intents];
        for p in &self.particles {
            probabilities[p.intent_index] += p.weight;
        }
        IntentDistribution { probabilities }
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Effective sample size 1 / sum(w^2).
    pub fn effective_sample_size(&self) -> f64 {
        let s: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        if s > 0.0 {
            1.0 / s
        } else {
            0.0
        }
    }

    /// Weighted mean velocity of particles holding `intent_index`.
    pub fn mean_velocity_for_intent(&self, intent_index: usize) -> Vec2 {
        let mut v = Vec2::ZERO;
        let mut w_total = 0.0;
        for p in &self.particles {
            if p.intent_index == intent_index {
                v += p.state.velocity * p.weight;
                w_total += p.weight;
            }
        }
        if w_total > 0.0 {
            v * (1.0 / w_total)
        } else {
            Vec2::ZERO
        }
    }
}

/// Builds the initial population: `particles_per_intent` per goal, positions
/// spread around the first measurement, uniform weights.
pub fn init_filter(
    first_measurement: Vec2,
    env: &EnvironmentMap,
    config: &FilterConfig,
    seed: u64,
) -> Result<FilterState> {
    config.validate()?;
    if env.goals.is_empty() {
        return Err(Error::Config("cannot initialize the filter with no goals".into()));
    }
    if !first_measurement.is_finite() {
        return Err(Error::InvalidInput("non-finite first measurement".into()));
    }

    let n_intents = env.goals.len();
    let total = n_intents * config.particles_per_intent;
    let w0 = 1.0 / total as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos_noise = Normal::new(0.0, config.position_init_std.max(1e-12)).unwrap();
    let vel_noise = Normal::new(0.0, config.velocity_init_std.max(1e-12)).unwrap();

    let mut particles = Vec::with_capacity(total);
    for intent_index in 0..n_intents {
        for _ in 0..config.particles_per_intent {
            let position =
                first_measurement + Vec2::new(pos_noise.sample(&mut rng), pos_noise.sample(&mut rng));
            let velocity = Vec2::new(vel_noise.sample(&mut rng), vel_noise.sample(&mut rng));
            particles.push(Particle {
                state: PedestrianState { position, velocity },
                intent_index,
                weight: w0,
            });
        }
    }
    Ok(FilterState { particles, time: 0.0, config: *config, n_intents, degeneracy_resets: 0 })
}

/// Advances every particle toward its hypothesized goal with process noise.
/// Weights are untouched; `dt = 0` is a no-op.
pub fn predict(
    filter: &FilterState,
    model: &StateSpaceModel,
    env: &EnvironmentMap,
    params: &GpfaParams,
    dt: f64,
    seed: u64,
) -> Result<FilterState> {
    if dt < 0.0 {
        return Err(Error::InvalidInput(format!("negative dt {dt}")));
    }
    if dt == 0.0 {
        return Ok(filter.clone());
    }
    let model = model.with_dt(dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = filter.clone();
    for particle in &mut next.particles {
        let goal = env.goals[particle.intent_index];
        particle.state =
            pedestrian::step_with_rng(&particle.state, goal, &model, env, params, &mut rng)?;
    }
    next.time += dt;
    Ok(next)
}

/// Reweights by the Gaussian position likelihood and renormalizes.
///
/// If every likelihood underflows to zero the weights reset to uniform and a
/// degeneracy warning is logged.
pub fn update(filter: &FilterState, measurement: Vec2) -> Result<(FilterState, IntentDistribution)> {
    if !measurement.is_finite() {
        return Err(Error::InvalidInput("non-finite measurement".into()));
    }
    let mut next = filter.clone();

    let ess = next.effective_sample_size();
    if ess < 0.1 * next.particles.len() as f64 {
        warn!("effective sample size {ess:.1} below 10% of population before update");
    }

    let inv_two_sigma2 = 1.0 / (2.0 * next.config.likelihood_std * next.config.likelihood_std);
    let mut sum = 0.0;
    for p in &mut next.particles {
        let d2 = (measurement - p.state.position).norm_squared();
        p.weight *= (-d2 * inv_two_sigma2).exp();
        sum += p.weight;
    }

    if sum <= 0.0 || !sum.is_finite() {
        warn!("likelihood degeneracy: all particle weights underflowed; resetting to uniform");
        let w0 = 1.0 / next.particles.len() as f64;
        for p in &mut next.particles {
            p.weight = w0;
        }
        next.degeneracy_resets += 1;
    } else {
        for p in &mut next.particles {
            p.weight /= sum;
        }
    }
    let dist = next.intent_distribution();
    Ok((next, dist))
}

/// Systematic resampling proportional to weight. Children inherit both the
/// state and the intent label of their parent; weights reset to uniform.
pub fn resample(filter: &FilterState, seed: u64) -> FilterState {
    let n = filter.particles.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: f64 = rng.gen::<f64>() / n as f64;

    let mut next = filter.clone();
    let mut children = Vec::with_capacity(n);
    let mut cumulative = filter.particles[0].weight;
    let mut i = 0;
    for k in 0..n {
        let u = start + k as f64 / n as f64;
        while cumulative < u && i + 1 < n {
            i += 1;
            cumulative += filter.particles[i].weight;
        }
        children.push(filter.particles[i]);
    }
    let w0 = 1.0 / n as f64;
    for c in &mut children {
        c.weight = w0;
    }
    next.particles = children;
    next
}

/// Everything the filter produces in one measurement cycle.
#[derive(Debug, Clone)]
pub struct EstimateOutput {
    pub filter: FilterState,
    pub intents: IntentDistribution,
    pub trajectory: PredictedTrajectory,
}

/// One full cycle at the estimation rate: predict, update, resample, then
/// roll out the most likely intent from the measured position.
#[allow(clippy::too_many_arguments)]
pub fn estimate_step(
    filter: &FilterState,
    measurement: Vec2,
    model: &StateSpaceModel,
    env: &EnvironmentMap,
    params: &GpfaParams,
    dt: f64,
    rollout_horizon: f64,
    seed: u64,
) -> Result<EstimateOutput> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let predicted = predict(filter, model, env, params, dt, seeds.gen())?;
    let (updated, intents) = update(&predicted, measurement)?;
    let resampled = resample(&updated, seeds.gen());

    let map_intent = intents.argmax();
    let start_velocity = resampled.mean_velocity_for_intent(map_intent);
    let trajectory = pedestrian::rollout(
        measurement,
        start_velocity,
        map_intent,
        model,
        env,
        params,
        model.dt,
        rollout_horizon,
    )?;
    Ok(EstimateOutput { filter: resampled, intents, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_goal_env() -> EnvironmentMap {
        EnvironmentMap {
            goals: vec![Vec2::new(10.0, 0.0), Vec2::new(0.0, 10.0), Vec2::new(-10.0, 0.0)],
            obstacles: vec![],
        }
    }

    fn model() -> StateSpaceModel {
        StateSpaceModel::new(0.2, Vec2::new(0.02, 0.02), 0.25).unwrap()
    }

    #[test]
    fn init_uniform_over_intents() {
        let env = three_goal_env();
        let cfg = FilterConfig::default();
        let f = init_filter(Vec2::ZERO, &env, &cfg, 5).unwrap();
        assert_eq!(f.particles.len(), 600);
        for p in &f.particles {
            assert!((p.weight - 1.0 / 600.0).abs() < 1e-15);
        }
        let dist = f.intent_distribution();
        for p in &dist.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_single_goal() {
        let env = EnvironmentMap { goals: vec![Vec2::ZERO], obstacles: vec![] };
        let f = init_filter(Vec2::new(1.0, 1.0), &env, &FilterConfig::default(), 5).unwrap();
        let dist = f.intent_distribution();
        assert_eq!(dist.probabilities.len(), 1);
        assert!((dist.probabilities[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn init_deterministic_and_empty_goals_rejected() {
        let env = three_goal_env();
        let cfg = FilterConfig::default();
        let a = init_filter(Vec2::ZERO, &env, &cfg, 11).unwrap();
        let b = init_filter(Vec2::ZERO, &env, &cfg, 11).unwrap();
        for (pa, pb) in a.particles.iter().zip(&b.particles) {
            assert_eq!(pa.state, pb.state);
            assert_eq!(pa.intent_index, pb.intent_index);
        }
        let none = EnvironmentMap { goals: vec![], obstacles: vec![] };
        assert!(init_filter(Vec2::ZERO, &none, &cfg, 11).is_err());
    }

    #[test]
    fn predict_preserves_weights_and_diverges_clusters() {
        let env = EnvironmentMap {
            goals: vec![Vec2::new(10.0, 0.0), Vec2::new(-10.0, 0.0)],
            obstacles: vec![],
        };
        let cfg = FilterConfig { particles_per_intent: 50, ..FilterConfig::default() };
        let params = GpfaParams::default();
        // zero noise so the two hypothesis clusters move deterministically apart
        let noiseless = StateSpaceModel::new(0.2, Vec2::ZERO, 0.25).unwrap();
        let mut f = init_filter(Vec2::ZERO, &env, &cfg, 3).unwrap();
        // force identical particle states
        for p in &mut f.particles {
            p.state = PedestrianState::at_rest(Vec2::ZERO);
        }
        let weights_before: Vec<f64> = f.particles.iter().map(|p| p.weight).collect();

        let mut g = f.clone();
        for step in 0..10 {
            g = predict(&g, &noiseless, &env, &params, 0.2, step).unwrap();
        }
        let weights_after: Vec<f64> = g.particles.iter().map(|p| p.weight).collect();
        assert_eq!(weights_before, weights_after);

        let mean_x = |fs: &FilterState, intent: usize| {
            let sel: Vec<f64> = fs
                .particles
                .iter()
                .filter(|p| p.intent_index == intent)
                .map(|p| p.state.position.x)
                .collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        };
        assert!(mean_x(&g, 0) > 0.5);
        assert!(mean_x(&g, 1) < -0.5);
    }

    #[test]
    fn predict_zero_dt_is_identity() {
        let env = three_goal_env();
        let f = init_filter(Vec2::ZERO, &env, &FilterConfig::default(), 3).unwrap();
        let g = predict(&f, &model(), &env, &GpfaParams::default(), 0.0, 9).unwrap();
        for (pf, pg) in f.particles.iter().zip(&g.particles) {
            assert_eq!(pf.state, pg.state);
        }
        assert_eq!(f.time, g.time);
    }

    // Two symmetric clusters: the analytic Gaussian likelihood ratio says a
    // measurement on one cluster (far from the other relative to the
    // likelihood std) concentrates nearly all weight there.
    #[test]
    fn update_concentrates_on_measured_cluster() {
        let env = EnvironmentMap {
            goals: vec![Vec2::new(10.0, 0.0), Vec2::new(-10.0, 0.0)],
            obstacles: vec![],
        };
        let cfg = FilterConfig { particles_per_intent: 100, ..FilterConfig::default() };
        let mut f = init_filter(Vec2::ZERO, &env, &cfg, 1).unwrap();
        for (i, p) in f.particles.iter_mut().enumerate() {
            let x = if i < 100 { 3.0 } else { -3.0 };
            p.state = PedestrianState::at_rest(Vec2::new(x, 0.0));
            p.intent_index = if i < 100 { 0 } else { 1 };
        }
        // ratio = exp(-(0)^2/2s^2) / exp(-(6)^2/2s^2) with s = 0.25: the far
        // cluster's factor is e^{-288}, utterly negligible.
        let (_g, dist) = update(&f, Vec2::new(3.0, 0.0)).unwrap();
        assert!(dist.probabilities[0] > 0.99, "{dist:?}");
    }

    #[test]
    fn update_symmetric_measurement_keeps_symmetry() {
        let env = EnvironmentMap {
            goals: vec![Vec2::new(10.0, 0.0), Vec2::new(-10.0, 0.0)],
            obstacles: vec![],
        };
        let cfg = FilterConfig { particles_per_intent: 100, ..FilterConfig::default() };
        let mut f = init_filter(Vec2::ZERO, &env, &cfg, 1).unwrap();
        for (i, p) in f.particles.iter_mut().enumerate() {
            let x = if i < 100 { 2.0 } else { -2.0 };
            p.state = PedestrianState::at_rest(Vec2::new(x, 0.0));
            p.intent_index = if i < 100 { 0 } else { 1 };
        }
        let (g, dist) = update(&f, Vec2::ZERO).unwrap();
        assert!((dist.probabilities[0] - dist.probabilities[1]).abs() < 1e-9);
        assert!((g.weight_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn update_degeneracy_resets_to_uniform() {
        let env = three_goal_env();
        let f = init_filter(Vec2::ZERO, &env, &FilterConfig::default(), 1).unwrap();
        let (g, dist) = update(&f, Vec2::new(1e9, 1e9)).unwrap();
        assert_eq!(g.degeneracy_resets, 1);
        let w0 = 1.0 / g.particles.len() as f64;
        for p in &g.particles {
            assert_eq!(p.weight, w0);
        }
        for p in &dist.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_uniform_weights_copies_population() {
        let env = three_goal_env();
        let f = init_filter(Vec2::ZERO, &env, &FilterConfig::default(), 2).unwrap();
        let g = resample(&f, 77);
        assert_eq!(g.particles.len(), f.particles.len());
        for (pf, pg) in f.particles.iter().zip(&g.particles) {
            assert_eq!(pf.state, pg.state);
            assert_eq!(pf.intent_index, pg.intent_index);
        }
    }

    #[test]
    fn resample_degenerate_weight_clones_winner() {
        let env = three_goal_env();
        let mut f = init_filter(Vec2::ZERO, &env, &FilterConfig::default(), 2).unwrap();
        for p in &mut f.particles {
            p.weight = 0.0;
        }
        f.particles[37].weight = 1.0;
        let winner = f.particles[37];
        let g = resample(&f, 5);
        for p in &g.particles {
            assert_eq!(p.state, winner.state);
            assert_eq!(p.intent_index, winner.intent_index);
        }
    }

    // Intent marginals survive resampling within a binomial-noise bound.
    #[test]
    fn resample_preserves_marginals_statistically() {
        let env = three_goal_env();
        let cfg = FilterConfig { particles_per_intent: 100, ..FilterConfig::default() };
        let mut f = init_filter(Vec2::ZERO, &env, &cfg, 8).unwrap();
        // skew the weights toward intent 0
        let mut sum = 0.0;
        for p in &mut f.particles {
            p.weight = match p.intent_index {
                0 => 3.0,
                1 => 1.0,
                _ => 0.5,
            };
            sum += p.weight;
        }
        for p in &mut f.particles {
            p.weight /= sum;
        }
        let target = f.intent_distribution();

        let n = f.particles.len() as f64;
        let trials = 1000;
        let mut means = [0.0; 3];
        for t in 0..trials {
            let g = resample(&f, t as u64);
            let d = g.intent_distribution();
            for k in 0..3 {
                means[k] += d.probabilities[k] / trials as f64;
            }
        }
        for k in 0..3 {
            let p = target.probabilities[k];
            // 3 sigma of the binomial mean over `trials` draws of n particles
            let sigma = (p * (1.0 - p) / n / trials as f64).sqrt();
            assert!(
                (means[k] - p).abs() <= 3.0 * sigma.max(1e-4),
                "marginal {k}: mean {} vs target {p}",
                means[k]
            );
        }
    }

    #[test]
    fn estimate_converges_to_true_intent() {
        let env = three_goal_env();
        let cfg = FilterConfig::default();
        let params = GpfaParams::default();
        let m = model();
        let true_goal = 1usize; // (0, 10)

        // synthetic noiseless walker heading straight for goal 1
        let mut walker = PedestrianState::at_rest(Vec2::ZERO);
        let clean = StateSpaceModel::new(0.2, Vec2::ZERO, 0.0).unwrap();

        let mut filter = init_filter(walker.position, &env, &cfg, 100).unwrap();
        let mut converged_at = None;
        for k in 0..10 {
            walker = pedestrian::step(&walker, env.goals[true_goal], &clean, &env, &params, 0).unwrap();
            let out = estimate_step(
                &filter,
                walker.position,
                &m,
                &env,
                &params,
                0.2,
                20.0,
                200 + k,
            )
            .unwrap();
            filter = out.filter;
            if out.intents.argmax() == true_goal && converged_at.is_none() {
                converged_at = Some(k);
            }
            // rollout contract: trajectory ends at the argmax goal when reached
            if out.trajectory.reached_goal {
                let goal = env.goals[out.trajectory.goal_index];
                assert!(out.trajectory.final_point().distance(goal) <= params.goal_radius);
            }
        }
        assert!(converged_at.is_some(), "never locked onto the true intent");
        assert!(converged_at.unwrap() <= 9);
    }

    #[test]
    fn weight_normalization_fuzz() {
        let env = three_goal_env();
        let cfg = FilterConfig { particles_per_intent: 30, ..FilterConfig::default() };
        let params = GpfaParams::default();
        let m = model();
        let mut filter = init_filter(Vec2::ZERO, &env, &cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for k in 0..1000 {
            let meas = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            filter = predict(&filter, &m, &env, &params, 0.2, k).unwrap();
            let (updated, dist) = update(&filter, meas).unwrap();
            filter = updated;
            assert!((filter.weight_sum() - 1.0).abs() < 1e-9, "step {k}");
            let total: f64 = dist.probabilities.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            if k % 3 == 0 {
                filter = resample(&filter, k);
                assert_eq!(filter.particles.len(), 90);
            }
        }
    }

    // Scaling all weights by a positive constant before normalization must
    // not change the argmax intent.
    #[test]
    fn argmax_invariant_under_weight_scaling() {
        let env = three_goal_env();
        let cfg = FilterConfig { particles_per_intent: 40, ..FilterConfig::default() };
        let mut f = init_filter(Vec2::new(0.5, 0.2), &env, &cfg, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sum = 0.0;
        for p in &mut f.particles {
            p.weight = rng.gen_range(0.0..1.0);
            sum += p.weight;
        }
        for p in &mut f.particles {
            p.weight /= sum;
        }
        let base = f.intent_distribution().argmax();
        for scale in [1e-6, 0.5, 42.0, 1e9] {
            let mut g = f.clone();
            for p in &mut g.particles {
                p.weight *= scale;
            }
            let total = g.weight_sum();
            for p in &mut g.particles {
                p.weight /= total;
            }
            assert_eq!(g.intent_distribution().argmax(), base);
        }
    }
}
