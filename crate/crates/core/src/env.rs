//! Point-mass reaching tasks with an analytically known conditional policy.
//!
//! The environment integrates `x ← x + gain·a + noise`. The policy prior
//! `p(A¹ | o)` is a Gaussian mixture whose component means are rollouts of a
//! saturated proportional controller: one mode for the plain reach, two modes
//! (left and right of the obstacle) for the detour task. Because the prior is
//! a mixture, its exact flow velocity comes from [`GaussianMixtureField`].

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ActionChunk, GaussianMixtureField, TemporalPrior, VelocityField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub obstacle: Option<Obstacle>,
    pub max_steps: usize,
    pub goal_tolerance: f64,
    pub action_noise_std: f64,
    pub dynamics_gain: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::reach()
    }
}

impl EnvConfig {
    /// Straight reach from the origin to `(1, 0)`.
    pub fn reach() -> Self {
        EnvConfig {
            start: vec![0.0, 0.0],
            goal: vec![1.0, 0.0],
            obstacle: None,
            max_steps: 60,
            goal_tolerance: 0.05,
            action_noise_std: 0.02,
            dynamics_gain: 0.1,
        }
    }

    /// The same reach with a disc blocking the straight line.
    pub fn detour() -> Self {
        EnvConfig {
            obstacle: Some(Obstacle {
                center: vec![0.5, 0.0],
                radius: 0.15,
            }),
            ..EnvConfig::reach()
        }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.start.len();
        if d == 0 || self.goal.len() != d {
            return Err(Error::structure("start and goal must share a nonzero dimension"));
        }
        if let Some(obs) = &self.obstacle {
            if obs.center.len() != d {
                return Err(Error::structure("obstacle center dimension mismatch"));
            }
            if !(obs.radius > 0.0) {
                return Err(Error::domain("obstacle radius", obs.radius, "(0, inf)"));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::structure("max_steps must be >= 1"));
        }
        if !(self.goal_tolerance > 0.0) {
            return Err(Error::domain("goal_tolerance", self.goal_tolerance, "(0, inf)"));
        }
        if !(self.action_noise_std >= 0.0) {
            return Err(Error::domain("action_noise_std", self.action_noise_std, "[0, inf)"));
        }
        if !(self.dynamics_gain > 0.0) {
            return Err(Error::domain("dynamics_gain", self.dynamics_gain, "(0, inf)"));
        }
        Ok(())
    }
}

/// Conditioning input for the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub position: Array1<f64>,
    pub goal: Array1<f64>,
    pub obstacle: Option<Obstacle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub done: bool,
    pub success: bool,
}

/// A point mass that cannot enter the obstacle disc.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    config: EnvConfig,
    position: Array1<f64>,
    goal: Array1<f64>,
    step_count: usize,
    done: bool,
    success: bool,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl PointMassEnv {
    pub fn reset(config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let position = Array1::from(config.start.clone());
        let goal = Array1::from(config.goal.clone());
        let noise = (config.action_noise_std > 0.0)
            .then(|| Normal::new(0.0, config.action_noise_std).expect("validated std"));
        let mut env = PointMassEnv {
            config,
            position,
            goal,
            step_count: 0,
            done: false,
            success: false,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        if env.at_goal() {
            env.done = true;
            env.success = true;
        }
        Ok(env)
    }

    pub fn observe(&self) -> Observation {
        Observation {
            position: self.position.clone(),
            goal: self.goal.clone(),
            obstacle: self.config.obstacle.clone(),
        }
    }

    /// Apply one action (clipped to `[-1, 1]` per entry).
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::structure("episode already finished"));
        }
        if action.len() != self.position.len() {
            return Err(Error::ShapeMismatch {
                expected: (1, self.position.len()),
                found: (1, action.len()),
            });
        }
        let gain = self.config.dynamics_gain;
        for (p, a) in self.position.iter_mut().zip(action) {
            *p += gain * a.clamp(-1.0, 1.0);
        }
        if let Some(noise) = &self.noise {
            for p in self.position.iter_mut() {
                *p += noise.sample(&mut self.rng);
            }
        }
        self.push_out_of_obstacle();
        self.step_count += 1;

        self.success = self.at_goal();
        self.done = self.success || self.step_count >= self.config.max_steps;
        Ok(StepResult {
            done: self.done,
            success: self.success,
        })
    }

    pub fn position(&self) -> &Array1<f64> {
        &self.position
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn succeeded(&self) -> bool {
        self.success
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn at_goal(&self) -> bool {
        distance(&self.position, &self.goal) <= self.config.goal_tolerance
    }

    fn push_out_of_obstacle(&mut self) {
        let Some(obs) = &self.config.obstacle else {
            return;
        };
        let center = Array1::from(obs.center.clone());
        let offset = &self.position - &center;
        let dist = offset.dot(&offset).sqrt();
        if dist >= obs.radius {
            return;
        }
        if dist > 0.0 {
            self.position = &center + &(offset * (obs.radius / dist));
        } else {
            // Dead centre: push back toward the start side.
            let mut back = Array1::zeros(center.len());
            back[0] = -obs.radius;
            self.position = &center + &back;
        }
    }
}

fn distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt()
}

/// Parameters of the observation-conditioned chunk prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OraclePolicyParams {
    /// Scale of the conditional prior (slowest temporal mode).
    pub sigma_cond: f64,
    /// 1: direct reach, 2: pass the obstacle on either side.
    pub modes: usize,
    pub horizon: usize,
    /// Proportional gain of the nominal controller.
    pub controller_gain: f64,
    /// Gain assumed for the nominal rollout; matches the environment.
    pub dynamics_gain: f64,
    /// Spectral bandwidth of the temporal correlation, in DCT modes.
    pub bandwidth: f64,
    pub spectral_floor: f64,
    /// Extra lateral distance kept from the obstacle edge.
    pub clearance: f64,
}

impl Default for OraclePolicyParams {
    fn default() -> Self {
        OraclePolicyParams {
            sigma_cond: 0.4,
            modes: 1,
            horizon: 10,
            controller_gain: 5.0,
            dynamics_gain: 0.1,
            bandwidth: 5.0,
            spectral_floor: 1e-3,
            clearance: 0.1,
        }
    }
}

impl OraclePolicyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_cond > 0.0 && self.sigma_cond.is_finite()) {
            return Err(Error::domain("sigma_cond", self.sigma_cond, "(0, inf)"));
        }
        if !(1..=2).contains(&self.modes) {
            return Err(Error::structure(format!(
                "modes must be 1 or 2, got {}",
                self.modes
            )));
        }
        if self.horizon == 0 {
            return Err(Error::structure("horizon must be >= 1"));
        }
        if !(self.controller_gain > 0.0) {
            return Err(Error::domain("controller_gain", self.controller_gain, "(0, inf)"));
        }
        if !(self.dynamics_gain > 0.0) {
            return Err(Error::domain("dynamics_gain", self.dynamics_gain, "(0, inf)"));
        }
        if !(self.clearance >= 0.0) {
            return Err(Error::domain("clearance", self.clearance, "[0, inf)"));
        }
        Ok(())
    }

    pub fn temporal_prior(&self) -> Result<TemporalPrior> {
        TemporalPrior::smooth(self.horizon, self.bandwidth, self.spectral_floor)
    }

    /// Nominal chunk for each mode.
    pub fn mode_means(&self, obs: &Observation) -> Result<Vec<ActionChunk>> {
        let targets = self.mode_targets(obs);
        targets
            .iter()
            .map(|via| self.rollout(obs, via.as_ref()))
            .collect()
    }

    /// Via-points for each mode; `None` heads straight for the goal.
    fn mode_targets(&self, obs: &Observation) -> Vec<Option<Array1<f64>>> {
        if self.modes == 1 {
            return vec![None];
        }
        let Some(obstacle) = obs.obstacle.as_ref().filter(|_| obs.position.len() >= 2) else {
            return vec![None, None];
        };
        let center = Array1::from(obstacle.center.clone());
        let axis = &obs.goal - &center;
        let len = axis.dot(&axis).sqrt();
        if len == 0.0 {
            return vec![None, None];
        }
        let along = axis / len;
        let mut lateral = Array1::zeros(along.len());
        lateral[0] = -along[1];
        lateral[1] = along[0];
        let offset = obstacle.radius + self.clearance;
        let ahead = 0.5 * obstacle.radius;
        [1.0, -1.0]
            .iter()
            .map(|side| Some(&center + &(&lateral * (side * offset)) + &(&along * ahead)))
            .collect()
    }

    fn rollout(&self, obs: &Observation, via: Option<&Array1<f64>>) -> Result<ActionChunk> {
        let d = obs.position.len();
        let mut p = obs.position.clone();
        let mut rows = Array2::zeros((self.horizon, d));
        let center = obs
            .obstacle
            .as_ref()
            .map(|o| Array1::from(o.center.clone()));
        for i in 0..self.horizon {
            let target = match (via, &center) {
                (Some(w), Some(c)) => {
                    // Head for the via-point until past the obstacle centre.
                    let axis = &obs.goal - c;
                    if (&p - c).dot(&axis) < 0.0 {
                        w
                    } else {
                        &obs.goal
                    }
                }
                _ => &obs.goal,
            };
            let mut a = (target - &p) * self.controller_gain;
            let peak = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if peak > 1.0 {
                a /= peak;
            }
            p.scaled_add(self.dynamics_gain, &a);
            rows.row_mut(i).assign(&a);
        }
        ActionChunk::new(rows)
    }
}

/// Mixture prior `p(A¹ | o)` for the given observation.
pub fn conditional_field(obs: &Observation, params: &OraclePolicyParams) -> Result<GaussianMixtureField> {
    params.validate()?;
    let means = params.mode_means(obs)?;
    GaussianMixtureField::equal_weights(means, params.sigma_cond, params.temporal_prior()?)
}

/// Velocity field conditioned on the observation it is evaluated with.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePolicy {
    pub params: OraclePolicyParams,
}

impl OraclePolicy {
    pub fn new(params: OraclePolicyParams) -> Result<Self> {
        params.validate()?;
        params.temporal_prior()?;
        Ok(OraclePolicy { params })
    }
}

impl VelocityField<Observation> for OraclePolicy {
    fn velocity(&self, chunk: &ActionChunk, tau: f64, obs: &Observation) -> Result<ActionChunk> {
        conditional_field(obs, &self.params)?.velocity_at(chunk, tau)
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn velocity_vjp(
        &self,
        chunk: &ActionChunk,
        tau: f64,
        obs: &Observation,
        cotangent: &ActionChunk,
    ) -> Result<ActionChunk> {
        conditional_field(obs, &self.params)?.vjp_at(chunk, tau, cotangent)
    }
}
