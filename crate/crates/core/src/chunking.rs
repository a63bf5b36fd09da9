//! Asynchronous action-chunk execution with simulated inference delay.
//!
//! Timeline for delay `d` and replan cadence `s`:
//!
//! * The episode opens with an unguided chunk generated from the initial
//!   observation before the clock starts.
//! * A request is issued at every env step `t` with `t % s == 0` (from `t = 0`
//!   when `d > 0`, from `t = s` when `d = 0`). It freezes the current
//!   observation and builds `Y`, `W` from the active chunk, shifted by the
//!   active chunk's execution offset at that moment.
//! * The request is answered `d` steps later. The new chunk replaces the
//!   active one and execution continues at its row `d`; rows `0..d` line up
//!   with the actions executed while the request was in flight.
//!
//! In steady state the execution offset at issue time is exactly `s`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ndarray::Array2;

use crate::env::{Observation, PointMassEnv, StepResult};
use crate::error::{Error, Result};
use crate::flow::{ActionChunk, VelocityField};
use crate::guidance::{guided_denoise, GuidanceConfig, InpaintSpec, Method};

/// `Y_i = prev_{shift+i}` for `i < H − shift`, zero afterwards.
pub fn build_inpaint_target(prev: &ActionChunk, shift: usize) -> Result<ActionChunk> {
    let (h, d) = prev.shape();
    if shift > h {
        return Err(Error::structure(format!(
            "replan shift {shift} exceeds horizon {h}"
        )));
    }
    let mut y = Array2::zeros((h, d));
    for i in 0..h - shift {
        y.row_mut(i).assign(&prev.row(shift + i));
    }
    Ok(ActionChunk::from_raw(y))
}

/// Hard prefix of ones for the rows that execute during the delay, then a
/// geometric decay over the rest of the overlap `L = H − shift`, then zeros.
pub fn build_soft_mask(horizon: usize, delay: usize, shift: usize, decay: f64) -> Result<Vec<f64>> {
    if delay >= horizon {
        return Err(Error::structure(format!(
            "delay {delay} must be smaller than the horizon {horizon}"
        )));
    }
    if shift > horizon {
        return Err(Error::structure(format!(
            "replan shift {shift} exceeds horizon {horizon}"
        )));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::domain("mask decay", decay, "(0, 1]"));
    }
    let overlap = horizon - shift;
    let frozen = delay.min(overlap);
    Ok((0..horizon)
        .map(|i| {
            if i < frozen {
                1.0
            } else if i < overlap {
                decay.powi((i + 1 - delay) as i32)
            } else {
                0.0
            }
        })
        .collect())
}

/// Executed actions on either side of a chunk swap.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEvent {
    pub env_step: usize,
    pub last_action_old: Vec<f64>,
    pub first_action_new: Vec<f64>,
}

impl BoundaryEvent {
    pub fn jump(&self) -> f64 {
        self.first_action_new
            .iter()
            .zip(&self.last_action_old)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// An environment the executor can drive.
pub trait ClosedLoopEnv {
    type Obs: Clone;

    fn observe(&self) -> Self::Obs;
    fn apply(&mut self, action: &[f64]) -> Result<StepResult>;
}

impl ClosedLoopEnv for PointMassEnv {
    type Obs = Observation;

    fn observe(&self) -> Observation {
        PointMassEnv::observe(self)
    }

    fn apply(&mut self, action: &[f64]) -> Result<StepResult> {
        self.step(action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub horizon: usize,
    pub dim: usize,
    pub delay: usize,
    pub replan_every: usize,
    pub mask_decay: f64,
}

impl ScheduleConfig {
    /// Replan every `max(d, 1)` steps.
    pub fn protocol(horizon: usize, dim: usize, delay: usize, mask_decay: f64) -> Self {
        ScheduleConfig {
            horizon,
            dim,
            delay,
            replan_every: delay.max(1),
            mask_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.dim == 0 {
            return Err(Error::structure("horizon and action dimension must be >= 1"));
        }
        if self.delay >= self.horizon {
            return Err(Error::structure(format!(
                "delay {} must be smaller than the horizon {}",
                self.delay, self.horizon
            )));
        }
        if self.replan_every == 0 || self.replan_every > self.horizon {
            return Err(Error::structure(format!(
                "replan cadence {} must lie in [1, {}]",
                self.replan_every, self.horizon
            )));
        }
        if self.replan_every < self.delay {
            return Err(Error::structure(format!(
                "replan cadence {} is shorter than the delay {}",
                self.replan_every, self.delay
            )));
        }
        if !(self.mask_decay > 0.0 && self.mask_decay <= 1.0) {
            return Err(Error::domain("mask decay", self.mask_decay, "(0, 1]"));
        }
        Ok(())
    }
}

/// A chunk request in flight.
#[derive(Debug, Clone)]
pub struct PendingRequest<O> {
    pub issued_at_step: usize,
    pub frozen_observation: O,
    pub noise_seed: u64,
    pub spec: InpaintSpec,
}

#[derive(Debug, Clone)]
pub struct ChunkScheduleState<O> {
    pub active_chunk: ActionChunk,
    /// Next row of `active_chunk` to execute.
    pub exec_index: usize,
    pub pending_request: Option<PendingRequest<O>>,
    pub delay: usize,
    pub replan_every: usize,
    pub horizon: usize,
    /// Env steps executed so far.
    pub env_step: usize,
}

/// What one executor step did.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutedStep {
    /// The clipped action sent to the environment.
    pub action: Vec<f64>,
    pub result: StepResult,
    /// Issue time of the chunk swapped in this step, if any.
    pub swapped_from: Option<usize>,
    pub event: Option<BoundaryEvent>,
}

/// Per-request noise seed, independent of the guidance method.
pub fn request_seed(episode_seed: u64, request: u64) -> u64 {
    splitmix64(episode_seed ^ splitmix64(request.wrapping_add(0x5EED)))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard-normal initial noise for one request.
pub fn request_noise(horizon: usize, dim: usize, seed: u64) -> ActionChunk {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ActionChunk::from_raw(Array2::from_shape_fn((horizon, dim), |_| {
        StandardNormal.sample(&mut rng)
    }))
}

fn clip_row(chunk: &ActionChunk, i: usize) -> Vec<f64> {
    chunk.row(i).iter().map(|a| a.clamp(-1.0, 1.0)).collect()
}

/// Drives an environment with delayed, guided chunk regeneration.
#[derive(Debug, Clone)]
pub struct ChunkExecutor<O> {
    state: ChunkScheduleState<O>,
    schedule: ScheduleConfig,
    guidance: GuidanceConfig,
    noise_seed: u64,
    requests: u64,
    last_action: Option<Vec<f64>>,
}

impl<O: Clone> ChunkExecutor<O> {
    /// Generate the opening chunk (unguided) and set up the schedule.
    pub fn start<F: VelocityField<O> + ?Sized>(
        initial_obs: &O,
        field: &F,
        schedule: ScheduleConfig,
        guidance: GuidanceConfig,
        noise_seed: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        guidance.validate()?;
        let noise = request_noise(schedule.horizon, schedule.dim, request_seed(noise_seed, 0));
        let naive = guidance.with_method(Method::Naive);
        let first = guided_denoise(noise, initial_obs, field, None, &naive)?;
        Ok(ChunkExecutor {
            state: ChunkScheduleState {
                active_chunk: first,
                exec_index: 0,
                pending_request: None,
                delay: schedule.delay,
                replan_every: schedule.replan_every,
                horizon: schedule.horizon,
                env_step: 0,
            },
            schedule,
            guidance,
            noise_seed,
            requests: 1,
            last_action: None,
        })
    }

    pub fn state(&self) -> &ChunkScheduleState<O> {
        &self.state
    }

    /// Execute one environment step.
    pub fn step<E, F>(&mut self, env: &mut E, field: &F) -> Result<ExecutedStep>
    where
        E: ClosedLoopEnv<Obs = O>,
        F: VelocityField<O> + ?Sized,
    {
        let t = self.state.env_step;
        let mut swapped_from = None;
        let mut event = None;

        self.receive(t, field, &mut swapped_from, &mut event)?;
        if self.request_due(t) {
            self.issue(t, env.observe())?;
            self.receive(t, field, &mut swapped_from, &mut event)?;
        }

        if self.state.exec_index >= self.state.horizon {
            return Err(Error::ScheduleOverrun { env_step: t });
        }
        let action = clip_row(&self.state.active_chunk, self.state.exec_index);
        let result = env.apply(&action)?;
        self.state.exec_index += 1;
        self.state.env_step += 1;
        self.last_action = Some(action.clone());
        Ok(ExecutedStep {
            action,
            result,
            swapped_from,
            event,
        })
    }

    fn request_due(&self, t: usize) -> bool {
        t % self.state.replan_every == 0 && (t > 0 || self.state.delay > 0)
    }

    fn issue(&mut self, t: usize, obs: O) -> Result<()> {
        debug_assert!(self.state.pending_request.is_none());
        let shift = self.state.exec_index;
        let target = build_inpaint_target(&self.state.active_chunk, shift)?;
        let mask = build_soft_mask(
            self.schedule.horizon,
            self.schedule.delay,
            shift,
            self.schedule.mask_decay,
        )?;
        self.state.pending_request = Some(PendingRequest {
            issued_at_step: t,
            frozen_observation: obs,
            noise_seed: request_seed(self.noise_seed, self.requests),
            spec: InpaintSpec::new(target, mask)?,
        });
        self.requests += 1;
        Ok(())
    }

    fn receive<F: VelocityField<O> + ?Sized>(
        &mut self,
        t: usize,
        field: &F,
        swapped_from: &mut Option<usize>,
        event: &mut Option<BoundaryEvent>,
    ) -> Result<()> {
        let matured = matches!(
            &self.state.pending_request,
            Some(p) if t - p.issued_at_step == self.state.delay
        );
        if !matured {
            return Ok(());
        }
        let req = self.state.pending_request.take().expect("checked above");
        let noise = request_noise(self.schedule.horizon, self.schedule.dim, req.noise_seed);
        let chunk = guided_denoise(
            noise,
            &req.frozen_observation,
            field,
            Some(&req.spec),
            &self.guidance,
        )?;
        let start = self.state.delay;
        if let Some(last) = &self.last_action {
            *event = Some(BoundaryEvent {
                env_step: t,
                last_action_old: last.clone(),
                first_action_new: clip_row(&chunk, start),
            });
        }
        self.state.active_chunk = chunk;
        self.state.exec_index = start;
        *swapped_from = Some(req.issued_at_step);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, OraclePolicy, OraclePolicyParams};
    use ndarray::array;

    #[test]
    fn target_full_shift_is_zero() {
        let prev = ActionChunk::new(array![[1.0], [2.0], [3.0]]).unwrap();
        assert_eq!(build_inpaint_target(&prev, 3).unwrap().norm(), 0.0);
        assert!(build_inpaint_target(&prev, 4).is_err());
    }

    #[test]
    fn target_shift_by_one() {
        let prev = ActionChunk::new(array![[1.0, -1.0], [2.0, -2.0], [3.0, -3.0]]).unwrap();
        let y = build_inpaint_target(&prev, 1).unwrap();
        assert_eq!(y, ActionChunk::new(array![[2.0, -2.0], [3.0, -3.0], [0.0, 0.0]]).unwrap());
    }

    #[test]
    fn target_matches_brute_force_loop() {
        let prev = ActionChunk::new(Array2::from_shape_fn((10, 2), |(i, j)| (i * 10 + j) as f64))
            .unwrap();
        let y = build_inpaint_target(&prev, 3).unwrap();
        for i in 0..10 {
            for j in 0..2 {
                let want = if i < 7 { prev.as_array()[[i + 3, j]] } else { 0.0 };
                assert_eq!(y.as_array()[[i, j]], want);
            }
        }
    }

    #[test]
    fn mask_examples() {
        assert_eq!(build_soft_mask(10, 0, 10, 0.5).unwrap(), vec![0.0; 10]);
        assert_eq!(
            build_soft_mask(10, 3, 3, 0.5).unwrap(),
            vec![1.0, 1.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.0, 0.0, 0.0]
        );
        assert_eq!(build_soft_mask(4, 0, 1, 0.5).unwrap(), vec![0.5, 0.25, 0.125, 0.0]);
        assert!(build_soft_mask(4, 4, 1, 0.5).is_err());
    }

    #[test]
    fn mask_is_zero_wherever_target_is_padding() {
        for h in 1..12 {
            for d in 0..h {
                for s in 0..=h {
                    let w = build_soft_mask(h, d, s, 0.7).unwrap();
                    assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
                    assert!(w[h - s..].iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    fn run_schedule(delay: usize, steps: usize, method: Method) -> Vec<ExecutedStep> {
        let env_cfg = EnvConfig {
            goal: vec![3.0, 0.0],
            max_steps: 200,
            ..EnvConfig::reach()
        };
        let mut env = PointMassEnv::reset(env_cfg, 9).unwrap();
        let policy = OraclePolicy::new(OraclePolicyParams::default()).unwrap();
        let sched = ScheduleConfig::protocol(10, 2, delay, 0.5);
        let guidance = GuidanceConfig::default().with_method(method);
        let mut exec =
            ChunkExecutor::start(&env.observe(), &policy, sched, guidance, 77).unwrap();
        (0..steps)
            .map(|_| exec.step(&mut env, &policy).unwrap())
            .take_while(|s| !s.result.done)
            .collect()
    }

    #[test]
    fn delay_three_swaps_every_three_steps() {
        let steps = run_schedule(3, 13, Method::Potr);
        let swaps: Vec<(usize, usize)> = steps
            .iter()
            .enumerate()
            .filter_map(|(t, s)| s.swapped_from.map(|issued| (t, issued)))
            .collect();
        assert_eq!(swaps, vec![(3, 0), (6, 3), (9, 6), (12, 9)]);
        assert!(steps.iter().filter(|s| s.event.is_some()).count() == 4);
    }

    #[test]
    fn delay_zero_swaps_every_step() {
        let steps = run_schedule(0, 8, Method::Rtc);
        assert!(steps[0].swapped_from.is_none());
        for (t, s) in steps.iter().enumerate().skip(1) {
            assert_eq!(s.swapped_from, Some(t));
            assert!(s.event.is_some());
        }
    }

    #[test]
    fn first_chunk_prefix_is_method_independent() {
        let naive = run_schedule(4, 4, Method::Naive);
        let potr = run_schedule(4, 4, Method::Potr);
        assert_eq!(naive, potr);
        let naive = run_schedule(4, 6, Method::Naive);
        let potr = run_schedule(4, 6, Method::Potr);
        assert_ne!(naive[4].action, potr[4].action);
    }

    #[test]
    fn schedule_is_deterministic() {
        assert_eq!(run_schedule(2, 30, Method::Potr), run_schedule(2, 30, Method::Potr));
    }

    #[test]
    fn overrun_is_reported() {
        let far = EnvConfig {
            goal: vec![3.0, 0.0],
            ..EnvConfig::reach()
        };
        let mut env = PointMassEnv::reset(far, 0).unwrap();
        let policy = OraclePolicy::new(OraclePolicyParams::default()).unwrap();
        // Delay 6 with cadence 6 needs rows up to 11 of a 10-row chunk.
        let sched = ScheduleConfig::protocol(10, 2, 6, 0.5);
        let mut exec = ChunkExecutor::start(
            &env.observe(),
            &policy,
            sched,
            GuidanceConfig::default(),
            1,
        )
        .unwrap();
        let err = (0..20)
            .map(|_| exec.step(&mut env, &policy))
            .find_map(|r| r.err())
            .unwrap();
        assert_eq!(err, Error::ScheduleOverrun { env_step: 10 });
    }

    #[test]
    fn schedule_validation() {
        assert!(ScheduleConfig::protocol(10, 2, 10, 0.5).validate().is_err());
        let mut s = ScheduleConfig::protocol(10, 2, 3, 0.5);
        s.replan_every = 2;
        assert!(s.validate().is_err());
        assert_eq!(ScheduleConfig::protocol(10, 2, 0, 0.5).replan_every, 1);
    }
}
