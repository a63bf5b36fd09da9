//! Inpainting guidance for the Euler sampler.
//!
//! Each guided step pulls the one-step clean estimate toward the inpainting
//! target through a vector-Jacobian product, scales the pull by a weight
//! schedule, and (for POTR) clips the part of the pull that is orthogonal to
//! the denoising velocity.

mod otr;

pub use otr::{decompose, otr_project, Decomposition};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    estimate_vjp, euler_step, one_step_estimate, ActionChunk, FlowState, VelocityField,
};

/// Guidance method for one denoising run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// No guidance.
    Naive,
    /// Weight with unit prior scale, unconstrained direction.
    Rtc,
    /// Prior-corrected weight, unconstrained direction.
    Pc,
    /// Prior-corrected weight plus the orthogonal trust region.
    Potr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Naive, Method::Rtc, Method::Pc, Method::Potr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Rtc => "rtc",
            Method::Pc => "pc",
            Method::Potr => "potr",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(Method::Naive),
            "rtc" => Ok(Method::Rtc),
            "pc" => Ok(Method::Pc),
            "potr" => Ok(Method::Potr),
            other => Err(Error::structure(format!("unknown method {other:?}"))),
        }
    }
}

/// What to do at the first grid point `τ = 0`, where the weights diverge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPolicy {
    /// Take an unguided step.
    #[default]
    Skip,
    /// Guide with the clipped weight `w = β`.
    ClipToBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub method: Method,
    pub sigma_d: f64,
    /// Trust-region radius ratio; `f64::INFINITY` disables the constraint.
    pub rho: f64,
    pub beta: f64,
    /// Number of Euler steps `n`.
    pub steps: usize,
    pub epsilon: f64,
    pub start: StartPolicy,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            method: Method::Potr,
            sigma_d: 0.4,
            rho: 0.5,
            beta: 10.0,
            steps: 10,
            epsilon: 1e-8,
            start: StartPolicy::Skip,
        }
    }
}

impl GuidanceConfig {
    pub fn with_method(self, method: Method) -> Self {
        GuidanceConfig { method, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::structure("denoising steps must be >= 1"));
        }
        if !(self.sigma_d > 0.0 && self.sigma_d.is_finite()) {
            return Err(Error::domain("sigma_d", self.sigma_d, "(0, inf)"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::domain("beta", self.beta, "(0, inf]"));
        }
        if !(self.rho > 0.0) {
            return Err(Error::domain("rho", self.rho, "(0, inf]"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return Err(Error::domain("epsilon", self.epsilon, "(0, 1e-6]"));
        }
        Ok(())
    }

    /// Guidance weight at `τ` for this config's method. `None` for NAIVE.
    pub fn weight(&self, tau: f64) -> Result<Option<f64>> {
        if tau == 0.0 && self.start == StartPolicy::ClipToBeta && self.method != Method::Naive {
            return Ok(Some(self.beta));
        }
        match self.method {
            Method::Naive => Ok(None),
            Method::Rtc => rtc_weight(tau, self.beta).map(Some),
            Method::Pc | Method::Potr => pc_weight(tau, self.sigma_d, self.beta).map(Some),
        }
    }
}

fn check_open_unit(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::domain("tau", tau, "(0, 1)"))
    }
}

/// `min((τ² + (1−τ)²) / (τ(1−τ)), β)`.
///
/// The expression is arranged so that it agrees bit-for-bit with
/// [`pc_weight`] at `σ_d = 1`.
pub fn rtc_weight(tau: f64, beta: f64) -> Result<f64> {
    check_open_unit(tau)?;
    let a = 1.0 - tau;
    let w = (a * a + tau * tau) / (tau * a);
    Ok(w.min(beta))
}

/// Prior-corrected `r_τ² = (1−τ)² σ_d² / ((1−τ)² + σ_d² τ²)`.
pub fn r_tau_sq(tau: f64, sigma_d: f64) -> Result<f64> {
    check_open_unit(tau)?;
    if !(sigma_d > 0.0) {
        return Err(Error::domain("sigma_d", sigma_d, "(0, inf)"));
    }
    let a = 1.0 - tau;
    let s2 = sigma_d * sigma_d;
    Ok(a * a * s2 / (a * a + s2 * (tau * tau)))
}

/// `min(((1−τ)² + σ_d² τ²) / (σ_d² τ (1−τ)), β)`.
pub fn pc_weight(tau: f64, sigma_d: f64, beta: f64) -> Result<f64> {
    check_open_unit(tau)?;
    if !(sigma_d > 0.0) {
        return Err(Error::domain("sigma_d", sigma_d, "(0, inf)"));
    }
    let a = 1.0 - tau;
    let s2 = sigma_d * sigma_d;
    let w = (a * a + s2 * (tau * tau)) / (s2 * tau * a);
    Ok(w.min(beta))
}

/// Inpainting target `Y` and per-row soft mask `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintSpec {
    pub target: ActionChunk,
    pub mask: Vec<f64>,
}

impl InpaintSpec {
    pub fn new(target: ActionChunk, mask: Vec<f64>) -> Result<Self> {
        let spec = InpaintSpec { target, mask };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.target.horizon() {
            return Err(Error::structure(format!(
                "mask length {} does not match horizon {}",
                self.mask.len(),
                self.target.horizon()
            )));
        }
        if let Some(w) = self.mask.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::domain("mask entry", *w, "[0, 1]"));
        }
        Ok(())
    }

    pub fn is_inactive(&self) -> bool {
        self.mask.iter().all(|&w| w == 0.0)
    }
}

/// `g = (Y − Â¹)ᵀ diag(W) ∂Â¹/∂A^τ`, the unweighted correction.
pub fn pseudoinverse_correction<O: ?Sized, F: VelocityField<O> + ?Sized>(
    field: &F,
    chunk: &ActionChunk,
    tau: f64,
    velocity: &ActionChunk,
    spec: &InpaintSpec,
    obs: &O,
) -> Result<ActionChunk> {
    chunk.ensure_same_shape(&spec.target)?;
    let estimate = one_step_estimate(chunk, velocity, tau)?;
    let mut residual = spec.target.sub(&estimate).into_array();
    for (mut row, &w) in residual.rows_mut().into_iter().zip(&spec.mask) {
        row *= w;
    }
    estimate_vjp(field, chunk, tau, obs, &ActionChunk::from_raw(residual))
}

/// Run the `n`-step Euler sampler from `noise`, guided per `config`.
///
/// `spec` may be omitted only for [`Method::Naive`]. The first step
/// (`τ = 0`) follows [`GuidanceConfig::start`].
pub fn guided_denoise<O: ?Sized, F: VelocityField<O> + ?Sized>(
    noise: ActionChunk,
    obs: &O,
    field: &F,
    spec: Option<&InpaintSpec>,
    config: &GuidanceConfig,
) -> Result<ActionChunk> {
    config.validate()?;
    let spec = match (config.method, spec) {
        (Method::Naive, _) => None,
        (_, Some(spec)) => {
            spec.validate()?;
            noise.ensure_same_shape(&spec.target)?;
            Some(spec)
        }
        (m, None) => {
            return Err(Error::structure(format!(
                "method {m} needs an inpainting target"
            )))
        }
    };

    let n = config.steps;
    let mut state = FlowState::from_noise(noise);
    while state.step_index < n {
        let k = state.step_index;
        let tau = k as f64 / n as f64;
        let step = guided_velocity(&state.chunk, tau, obs, field, spec, config)
            .map_err(|e| e.at_step(k))?;
        state = euler_step(&state, &step, n)?;
    }
    Ok(state.chunk)
}

/// `v_τ + g_final` for one grid point.
fn guided_velocity<O: ?Sized, F: VelocityField<O> + ?Sized>(
    chunk: &ActionChunk,
    tau: f64,
    obs: &O,
    field: &F,
    spec: Option<&InpaintSpec>,
    config: &GuidanceConfig,
) -> Result<ActionChunk> {
    let v = field.velocity(chunk, tau, obs)?;
    let Some(spec) = spec else {
        return Ok(v);
    };
    if tau == 0.0 && config.start == StartPolicy::Skip {
        return Ok(v);
    }
    let Some(w) = config.weight(tau)? else {
        return Ok(v);
    };

    let g = pseudoinverse_correction(field, chunk, tau, &v, spec, obs)?;
    let g_pc = g.scaled(w);
    let g_final = match config.method {
        Method::Potr => otr_project(&g_pc, &v, config.rho, config.epsilon),
        _ => g_pc,
    };
    Ok(v.add_scaled(1.0, &g_final))
}
