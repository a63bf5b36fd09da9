//! Flow-matching primitives.
//!
//! The probability path is the linear interpolant `x_τ = τ·A¹ + (1−τ)·ε` with
//! `ε ~ N(0, I)`, so `τ = 0` is pure noise and `τ = 1` is a clean action chunk.
//! Sampling integrates `dx/dτ = v(x, τ, o)` with a fixed-step Euler solver that
//! never evaluates the field at `τ = 1`.

mod mixture;

pub use mixture::{GaussianMixtureField, MixtureComponent, TemporalPrior};

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Central finite-difference step used when a field has no analytic Jacobian.
pub const FD_STEP: f64 = 1e-5;

/// An `H × D` matrix of normalized actions, one row per control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk(Array2<f64>);

impl ActionChunk {
    /// Wrap a matrix, rejecting empty shapes and non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, d) = data.dim();
        if h == 0 || d == 0 {
            return Err(Error::structure(format!(
                "action chunk must be at least 1x1, got {h}x{d}"
            )));
        }
        let chunk = ActionChunk(data);
        chunk.ensure_finite("action chunk")?;
        Ok(chunk)
    }

    pub fn zeros(horizon: usize, dim: usize) -> Self {
        assert!(horizon >= 1 && dim >= 1, "empty action chunk");
        ActionChunk(Array2::zeros((horizon, dim)))
    }

    pub fn from_elem(horizon: usize, dim: usize, value: f64) -> Self {
        assert!(horizon >= 1 && dim >= 1, "empty action chunk");
        ActionChunk(Array2::from_elem((horizon, dim), value))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let h = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::structure("ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((h, d), flat)
            .map_err(|e| Error::structure(e.to_string()))?;
        Self::new(data)
    }

    /// Build from a raw matrix without the finiteness check. Used for
    /// intermediate solver states, which are validated where they matter.
    pub(crate) fn from_raw(data: Array2<f64>) -> Self {
        ActionChunk(data)
    }

    pub fn horizon(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Inner product over all `H·D` entries.
    pub fn dot(&self, other: &ActionChunk) -> f64 {
        Zip::from(&self.0)
            .and(&other.0)
            .fold(0.0, |acc, &a, &b| acc + a * b)
    }

    /// Frobenius norm (the flattened L2 norm).
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> ActionChunk {
        ActionChunk(&self.0 * factor)
    }

    /// `self + factor · other`.
    pub fn add_scaled(&self, factor: f64, other: &ActionChunk) -> ActionChunk {
        let mut out = self.0.clone();
        out.scaled_add(factor, &other.0);
        ActionChunk(out)
    }

    pub fn sub(&self, other: &ActionChunk) -> ActionChunk {
        ActionChunk(&self.0 - &other.0)
    }

    pub fn ensure_same_shape(&self, other: &ActionChunk) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        match self.first_non_finite() {
            Some((row, col)) => Err(Error::NonFinite { what, row, col }),
            None => Ok(()),
        }
    }

    fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.0
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(idx, _)| idx)
    }
}

/// Solver state: the current noisy chunk `A^τ` at grid point `τ = k/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub chunk: ActionChunk,
    pub tau: f64,
    pub step_index: usize,
}

impl FlowState {
    /// Start of integration: pure noise at `τ = 0`.
    pub fn from_noise(noise: ActionChunk) -> Self {
        FlowState {
            chunk: noise,
            tau: 0.0,
            step_index: 0,
        }
    }
}

/// A conditional velocity field `v(A^τ, τ, o)`.
///
/// Implementors with a closed-form Jacobian override [`velocity_vjp`] and
/// report it through [`has_analytic_jacobian`]; everyone else gets central
/// finite differences from [`estimate_vjp`].
///
/// [`velocity_vjp`]: VelocityField::velocity_vjp
/// [`has_analytic_jacobian`]: VelocityField::has_analytic_jacobian
pub trait VelocityField<O: ?Sized = ()> {
    fn velocity(&self, chunk: &ActionChunk, tau: f64, obs: &O) -> Result<ActionChunk>;

    fn has_analytic_jacobian(&self) -> bool {
        false
    }

    /// `uᵀ ∂v/∂A^τ` for cotangent `u`.
    fn velocity_vjp(
        &self,
        _chunk: &ActionChunk,
        _tau: f64,
        _obs: &O,
        _cotangent: &ActionChunk,
    ) -> Result<ActionChunk> {
        Err(Error::structure("field has no analytic Jacobian"))
    }
}

impl<O: ?Sized, F: VelocityField<O> + ?Sized> VelocityField<O> for &F {
    fn velocity(&self, chunk: &ActionChunk, tau: f64, obs: &O) -> Result<ActionChunk> {
        (**self).velocity(chunk, tau, obs)
    }

    fn has_analytic_jacobian(&self) -> bool {
        (**self).has_analytic_jacobian()
    }

    fn velocity_vjp(
        &self,
        chunk: &ActionChunk,
        tau: f64,
        obs: &O,
        cotangent: &ActionChunk,
    ) -> Result<ActionChunk> {
        (**self).velocity_vjp(chunk, tau, obs, cotangent)
    }
}

/// A field that returns the same velocity everywhere (zero Jacobian).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField(pub ActionChunk);

impl<O: ?Sized> VelocityField<O> for ConstantField {
    fn velocity(&self, chunk: &ActionChunk, _tau: f64, _obs: &O) -> Result<ActionChunk> {
        self.0.ensure_same_shape(chunk)?;
        Ok(self.0.clone())
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn velocity_vjp(
        &self,
        chunk: &ActionChunk,
        _tau: f64,
        _obs: &O,
        cotangent: &ActionChunk,
    ) -> Result<ActionChunk> {
        chunk.ensure_same_shape(cotangent)?;
        Ok(ActionChunk::zeros(chunk.horizon(), chunk.dim()))
    }
}

/// Hides the wrapped field's analytic Jacobian so VJPs go through finite
/// differences.
#[derive(Debug, Clone)]
pub struct FiniteDifferenced<F>(pub F);

impl<O: ?Sized, F: VelocityField<O>> VelocityField<O> for FiniteDifferenced<F> {
    fn velocity(&self, chunk: &ActionChunk, tau: f64, obs: &O) -> Result<ActionChunk> {
        self.0.velocity(chunk, tau, obs)
    }
}

/// One explicit Euler step: `A^{τ+1/n} = A^τ + v/n`.
pub fn euler_step(state: &FlowState, velocity: &ActionChunk, n: usize) -> Result<FlowState> {
    if n == 0 {
        return Err(Error::structure("number of denoising steps must be >= 1"));
    }
    if state.step_index >= n {
        return Err(Error::structure(format!(
            "step index {} already at the end of an {n}-step schedule",
            state.step_index
        )));
    }
    state.chunk.ensure_same_shape(velocity)?;
    velocity
        .ensure_finite("velocity")
        .map_err(|e| e.at_step(state.step_index))?;

    let step_index = state.step_index + 1;
    Ok(FlowState {
        chunk: state.chunk.add_scaled(1.0 / n as f64, velocity),
        tau: step_index as f64 / n as f64,
        step_index,
    })
}

/// Integrate the field from `noise` with `n` unguided Euler steps.
pub fn integrate<O: ?Sized, F: VelocityField<O> + ?Sized>(
    field: &F,
    noise: ActionChunk,
    obs: &O,
    n: usize,
) -> Result<ActionChunk> {
    let mut state = FlowState::from_noise(noise);
    while state.step_index < n {
        let v = field
            .velocity(&state.chunk, state.tau, obs)
            .map_err(|e| e.at_step(state.step_index))?;
        state = euler_step(&state, &v, n)?;
    }
    Ok(state.chunk)
}

/// One-step clean estimate `Â¹ = A^τ + (1−τ)·v`.
pub fn one_step_estimate(chunk: &ActionChunk, velocity: &ActionChunk, tau: f64) -> Result<ActionChunk> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::domain("tau", tau, "[0, 1]"));
    }
    chunk.ensure_same_shape(velocity)?;
    Ok(chunk.add_scaled(1.0 - tau, velocity))
}

/// `uᵀ ∂Â¹/∂A^τ = uᵀ (I + (1−τ) ∂v/∂A^τ)`.
///
/// Uses the field's Jacobian when it has one, central differences with
/// step [`FD_STEP`] otherwise.
pub fn estimate_vjp<O: ?Sized, F: VelocityField<O> + ?Sized>(
    field: &F,
    chunk: &ActionChunk,
    tau: f64,
    obs: &O,
    cotangent: &ActionChunk,
) -> Result<ActionChunk> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::domain("tau", tau, "[0, 1)"));
    }
    chunk.ensure_same_shape(cotangent)?;
    let jv = if field.has_analytic_jacobian() {
        field.velocity_vjp(chunk, tau, obs, cotangent)?
    } else {
        finite_difference_vjp(field, chunk, tau, obs, cotangent, FD_STEP)?
    };
    chunk.ensure_same_shape(&jv)?;
    let out = cotangent.add_scaled(1.0 - tau, &jv);
    out.ensure_finite("vector-Jacobian product")?;
    Ok(out)
}

/// `uᵀ ∂v/∂A^τ` by central differences, one coordinate at a time.
pub fn finite_difference_vjp<O: ?Sized, F: VelocityField<O> + ?Sized>(
    field: &F,
    chunk: &ActionChunk,
    tau: f64,
    obs: &O,
    cotangent: &ActionChunk,
    h: f64,
) -> Result<ActionChunk> {
    chunk.ensure_same_shape(cotangent)?;
    let mut out = Array2::zeros(chunk.shape());
    let mut probe = chunk.as_array().clone();
    for ((i, j), slot) in out.indexed_iter_mut() {
        let x0 = probe[[i, j]];
        probe[[i, j]] = x0 + h;
        let plus = field.velocity(&ActionChunk::from_raw(probe.clone()), tau, obs)?;
        probe[[i, j]] = x0 - h;
        let minus = field.velocity(&ActionChunk::from_raw(probe.clone()), tau, obs)?;
        probe[[i, j]] = x0;
        *slot = cotangent.dot(&plus.sub(&minus)) / (2.0 * h);
    }
    Ok(ActionChunk::from_raw(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn euler_zero_velocity_keeps_chunk() {
        let noise = ActionChunk::new(array![[0.3, -1.2], [2.0, 0.5]]).unwrap();
        let state = FlowState::from_noise(noise.clone());
        let next = euler_step(&state, &ActionChunk::zeros(2, 2), 4).unwrap();
        assert_eq!(next.chunk, noise);
        assert_eq!(next.tau, 0.25);
        assert_eq!(next.step_index, 1);
    }

    #[test]
    fn euler_single_full_step() {
        let state = FlowState::from_noise(ActionChunk::zeros(3, 2));
        let next = euler_step(&state, &ActionChunk::from_elem(3, 2, 1.0), 1).unwrap();
        assert_eq!(next.chunk, ActionChunk::from_elem(3, 2, 1.0));
        assert_eq!(next.tau, 1.0);
    }

    #[test]
    fn euler_tau_is_exact_grid_point() {
        let n = 7;
        let mut state = FlowState::from_noise(ActionChunk::zeros(1, 1));
        for k in 1..=n {
            state = euler_step(&state, &ActionChunk::zeros(1, 1), n).unwrap();
            assert_eq!(state.tau, k as f64 / n as f64);
        }
        assert!(euler_step(&state, &ActionChunk::zeros(1, 1), n).is_err());
    }

    #[test]
    fn euler_rejects_bad_inputs() {
        let state = FlowState::from_noise(ActionChunk::zeros(2, 2));
        assert!(matches!(
            euler_step(&state, &ActionChunk::zeros(2, 3), 10),
            Err(Error::ShapeMismatch { .. })
        ));
        let mut bad = Array2::zeros((2, 2));
        bad[[1, 0]] = f64::NAN;
        let err = euler_step(&state, &ActionChunk::from_raw(bad), 10).unwrap_err();
        assert_eq!(err.step(), Some(0));
        assert!(euler_step(&state, &ActionChunk::zeros(2, 2), 0).is_err());
    }

    #[test]
    fn chunk_constructor_validates() {
        assert!(ActionChunk::new(Array2::zeros((0, 2))).is_err());
        assert!(ActionChunk::new(array![[1.0, f64::INFINITY]]).is_err());
        assert!(ActionChunk::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn one_step_estimate_endpoints() {
        let x = ActionChunk::new(array![[0.5, -0.5]]).unwrap();
        let v = ActionChunk::new(array![[3.0, 4.0]]).unwrap();
        assert_eq!(one_step_estimate(&x, &v, 1.0).unwrap(), x);
        let zero = ActionChunk::zeros(1, 2);
        assert_eq!(one_step_estimate(&zero, &v, 0.0).unwrap(), v);
        assert!(one_step_estimate(&x, &ActionChunk::zeros(2, 2), 0.5).is_err());
        assert!(one_step_estimate(&x, &v, 1.5).is_err());
    }

    #[test]
    fn constant_field_vjp_is_identity() {
        let field = ConstantField(ActionChunk::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let x = ActionChunk::new(array![[0.1, 0.2], [0.3, 0.4]]).unwrap();
        let u = ActionChunk::new(array![[-1.0, 0.5], [2.0, 7.0]]).unwrap();
        for tau in [0.0, 0.3, 0.9] {
            assert_eq!(estimate_vjp(&field, &x, tau, &(), &u).unwrap(), u);
            // The finite-difference route agrees on a constant field.
            let fd = estimate_vjp(&FiniteDifferenced(field.clone()), &x, tau, &(), &u).unwrap();
            assert_eq!(fd, u);
        }
        assert!(estimate_vjp(&field, &x, 1.0, &(), &u).is_err());
    }
}
