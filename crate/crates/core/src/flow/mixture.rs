//! Closed-form marginal velocity of a Gaussian-mixture prior.
//!
//! For a prior component `A¹ ~ N(μ, s²)` on one coordinate and the path
//! `x = τA¹ + (1−τ)ε`, the pair `(A¹ − ε, x)` is jointly Gaussian with
//! `Var x = τ²s² + (1−τ)²` and `Cov(A¹ − ε, x) = τs² − (1−τ)`, so
//!
//! ```text
//! E[A¹ − ε | x] = μ + (τs² − (1−τ)) / (τ²s² + (1−τ)²) · (x − τμ).
//! ```
//!
//! A mixture weights the per-component velocities by the posterior
//! responsibilities of `x` under the component marginals
//! `N(τμ_c, τ²s_c² + (1−τ)²)`.
//!
//! Components may also carry a temporal correlation along the horizon: the
//! covariance is `s_c² · U diag(λ) Uᵀ` (per action dimension) for a fixed
//! orthonormal basis `U`. In the rotated coordinates `Uᵀx` every coordinate
//! is independent with variance `s_c² λ_j`, so the scalar formula above
//! applies coordinate-wise. The isotropic prior is `U = I`, `λ = 1`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ActionChunk, VelocityField};
use crate::error::{Error, Result};

/// Orthonormal temporal basis and per-mode variance multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPrior {
    /// Columns are basis vectors; `None` means the identity.
    basis: Option<Array2<f64>>,
    spectrum: Array1<f64>,
}

impl TemporalPrior {
    /// Independent rows: every entry has variance `s²`.
    pub fn isotropic(horizon: usize) -> Self {
        TemporalPrior {
            basis: None,
            spectrum: Array1::ones(horizon),
        }
    }

    /// Smooth rows: orthonormal DCT-II basis with a Gaussian spectral
    /// roll-off `λ_j = max(exp(−(j/bandwidth)²), floor)`. The constant mode
    /// has `λ_0 = 1`, so `s` is the scale of the slowest component.
    pub fn smooth(horizon: usize, bandwidth: f64, floor: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::structure("horizon must be >= 1"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::domain("bandwidth", bandwidth, "(0, inf)"));
        }
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(Error::domain("spectral floor", floor, "(0, 1]"));
        }
        let spectrum = Array1::from_shape_fn(horizon, |j| {
            (-(j as f64 / bandwidth).powi(2)).exp().max(floor)
        });
        Ok(TemporalPrior {
            basis: Some(dct_basis(horizon)),
            spectrum,
        })
    }

    pub fn horizon(&self) -> usize {
        self.spectrum.len()
    }

    pub fn spectrum(&self) -> &Array1<f64> {
        &self.spectrum
    }

    pub fn is_isotropic(&self) -> bool {
        self.basis.is_none() && self.spectrum.iter().all(|&l| l == 1.0)
    }

    /// `Uᵀ x`
    fn to_modes(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.basis {
            Some(u) => u.t().dot(x),
            None => x.clone(),
        }
    }

    /// `U z`
    fn from_modes(&self, z: Array2<f64>) -> Array2<f64> {
        match &self.basis {
            Some(u) => u.dot(&z),
            None => z,
        }
    }
}

/// Orthonormal DCT-II matrix; column `j` is the `j`-th cosine mode.
fn dct_basis(h: usize) -> Array2<f64> {
    let n = h as f64;
    Array2::from_shape_fn((h, h), |(i, j)| {
        let c = if j == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        c * (PI * (i as f64 + 0.5) * j as f64 / n).cos()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: ActionChunk,
    pub scale: f64,
}

/// Gaussian-mixture prior over action chunks and its exact marginal
/// velocity under the linear path.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureField {
    components: Vec<MixtureComponent>,
    prior: TemporalPrior,
    /// Component means in the rotated coordinates.
    modal_means: Vec<Array2<f64>>,
}

struct Posterior {
    /// Rotated input `Uᵀx`.
    z: Array2<f64>,
    resp: Vec<f64>,
    /// Per component: velocity, gain `k`, marginal variance `V`, residual `z − τm`.
    parts: Vec<ComponentTerms>,
}

struct ComponentTerms {
    velocity: Array2<f64>,
    gain: Array2<f64>,
    variance: Array2<f64>,
    residual: Array2<f64>,
}

impl GaussianMixtureField {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let h = components
            .first()
            .ok_or_else(|| Error::structure("mixture needs at least one component"))?
            .mean
            .horizon();
        Self::with_prior(components, TemporalPrior::isotropic(h))
    }

    pub fn with_prior(components: Vec<MixtureComponent>, prior: TemporalPrior) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::structure("mixture needs at least one component"))?;
        let shape = first.mean.shape();
        if prior.horizon() != shape.0 {
            return Err(Error::structure(format!(
                "temporal prior horizon {} does not match chunk horizon {}",
                prior.horizon(),
                shape.0
            )));
        }
        let mut total = 0.0;
        for c in &components {
            first.mean.ensure_same_shape(&c.mean)?;
            c.mean.ensure_finite("component mean")?;
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::domain("component weight", c.weight, "(0, 1]"));
            }
            if !(c.scale > 0.0 && c.scale.is_finite()) {
                return Err(Error::domain("component scale", c.scale, "(0, inf)"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain("sum of component weights", total, "1 +/- 1e-12"));
        }
        if prior.spectrum.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::structure("temporal spectrum must be positive"));
        }
        let modal_means = components
            .iter()
            .map(|c| prior.to_modes(c.mean.as_array()))
            .collect();
        Ok(GaussianMixtureField {
            components,
            prior,
            modal_means,
        })
    }

    /// Equal-weight mixture sharing one scale and temporal prior.
    pub fn equal_weights(means: Vec<ActionChunk>, scale: f64, prior: TemporalPrior) -> Result<Self> {
        let w = 1.0 / means.len().max(1) as f64;
        let components = means
            .into_iter()
            .map(|mean| MixtureComponent {
                weight: w,
                mean,
                scale,
            })
            .collect();
        Self::with_prior(components, prior)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn prior(&self) -> &TemporalPrior {
        &self.prior
    }

    pub fn shape(&self) -> (usize, usize) {
        self.components[0].mean.shape()
    }

    /// Exact marginal velocity `E[A¹ − ε | A^τ = x]`.
    pub fn velocity_at(&self, x: &ActionChunk, tau: f64) -> Result<ActionChunk> {
        let post = self.posterior(x, tau)?;
        let mut v = Array2::zeros(post.z.dim());
        for (gamma, part) in post.resp.iter().zip(&post.parts) {
            v.scaled_add(*gamma, &part.velocity);
        }
        Ok(ActionChunk::from_raw(self.prior.from_modes(v)))
    }

    /// Exact `uᵀ ∂v/∂x`.
    ///
    /// With `g_c = −(z − τm_c)/V_c` the score of component `c` and
    /// `ḡ = Σ γ_c g_c`, the Jacobian in rotated coordinates is
    /// `Σ γ_c diag(k_c) + Σ γ_c v_c (g_c − ḡ)ᵀ`.
    pub fn vjp_at(&self, x: &ActionChunk, tau: f64, cotangent: &ActionChunk) -> Result<ActionChunk> {
        x.ensure_same_shape(cotangent)?;
        let post = self.posterior(x, tau)?;
        let u = self.prior.to_modes(cotangent.as_array());

        let scores: Vec<Array2<f64>> = post
            .parts
            .iter()
            .map(|p| -(&p.residual / &p.variance))
            .collect();
        let mut mean_score = Array2::zeros(u.dim());
        for (gamma, g) in post.resp.iter().zip(&scores) {
            mean_score.scaled_add(*gamma, g);
        }

        let mut out = Array2::zeros(u.dim());
        for ((gamma, part), score) in post.resp.iter().zip(&post.parts).zip(&scores) {
            if *gamma == 0.0 {
                continue;
            }
            out.scaled_add(*gamma, &(&part.gain * &u));
            let uv = (&u * &part.velocity).sum();
            out.scaled_add(gamma * uv, &(score - &mean_score));
        }
        Ok(ActionChunk::from_raw(self.prior.from_modes(out)))
    }

    /// Posterior responsibilities of each component given `A^τ = x`.
    pub fn responsibilities(&self, x: &ActionChunk, tau: f64) -> Result<Vec<f64>> {
        Ok(self.posterior(x, tau)?.resp)
    }

    /// Draw `A¹` from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ActionChunk {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                idx = i;
                break;
            }
        }
        let (h, d) = self.shape();
        let s = self.components[idx].scale;
        let z = Array2::from_shape_fn((h, d), |(j, _)| {
            let e: f64 = rng.sample(StandardNormal);
            s * self.prior.spectrum[j].sqrt() * e
        });
        let offset = self.prior.from_modes(z);
        ActionChunk::from_raw(self.components[idx].mean.as_array() + &offset)
    }

    fn posterior(&self, x: &ActionChunk, tau: f64) -> Result<Posterior> {
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::domain("tau", tau, "[0, 1)"));
        }
        let shape = self.shape();
        if x.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: x.shape(),
            });
        }
        let z = self.prior.to_modes(x.as_array());
        let one_minus = 1.0 - tau;
        let d = shape.1;

        let mut log_w = Vec::with_capacity(self.components.len());
        let mut parts = Vec::with_capacity(self.components.len());
        for (c, m) in self.components.iter().zip(&self.modal_means) {
            let s2 = c.scale * c.scale;
            // Per temporal mode j: V_j and k_j, broadcast across action dims.
            let var_j = self
                .prior
                .spectrum
                .mapv(|l| tau * tau * s2 * l + one_minus * one_minus);
            let gain_j = Array1::from_shape_fn(var_j.len(), |j| {
                (tau * s2 * self.prior.spectrum[j] - one_minus) / var_j[j]
            });
            let variance = var_j
                .view()
                .insert_axis(Axis(1))
                .broadcast(shape)
                .expect("broadcast")
                .to_owned();
            let gain = gain_j
                .view()
                .insert_axis(Axis(1))
                .broadcast(shape)
                .expect("broadcast")
                .to_owned();
            let residual = &z - &(m * tau);
            let velocity = m + &(&gain * &residual);

            let quad = (&residual * &residual / &variance).sum();
            let log_det = d as f64 * var_j.mapv(f64::ln).sum();
            log_w.push(c.weight.ln() - 0.5 * (quad + log_det));
            parts.push(ComponentTerms {
                velocity,
                gain,
                variance,
                residual,
            });
        }

        // Softmax with max subtraction so far-apart components do not underflow.
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite {
                what: "mixture log-likelihood",
                row: 0,
                col: 0,
            });
        }
        let mut resp: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= total);

        Ok(Posterior { z, resp, parts })
    }
}

impl<O: ?Sized> VelocityField<O> for GaussianMixtureField {
    fn velocity(&self, chunk: &ActionChunk, tau: f64, _obs: &O) -> Result<ActionChunk> {
        self.velocity_at(chunk, tau)
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn velocity_vjp(
        &self,
        chunk: &ActionChunk,
        tau: f64,
        _obs: &O,
        cotangent: &ActionChunk,
    ) -> Result<ActionChunk> {
        self.vjp_at(chunk, tau, cotangent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{estimate_vjp, finite_difference_vjp, FiniteDifferenced};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64) -> ActionChunk {
        ActionChunk::new(array![[x]]).unwrap()
    }

    fn single(mu: f64, s: f64) -> GaussianMixtureField {
        GaussianMixtureField::new(vec![MixtureComponent {
            weight: 1.0,
            mean: scalar(mu),
            scale: s,
        }])
        .unwrap()
    }

    fn bimodal(s: f64) -> GaussianMixtureField {
        GaussianMixtureField::equal_weights(
            vec![scalar(-1.0), scalar(1.0)],
            s,
            TemporalPrior::isotropic(1),
        )
        .unwrap()
    }

    /// Scalar closed form, written out independently of the mixture code.
    fn scalar_velocity(x: f64, tau: f64, mu: f64, s: f64) -> f64 {
        let a = 1.0 - tau;
        mu + (tau * s * s - a) / (tau * tau * s * s + a * a) * (x - tau * mu)
    }

    #[test]
    fn tau_zero_velocity_is_mean_minus_x() {
        for (mu, s) in [(0.7, 0.1), (-2.0, 1.0), (0.0, 3.0)] {
            let f = single(mu, s);
            for x in [-1.5, 0.0, 0.4] {
                let v = f.velocity_at(&scalar(x), 0.0).unwrap();
                assert!((v.as_array()[[0, 0]] - (mu - x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tau_zero_matches_monte_carlo_regression() {
        // Regress (A¹ − ε) on A⁰ = ε: intercept μ, slope −1.
        let (mu, s) = (0.6, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = mu + s * rng.sample::<f64, _>(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let (x, y) = (e, a - e);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            samples.push((x, y));
        }
        let nf = n as f64;
        let slope = (sxy - sx * sy / nf) / (sxx - sx * sx / nf);
        let intercept = (sy - slope * sx) / nf;
        let resid_var = samples
            .iter()
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum::<f64>()
            / (nf - 2.0);
        let sxx_c = sxx - sx * sx / nf;
        let se_slope = (resid_var / sxx_c).sqrt();
        let se_icpt = (resid_var * (1.0 / nf + (sx / nf).powi(2) / sxx_c)).sqrt();

        let f = single(mu, s);
        let v0 = f.velocity_at(&scalar(0.0), 0.0).unwrap().as_array()[[0, 0]];
        let v1 = f.velocity_at(&scalar(1.0), 0.0).unwrap().as_array()[[0, 0]];
        assert!((v0 - intercept).abs() < 3.0 * se_icpt, "{v0} vs {intercept}");
        assert!(((v1 - v0) - slope).abs() < 3.0 * se_slope, "{} vs {slope}", v1 - v0);
    }

    #[test]
    fn symmetric_cases_vanish() {
        let v = single(0.0, 1.0).velocity_at(&scalar(0.0), 0.5).unwrap();
        assert_eq!(v.as_array()[[0, 0]], 0.0);
        let v = bimodal(0.1).velocity_at(&scalar(0.0), 0.5).unwrap();
        assert!(v.as_array()[[0, 0]].abs() < 1e-15);
    }

    #[test]
    fn mixture_of_one_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mu: f64 = rng.random_range(-2.0..2.0);
            let s: f64 = rng.random_range(0.05..2.0);
            let tau: f64 = rng.random_range(0.0..0.99);
            let x: f64 = rng.random_range(-3.0..3.0);
            let got = single(mu, s).velocity_at(&scalar(x), tau).unwrap().as_array()[[0, 0]];
            assert!((got - scalar_velocity(x, tau, mu, s)).abs() < 1e-12);
        }
    }

    #[test]
    fn split_component_matches_single() {
        let mean = ActionChunk::new(array![[0.2, -0.1], [0.4, 0.3]]).unwrap();
        let one = GaussianMixtureField::new(vec![MixtureComponent {
            weight: 1.0,
            mean: mean.clone(),
            scale: 0.4,
        }])
        .unwrap();
        let two = GaussianMixtureField::equal_weights(
            vec![mean.clone(), mean],
            0.4,
            TemporalPrior::isotropic(2),
        )
        .unwrap();
        let x = ActionChunk::new(array![[1.0, 0.0], [-0.5, 2.0]]).unwrap();
        let a = one.velocity_at(&x, 0.37).unwrap();
        let b = two.velocity_at(&x, 0.37).unwrap();
        assert!(a.sub(&b).norm() < 1e-12);
    }

    #[test]
    fn near_deterministic_prior_estimate_hits_mean() {
        let mu = 0.35;
        let f = single(mu, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tau in [0.0, 0.2, 0.5, 0.8, 0.95] {
            // On-path input: x = τ·A¹ + (1−τ)ε with A¹ drawn from the prior.
            let a = f.sample_prior(&mut rng).as_array()[[0, 0]];
            let e: f64 = rng.sample(StandardNormal);
            let x = scalar(tau * a + (1.0 - tau) * e);
            let v = f.velocity_at(&x, tau).unwrap();
            let est = crate::flow::one_step_estimate(&x, &v, tau).unwrap();
            assert!((est.as_array()[[0, 0]] - mu).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_jacobian_matches_hand_derivative() {
        let (mu, s) = (0.5, 0.7);
        let f = single(mu, s);
        for tau in [0.05, 0.3, 0.5, 0.9] {
            let a = 1.0 - tau;
            let k = (tau * s * s - a) / (tau * tau * s * s + a * a);
            let u = 1.7;
            let got = estimate_vjp(&f, &scalar(0.2), tau, &(), &scalar(u)).unwrap();
            let want = u * (1.0 + a * k);
            assert!((got.as_array()[[0, 0]] - want).abs() <= 1e-12 * want.abs().max(1.0));
            let fd = estimate_vjp(&FiniteDifferenced(f.clone()), &scalar(0.2), tau, &(), &scalar(u))
                .unwrap();
            assert!((fd.as_array()[[0, 0]] - want).abs() <= 1e-6 * want.abs());
        }
    }

    #[test]
    fn mixture_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..20 {
            let (h, d) = (1 + case % 4, 1 + case % 3);
            let prior = if case % 2 == 0 {
                TemporalPrior::isotropic(h)
            } else {
                TemporalPrior::smooth(h, 1.5, 1e-2).unwrap()
            };
            let mut rand_chunk = |scale: f64| {
                ActionChunk::new(Array2::from_shape_fn((h, d), |_| {
                    scale * rng.random_range(-1.0..1.0)
                }))
                .unwrap()
            };
            let means = vec![rand_chunk(1.0), rand_chunk(1.0), rand_chunk(1.0)];
            let x = rand_chunk(1.0);
            let u = rand_chunk(1.0);
            let f = GaussianMixtureField::equal_weights(means, 0.6, prior).unwrap();
            let tau = 0.1 + 0.8 * (case as f64 / 20.0);
            let exact = f.vjp_at(&x, tau, &u).unwrap();
            let fd = finite_difference_vjp(&f, &x, tau, &(), &u, 1e-5).unwrap();
            let rel = exact.sub(&fd).norm() / fd.norm().max(1e-12);
            assert!(rel < 1e-6, "case {case}: rel {rel}");
        }
    }

    #[test]
    fn far_components_do_not_underflow() {
        let f = GaussianMixtureField::equal_weights(
            vec![scalar(-200.0), scalar(200.0)],
            0.01,
            TemporalPrior::isotropic(1),
        )
        .unwrap();
        let v = f.velocity_at(&scalar(150.0), 0.9).unwrap();
        assert!(v.as_array()[[0, 0]].is_finite());
        let r = f.responsibilities(&scalar(150.0), 0.9).unwrap();
        assert!(r[1] > 0.999);
    }

    #[test]
    fn invalid_mixtures_rejected() {
        assert!(GaussianMixtureField::new(vec![]).is_err());
        let bad_weight = vec![MixtureComponent {
            weight: 0.5,
            mean: scalar(0.0),
            scale: 1.0,
        }];
        assert!(GaussianMixtureField::new(bad_weight).is_err());
        let bad_scale = vec![MixtureComponent {
            weight: 1.0,
            mean: scalar(0.0),
            scale: 0.0,
        }];
        assert!(GaussianMixtureField::new(bad_scale).is_err());
        assert!(matches!(
            single(0.0, 1.0).velocity_at(&scalar(0.0), 1.0),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let u = dct_basis(10);
        let g = u.t().dot(&u);
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-12);
            }
        }
    }
}
