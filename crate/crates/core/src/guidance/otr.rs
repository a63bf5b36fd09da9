//! Orthogonal trust-region projection of a guidance vector.
//!
//! The guidance `g` is split into the part parallel to the denoising
//! velocity `v` and the remainder. The parallel part is kept; the
//! perpendicular part is shrunk onto the ball of radius `ρ‖v‖` centred at the
//! parallel part. This is the maximiser of `⟨ĝ, g⟩` subject to
//! `‖ĝ − g_∥‖ ≤ ρ‖v‖`, since the objective only depends on the
//! perpendicular direction once `g_∥` is fixed.
//!
//! Matrices are treated as flat `H·D` vectors: one trust region per step.

use crate::flow::ActionChunk;

/// Parallel/perpendicular split of `g` with respect to `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub parallel: ActionChunk,
    pub perpendicular: ActionChunk,
}

/// `g_∥ = (⟨g, v⟩/‖v‖²) v`, `g_⊥ = g − g_∥`. Requires `v ≠ 0`.
pub fn decompose(g: &ActionChunk, v: &ActionChunk) -> Decomposition {
    let vv = v.dot(v);
    debug_assert!(vv > 0.0);
    let parallel = v.scaled(g.dot(v) / vv);
    let perpendicular = g.sub(&parallel);
    Decomposition {
        parallel,
        perpendicular,
    }
}

/// Clip the component of `g_pc` orthogonal to `v` to norm `ρ‖v‖`.
///
/// Returns `g_pc` itself (bit-for-bit) whenever nothing needs clipping,
/// including `ρ = ∞`. When `‖v‖ < ε` the trust region has collapsed and the
/// whole vector is shrunk to norm at most `ρ‖v‖` instead.
pub fn otr_project(g_pc: &ActionChunk, v: &ActionChunk, rho: f64, epsilon: f64) -> ActionChunk {
    debug_assert_eq!(g_pc.shape(), v.shape());
    if rho.is_infinite() {
        return g_pc.clone();
    }
    let v_norm = v.norm();
    let radius = rho * v_norm;

    if v_norm < epsilon {
        let g_norm = g_pc.norm();
        let scale = (radius / (g_norm + epsilon)).min(1.0);
        return if scale < 1.0 {
            g_pc.scaled(scale)
        } else {
            g_pc.clone()
        };
    }

    let Decomposition {
        parallel,
        perpendicular,
    } = decompose(g_pc, v);
    let perp_norm = perpendicular.norm();
    if perp_norm <= radius {
        return g_pc.clone();
    }
    // perp_norm > radius >= rho * epsilon > 0, so the division is safe.
    parallel.add_scaled(radius / perp_norm, &perpendicular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn chunk(rows: Array2<f64>) -> ActionChunk {
        ActionChunk::new(rows).unwrap()
    }

    const EPS: f64 = 1e-8;

    #[test]
    fn parallel_guidance_untouched() {
        let v = chunk(array![[1.0, 2.0], [0.5, -1.0]]);
        let g = v.scaled(-3.5);
        assert_eq!(otr_project(&g, &v, 0.1, EPS), g);
    }

    #[test]
    fn infinite_radius_is_identity() {
        let v = chunk(array![[1.0, 0.0]]);
        let g = chunk(array![[2.0, 300.0]]);
        assert_eq!(otr_project(&g, &v, f64::INFINITY, EPS), g);
        let zero = ActionChunk::zeros(1, 2);
        assert_eq!(otr_project(&g, &zero, f64::INFINITY, EPS), g);
    }

    #[test]
    fn hand_computed_clip() {
        let v = chunk(array![[1.0, 0.0]]);
        let g = chunk(array![[2.0, 3.0]]);
        let out = otr_project(&g, &v, 0.5, EPS);
        assert_eq!(out, chunk(array![[2.0, 0.5]]));
    }

    #[test]
    fn degenerate_velocity_caps_everything() {
        let v = chunk(array![[1e-10, 0.0]]);
        let g = chunk(array![[4.0, -3.0]]);
        let out = otr_project(&g, &v, 0.5, EPS);
        assert!(out.norm() <= 0.5 * v.norm() + EPS);
        // Direction is preserved.
        assert!((out.dot(&g) / (out.norm() * g.norm()) - 1.0).abs() < 1e-12);

        let zero = ActionChunk::zeros(1, 2);
        let out = otr_project(&g, &zero, 0.5, EPS);
        assert_eq!(out.norm(), 0.0);
    }

    fn pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..=max_dim).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    fn col(v: Vec<f64>) -> ActionChunk {
        let n = v.len();
        ActionChunk::new(Array2::from_shape_vec((n, 1), v).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn prop_constraint_and_parallel_preserved((g, v) in pair(16), rho in 0.01f64..3.0) {
            let (g, v) = (col(g), col(v));
            prop_assume!(v.norm() >= EPS);
            let out = otr_project(&g, &v, rho, EPS);
            let Decomposition { parallel, .. } = decompose(&g, &v);
            prop_assert!(out.sub(&parallel).norm() <= rho * v.norm() * (1.0 + 1e-9));
            let scale = g.norm() * v.norm();
            prop_assert!((out.dot(&v) - g.dot(&v)).abs() <= 1e-10 * scale.max(1e-300));
        }

        #[test]
        fn prop_idempotent((g, v) in pair(16), rho in 0.01f64..3.0) {
            let (g, v) = (col(g), col(v));
            prop_assume!(v.norm() >= EPS);
            let once = otr_project(&g, &v, rho, EPS);
            let twice = otr_project(&once, &v, rho, EPS);
            prop_assert!(twice.sub(&once).norm() <= 1e-12 * once.norm().max(1.0));
        }
    }
}
