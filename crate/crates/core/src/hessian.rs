//! Reduced-Hessian curvature estimates.
//!
//! For a probe direction `d̃` and gradients sampled at `x ± d̃`, the reduced
//! Hessian is
//!
//! ```text
//! H_d = [δG d̃ᵀ + d̃ δGᵀ] / (4‖d̃‖²),   δG = g(x + d̃) − g(x − d̃)
//! ```
//!
//! which reproduces the true curvature along the probe:
//! `d̃ᵀ H_d d̃ = δGᵀd̃ / 2 = d̃ᵀ H d̃` for quadratics. `δG / 2` plays the
//! role of a one-sided gradient difference over step `d̃`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::ParamVector;

/// Symmetric rank-≤2 curvature estimate, stored as the pair `(δG, d̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedHessian {
    delta_g: DVector<f64>,
    direction: DVector<f64>,
    step: f64,
}

impl ReducedHessian {
    pub fn direction(&self) -> &DVector<f64> {
        &self.direction
    }

    pub fn gradient_difference(&self) -> &DVector<f64> {
        &self.delta_g
    }

    /// `‖d̃‖`.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// The dense `p × p` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let outer = &self.delta_g * self.direction.transpose();
        (&outer + outer.transpose()) / (4.0 * self.step * self.step)
    }

    /// `vᵀ H_d v` without forming the matrix.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> f64 {
        self.delta_g.dot(v) * self.direction.dot(v) / (2.0 * self.step * self.step)
    }
}

/// Build the reduced Hessian from gradients at `x + d̃` and `x − d̃`.
pub fn reduced_hessian(
    g_plus: &ParamVector,
    g_minus: &ParamVector,
    d_tilde: &ParamVector,
) -> Result<ReducedHessian> {
    let p = d_tilde.dim();
    for g in [g_plus, g_minus] {
        if g.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: g.dim(),
            });
        }
    }
    let step = d_tilde.norm();
    if !(step > 0.0) {
        return Err(Error::ZeroDirection);
    }
    Ok(ReducedHessian {
        delta_g: g_plus.as_dvector() - g_minus.as_dvector(),
        direction: d_tilde.as_dvector().clone(),
        step,
    })
}

/// `vᵀ H_d v`.
pub fn curvature_along(h: &ReducedHessian, v: &ParamVector) -> Result<f64> {
    if v.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: v.dim(),
        });
    }
    Ok(h.quadratic_form(v.as_dvector()))
}

/// Pairwise cosine above which probe directions count as non-orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Full Hessian from gradient differences along `p` mutually orthogonal
/// probes: `H ≈ Σᵢ [g(x + dᵢ) − g(x)] dᵢᵀ / ‖dᵢ‖²`.
///
/// Used to cross-check the reduced Hessian; the optimizers never call it.
pub fn full_hessian_estimate<F>(
    gradient: F,
    x: &ParamVector,
    dirs: &[DVector<f64>],
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let p = x.dim();
    if dirs.len() != p {
        return Err(Error::InvalidArgument(format!(
            "need {p} probe directions, got {}",
            dirs.len()
        )));
    }
    let mut norms = Vec::with_capacity(p);
    for d in dirs {
        if d.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: d.len(),
            });
        }
        let n = d.norm();
        if !(n > 0.0) {
            return Err(Error::ZeroDirection);
        }
        norms.push(n);
    }
    for i in 0..p {
        for j in i + 1..p {
            let cosine = dirs[i].dot(&dirs[j]) / (norms[i] * norms[j]);
            if cosine.abs() > ORTHOGONALITY_TOL {
                return Err(Error::NonOrthogonal { i, j, cosine });
            }
        }
    }
    let x = x.as_dvector();
    let g0 = gradient(x);
    let mut h = DMatrix::zeros(p, p);
    for (d, n) in dirs.iter().zip(&norms) {
        let dg = gradient(&(x + d)) - &g0;
        h += dg * d.transpose() / (n * n);
    }
    Ok(h)
}
