//! ±1 perturbation matrices built by the sign-flip scheme.
//!
//! A block of `p` columns is generated from one random base vector `Δ₀`:
//! column `j` of the block is `Δ₀` with the sign of entry `j` negated.
//! After `p` columns a fresh `Δ₀` is drawn. Column `i` (0-based) therefore
//! flips position `i mod p` of the base vector of block `i / p`.
//!
//! For `p = 2` the two flipped columns are negatives of each other and never
//! span the plane, so blocks for `p = 2` are drawn by rejection sampling of
//! fresh ±1 vectors until the block has full rank.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationMatrix {
    /// `p × M`, columns are the perturbation directions.
    matrix: DMatrix<f64>,
}

impl PerturbationMatrix {
    /// Wrap an arbitrary `p × M` matrix whose entries are all exactly ±1.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "perturbation matrix must be non-empty".into(),
            ));
        }
        if matrix.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidArgument(
                "perturbation entries must be +1 or -1".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let p = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != p) {
            return Err(Error::InvalidArgument(
                "columns have different lengths".into(),
            ));
        }
        let cols: Vec<DVector<f64>> = columns
            .iter()
            .map(|c| DVector::from_vec(c.clone()))
            .collect();
        if cols.is_empty() || p == 0 {
            return Err(Error::InvalidArgument(
                "perturbation matrix must be non-empty".into(),
            ));
        }
        Self::from_matrix(DMatrix::from_columns(&cols))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rounds(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.matrix.column(i).into_owned()
    }

    /// Numerical rank, counting singular values above
    /// `p · M · ε_machine · σ_max`.
    pub fn rank(&self) -> usize {
        let svd = self.matrix.clone().svd(false, false);
        let sigma_max = svd.singular_values.max();
        if sigma_max == 0.0 {
            return 0;
        }
        let tol = (self.dim() * self.rounds()) as f64 * f64::EPSILON * sigma_max;
        svd.singular_values.iter().filter(|&&s| s > tol).count()
    }

    /// `trace((ΔΔᵀ)⁻¹)`, or `None` when `ΔΔᵀ` is singular.
    pub fn trace_inv_outer(&self) -> Option<f64> {
        trace_of_inverse(&self.matrix * self.matrix.transpose())
    }

    /// `trace((ΔᵀΔ)⁻¹)`, or `None` when `ΔᵀΔ` is singular.
    pub fn trace_inv_inner(&self) -> Option<f64> {
        trace_of_inverse(self.matrix.transpose() * &self.matrix)
    }
}

fn trace_of_inverse(gram: DMatrix<f64>) -> Option<f64> {
    let n = gram.nrows();
    let chol = gram.cholesky()?;
    let inv = chol.solve(&DMatrix::identity(n, n));
    Some(inv.trace())
}

/// Draw a base vector with independent ±1 entries, each with probability ½.
pub fn sample_delta0(p: usize, rng_seed: u64) -> Result<DVector<f64>> {
    if p < 1 {
        return Err(Error::InvalidArgument(
            "perturbation dimension must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(random_signs(p, &mut rng))
}

fn random_signs(p: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(
        p,
        (0..p).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }),
    )
}

/// Negate entry `j` (1-based) of `delta0`.
pub fn flip_column(delta0: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
    if j < 1 || j > delta0.len() {
        return Err(Error::InvalidArgument(format!(
            "flip index {j} outside 1..={}",
            delta0.len()
        )));
    }
    let mut out = delta0.clone();
    out[j - 1] = -out[j - 1];
    Ok(out)
}

/// Build a `p × M` perturbation matrix. Deterministic in `rng_seed`.
pub fn build_perturbations(p: usize, m: usize, rng_seed: u64) -> Result<PerturbationMatrix> {
    if p < 1 || m < 1 {
        return Err(Error::InvalidArgument(format!(
            "perturbation matrix needs p >= 1 and M >= 1 (got p={p}, M={m})"
        )));
    }
    let blocks = m.div_ceil(p);
    let mut columns = Vec::with_capacity(m);
    for b in 0..blocks {
        let block_seed = seed::derive(rng_seed, seed::tag::PERTURBATION, b as u64);
        let width = p.min(m - b * p);
        if p == 2 {
            columns.extend(rejection_block_p2(width, block_seed));
        } else {
            let delta0 = sample_delta0(p, block_seed)?;
            for j in 1..=width {
                columns.push(flip_column(&delta0, j)?);
            }
        }
    }
    Ok(PerturbationMatrix {
        matrix: DMatrix::from_columns(&columns),
    })
}

/// Scheme-generated matrix with every block using the given base vector.
pub fn build_from_delta0(delta0: &DVector<f64>, m: usize) -> Result<PerturbationMatrix> {
    let p = delta0.len();
    if p < 1 || m < 1 {
        return Err(Error::InvalidArgument("need p >= 1 and M >= 1".into()));
    }
    if delta0.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument(
            "base vector entries must be +1 or -1".into(),
        ));
    }
    let columns = (0..m)
        .map(|i| flip_column(delta0, i % p + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbationMatrix {
        matrix: DMatrix::from_columns(&columns),
    })
}

fn rejection_block_p2(width: usize, block_seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(block_seed);
    let first = random_signs(2, &mut rng);
    if width == 1 {
        return vec![first];
    }
    loop {
        let second = random_signs(2, &mut rng);
        // ±1 vectors in the plane are either parallel or orthogonal.
        if first.dot(&second) == 0.0 {
            return vec![first, second];
        }
    }
}

/// True iff the columns span `ℝᵖ`.
pub fn spans_space(delta: &PerturbationMatrix) -> bool {
    delta.rank() == delta.dim()
}
