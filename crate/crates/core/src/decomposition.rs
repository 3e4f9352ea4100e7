//! Row-space projector extraction and the canonical plug-in split.
//!
//! The solver's low-rank component is only used through its dominant right
//! singular subspace. Projecting the observed contrasts onto that subspace
//! and its complement gives the shift-invariant pair `(D P, D (I - P))`.

use nalgebra::DMatrix;

use crate::contrast::StackedPairMatrix;
use crate::error::{ClairError, Result};
use crate::prox::{self, right_svd, SolverConfig, SolverTrace};

/// Orthogonal projector `V V^T` onto an `r`-dimensional subspace of `R^p`.
///
/// Only the projector is a stable contract. `basis` carries no sign or
/// rotation guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct RowProjector {
    matrix: DMatrix<f64>,
    basis: DMatrix<f64>,
    /// Set when `sigma_r == sigma_{r+1}`, so the subspace is not unique.
    pub ambiguous: bool,
}

impl RowProjector {
    /// Projector onto the span of the orthonormal columns of `basis` (`p x r`).
    pub fn from_orthonormal_basis(basis: DMatrix<f64>) -> Self {
        let matrix = &basis * basis.transpose();
        Self {
            matrix,
            basis,
            ambiguous: false,
        }
    }

    /// Projector onto the row space of `a` (`r x p`, any full-row-rank matrix).
    pub fn from_row_space(a: &DMatrix<f64>) -> Result<Self> {
        let rank = a.nrows();
        if rank == 0 || rank > a.ncols() {
            return Err(ClairError::Rank {
                rank,
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let (sigma, v_t) = right_svd(a)?;
        if sigma[rank - 1] <= f64::EPSILON * sigma[0] * a.ncols() as f64 {
            return Err(ClairError::Numeric("row factor is rank deficient".into()));
        }
        Ok(Self::from_orthonormal_basis(v_t.rows(0, rank).transpose()))
    }

    /// Wrap a stored `p x p` projector. The matrix is kept as given; it must
    /// be symmetric and idempotent to `1e-8`.
    pub fn from_projector_matrix(p: &DMatrix<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(ClairError::dims((p.ncols(), p.ncols()), p.shape()));
        }
        let scale = p.amax().max(1.0);
        if (p - p.transpose()).amax() > 1e-8 * scale || (p * p - p).amax() > 1e-8 * scale {
            return Err(ClairError::Numeric("matrix is not an orthogonal projector".into()));
        }
        let eig = nalgebra::SymmetricEigen::new(p.clone());
        let keep: Vec<usize> = (0..p.nrows()).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        let basis = DMatrix::from_fn(p.nrows(), keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
        Ok(Self {
            matrix: p.clone(),
            basis,
            ambiguous: false,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self::from_orthonormal_basis(DMatrix::identity(p, p))
    }

    /// The zero projector (rank 0).
    pub fn zero(p: usize) -> Self {
        Self::from_orthonormal_basis(DMatrix::zeros(p, 0))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `I - P`.
    pub fn complement(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.matrix
    }
}

/// Top-`rank` right singular subspace of the stacked low-rank estimate.
pub fn row_projector(low_rank: &StackedPairMatrix, rank: usize) -> Result<RowProjector> {
    let m = low_rank.as_matrix();
    let (rows, cols) = m.shape();
    if rank == 0 || rank > rows.min(cols) {
        return Err(ClairError::Rank { rank, rows, cols });
    }
    let (sigma, v_t) = right_svd(m)?;
    let next = if rank < cols {
        sigma.get(rank).copied().unwrap_or(0.0)
    } else {
        f64::NEG_INFINITY
    };
    let scale = sigma[0].max(f64::MIN_POSITIVE);
    let ambiguous = sigma[rank - 1] - next <= 1e-12 * scale;
    let mut proj = RowProjector::from_orthonormal_basis(v_t.rows(0, rank).transpose());
    proj.ambiguous = ambiguous;
    Ok(proj)
}

/// Exploratory rank choice: the index with the largest drop
/// `(s_i - s_{i+1}) / s_1`, counting a trailing zero after the last value.
/// Not part of the estimator proper; the rank is normally supplied.
pub fn estimate_rank_by_gap(singular_values: &[f64]) -> usize {
    let top = singular_values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 1;
    }
    let floor = top * 1e-12;
    let mut best = (1, f64::NEG_INFINITY);
    for (i, &s) in singular_values.iter().enumerate() {
        if s <= floor {
            break;
        }
        let next = singular_values.get(i + 1).copied().unwrap_or(0.0);
        let drop = (s - next) / top;
        if drop > best.1 {
            best = (i + 1, drop);
        }
    }
    best.0
}

/// `(D P, D - D P)`.
pub fn canonical_split(
    d: &StackedPairMatrix,
    projector: &RowProjector,
) -> Result<(StackedPairMatrix, StackedPairMatrix)> {
    if projector.dim() != d.cols() {
        return Err(ClairError::dims(
            (d.cols(), d.cols()),
            (projector.dim(), projector.dim()),
        ));
    }
    let shared = d.as_matrix() * projector.matrix();
    let orthogonal = d.as_matrix() - &shared;
    Ok((d.with_data(shared), d.with_data(orthogonal)))
}

/// Spectral norm of `P1 - P2`.
pub fn projector_distance(a: &RowProjector, b: &RowProjector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(ClairError::dims((a.dim(), a.dim()), (b.dim(), b.dim())));
    }
    prox::operator_norm(&(a.matrix() - b.matrix()))
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub low_rank: StackedPairMatrix,
    pub sparse: StackedPairMatrix,
    pub projector: RowProjector,
    pub shared: StackedPairMatrix,
    pub orthogonal: StackedPairMatrix,
    pub trace: SolverTrace,
}

/// Solve, extract the rank-`rank` row projector and split `d`.
pub fn decompose(d: &StackedPairMatrix, cfg: &SolverConfig, rank: usize) -> Result<DecompositionResult> {
    let out = prox::solve(d, cfg)?;
    let projector = row_projector(&out.low_rank, rank)?;
    let (shared, orthogonal) = canonical_split(d, &projector)?;
    Ok(DecompositionResult {
        low_rank: out.low_rank,
        sparse: out.sparse,
        projector,
        shared,
        orthogonal,
        trace: out.trace,
    })
}
