//! Client-pair enumeration and the stacked pairwise contrast matrix.
//!
//! Pairs `(j, k)` with `j < k` are stacked in lexicographic order, so block
//! `g` of a [`StackedPairMatrix`] always refers to the same pair for a given
//! client count. All blocks live in a single `(G*q) x p` buffer.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{ClairError, Result};

/// A client's `q x p` weight matrix (true or estimated).
pub type WeightMatrix = DMatrix<f64>;

/// Unordered client pair with its position in the stacking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairIndex {
    pub j: usize,
    pub k: usize,
    pub g: usize,
}

/// Number of unordered pairs among `clients` clients.
pub fn pair_count(clients: usize) -> usize {
    clients * clients.saturating_sub(1) / 2
}

/// Canonical index of the unordered pair `{j, k}`.
pub fn pair_index(j: usize, k: usize, clients: usize) -> Result<PairIndex> {
    if clients < 2 || j == k || j >= clients || k >= clients {
        return Err(ClairError::InvalidPair { j, k, clients });
    }
    let (lo, hi) = if j < k { (j, k) } else { (k, j) };
    Ok(PairIndex {
        j: lo,
        k: hi,
        g: flat_position(lo, hi, clients),
    })
}

/// Inverse of [`pair_index`]: the pair stored at block position `g`.
pub fn pair_at(g: usize, clients: usize) -> Result<PairIndex> {
    if g >= pair_count(clients) {
        return Err(ClairError::InvalidPairPosition { g, clients });
    }
    let mut start = 0;
    for j in 0..clients - 1 {
        let row = clients - 1 - j;
        if g < start + row {
            return Ok(PairIndex {
                j,
                k: j + 1 + (g - start),
                g,
            });
        }
        start += row;
    }
    unreachable!("g < G guarantees a hit")
}

/// All pairs in stacking order.
pub fn pairs(clients: usize) -> impl Iterator<Item = PairIndex> {
    (0..clients).flat_map(move |j| {
        (j + 1..clients).map(move |k| PairIndex {
            j,
            k,
            g: flat_position(j, k, clients),
        })
    })
}

#[inline]
fn flat_position(j: usize, k: usize, clients: usize) -> usize {
    j * (2 * clients - j - 1) / 2 + (k - j - 1)
}

/// `G = K(K-1)/2` vertically stacked `q x p` blocks indexed by client pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedPairMatrix {
    clients: usize,
    q: usize,
    p: usize,
    data: DMatrix<f64>,
}

impl StackedPairMatrix {
    pub fn zeros(clients: usize, q: usize, p: usize) -> Self {
        Self {
            clients,
            q,
            p,
            data: DMatrix::zeros(pair_count(clients) * q, p),
        }
    }

    /// Wrap an existing `(G*q) x p` buffer.
    pub fn from_matrix(clients: usize, q: usize, data: DMatrix<f64>) -> Result<Self> {
        if clients < 2 {
            return Err(ClairError::InsufficientClients(clients));
        }
        let rows = pair_count(clients) * q;
        if data.nrows() != rows {
            return Err(ClairError::dims((rows, data.ncols()), data.shape()));
        }
        Ok(Self {
            clients,
            q,
            p: data.ncols(),
            data,
        })
    }

    /// Assemble from `G` blocks given in stacking order.
    pub fn from_blocks(clients: usize, blocks: &[DMatrix<f64>]) -> Result<Self> {
        if clients < 2 {
            return Err(ClairError::InsufficientClients(clients));
        }
        let g_total = pair_count(clients);
        if blocks.len() != g_total {
            return Err(ClairError::Dimension {
                expected: format!("{g_total} blocks"),
                found: format!("{} blocks", blocks.len()),
            });
        }
        let (q, p) = blocks[0].shape();
        let mut out = Self::zeros(clients, q, p);
        for (g, b) in blocks.iter().enumerate() {
            if b.shape() != (q, p) {
                return Err(ClairError::dims((q, p), b.shape()));
            }
            out.block_mut(g).copy_from(b);
        }
        Ok(out)
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn block_rows(&self) -> usize {
        self.q
    }

    pub fn cols(&self) -> usize {
        self.p
    }

    pub fn num_blocks(&self) -> usize {
        pair_count(self.clients)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn as_matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn block(&self, g: usize) -> DMatrixView<'_, f64> {
        self.data.view((g * self.q, 0), (self.q, self.p))
    }

    pub fn block_mut(&mut self, g: usize) -> DMatrixViewMut<'_, f64> {
        self.data.view_mut((g * self.q, 0), (self.q, self.p))
    }

    /// Block for the unordered pair `{j, k}`, regardless of orientation.
    pub fn pair_block(&self, j: usize, k: usize) -> Result<DMatrixView<'_, f64>> {
        let idx = pair_index(j, k, self.clients)?;
        Ok(self.block(idx.g))
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.norm_squared()
    }

    /// Same stacking layout with a replaced buffer.
    pub(crate) fn with_data(&self, data: DMatrix<f64>) -> Self {
        debug_assert_eq!(data.shape(), self.data.shape());
        Self {
            clients: self.clients,
            q: self.q,
            p: self.p,
            data,
        }
    }

    pub(crate) fn same_layout(&self, other: &Self) -> bool {
        self.clients == other.clients && self.q == other.q && self.p == other.p
    }
}

/// Stack the pairwise differences `W[j] - W[k]` for all `j < k`.
pub fn build_contrast(weights: &[WeightMatrix]) -> Result<StackedPairMatrix> {
    let clients = weights.len();
    if clients < 2 {
        return Err(ClairError::InsufficientClients(clients));
    }
    let shape = weights[0].shape();
    if let Some(bad) = weights.iter().find(|w| w.shape() != shape) {
        return Err(ClairError::dims(shape, bad.shape()));
    }
    let (q, p) = shape;
    let mut out = StackedPairMatrix::zeros(clients, q, p);
    for pair in pairs(clients) {
        let diff = &weights[pair.j] - &weights[pair.k];
        out.block_mut(pair.g).copy_from(&diff);
    }
    Ok(out)
}

/// Frobenius norm of every block, in stacking order.
pub fn block_norms(stacked: &StackedPairMatrix) -> Vec<f64> {
    (0..stacked.num_blocks())
        .map(|g| stacked.block(g).norm())
        .collect()
}

/// Keep the blocks in `subset` and zero the rest.
pub fn block_project(stacked: &StackedPairMatrix, subset: &BTreeSet<usize>) -> StackedPairMatrix {
    let mut out = StackedPairMatrix::zeros(stacked.clients, stacked.q, stacked.p);
    for &g in subset.iter().filter(|&&g| g < stacked.num_blocks()) {
        out.block_mut(g).copy_from(&stacked.block(g));
    }
    out
}
