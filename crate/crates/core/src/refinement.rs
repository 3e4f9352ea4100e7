//! Collaborative refinement and the averaging baselines.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::contrast::{pair_index, StackedPairMatrix, WeightMatrix};
use crate::decomposition::RowProjector;
use crate::error::{ClairError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementResult {
    /// Refined estimates, keyed by client, for every client in `set_used`.
    pub refined: BTreeMap<usize, WeightMatrix>,
    /// Unchanged local estimates for clients outside `set_used`.
    pub passthrough: BTreeMap<usize, WeightMatrix>,
    pub set_used: BTreeSet<usize>,
}

impl RefinementResult {
    /// Per-client output in client order, refined where available.
    pub fn estimates(&self) -> Vec<WeightMatrix> {
        let total = self.refined.len() + self.passthrough.len();
        (0..total)
            .map(|k| {
                self.refined
                    .get(&k)
                    .or_else(|| self.passthrough.get(&k))
                    .expect("every client is refined or passed through")
                    .clone()
            })
            .collect()
    }
}

fn check_clients(weights: &[WeightMatrix], subset: &BTreeSet<usize>) -> Result<()> {
    let clients = weights.len();
    if let Some(&bad) = subset.iter().find(|&&k| k >= clients) {
        return Err(ClairError::Config(format!("client {bad} out of range for K = {clients}")));
    }
    let shape = weights[0].shape();
    if let Some(w) = weights.iter().find(|w| w.shape() != shape) {
        return Err(ClairError::dims(shape, w.shape()));
    }
    Ok(())
}

/// Entrywise mean over `subset`.
pub fn fedavg(weights: &[WeightMatrix], subset: &BTreeSet<usize>) -> Result<WeightMatrix> {
    if subset.is_empty() || weights.is_empty() {
        return Err(ClairError::EmptyCollaborativeSet);
    }
    check_clients(weights, subset)?;
    let mut sum = DMatrix::zeros(weights[0].nrows(), weights[0].ncols());
    for &k in subset {
        sum += &weights[k];
    }
    Ok(sum / subset.len() as f64)
}

/// Benign clients share their mean; every other client keeps its local estimate.
pub fn oracle_fedavg(
    weights: &[WeightMatrix],
    true_benign: &BTreeSet<usize>,
) -> Result<BTreeMap<usize, WeightMatrix>> {
    let mean = fedavg(weights, true_benign)?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let out = if true_benign.contains(&k) { mean.clone() } else { w.clone() };
            (k, out)
        })
        .collect())
}

/// Refine clients in `set` as `W_k P + mean_set(W) (I - P)`.
///
/// This is the closed form of averaging the transported references
/// `W_j - (D P)^{(j,k)}` over `j` in the set; see [`refine_pairwise`].
pub fn refine(
    weights: &[WeightMatrix],
    projector: &RowProjector,
    set: &BTreeSet<usize>,
) -> Result<RefinementResult> {
    if set.is_empty() {
        return Err(ClairError::EmptyCollaborativeSet);
    }
    check_clients(weights, set)?;
    let p = weights[0].ncols();
    if projector.dim() != p {
        return Err(ClairError::dims((p, p), (projector.dim(), projector.dim())));
    }
    let mean = fedavg(weights, set)?;
    let shared_mean = &mean * projector.complement();

    let mut refined = BTreeMap::new();
    let mut passthrough = BTreeMap::new();
    for (k, w) in weights.iter().enumerate() {
        if set.contains(&k) {
            refined.insert(k, w * projector.matrix() + &shared_mean);
        } else {
            passthrough.insert(k, w.clone());
        }
    }
    Ok(RefinementResult {
        refined,
        passthrough,
        set_used: set.clone(),
    })
}

/// Pairwise form of the refinement: for `k` in the set,
/// `(1/|set|) sum_{j in set} (W_j - L_A^{(j,k)})` with the antisymmetric
/// convention `L_A^{(j,k)} = -L_A^{(k,j)}` and `L_A^{(k,k)} = 0`.
///
/// `shared` is the stacked `D P`. Costs `O(|set|^2 q p)`; kept as an
/// independent path for [`refine`].
pub fn refine_pairwise(
    weights: &[WeightMatrix],
    shared: &StackedPairMatrix,
    set: &BTreeSet<usize>,
) -> Result<RefinementResult> {
    if set.is_empty() {
        return Err(ClairError::EmptyCollaborativeSet);
    }
    check_clients(weights, set)?;
    if shared.clients() != weights.len() {
        return Err(ClairError::Dimension {
            expected: format!("{} clients", weights.len()),
            found: format!("{} clients", shared.clients()),
        });
    }
    let (q, p) = weights[0].shape();
    let mut refined = BTreeMap::new();
    let mut passthrough = BTreeMap::new();
    for (k, w) in weights.iter().enumerate() {
        if !set.contains(&k) {
            passthrough.insert(k, w.clone());
            continue;
        }
        let mut acc = DMatrix::zeros(q, p);
        for &j in set {
            acc += &weights[j];
            if j != k {
                let block = shared.block(pair_index(j, k, weights.len())?.g);
                if j < k {
                    acc -= block;
                } else {
                    acc += block;
                }
            }
        }
        refined.insert(k, acc / set.len() as f64);
    }
    Ok(RefinementResult {
        refined,
        passthrough,
        set_used: set.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::build_contrast;
    use crate::decomposition::canonical_split;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_projector(rng: &mut ChaCha20Rng, p: usize, r: usize) -> RowProjector {
        RowProjector::from_orthonormal_basis(random(rng, p, r).qr().q())
    }

    #[test]
    fn full_projector_returns_locals() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let w: Vec<_> = (0..4).map(|_| random(&mut rng, 3, 5)).collect();
        let set: BTreeSet<usize> = [0, 2, 3].into();
        let out = refine(&w, &RowProjector::identity(5), &set).unwrap();
        for (k, m) in &out.refined {
            assert!((m - &w[*k]).amax() < 1e-14);
        }
        assert_eq!(out.passthrough[&1], w[1]);
    }

    #[test]
    fn zero_projector_is_fedavg() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let w: Vec<_> = (0..4).map(|_| random(&mut rng, 3, 5)).collect();
        let set: BTreeSet<usize> = [0, 1, 3].into();
        let out = refine(&w, &RowProjector::zero(5), &set).unwrap();
        let mean = (&w[0] + &w[1] + &w[3]) / 3.0;
        for m in out.refined.values() {
            assert!((m - &mean).amax() < 1e-14);
        }
    }

    #[test]
    fn pairwise_form_matches_closed_form() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        for trial in 0..20 {
            let clients = 3 + trial % 6;
            let w: Vec<_> = (0..clients).map(|_| random(&mut rng, 4, 6)).collect();
            let proj = random_projector(&mut rng, 6, 1 + trial % 3);
            let set: BTreeSet<usize> = (0..clients).filter(|k| k % 3 != 1 || *k == 1).collect();
            let d = build_contrast(&w).unwrap();
            let (shared, _) = canonical_split(&d, &proj).unwrap();
            let a = refine(&w, &proj, &set).unwrap();
            let b = refine_pairwise(&w, &shared, &set).unwrap();
            let mean = fedavg(&w, &set).unwrap();
            for k in &set {
                let direct = &w[*k] * proj.matrix() + &mean * proj.complement();
                assert!((&a.refined[k] - &b.refined[k]).amax() < 1e-12);
                assert!((&a.refined[k] - direct).amax() < 1e-12);
            }
            assert_eq!(a.passthrough, b.passthrough);
        }
    }

    #[test]
    fn empty_set_errors() {
        let w = vec![DMatrix::zeros(2, 2); 3];
        let empty = BTreeSet::new();
        assert_eq!(
            refine(&w, &RowProjector::identity(2), &empty).unwrap_err(),
            ClairError::EmptyCollaborativeSet
        );
        assert!(fedavg(&w, &empty).is_err());
        assert!(oracle_fedavg(&w, &empty).is_err());
        assert!(refine(&w, &RowProjector::identity(3), &[0].into()).is_err());
        assert!(fedavg(&w, &[5].into()).is_err());
    }

    #[test]
    fn fedavg_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        let m = random(&mut rng, 2, 3);
        assert_eq!(fedavg(std::slice::from_ref(&m), &[0].into()).unwrap(), m);
        let pm = vec![m.clone(), -m.clone()];
        assert!(fedavg(&pm, &[0, 1].into()).unwrap().amax() < 1e-15);

        let w: Vec<_> = (0..4).map(|_| random(&mut rng, 2, 3)).collect();
        let oracle = (&w[0] + &w[1] + &w[2] + &w[3]) / 4.0;
        assert!((fedavg(&w, &(0..4).collect()).unwrap() - oracle).amax() < 1e-15);

        let constant = vec![m.clone(); 5];
        assert!((fedavg(&constant, &(0..5).collect()).unwrap() - &m).amax() < 1e-15);
    }

    #[test]
    fn oracle_fedavg_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let w: Vec<_> = (0..4).map(|_| random(&mut rng, 2, 2)).collect();
        let all = oracle_fedavg(&w, &(0..4).collect()).unwrap();
        let mean = fedavg(&w, &(0..4).collect()).unwrap();
        assert!(all.values().all(|m| *m == mean));

        let one = oracle_fedavg(&w, &[2].into()).unwrap();
        for (k, m) in &one {
            assert_eq!(m, &w[*k]);
        }
    }

    #[test]
    fn estimates_are_in_client_order() {
        let w: Vec<_> = (0..3).map(|k| DMatrix::from_element(1, 2, k as f64)).collect();
        let out = refine(&w, &RowProjector::identity(2), &[1, 2].into()).unwrap();
        let est = out.estimates();
        assert_eq!(est.len(), 3);
        assert_eq!(est[0], w[0]);
    }
}
