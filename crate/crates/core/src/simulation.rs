//! Multi-response linear regression scenario with contaminated clients.
//!
//! Benign clients follow `W_k = W0 + s * B_k A` with a shared row factor `A`.
//! Contaminated clients replace the low-rank adaptation by an unstructured
//! perturbation `W_k = W0 + c / sqrt(q (p - r)) * U_k`. Each client observes
//! `Y = W X + E` with standard normal covariates and AR(1)-correlated noise
//! across response coordinates, and fits OLS locally.
//!
//! Randomness comes from one ChaCha20 stream per replicate, selected by the
//! replicate index under a shared base seed, so results do not depend on how
//! replicates are scheduled.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::WeightMatrix;
use crate::decomposition::{projector_distance, RowProjector};
use crate::error::{ClairError, Result};
use crate::metrics::{frob_sq_error, set_metrics, MethodSummary, Stats};
use crate::pipeline::{run_clair, ClairConfig};
use crate::refinement::{fedavg, oracle_fedavg};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub clients: usize,
    pub rank: usize,
    pub contamination_frac: f64,
    pub signal_scale: f64,
    pub contamination_levels: Vec<f64>,
    /// Perturbation entries are drawn from `Unif[-h, h]` before scaling.
    pub perturbation_half_width: f64,
    pub ar1_rho: f64,
    pub ar1_scale: f64,
    pub replicates: usize,
    pub base_seed: u64,
    /// Orthonormalize the rows of `A` after sampling.
    pub orthonormal_a: bool,
    /// Hand the true weights to CLAIR instead of OLS fits (the `n -> inf` limit).
    pub noiseless: bool,
}

impl SimConfig {
    /// Defaults for a `(p, q, n, K)` regime.
    pub fn regime(p: usize, q: usize, n: usize, clients: usize) -> Self {
        Self {
            p,
            q,
            n,
            clients,
            rank: 2,
            contamination_frac: 0.4,
            signal_scale: 0.8,
            contamination_levels: vec![3.0, 4.0, 5.0, 6.0],
            perturbation_half_width: 1.0,
            ar1_rho: 0.25,
            ar1_scale: 1.0,
            replicates: 100,
            base_seed: 0,
            orthonormal_a: false,
            noiseless: false,
        }
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn with_seed(mut self, base_seed: u64) -> Self {
        self.base_seed = base_seed;
        self
    }

    pub fn contaminated_count(&self) -> usize {
        (self.contamination_frac * self.clients as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ClairError::Config(m));
        if self.p == 0 || self.q == 0 || self.n == 0 {
            return bad("p, q and n must be positive".into());
        }
        if self.clients < 2 {
            return Err(ClairError::InsufficientClients(self.clients));
        }
        if self.rank == 0 || self.rank >= self.p.min(self.q) {
            return bad(format!("rank {} must satisfy 0 < r < min(p, q)", self.rank));
        }
        if !(0.0..1.0).contains(&self.contamination_frac) {
            return bad(format!("contamination_frac must lie in [0, 1), got {}", self.contamination_frac));
        }
        if self.contaminated_count() >= self.clients {
            return bad("at least one client must be benign".into());
        }
        if !(self.signal_scale > 0.0) {
            return bad("signal_scale must be positive".into());
        }
        if self.contaminated_count() > 0
            && (self.contamination_levels.is_empty() || self.contamination_levels.iter().any(|c| !(*c > 0.0)))
        {
            return bad("contamination levels must be positive and non-empty".into());
        }
        if !(self.perturbation_half_width > 0.0) {
            return bad("perturbation_half_width must be positive".into());
        }
        if !(self.ar1_rho.abs() < 1.0) || !(self.ar1_scale > 0.0) {
            return bad("AR(1) needs |rho| < 1 and scale > 0".into());
        }
        if !self.noiseless && self.n <= self.p {
            return bad(format!("OLS needs n > p, got n = {} and p = {}", self.n, self.p));
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        Ok(())
    }
}

/// Per-client observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub backbone: WeightMatrix,
    /// `r x p` shared row factor.
    pub row_factor: DMatrix<f64>,
    /// Left factors of the benign clients, keyed by client id.
    pub left_factors: Vec<(usize, DMatrix<f64>)>,
    pub true_weights: Vec<WeightMatrix>,
    pub benign_set: BTreeSet<usize>,
    pub contamination_level: f64,
    /// Empty in noiseless mode.
    pub data: Vec<ClientData>,
}

impl SimScenario {
    pub fn true_projector(&self) -> Result<RowProjector> {
        RowProjector::from_row_space(&self.row_factor)
    }
}

/// RNG stream for `replicate` under `base_seed`.
pub fn replicate_rng(base_seed: u64, replicate: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(base_seed);
    rng.set_stream(replicate);
    rng
}

fn uniform_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let unif = Uniform::new_inclusive(-1.0, 1.0);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(unif))
}

fn normal_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// AR(1) covariance `scale^2 * rho^|i-j|`.
pub fn ar1_cov(q: usize, rho: f64, scale: f64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) || !(scale > 0.0) {
        return Err(ClairError::Config(format!("AR(1) needs |rho| < 1 and scale > 0, got rho = {rho}, scale = {scale}")));
    }
    Ok(DMatrix::from_fn(q, q, |i, j| {
        scale * scale * rho.powi((i as i64 - j as i64).unsigned_abs() as i32)
    }))
}

/// Draws `N(0, Sigma)` columns through the Cholesky factor of `Sigma`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .cholesky()
            .ok_or_else(|| ClairError::Numeric("covariance is not positive definite".into()))?;
        Ok(Self { factor: chol.l() })
    }

    pub fn ar1(q: usize, rho: f64, scale: f64) -> Result<Self> {
        Self::new(ar1_cov(q, rho, scale)?)
    }

    /// `q x n` matrix of independent columns.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> DMatrix<f64> {
        let q = self.factor.nrows();
        let z = DMatrix::from_fn(q, n, |_, _| rng.sample(StandardNormal));
        &self.factor * z
    }
}

/// `W = Y X^T (X X^T)^{-1}` via a Cholesky solve on the Gram matrix.
pub fn ols_fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<WeightMatrix> {
    let (p, n) = x.shape();
    if y.ncols() != n {
        return Err(ClairError::dims((y.nrows(), n), y.shape()));
    }
    if n < p {
        return Err(ClairError::IllPosed(format!("n = {n} is smaller than p = {p}")));
    }
    let gram = x * x.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| ClairError::IllPosed("covariate Gram matrix is singular".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-14 {
        return Err(ClairError::IllPosed("covariate Gram matrix is numerically singular".into()));
    }
    let rhs = x * y.transpose();
    Ok(chol.solve(&rhs).transpose())
}

/// Draw one replicate's scenario.
///
/// Draw order: backbone, row factor, contaminated set, contamination level,
/// then per client its factor or perturbation, then per client `X` and noise.
pub fn gen_scenario(cfg: &SimConfig, rng: &mut ChaCha20Rng) -> Result<SimScenario> {
    cfg.validate()?;
    let SimConfig { p, q, n, clients, rank, .. } = *cfg;

    let backbone = uniform_matrix(rng, q, p);
    let mut row_factor = uniform_matrix(rng, rank, p);
    if cfg.orthonormal_a {
        row_factor = row_factor.transpose().qr().q().transpose();
    }

    let contaminated: BTreeSet<usize> = sample(rng, clients, cfg.contaminated_count()).into_iter().collect();
    let benign_set: BTreeSet<usize> = (0..clients).filter(|k| !contaminated.contains(k)).collect();
    let contamination_level = if contaminated.is_empty() {
        0.0
    } else {
        cfg.contamination_levels[rng.gen_range(0..cfg.contamination_levels.len())]
    };
    let perturbation_scale = cfg.perturbation_half_width * contamination_level / ((q * (p - rank)) as f64).sqrt();

    let mut left_factors = Vec::with_capacity(benign_set.len());
    let mut true_weights = Vec::with_capacity(clients);
    for k in 0..clients {
        if benign_set.contains(&k) {
            let b = uniform_matrix(rng, q, rank);
            true_weights.push(&backbone + (&b * &row_factor) * cfg.signal_scale);
            left_factors.push((k, b));
        } else {
            true_weights.push(&backbone + uniform_matrix(rng, q, p) * perturbation_scale);
        }
    }

    let data = if cfg.noiseless {
        Vec::new()
    } else {
        let noise = GaussianSampler::ar1(q, cfg.ar1_rho, cfg.ar1_scale)?;
        true_weights
            .iter()
            .map(|w| {
                let x = normal_matrix(rng, p, n);
                let e = noise.sample(rng, n);
                let y = w * &x + e;
                ClientData { x, y }
            })
            .collect()
    };

    Ok(SimScenario {
        backbone,
        row_factor,
        left_factors,
        true_weights,
        benign_set,
        contamination_level,
        data,
    })
}

/// Local estimates: OLS fits, or the true weights in noiseless mode.
pub fn local_estimates(scenario: &SimScenario) -> Result<Vec<WeightMatrix>> {
    if scenario.data.is_empty() {
        return Ok(scenario.true_weights.clone());
    }
    scenario.data.iter().map(|d| ols_fit(&d.x, &d.y)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Local,
    Clair,
    FedAvg,
    OracleFedAvg,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Local, Method::Clair, Method::FedAvg, Method::OracleFedAvg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Local => "local",
            Method::Clair => "clair",
            Method::FedAvg => "fedavg",
            Method::OracleFedAvg => "oracle_fedavg",
        }
    }
}

/// Squared Frobenius error per client, in client order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodErrors {
    pub local: Vec<f64>,
    pub clair: Vec<f64>,
    pub fedavg: Vec<f64>,
    pub oracle_fedavg: Vec<f64>,
}

impl MethodErrors {
    pub fn get(&self, method: Method) -> &[f64] {
        match method {
            Method::Local => &self.local,
            Method::Clair => &self.clair,
            Method::FedAvg => &self.fedavg,
            Method::OracleFedAvg => &self.oracle_fedavg,
        }
    }

    pub fn mean(&self, method: Method) -> f64 {
        let v = self.get(method);
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub errors: MethodErrors,
    pub contamination_level: f64,
    pub benign_set: BTreeSet<usize>,
    pub detected_set: BTreeSet<usize>,
    pub accuracy: f64,
    pub recall: f64,
    pub projector_error: f64,
    pub tau_used: f64,
    pub solver_iterations: usize,
    pub solver_converged: bool,
    /// Nobody was detected, so CLAIR served the local estimates.
    pub empty_set_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub replicate: usize,
    pub base_seed: u64,
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub clients: usize,
    /// `Err` carries the failure message; failed replicates stay in the batch.
    pub outcome: std::result::Result<ReplicateOutcome, String>,
}

impl ReplicateReport {
    pub fn ok(&self) -> Option<&ReplicateOutcome> {
        self.outcome.as_ref().ok()
    }
}

/// Generate, fit, run CLAIR and score all methods for one replicate.
pub fn run_replicate(cfg: &SimConfig, clair: &ClairConfig, replicate: usize) -> ReplicateReport {
    ReplicateReport {
        replicate,
        base_seed: cfg.base_seed,
        p: cfg.p,
        q: cfg.q,
        n: cfg.n,
        clients: cfg.clients,
        outcome: replicate_outcome(cfg, clair, replicate).map_err(|e| e.to_string()),
    }
}

fn errors_against(estimates: &[WeightMatrix], truth: &[WeightMatrix]) -> Result<Vec<f64>> {
    estimates.iter().zip(truth).map(|(e, t)| frob_sq_error(e, t)).collect()
}

fn replicate_outcome(cfg: &SimConfig, clair: &ClairConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(cfg.base_seed, replicate as u64);
    let scenario = gen_scenario(cfg, &mut rng)?;
    let locals = local_estimates(&scenario)?;
    let truth = &scenario.true_weights;

    let out = run_clair(&locals, clair)?;
    let clair_estimates = out.estimates(&locals);

    let all: BTreeSet<usize> = (0..cfg.clients).collect();
    let global = fedavg(&locals, &all)?;
    let fedavg_estimates = vec![global; cfg.clients];
    let oracle: Vec<WeightMatrix> = oracle_fedavg(&locals, &scenario.benign_set)?.into_values().collect();

    let errors = MethodErrors {
        local: errors_against(&locals, truth)?,
        clair: errors_against(&clair_estimates, truth)?,
        fedavg: errors_against(&fedavg_estimates, truth)?,
        oracle_fedavg: errors_against(&oracle, truth)?,
    };

    let detected = out.detection.collaborative_set.clone();
    let sm = set_metrics(&detected, &scenario.benign_set, cfg.clients);
    let projector_error = projector_distance(&out.decomposition.projector, &scenario.true_projector()?)?;

    Ok(ReplicateOutcome {
        errors,
        contamination_level: scenario.contamination_level,
        benign_set: scenario.benign_set,
        detected_set: detected,
        accuracy: sm.accuracy,
        recall: sm.recall,
        projector_error,
        tau_used: out.detection.tau_used,
        solver_iterations: out.decomposition.trace.iterations,
        solver_converged: out.decomposition.trace.converged,
        empty_set_fallback: out.refinement.is_none(),
    })
}

/// All replicates of `cfg`, in replicate order. Scheduling across threads
/// does not change any result.
pub fn run_batch(cfg: &SimConfig, clair: &ClairConfig) -> Vec<ReplicateReport> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, clair, rep))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub clients: usize,
    pub replicates: usize,
    pub failures: usize,
    pub methods: Vec<MethodSummary>,
    pub accuracy: Stats,
    pub recall: Stats,
    pub projector_error: Stats,
}

impl BatchSummary {
    pub fn method(&self, method: Method) -> &MethodSummary {
        self.methods
            .iter()
            .find(|m| m.method == method.name())
            .expect("every method is summarized")
    }

    pub fn success_rate(&self) -> f64 {
        (self.replicates - self.failures) as f64 / self.replicates.max(1) as f64
    }
}

pub fn summarize(cfg: &SimConfig, reports: &[ReplicateReport]) -> BatchSummary {
    let ok: Vec<&ReplicateOutcome> = reports.iter().filter_map(|r| r.ok()).collect();
    let methods = Method::ALL
        .iter()
        .map(|&m| {
            let mut all = Vec::new();
            let mut benign = Vec::new();
            for o in &ok {
                for (k, e) in o.errors.get(m).iter().enumerate() {
                    all.push(*e);
                    if o.benign_set.contains(&k) {
                        benign.push(*e);
                    }
                }
            }
            MethodSummary {
                method: m.name().to_string(),
                all_clients: Stats::of(&all),
                benign_clients: Stats::of(&benign),
                replicates: ok.len(),
            }
        })
        .collect();
    let collect = |f: fn(&ReplicateOutcome) -> f64| ok.iter().map(|o| f(o)).collect::<Vec<_>>();
    BatchSummary {
        p: cfg.p,
        q: cfg.q,
        n: cfg.n,
        clients: cfg.clients,
        replicates: reports.len(),
        failures: reports.len() - ok.len(),
        methods,
        accuracy: Stats::of(&collect(|o| o.accuracy)),
        recall: Stats::of(&collect(|o| o.recall)),
        projector_error: Stats::of(&collect(|o| o.projector_error)),
    }
}
