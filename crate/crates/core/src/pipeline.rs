//! End-to-end CLAIR run on a set of local estimates.

use serde::{Deserialize, Serialize};

use crate::contrast::{build_contrast, pair_count, StackedPairMatrix, WeightMatrix};
use crate::decomposition::{decompose, DecompositionResult};
use crate::detection::{vote_set, DetectionConfig, DetectionResult};
use crate::error::{ClairError, Result};
use crate::prox::{SolverConfig, StepSize, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::refinement::{refine, RefinementResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaSpec {
    /// `w_g = 1/K` for every pair.
    Uniform,
    List(Vec<f64>),
}

/// Every knob of the procedure. Penalties scale with the client count as
/// `lambda_L = c1 / sqrt(K)` and `lambda_S = c2 / K^{3/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClairConfig {
    pub lambda_l_c1: f64,
    pub lambda_s_c2: f64,
    pub omega: OmegaSpec,
    pub step: StepSize,
    pub max_iters: usize,
    pub tol: f64,
    pub rank: usize,
    pub detection: DetectionConfig,
}

impl Default for ClairConfig {
    fn default() -> Self {
        Self {
            lambda_l_c1: 0.3,
            lambda_s_c2: 1.0,
            omega: OmegaSpec::Uniform,
            step: StepSize::Auto,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            rank: 2,
            detection: DetectionConfig::default(),
        }
    }
}

impl ClairConfig {
    pub fn lambda_l(&self, clients: usize) -> f64 {
        self.lambda_l_c1 / (clients as f64).sqrt()
    }

    pub fn lambda_s(&self, clients: usize) -> f64 {
        self.lambda_s_c2 / (clients as f64).powf(1.5)
    }

    pub fn solver_config(&self, clients: usize) -> Result<SolverConfig> {
        let omega = match &self.omega {
            OmegaSpec::Uniform => vec![1.0 / clients as f64; pair_count(clients)],
            OmegaSpec::List(w) => w.clone(),
        };
        let cfg = SolverConfig {
            lambda_l: self.lambda_l(clients),
            lambda_s: self.lambda_s(clients),
            omega,
            step: self.step,
            max_iters: self.max_iters,
            tol: self.tol,
        };
        cfg.validate(pair_count(clients))?;
        Ok(cfg)
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        if clients < 2 {
            return Err(ClairError::InsufficientClients(clients));
        }
        if self.rank == 0 {
            return Err(ClairError::Config("rank must be at least 1".into()));
        }
        self.detection.validate()?;
        self.solver_config(clients).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct ClairOutput {
    pub contrast: StackedPairMatrix,
    pub decomposition: DecompositionResult,
    pub detection: DetectionResult,
    /// `None` when the detected set is empty.
    pub refinement: Option<RefinementResult>,
}

impl ClairOutput {
    /// Refined estimates, falling back to the inputs when nothing was refined.
    pub fn estimates(&self, locals: &[WeightMatrix]) -> Vec<WeightMatrix> {
        match &self.refinement {
            Some(r) => r.estimates(),
            None => locals.to_vec(),
        }
    }
}

pub fn run_clair(locals: &[WeightMatrix], cfg: &ClairConfig) -> Result<ClairOutput> {
    cfg.validate(locals.len())?;
    let contrast = build_contrast(locals)?;
    let decomposition = decompose(&contrast, &cfg.solver_config(locals.len())?, cfg.rank)?;
    let detection = vote_set(&decomposition.orthogonal, &cfg.detection)?;
    let refinement = match refine(locals, &decomposition.projector, &detection.collaborative_set) {
        Ok(r) => Some(r),
        Err(ClairError::EmptyCollaborativeSet) => None,
        Err(e) => return Err(e),
    };
    Ok(ClairOutput {
        contrast,
        decomposition,
        detection,
        refinement,
    })
}
