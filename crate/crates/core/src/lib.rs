//! Contamination-aware collaborative refinement of multi-response linear
//! models.
//!
//! Each of `K` clients holds a local `q x p` coefficient estimate. Pairwise
//! differences are stacked and split into a low-rank part, whose row space is
//! shared by benign clients, and a block-sparse part that absorbs contaminated
//! pairs. A majority vote over the residual block norms picks the
//! collaborative set, whose members then average the directions orthogonal to
//! the shared row space.
//!
//! ```
//! use clair::{run_clair, ClairConfig};
//! use nalgebra::DMatrix;
//!
//! let locals = vec![DMatrix::from_element(2, 3, 1.0); 4];
//! let out = run_clair(&locals, &ClairConfig::default()).unwrap();
//! assert_eq!(out.detection.collaborative_set.len(), 4);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod contrast;
pub mod decomposition;
pub mod detection;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod prox;
pub mod refinement;
pub mod simulation;

pub use contrast::{build_contrast, pair_count, pair_index, StackedPairMatrix, WeightMatrix};
pub use decomposition::{decompose, row_projector, DecompositionResult, RowProjector};
pub use detection::{vote_set, DetectionConfig, DetectionResult, TauMode};
pub use error::{ClairError, Result};
pub use pipeline::{run_clair, ClairConfig, ClairOutput, OmegaSpec};
pub use prox::{solve, SolverConfig, StepSize};
pub use refinement::{fedavg, oracle_fedavg, refine, RefinementResult};
pub use simulation::{run_batch, summarize, SimConfig};
