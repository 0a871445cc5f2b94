//! Policy-gradient search over discrete CNN hyperparameter grids.
//!
//! The crate is organized around the search loop:
//!
//! - [`search_space`]: affine integer grids and the 76-dimension preset.
//! - [`optimizer`]: balanced perturbations, per-label reward averages, the
//!   update rule, the epoch loop, and checkpoints.
//! - [`evaluation`]: reward oracles, the trainer line protocol, and the
//!   bounded worker pool.
//! - [`arch`]: decoding policies into dense encoder-decoder descriptors,
//!   shape propagation, and parameter counts.
//! - [`metrics`]: Dice, Hausdorff, and reward aggregation.
//!
//! With the default `parallel` feature, batch evaluation and the distance
//! transforms run on rayon; without it everything runs sequentially.

pub mod arch;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod optimizer;
pub mod par;
pub mod search_space;

pub use error::{Error, Result};
pub use evaluation::{
    evaluate_batch, Broker, EvalStatus, Evaluate, EvaluationRequest, EvaluationResult, Evaluator,
    OracleEvaluator, OracleKind, OracleSpec, TrainerEvaluator,
};
pub use optimizer::{
    run_epoch, run_search, Checkpoint, SearchConfig, SearchState, StopReason, UpdateCase,
};
pub use search_space::{default_space, DimensionSpec, PolicyVector, SearchSpace};
