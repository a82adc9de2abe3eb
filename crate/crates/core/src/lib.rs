//! Win statistics (win ratio, net benefit, win odds) for hierarchical
//! composite endpoints whose priority order is only partly fixed.
//!
//! Endpoints of equal priority form a block; every admissible ordering
//! ("rotation") is evaluated and the win/loss counts are pooled across
//! rotations. Asymptotic inference uses the U-statistic covariance of the
//! per-rotation counts.

pub mod compare;
pub mod error;
pub mod hierarchy;
pub mod inference;
pub mod rng;
pub mod simgen;
pub mod stats;
pub mod study;

pub use compare::{
    compare_endpoint, compare_pair, count_wins_losses, count_wins_losses_with, decompose, decompose_weighted,
    rotation_table, Arm, Comparison, CountOptions, Decomposition, Outcome, PairSummary, PairTable, PairwiseResults,
    Subject, WinCounts,
};
pub use error::{Error, Result};
pub use hierarchy::{
    build_rotation_set, validate_hierarchy, Direction, EndpointKind, EndpointSpec, Hierarchy, RotationSet,
    ValidationReport, DEFAULT_ROTATION_CAP,
};
pub use inference::{
    bootstrap_ci, rnb_rwo_inference, rwr_inference, rwr_test, stratified_inference, win_statistics, InferenceResult,
    Measure, StratifiedInput, StratumInput,
};
pub use study::{emit_results, replicate_dataset, run_study, Method, StudyConfig, StudyResult};
pub use simgen::{CopulaScenario, Design, FrailtyScenario, GapEffect};
