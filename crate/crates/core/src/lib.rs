//! Grasp-type recognition that fuses an image classifier's posterior with a
//! per-object grasp prior ("affordance").
//!
//! - [`taxonomy`]: label sets, distributions, fusion and the argmax rule.
//! - [`affordance`]: building, storing and querying object affordances.
//! - [`scores`]: the score-file format carrying classifier posteriors.
//! - [`eval`]: classifier-only, affordance-only and fused pipelines plus metrics.
//! - [`sim`]: enumerable generative worlds that check the fusion rule exactly.
//! - [`cli`]: the `grasp-afford` command-line front end.

pub mod affordance;
pub mod cli;
pub mod eval;
pub mod io;
pub mod par;
pub mod scores;
pub mod sim;
pub mod taxonomy;

pub use affordance::{normalize_name, Affordance, AffordanceDb, AffordanceRecord, UnknownPolicy};
pub use eval::{
    evaluate, run_pipeline, EvalReport, PipelineConfig, PipelineMode, Prediction, PriorMode,
};
pub use par::Execution;
pub use scores::{from_logits, ParseMode, ScoreFile, ScoreRecord};
pub use taxonomy::{argmax_grasp, fuse, normalize, restrict, GraspDistribution, GraspTaxonomy};
