//! Zero-shot evaluation, metrics, the variant matrix, experiment configs and
//! results tables.

pub mod config;
pub mod eval;
pub mod gradsuite;
pub mod matrix;
pub mod metrics;
pub mod table;
pub mod variants;

pub use config::ExperimentConfig;
pub use eval::{avg_z, evaluate_swapped, evaluate_zero_shot, EvalReport, AVG_Z};
pub use matrix::{run_variant_matrix, MatrixOutcome};
pub use metrics::{accuracy, evaluate_dataset, token_f1};
pub use table::ResultsTable;
pub use variants::{Variant, VariantSpec};
