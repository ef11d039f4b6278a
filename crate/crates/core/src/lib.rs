//! Model-data alignment audit for tabular binary classification.
//!
//! Compares a data-level ranking of features (absolute standardized mean
//! difference between the outcome groups) with the feature rankings of a
//! decision tree and of KernelSHAP attributions for a small neural network,
//! and summarizes agreement with Spearman's rank correlation.

pub mod alignment;
pub mod data;
pub mod effect_size;
pub mod error;
pub mod fixtures;
pub mod mlp;
pub mod report;
pub mod serde_float;
pub mod shap;
pub mod tree;

pub use alignment::{
    build_alignment_report, spearman_closed_form, spearman_rho, to_ranks, Agreement, AlignmentReport, ImportanceVector,
    Method, Ranking,
};
pub use data::{load_csv, CsvOptions, Dataset};
pub use effect_size::{smd, EffectSize, EffectSizeTable};
pub use error::{AuditError, Result};
pub use mlp::{fit_mlp, MlpConfig, MlpModel};
pub use report::{run_audit, AuditConfig, AuditOutcome, ModelSelector, SmdScope};
pub use shap::{exact_shapley, explain_instance, BatchModel, ShapConfig};
pub use tree::{fit_tree, tree_importances, TreeConfig, TreeModel};
