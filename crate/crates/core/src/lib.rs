//! Subgroup discrimination auditing.
//!
//! Given a table of records and a model's binary prediction for each, find a
//! small set of key attributes and a group of rows whose favorable rate is far
//! below that of everyone else, then explain the group with a shallow decision
//! tree. An exhaustive conjunction search is included as a reference oracle.
//!
//! ```
//! use fairprobe::{encode, find_evidence, plant_synthetic, KMode, ObjectiveConfig, Predicate, SolverConfig};
//!
//! let syn = plant_synthetic(400, 6, 0, &[Predicate::equals("b0", "1")], 0.1, 0.9, 7).unwrap();
//! let fm = encode(&syn.data, true);
//! let obj = ObjectiveConfig { k: 1, alpha: 0.3, beta: 0.7, ..Default::default() };
//! let solver = SolverConfig { iterations: 300, ..Default::default() };
//! let ev = find_evidence(syn.data.fav(), &fm, &obj, &solver, KMode::Attributes).unwrap();
//! assert_eq!(ev.key_attributes, vec!["b0".to_string()]);
//! ```

pub mod cli;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod objective;
pub mod oracle;
pub mod par;
pub mod solver;

pub use cli::{audit, emit_dot, render_text, run, EvidenceReport, Mode, RunConfig, Status};
pub use dataset::{
    encode, load_csv, AttributeKind, AttributeSpec, ColumnKind, Dataset, FeatureMatrix, Value,
};
pub use distill::{fit_tree, translate, PrunedTree, Rule, Tree};
pub use error::{Error, Result};
pub use objective::{dscore_hard, expected_dscore, ObjectiveConfig, Weights};
pub use oracle::{enum_search, plant_synthetic, EnumResult, Predicate, Synthetic};
pub use par::Exec;
pub use solver::{find_evidence, optimize, Evidence, KMode, SolverConfig};
