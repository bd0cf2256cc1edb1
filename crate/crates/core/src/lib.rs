//! Multi-relational attribute propagation (MrAP) for imputing missing
//! numeric node attributes in knowledge graphs.
//!
//! The pipeline:
//!
//! 1. [`ingest`] parses triple and attribute files, builds a seeded
//!    train/dev/test split and optionally subsamples the observed set.
//! 2. [`regression`] fits one simple linear model `y ≈ η·x + τ` per
//!    `(dependent type, independent type, oriented relation | inner)` path,
//!    weights it by the inverse residual variance, and derives the
//!    reverse-direction model analytically.
//! 3. [`propagation`] iterates a synchronous, damped weighted average of the
//!    incoming predictions for every missing slot, clamping observed ones.
//! 4. [`eval`] scores predictions per attribute type against the Global and
//!    Local mean-imputation baselines.

pub mod attributes;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod propagation;
pub mod regression;
pub mod synthetic;

pub use attributes::{AttrEntry, AttrKey, AttrStatus, AttributeTable, TypeSummary};
pub use error::{AttrError, DumpError, GraphError, IngestError, PropagationError, RegressionError};
pub use eval::{ablation_suite, baseline_global, baseline_local, evaluate, export_differences, EvalReport, EvalRow};
pub use graph::{build_graph, AttrTypeId, Direction, Edge, EntityId, KnowledgeGraph, OrientedRelation, RelationId};
pub use ingest::{parse_attributes, parse_triples, split_attributes, subsample_observed, Dataset, DatasetBundle, Split, SplitSpec};
pub use propagation::{aggregate, combine, fixed_point_oracle, ImputationReport, PropagationConfig, PropagationState, Propagator};
pub use regression::{
    build_registry, count_paths, extract_pairs, fit_simple_regression, AdmissionConfig, Link, ModelRegistry, PathFilter, PathKey,
    RegressionModel,
};
