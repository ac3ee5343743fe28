//! Pipeline for turning multi-key-value interaction logs into
//! instruction-tuning datasets and scoring generative ranked-list output.
//!
//! Stages, each usable on its own:
//!
//! - [`ingest`]: parse raw `::`-delimited files, decode coded attributes,
//!   apply the minimum-activity filter, persist a catalog.
//! - [`sequence`] / [`builder`]: chronological per-user sequences,
//!   leave-one-out split, history truncation, candidate sampling, and the
//!   rendered train/test datasets.
//! - [`template`]: the Instruction/Input/Output text format and its
//!   line-delimited JSON serialization.
//! - [`augment`]: shuffle and mask data-augmentation strategies.
//! - [`eval`]: ranked-list output parsing and HR@K / NDCG@K / Error Rate.
//! - [`adapters`]: built-in prediction generators (oracle, identity, random,
//!   popularity) for end-to-end runs without a model.
//! - [`synth`]: deterministic synthetic raw data for tests and demos.
//!
//! Everything randomized draws from [`rng`] streams derived from a global
//! seed, a stage tag, and an entity key, so whole-pipeline runs are
//! byte-reproducible regardless of thread count.

pub mod adapters;
pub mod augment;
pub mod builder;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod rng;
pub mod sequence;
pub mod synth;
pub mod template;

pub use adapters::AdapterKind;
pub use augment::{AugmentationSpec, Strategy};
pub use builder::{BuildConfig, BuildOutput};
pub use error::{Error, Result};
pub use eval::{EvalOptions, MetricsReport, PredictionRecord};
pub use ingest::{Catalog, Gender, InteractionEvent, ItemRecord, UserRecord};
pub use sequence::{BehaviorSequence, CandidateSet, SplitOutcome, Splits};
pub use template::{InstructionSample, KeyRegistry, Lineage};

/// Version stamp recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
