//! Bootstrapped entity set expansion with adversarially learned expansion
//! boundaries.
//!
//! A GNN encoder + GRU decoder generator proposes new entities for every
//! seed category, one bootstrapping iteration at a time. Each iteration owns
//! a multi-class discriminator that is trained against the generator and then
//! frozen; every frozen discriminator keeps rewarding (or penalising) the
//! generator's expansions for its own iteration for the rest of the run.
//!
//! Module map:
//!
//! * [`numerics`]: dense tensors, reverse-mode tape, Adam / RMSProp.
//! * [`graph`]: immutable entity–pattern bipartite graph.
//! * [`generator`]: encoder, decoder, expansion distributions, expansion state.
//! * [`discriminator`]: boundary classifier.
//! * [`training`]: pre-training, local adversarial rounds, full runs.
//! * [`data`]: dataset files, n-gram pattern extraction, synthetic corpora.
//! * [`eval`]: P@K, precision–throughput curves, run aggregation, baseline.

pub mod checkpoint;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod generator;
pub mod graph;
pub mod layers;
pub mod numerics;
pub mod training;

pub use data::{Dataset, SyntheticSpec};
pub use discriminator::{DiscriminatorConfig, DiscriminatorModel};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use generator::{ExpansionState, GeneratorConfig, GeneratorModel};
pub use graph::BipartiteGraph;
pub use numerics::{ParamStore, Tape, Tensor, Var};
pub use training::{RefiningMode, RunArtifact, TrainingConfig};

/// Dense entity index into a dataset's entity vocabulary.
pub type EntityId = usize;
/// Dense pattern index into a dataset's pattern vocabulary.
pub type PatternId = usize;
/// Index of a seed category.
pub type CategoryId = usize;
