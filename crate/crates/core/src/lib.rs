//! Partial-label learning with out-of-candidate examples.
//!
//! Training sets carry a candidate label set per example. Some examples are
//! corrupted: their true label is missing from the candidate set (closed-set)
//! or they belong to no known class at all (open-set). Training separates
//! the three kinds with a min-over-candidates loss on an ensemble of past
//! predictions and treats each kind differently.

pub mod config;
pub mod datagen;
pub mod disambiguation;
pub mod error;
pub mod io;
pub mod losses;
pub mod model;
pub mod report;
pub mod seeding;
pub mod selection;
pub mod synth;
pub mod trainer;

pub use config::{AblationSwitch, TrainConfig};
pub use datagen::{CandidateMask, Label, LabeledExample, PartialDataset, TruthType};
pub use error::{Error, Result};
pub use model::Mlp;
pub use trainer::{run_ablation, run_training, EpochMetrics, TrainOutcome};
