//! Active learning with a margin-penalised hypersphere prototype classifier.
//!
//! The crate is organised bottom-up:
//!
//! - [`hypersphere`]: normalisation, cosines and the angular margin.
//! - [`classifier`]: the prototype model, its loss and analytic gradients.
//! - [`train`]: minibatch optimisation and accuracy.
//! - [`acquisition`]: confidence scores, top-K and greedy coreset selection.
//! - [`data`]: datasets, file formats, splits and synthetic blobs.
//! - [`engine`]: pool bookkeeping, rounds, experiments and learning curves.
//! - [`session`]: the human-in-the-loop state machine used by the service.

pub mod acquisition;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod engine;
pub mod error;
pub mod hypersphere;
pub mod seed;
pub mod session;
pub mod train;

pub use acquisition::{ConfidenceScore, Strategy};
pub use checkpoint::Checkpoint;
pub use classifier::{Example, Gradients, HyperParams, ModelParams, OptimizerKind};
pub use data::{Dataset, Sample, SynthConfig};
pub use engine::{AlConfig, LearningCurve, PoolState, RoundRecord};
pub use error::{Error, Result};
pub use hypersphere::UnitVector;
pub use session::{Phase, Session};
pub use train::TrainStats;
