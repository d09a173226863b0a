//! Confounded MDPs: ground truth, observational data and nominal models.

mod continuous;
mod dataset;
mod nominal;
mod tabular;

pub use continuous::{
    clip_action, ConfoundedDynamics, ContinuousCmdpEnv, Episode, EpisodeSummary, StepOutcome,
};
pub use dataset::{
    Batch, DatasetMetadata, DiscreteSizes, RewardBounds, Transition, TransitionDataset,
    DATASET_FORMAT,
};
pub use nominal::{estimate_nominal, NominalModel};
pub use tabular::{TabularCmdp, TabularPolicy};
