//! The observer network: grouping, spatial encoder and decoder, latent
//! state estimation, the linear latent update, and multi-step rollout.

pub mod config;
pub mod decay;
pub mod forecast;
pub mod group;
pub mod layers;
pub mod model;

pub use config::{AConstraint, BVariant, Handoff, ObserverConfig};
pub use decay::{latent_error_decay, DecayReport};
pub use forecast::{forecast_sequence, latent_targets, rollout, InputSource, Rollout, StepRecord};
pub use group::{degroup, group};
pub use model::{Encoded, ObserverModel, Projection, StepOutput};
