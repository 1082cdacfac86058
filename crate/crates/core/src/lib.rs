//! Video-style sequence forecasting with a convolutional encoder, a latent
//! state that evolves as `xi_k = A ∘ xi_{k-1} + B(x_{k-1})`, and a transposed
//! convolutional decoder.

mod binio;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod learning;
pub mod observer;
pub mod tensor;

pub use error::{Error, Result};
