//! Rank identifiability and moment-based rank estimation for probabilistic tensor
//! factorizations (CP, Tucker, tensor-train and tensor-ring).
//!
//! The pieces, in the order data flows through them:
//!
//! - [`model`] and [`latent`] describe and simulate the generative models.
//! - [`moments`] estimates exact-sharing covariances and pure interaction terms.
//! - [`identifiability`] gives every observable as a monomial and decides whether the
//!   ranks can be recovered from them.
//! - [`estimators`] and [`pipeline`] turn pure terms into bootstrap rank estimates.
//! - [`oracle`] and [`diagnostics`] provide Monte-Carlo ground truth and SNR tools.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod identifiability;
pub mod latent;
pub mod model;
pub mod moments;
pub mod oracle;
pub mod pipeline;
pub mod seed;
pub mod sharing;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelSpec, ObservationModel, Prior, PriorFamily, Topology};
pub use moments::MomentTable;
pub use pipeline::{PipelineConfig, PipelineReport, RankEstimate};
pub use sharing::{MomentId, SharingSet};
pub use tensor::DenseTensor;
