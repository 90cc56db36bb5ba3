//! Statistical priors over human joint-angle pose vectors.
//!
//! The crate fits and evaluates several prior families over axis-angle pose
//! vectors (22 joints x 3 components by default): a multivariate normal,
//! independent per-dimension gammas, a Gaussian mixture fitted by EM, a
//! mixture over frame-to-frame motion deltas, soft box joint limits, and a
//! small variational autoencoder whose latent mean acts as an energy. Every
//! prior exposes a log-density and its analytic gradient, which the
//! [`recovery`] module uses to regularize noisy pose estimates.
//!
//! The [`pca`] module provides the principal-component diagnostic: project
//! poses onto the leading covariance eigenvector, fit a 1D normal, and
//! measure how much probability it places outside the feasible range.
//!
//! Batch loops run on rayon when the `parallel` feature is enabled (the
//! default). Results are combined in input order, so outputs are bitwise
//! identical with and without the feature.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod par;
pub mod pca;
pub mod posedata;
pub mod priors;
pub mod recovery;
pub mod special;
pub mod vae;

pub use error::{Error, Result};
pub use posedata::{MotionSequence, PoseDataset, PoseVector, RotationMatrixSet, TemporalDelta};
pub use priors::{Prior, PriorModel};
