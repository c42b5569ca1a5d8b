//! Discovery-oriented clustering of trial × feature matrices.
//!
//! The pipeline reduces each subject's matrix with PCA, fits full-covariance
//! Gaussian mixtures over a grid of component counts, selects the count by
//! mean BIC across seeded initializations, and then interprets the resulting
//! clusterings against rating tables and across subjects.
//!
//! Modules, bottom-up:
//!
//! - [`dataset`]: trial matrices, rating tables, CSV and PCM1 ingest.
//! - [`pca`]: SVD-based PCA with a deterministic sign convention.
//! - [`gmm`]: expectation-maximization for full-covariance mixtures.
//! - [`selection`]: BIC sweeps, Rand index, refit stability.
//! - [`interpret`]: overlap, Gaussian-KL NMI, discrete NMI, cosine of
//!   back-projected cluster means, top-label histograms.
//! - [`diagnostics`]: PCA sanity checks for few-samples/many-features data.
//! - [`synth`]: planted-cluster generator used as a validation oracle.

pub mod dataset;
pub mod diagnostics;
pub mod gmm;
pub mod interpret;
mod linalg;
pub mod pca;
pub mod seed;
pub mod selection;
pub mod synth;

pub use dataset::{RatingsTable, TrialMatrix};
pub use gmm::{GmmFit, GmmOptions, GmmParams, Posterior};
pub use pca::PcaModel;
