//! Training, sampling, and diagnostics for ODE-based generative models
//! whose forward coupling is learned to straighten generative trajectories.
//!
//! The crate is organized around small well-separated modules:
//!
//! - [`net`]: feedforward networks with exact reverse-mode gradients,
//!   Adam, and EMA tracking
//! - [`coupling`]: independent and learned Gaussian forward couplings
//! - [`interpolant`]: linear and variance-preserving forward paths
//! - [`loss`]: reconstruction and joint coupling objectives
//! - [`solver`]: Euler, Heun, and Dormand-Prince integration with exact
//!   NFE accounting
//! - [`metrics`]: curvature, intersection diagnostics, sliced Wasserstein
//!   distance, latent statistics
//! - [`distill`]: one-step student training from a teacher ODE
//! - [`data`]: synthetic 2D datasets, CSV ingestion, normalization
//! - [`checkpoint`]: the binary parameter container
//! - [`config`]: run configuration and validation
//! - [`train`]: the training loop tying the above together

pub mod checkpoint;
pub mod config;
pub mod coupling;
pub mod data;
pub mod distill;
pub mod error;
pub mod interpolant;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod solver;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, Role};
pub use config::{CouplingConfig, DatasetSpec, RunConfig};
pub use coupling::{CouplingSample, EncoderParams};
pub use data::Dataset;
pub use distill::PairSet;
pub use error::{Error, Result};
pub use interpolant::InterpolantKind;
pub use linalg::Matrix;
pub use loss::{Beta, LossBreakdown, Parameterization};
pub use metrics::{CurvatureReport, IntersectionEstimate};
pub use net::{Activation, AdamState, EmaState, GradientSet, NetworkParams};
pub use solver::{SolverConfig, SolverKind, Trajectory, VectorField};
pub use train::TrainResult;
