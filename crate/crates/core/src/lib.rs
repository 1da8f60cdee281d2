//! Teacher-student laboratory for over-parametrized two-layer networks.
//!
//! The crate trains students `f_W(x) = (1/m) Σ ‖w_i‖·σ(⟨w_i, x⟩)` against
//! absolute-value teachers `f*(x) = Σ a_i |⟨w_i*, x⟩|` on Gaussian inputs,
//! splits the population loss exactly into per-order tensor-decomposition
//! terms through the Hermite expansion of the activations, runs an
//! infinite-width particle surrogate, and builds block-Hadamard hardness
//! instances for comparing trained networks with random-feature baselines.
//!
//! Module map:
//! - [`model`]: teachers, students, datasets.
//! - [`spectrum`]: Hermite coefficients, per-order losses, population gradients.
//! - [`trainer`]: empirical gradients and two-stage truncated gradient descent.
//! - [`meanfield`]: particle clouds, truncated initialization, sign symmetry.
//! - [`reduction`]: ReLU-teacher to abs-teacher reduction by least squares.
//! - [`hardness`]: Hadamard-block instances, boolean Fourier quantities, baselines.
//! - [`harness`]: configuration, CSV traces, SVG plots, canned experiments, CLI.

pub mod error;
pub mod hardness;
pub mod harness;
pub mod meanfield;
pub mod model;
pub mod reduction;
pub mod spectrum;
pub mod trainer;

mod numeric;

pub use error::{Error, Result};
pub use model::{Activation, Dataset, StudentEnsemble, TeacherMode, TeacherNetwork};
pub use spectrum::{HermiteTable, LossBreakdown};
pub use trainer::{GradientMode, TraceRecord, TrainConfig};
