//! Generative design of multi-lattice transition regions.
//!
//! The crate bundles everything needed to go from a set of 50×50 lattice unit
//! cells to a quantitative study of latent-space interpolations:
//!
//! * [`dataset`]: unit-cell data model, synthetic generator, `.lmd` file format.
//! * [`homogenize`]: periodic finite-element homogenization (plane stress) and
//!   min-max stiffness normalization.
//! * [`vae`]: geometry-only and hybrid (geometry + stiffness) convolutional VAEs,
//!   training loop and checkpoints.
//! * [`latent`]: latent statistics, interpolation, standard-deviation sweeps and
//!   k-means clustering of encodings.
//! * [`metrics`]: geometric smoothness (3D Sobel gradients) and stiffness
//!   continuity of a transition region.
//! * [`analysis`]: OLS with interaction term and PCA projection.
//! * [`render`]: dependency-free SVG/PGM/CSV writers used by the CLI.

// NaN must fail validation, so several checks are written as `!(x >= lo)`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod homogenize;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod vae;

pub use analysis::{ols_fit, pca_project, significance_table, RegressionDesign, RegressionResult};
pub use dataset::{
    generate_synthetic_dataset, load_dataset, save_dataset, split_dataset, CellRecord, Dataset,
    Family, SplitSpec, UnitCell, CELL_PIXELS, CELL_SIZE,
};
pub use error::{Error, Result};
pub use homogenize::{
    homogenize_cell, normalize_stiffness, stiffness_stats, MaterialModel, StiffnessStats,
    StiffnessTensor,
};
pub use latent::{
    cluster_latent, decode_transition, encode_cell, interpolate_linear, latent_stats,
    mesh_interpolate, run_sweep, sweep_endpoints, LatentStats, SweepConfig, SweepRecord,
    TransitionRegion, TransitionSpec,
};
pub use metrics::{geometric_smoothness, stiffness_continuity, transition_stiffness};
pub use vae::{Architecture, ModelCheckpoint, TrainConfig, Vae};
