//! Implicit distribution fields for surface reconstruction.
//!
//! Instead of regressing one occupancy value per query point, the model
//! predicts a Gaussian over a *smooth* occupancy (a sigmoid of the signed
//! distance), samples a coarse value from it, and corrects that sample with a
//! small residual network. The predicted spread is supervised toward a
//! designed distribution whose standard deviation peaks on the surface.
//!
//! Module map:
//!
//! - [`geometry`]: analytic signed-distance shapes, triangle meshes, surface
//!   projection and training-point sampling.
//! - [`field`]: smooth occupancy, the designed target distribution and the
//!   closed-form Gaussian KL divergence.
//! - [`nn`]: dense networks with exact reverse-mode gradients, the
//!   reparameterized sampler and an Adam optimizer.
//! - [`model`]: feature extraction, distribution predictor, occupancy
//!   rectifier and the deterministic baseline.
//! - [`train`]: losses, the two-phase schedule and checkpoints.
//! - [`extract`]: dense grid evaluation, marching cubes and OBJ/PLY I/O.
//! - [`metrics`]: Chamfer, P2S, normal consistency and the uncertainty
//!   profile.
//! - [`cli`]: experiment configuration and the command implementations behind
//!   the `dif` binary.

// `!(x > 0.0)` is how NaN gets rejected alongside the bound
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod extract;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
pub use field::{DesignParams, OccDistribution, SmoothOccParams};
pub use geometry::{Aabb, Shape, TriMesh, Vec3};
