//! Joint self-supervised denoising and two-region segmentation.
//!
//! Two denoising experts are trained on a single noisy image, each restricted
//! to one region of the current segmentation. Their squared residuals drive a
//! convex total-variation segmentation, solved with a primal-dual scheme, and
//! the two steps alternate until the energy stops decreasing.
//!
//! Module map:
//! - [`grid`]: images, masks, dual fields and the discrete operators.
//! - [`nn`]: dense tensors, convolutions with exact backprop, and ADAM.
//! - [`experts`]: constant, linear-filter and conv-net denoisers with
//!   region-masked checkerboard training.
//! - [`segmentation`]: fidelity maps, proximal steps, the primal-dual solver,
//!   energies and thresholding.
//! - [`driver`]: the alternating loops and their stopping rule.
//! - [`metrics`] and [`synth`]: Dice/PSNR/SSIM, noise and phantoms.
//! - [`io`]: PNG and PGM reading and writing.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod experts;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod segmentation;
pub mod synth;

pub use driver::{
    compose_denoised, initialize, run_joint, run_joint_accelerated, stop_check, InitMode, InitSpec, IterationReport,
    JointConfig, JointOutcome,
};
pub use error::{Error, Result};
pub use experts::{Expert, ExpertKind, TrainConfig, TrainedExpert};
pub use grid::{BoxRegion, DualField, GridSpec, Image, Mask, ScalarGrid};
pub use segmentation::{FidelityMap, PdConfig, PdOutcome, StepRule};
