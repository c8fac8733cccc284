//! Salient-object detection on a tape-based autodiff engine, small enough to
//! audit end to end.
//!
//! The crate is organized around one [`tensor::Graph`] per forward/backward
//! pass:
//!
//! - [`tensor`] — NCHW tensors, the op tape, reverse-mode gradients, RMSprop.
//! - [`wavelet`] — single-level 2-D Haar analysis/synthesis as graph ops.
//! - [`attention`] — channel and spatial gating blocks shared by the stages.
//! - [`localizer`] — cross-level gating of the two deepest features plus the
//!   area-proportion head and its size bins.
//! - [`detail`] — proportion-routed multi-kernel extraction on the shallowest
//!   feature.
//! - [`context`] — wavelet-domain cross-level attention between the two
//!   middle features.
//! - [`losses`] — graph-built training losses (BCE, soft IoU, soft F-measure,
//!   MSE) and their fixed-order total.
//! - [`metrics`] — scalar evaluation metrics (MAE, F-measure curve, E/S
//!   measures) over plain slices.
//! - [`model`] — the assembled network, its training step, and checkpoints.
//! - [`config`] — flat `key = value` run configuration with byte-stable echo.
//! - [`data`] — synthetic figure/ground scenes, PNG I/O, joint augmentation.
//! - [`gradcheck`] — finite-difference verification of every gradient path.
//! - [`train`] — seeded training loop with loss log, checkpoints, and resume.
//! - [`eval`] — parallel directory scoring into byte-stable CSV reports.

pub mod attention;
pub mod config;
pub mod context;
pub mod data;
pub mod detail;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod localizer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
