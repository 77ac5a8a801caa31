//! Shape-conditioned object pose estimation on synthetic desk-scale data.
//!
//! The crate covers the full loop in one place: rotation algebra and angle
//! binning ([`rot`]), triangle meshes and point clouds ([`shape`]), a software
//! rasterizer ([`render`]), a reverse-mode autodiff engine ([`autodiff`]), the
//! pose network itself ([`model`]), synthetic dataset generation ([`datagen`]),
//! training and evaluation ([`train`]), pose-error metrics ([`metrics`]) and a
//! layered configuration plus CLI front end ([`config`], [`cli`]).
//!
//! Everything is CPU-only and deterministic: the same seed produces the same
//! dataset bytes, the same loss trajectory and the same checkpoint, regardless
//! of thread count (set `POSEFORGE_THREADS` to bound the worker pool).
//!
//! The runnable examples under `examples/` walk one capability each; the
//! `poseforge` binary wires the same library calls behind subcommands.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod render;
pub mod rot;
pub mod shape;
pub mod train;

pub use error::{Error, Result};
