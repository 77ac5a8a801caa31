//! Minimal reverse-mode autodiff over dense f64 tensors.
//!
//! The design is a flat tape: [`Graph`] owns an append-only arena of nodes,
//! every operation runs eagerly during the forward pass and records what it
//! needs for the backward pass (argmax indices, normalized activations), and
//! [`Graph::backward`] walks the arena once in reverse append order, which is
//! already a topological order. Parameters live outside the graph in a
//! [`ParamStore`] together with their gradients and Adam state; a graph is
//! rebuilt per step and borrows parameter values by id.
//!
//! Shape mismatches and similar programmer errors panic with both shapes in
//! the message; non-finite values anywhere in a forward pass are a hard
//! failure. User-triggerable conditions (a non-finite loss, bad learning
//! rate, malformed checkpoint) surface as [`crate::error::Error`].

mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Grads, Graph, NodeId};
pub use params::{AdamConfig, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
