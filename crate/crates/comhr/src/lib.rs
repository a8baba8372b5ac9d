//! Relational core for multi-person 3D pose regression from multi-modal
//! cues, at desk scale.
//!
//! The crate builds per-person embeddings from visual, geometric, and pose
//! observations, wires them into a shared-topology hypergraph, regularizes
//! the feature space with intra- and cross-modal contrastive losses, runs
//! high-order message passing, and regresses kinematic parameters, all on a
//! reverse-mode differentiation substrate with a finite-difference gradient
//! checker. Synthetic crowd scenes and a perturbation harness take the
//! place of upstream vision models.

pub mod diffcore;
pub mod harness;
pub mod contrast;
pub mod hyperreason;
pub mod hypertopo;
pub mod metrics;
pub mod model;
pub mod nodeinit;
pub mod regressor;
pub mod scenegen;

pub use diffcore::{Graph, ParamSet, Tensor};
