//! Few-shot representation learning with side information.
//!
//! The crate provides the pieces of a contrastive fine-tuning pipeline that
//! can run and be verified at desk scale:
//!
//! - [`knowledge`] builds a category-by-category similarity ("knowledge")
//!   matrix from side information: attribute-model embeddings, binary
//!   attribute labels, or word embeddings.
//! - [`bank`] maintains per-category FIFO stores of ground-truth embeddings
//!   and derives clustered prototype centers.
//! - [`loss`] computes the projection head, the knowledge-weighted
//!   prototype contrastive loss (CCL) with its analytic gradient, the CPE
//!   proposal-contrastive baseline, and the joint training objective.
//! - [`counterfactual`] computes Grad-CAM attributions, counterfactual
//!   attribution maps, erasure masks, and masked augmented samples.
//! - [`toymodel`] is a tiny hand-differentiated convolutional classifier
//!   plus a synthetic shape dataset so the full pipeline runs in seconds.
//! - [`trainer`] orchestrates the two-stage protocol: base training, then
//!   fine-tuning with CCL, bank maintenance, and probabilistic
//!   counterfactual augmentation.
//! - [`bounds`] evaluates the closed-form generalization-bound expressions
//!   and checks their monotonicity/comparison properties on grids.

pub mod bank;
pub mod bounds;
pub mod counterfactual;
pub mod error;
pub mod io;
pub mod kmeans;
pub mod knowledge;
pub mod loss;
pub mod math;
pub mod rng;
pub mod toymodel;
pub mod trainer;

pub use error::{Error, Result};
