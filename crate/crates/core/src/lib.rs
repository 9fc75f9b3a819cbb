//! Coarse-to-fine, text-guided vision token pruning over a dynamic image
//! pyramid.
//!
//! The crate is organised bottom-up:
//!
//! * [`raster`] and [`pyramid`] build the multi-resolution tile structure.
//! * [`toyattn`] is a small causal decoder stack used both as the teacher
//!   and as the student focus module, with attention-row extraction.
//! * [`distill`] holds the attention-distillation losses, their analytic
//!   gradients and a deterministic training loop.
//! * [`prune`] runs the level-by-level tile selection and token pruning.
//! * [`cost`] counts vision tokens and transformer FLOPs.
//! * [`eval`] scores localization recall, open-ended answers and builds
//!   unique object references from detection labels.

pub mod cost;
pub mod distill;
pub mod error;
pub mod eval;
pub mod prune;
pub mod pyramid;
pub mod raster;
pub mod toyattn;
pub mod util;

pub use error::{Error, Result};
