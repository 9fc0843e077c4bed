//! Voxel-wise prediction of deformable registration error.
//!
//! The crate extracts registration-ensemble and intensity features from a
//! fixed/moving volume pair, pools them over physical boxes and regresses
//! the residual registration error (mm) with a random forest.

pub mod error;
pub mod eval;
pub mod features;
pub mod filter;
pub mod forest;
pub mod landmarks;
pub mod mhd;
pub mod pipeline;
pub mod pooling;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod table;
pub mod toyreg;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{warp, DisplacementField, Geometry, Volume};
