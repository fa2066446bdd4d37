//! Weakly-supervised spatio-temporal action localization by discriminative
//! clustering.
//!
//! Person tracks are cut into short tracklets, each tracklet is assigned to an
//! action class (or background) and a linear classifier is learned jointly
//! with the assignment. Every kind of supervision, from video-level tags to
//! dense boxes, is expressed as a set of linear constraints on the assignment
//! matrix, and the relaxed problem is solved by block-coordinate Frank-Wolfe.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the synthetic
//! benchmark and the command line live in the `actloc` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod constraints;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod linalg;
pub mod lmo;
pub mod model;
pub mod objective;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, FrameSpan};
pub use model::{ActionInstance, Dataset, Detection, Keyframe, Track, Tracklet, Video};

/// Column of the assignment matrix reserved for tracklets that belong to no
/// action.
pub const BACKGROUND: usize = 0;

/// Default tracklet length in frames.
pub const TRACKLET_FRAMES: u32 = 8;
