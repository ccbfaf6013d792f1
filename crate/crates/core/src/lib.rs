//! Patient-specific left-ventricle strain estimation from multi-view 2D
//! tracking data.
//!
//! The pipeline runs in stages: ingest a study bundle ([`study`]), optionally
//! track contours through an image sequence ([`registration`]), up-sample the
//! contours ([`contour`]), build a tetrahedral myocardium mesh ([`mesh`]),
//! fuse the per-view displacements into one 3D motion field ([`fusion`]) and
//! evaluate Green-Lagrange strain per element and AHA segment ([`strain`]).
//! [`phantom`] provides an analytic deforming annulus used as ground truth.

pub mod contour;
pub mod error;
pub mod fusion;
pub mod interp;
pub mod mesh;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod strain;
pub mod study;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
