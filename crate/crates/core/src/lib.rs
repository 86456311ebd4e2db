//! Global reflection-symmetry detection for noisy, partial 3D point clouds.
//!
//! The pipeline builds a graph Laplacian over the cloud, computes heat-kernel
//! signatures and nodal-sign vectors at ISS keypoints, matches mirror
//! candidates with an exact minimum-cost pairing, and estimates the symmetry
//! plane (unit normal v, offset ω) with a robust L2E objective optimized on
//! the unit sphere. A seeded synthetic generator and a Funk-style evaluation
//! harness support benchmark experiments.

pub mod cloud;
pub mod descriptors;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod plane;
pub mod spatial;
pub mod spectral;
pub mod synth;

pub use cloud::{normalize_cloud, PointCloud, PointLabel, RigidNormalization};
pub use error::{Error, Result};
pub use plane::{CorrespondenceSet, SymmetryPlane};
