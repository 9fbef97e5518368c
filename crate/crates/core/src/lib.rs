//! Visual-servoing peg-in-hole alignment.
//!
//! The crate is a deterministic, kinematic stand-in for a multi-camera
//! peg-in-hole cell. It contains:
//!
//! * [`geometry`]: rigid transforms and pinhole cameras,
//! * [`scene`]: hole/peg specifications and randomized scene sampling,
//! * [`heatmap`]: Gaussian keypoint heatmaps, argmax decoding and the
//!   overlay/augmentation pipeline used to build training data,
//! * [`estimator`]: a noisy oracle point estimator and detection-accuracy curves,
//! * [`servo`]: the multi-view least-squares visual servo loop,
//! * [`baselines`]: random search, spiral search and the calibrated direct move,
//! * [`world`]: the simulated cell (clock, motion, contact and insertion),
//! * [`bench`]: the Monte-Carlo harness, significance testing and reports.
//!
//! A narrative guide with runnable snippets lives in the `book/` directory of
//! the repository.

pub mod baselines;
pub mod bench;
pub mod config;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod heatmap;
pub mod scene;
pub mod servo;
pub mod world;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, CameraModel, RigidTransform};
pub use heatmap::{Heatmap, HeatmapParams, PixelPoint};

/// Seeded generator used everywhere randomness is consumed.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds a [`SimRng`] from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}

// The guide's chapters are compiled as doctests so the book cannot drift
// from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/heatmaps.md")]
    mod heatmaps {}
    #[doc = include_str!("../../../book/src/servo.md")]
    mod servo {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
}
