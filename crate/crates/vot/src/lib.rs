//! Visual odometry from monocular video: a frozen toy patch encoder feeds a
//! time-space attention decoder whose camera-embedding states are regressed to
//! relative camera poses, trained on synthetic rendered sequences and scored
//! with unaligned trajectory metrics.
//!
//! Pose convention used everywhere: poses are world-from-camera, and relative
//! poses map frame k to frame k+1 via right-composition
//! (`abs[k+1] = abs[k] * rel[k]`).

pub mod ckpt;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod eval;
pub mod geometry;
pub mod head;
pub mod model;
pub mod numerics;
pub mod params;
pub mod train;
