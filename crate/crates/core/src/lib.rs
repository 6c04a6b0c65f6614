//! Unsupervised correspondence and interpolation between organ-surface
//! meshes, with CT patch features and an evaluation suite.

pub mod autodiff;
pub mod corrnet;
pub mod geodesics;
pub mod losses;
pub mod meshkit;
pub mod metrics;
pub mod pipeline;
pub mod volumes;
