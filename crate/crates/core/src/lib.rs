//! Differentiable 3D Gaussian splatting with continuous prior distillation.
//!
//! The crate renders clouds of anisotropic Gaussians with a tile-based,
//! depth-sorted alpha blender, back-propagates image-space losses to every
//! Gaussian parameter analytically, and trains clouds from sparse views
//! while distilling a pluggable image fixer into the reconstruction.

pub mod ape;
pub mod config;
pub mod error;
pub mod experiment;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod posemath;
pub mod prior;
pub mod renderer;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
pub use image::ImageBuffer;
