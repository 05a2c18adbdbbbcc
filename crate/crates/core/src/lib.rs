//! Latent point-diffusion refinement of corrupted 3D point clouds.
//!
//! The pipeline: a voxel phantom is turned into a surface point cloud
//! (marching cubes + Poisson disk sampling), a hierarchical VAE encodes each
//! cloud into a global latent vector and a local latent point cloud, two
//! conditional denoising diffusion models refine those latents given the
//! latents of a corrupted input, and the decoded cloud is post-processed
//! (smoothing, densification, outlier removal) back in world coordinates.
//!
//! Everything is framework-free f64: tensors, reverse-mode autodiff, and the
//! Adam optimizer live in [`numerics`]. All randomness flows through
//! explicitly seeded generators, so every run is bit-reproducible.

pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod nets;
pub mod numerics;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
pub mod synthdata;
pub mod vae;

pub use error::{Error, Result};
