//! Model components for monocular 3D semantic scene completion: dilated
//! directional state-space scans (the Skimba block family), decomposed 3D
//! convolution blocks, a voxel VAE with condition networks, latent diffusion,
//! segmentation losses and metrics, and full network assembly.

pub mod blocks;
pub mod camera;
pub mod diffusion;
pub mod error;
pub mod linear;
pub mod loss;
pub mod net;
pub mod scan;
pub mod vae;
pub mod voxel;

pub use error::{ModelError, Result};
pub use voxel::VoxelGrid;
