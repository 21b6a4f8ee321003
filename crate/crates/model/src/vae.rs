//! Voxel variational autoencoder and the encoder-shaped condition networks.
//!
//! The encoder one-hot embeds labels and downsamples twice (factor f = 4
//! total) into a latent grid; mean/log-variance heads parameterize the
//! posterior and z is drawn by reparameterization. The decoder mirrors with
//! two upsample blocks and a 1x1x1 classifier head. Condition networks reuse
//! the encoder topology so their outputs land in the latent geometry.

use rand::Rng;
use skimba_tensor::{sample_standard_normal, Param, Scalar, Tensor};

use crate::blocks::{Conv3dLayer, DownsampleBlock, UpsampleBlock};
use crate::error::{ModelError, Result};
use crate::voxel::VoxelGrid;

/// Spatial reduction factor of the encoder (two halvings).
pub const DOWNSAMPLE_FACTOR: usize = 4;

/// Posterior parameters and a sample, all shaped (c_lat, l, w, h).
pub struct LatentRep<E: Scalar> {
    pub mean: Tensor<E>,
    pub log_var: Tensor<E>,
    pub z: Tensor<E>,
}

pub struct VaeConfig {
    pub class_count: usize,
    pub channels: [usize; 2],
    pub latent_channels: usize,
}

pub struct Vae<E: Scalar> {
    pub config: VaeConfig,
    down1: DownsampleBlock<E>,
    down2: DownsampleBlock<E>,
    mean_head: Conv3dLayer<E>,
    log_var_head: Conv3dLayer<E>,
    up1: UpsampleBlock<E>,
    up2: UpsampleBlock<E>,
    classifier: Conv3dLayer<E>,
}

impl<E: Scalar> Vae<E> {
    pub fn new(config: VaeConfig, rng: &mut impl Rng) -> Self {
        let [ch0, ch1] = config.channels;
        let c = config.class_count;
        let lat = config.latent_channels;
        Vae {
            down1: DownsampleBlock::new("vae/enc/down1", c, ch0, rng),
            down2: DownsampleBlock::new("vae/enc/down2", ch0, ch1, rng),
            mean_head: Conv3dLayer::new("vae/enc/mean", ch1, lat, [1; 3], [1; 3], [0; 3], [1; 3], true, rng),
            log_var_head: Conv3dLayer::new("vae/enc/log_var", ch1, lat, [1; 3], [1; 3], [0; 3], [1; 3], true, rng),
            up1: UpsampleBlock::new("vae/dec/up1", lat, ch1, rng),
            up2: UpsampleBlock::new("vae/dec/up2", ch1, ch0, rng),
            classifier: Conv3dLayer::new("vae/dec/classifier", ch0, c, [1; 3], [1; 3], [0; 3], [1; 3], true, rng),
            config,
        }
    }

    fn check_grid(&self, grid: &VoxelGrid) -> Result<()> {
        if grid.class_count != self.config.class_count {
            return Err(ModelError::ChannelMismatch {
                expected: self.config.class_count,
                got: grid.class_count,
            });
        }
        if grid.dims.iter().any(|&d| d % DOWNSAMPLE_FACTOR != 0 || d == 0) {
            return Err(ModelError::Geometry(format!(
                "grid dims {:?} must be positive multiples of {DOWNSAMPLE_FACTOR}",
                grid.dims
            )));
        }
        Ok(())
    }

    /// Posterior parameters of a voxel grid (no sampling).
    pub fn encode_params(&self, grid: &VoxelGrid) -> Result<(Tensor<E>, Tensor<E>)> {
        self.check_grid(grid)?;
        let x = grid.one_hot::<E>();
        let h = self.down1.forward(&x)?;
        let h = self.down2.forward(&h)?;
        Ok((self.mean_head.forward(&h)?, self.log_var_head.forward(&h)?))
    }

    /// Encode with reparameterized sampling: z = mean + exp(log_var / 2) * eta.
    pub fn encode(&self, grid: &VoxelGrid, rng: &mut impl Rng) -> Result<LatentRep<E>> {
        let (mean, log_var) = self.encode_params(grid)?;
        let eta = Tensor::from_vec(
            mean.shape(),
            (0..mean.len()).map(|_| E::from_f64(sample_standard_normal(rng))).collect(),
        )?;
        let std = log_var.mul_scalar(E::from_f64(0.5))?.exp()?;
        let z = mean.add(&std.mul(&eta)?)?;
        Ok(LatentRep { mean, log_var, z })
    }

    /// Deterministic-mode encode (eta = 0): z = mean.
    pub fn encode_deterministic(&self, grid: &VoxelGrid) -> Result<LatentRep<E>> {
        let (mean, log_var) = self.encode_params(grid)?;
        Ok(LatentRep { z: mean.clone(), mean, log_var })
    }

    /// Decode a latent into a (C, L, W, H) class-logit volume.
    pub fn decode(&self, z: &Tensor<E>) -> Result<Tensor<E>> {
        if z.rank() != 4 || z.shape()[0] != self.config.latent_channels {
            return Err(ModelError::Geometry(format!(
                "latent shape {:?} incompatible with {} latent channels",
                z.shape(),
                self.config.latent_channels
            )));
        }
        let h = self.up1.forward(z)?;
        let h = self.up2.forward(&h)?;
        self.classifier.forward(&h)
    }

    /// Latent spatial extents for a grid of `dims`.
    pub fn latent_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        [dims[0] / DOWNSAMPLE_FACTOR, dims[1] / DOWNSAMPLE_FACTOR, dims[2] / DOWNSAMPLE_FACTOR]
    }

    pub fn latent_shape(&self, dims: [usize; 3]) -> Vec<usize> {
        let d = self.latent_dims(dims);
        vec![self.config.latent_channels, d[0], d[1], d[2]]
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.down1.collect_params(out);
        self.down2.collect_params(out);
        self.mean_head.collect_params(out);
        self.log_var_head.collect_params(out);
        self.up1.collect_params(out);
        self.up2.collect_params(out);
        self.classifier.collect_params(out);
    }

    pub fn params(&self) -> Vec<Param<E>> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }
}

/// KL divergence of N(mean, exp(log_var)) from the standard normal, summed
/// over latent elements: 0.5 * sum(exp(log_var) + mean^2 - 1 - log_var).
pub fn kl_divergence<E: Scalar>(mean: &Tensor<E>, log_var: &Tensor<E>) -> Result<Tensor<E>> {
    let var = log_var.exp()?;
    let mean_sq = mean.mul(mean)?;
    let inner = var.add(&mean_sq)?.add_scalar(-E::ONE)?.sub(log_var)?;
    inner.sum_all()?.mul_scalar(E::from_f64(0.5)).map_err(Into::into)
}

/// Encoder-shaped network mapping an extracted feature volume into the
/// latent geometry. Independent parameters from the VAE encoder.
pub struct ConditionNetwork<E: Scalar> {
    down1: DownsampleBlock<E>,
    down2: DownsampleBlock<E>,
    head: Conv3dLayer<E>,
    pub out_channels: usize,
}

impl<E: Scalar> ConditionNetwork<E> {
    pub fn new(prefix: &str, in_channels: usize, channels: [usize; 2], out_channels: usize, rng: &mut impl Rng) -> Self {
        ConditionNetwork {
            down1: DownsampleBlock::new(&format!("{prefix}/down1"), in_channels, channels[0], rng),
            down2: DownsampleBlock::new(&format!("{prefix}/down2"), channels[0], channels[1], rng),
            head: Conv3dLayer::new(&format!("{prefix}/head"), channels[1], out_channels, [1; 3], [1; 3], [0; 3], [1; 3], true, rng),
            out_channels,
        }
    }

    pub fn forward(&self, features: &Tensor<E>) -> Result<Tensor<E>> {
        if features.rank() != 4 {
            return Err(ModelError::Geometry(format!(
                "condition network expects a rank-4 volume, got {:?}",
                features.shape()
            )));
        }
        if features.shape()[1..].iter().any(|&d| d % DOWNSAMPLE_FACTOR != 0 || d == 0) {
            return Err(ModelError::Geometry(format!(
                "feature extents {:?} must be positive multiples of {DOWNSAMPLE_FACTOR}",
                &features.shape()[1..]
            )));
        }
        let h = self.down1.forward(features)?;
        let h = self.down2.forward(&h)?;
        self.head.forward(&h)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.down1.collect_params(out);
        self.down2.collect_params(out);
        self.head.collect_params(out);
    }
}
