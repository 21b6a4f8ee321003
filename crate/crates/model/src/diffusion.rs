//! Forward noising, the epsilon-prediction objective, the condition/noise
//! fuse block, and the ancestral sampler.

use rand::Rng;
use skimba_tensor::{sample_standard_normal, Param, Scalar, Tensor};

use crate::blocks::{Conv3dLayer, Mscb};
use crate::error::{ModelError, Result};
use crate::linear::Linear;

/// Default step count of the sampler.
pub const DEFAULT_STEPS: usize = 100;
/// Default linear-schedule endpoints. The usual thousand-step 1e-4..2e-2 ramp
/// scaled by 10x so the same total noise budget fits in 100 steps
/// (alpha_bar_T stays well under 0.05).
pub const DEFAULT_BETA_START: f64 = 1e-3;
pub const DEFAULT_BETA_END: f64 = 2e-1;

/// Linear variance schedule with cached products.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 || !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(ModelError::Config(format!(
                "invalid schedule: steps {steps}, betas {beta_start}..{beta_end}"
            )));
        }
        let mut betas = Vec::with_capacity(steps);
        for t in 0..steps {
            betas.push(beta_start + (beta_end - beta_start) * t as f64 / (steps - 1) as f64);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { steps, betas, alphas, alpha_bars })
    }

    pub fn default_schedule() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap()
    }

    /// Cumulative product alpha_bar_t with alpha_bar_0 := 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, for 1 <= t <= T.
pub fn forward_diffuse<E: Scalar>(
    schedule: &NoiseSchedule,
    x0: &Tensor<E>,
    t: usize,
    eps: &Tensor<E>,
) -> Result<Tensor<E>> {
    if t == 0 || t > schedule.steps {
        return Err(ModelError::Config(format!(
            "timestep {t} out of range 1..={}",
            schedule.steps
        )));
    }
    if eps.shape() != x0.shape() {
        return Err(ModelError::Geometry(format!(
            "noise shape {:?} differs from x0 shape {:?}",
            eps.shape(),
            x0.shape()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let signal = x0.mul_scalar(E::from_f64(ab.sqrt()))?;
    let noise = eps.mul_scalar(E::from_f64((1.0 - ab).sqrt()))?;
    signal.add(&noise).map_err(Into::into)
}

/// A denoising network: predicts the injected noise from (x_t, t, condition).
pub trait Denoiser<E: Scalar> {
    fn predict(&self, x_t: &Tensor<E>, t: usize, cond: &Tensor<E>) -> Result<Tensor<E>>;
}

/// One training-objective draw: sample t uniformly, draw eps, return
/// ||eps - eps_theta(x_t, t, cond)||^2 averaged over elements.
pub fn denoise_loss<E: Scalar, D: Denoiser<E> + ?Sized>(
    network: &D,
    schedule: &NoiseSchedule,
    x0: &Tensor<E>,
    cond: &Tensor<E>,
    rng: &mut impl Rng,
) -> Result<Tensor<E>> {
    let t = rng.gen_range(1..=schedule.steps);
    let eps = Tensor::from_vec(
        x0.shape(),
        (0..x0.len()).map(|_| E::from_f64(sample_standard_normal(rng))).collect(),
    )?;
    denoise_loss_at(network, schedule, x0, cond, t, &eps)
}

/// The objective at a fixed (t, eps) probe; used by evaluation and tests.
pub fn denoise_loss_at<E: Scalar, D: Denoiser<E> + ?Sized>(
    network: &D,
    schedule: &NoiseSchedule,
    x0: &Tensor<E>,
    cond: &Tensor<E>,
    t: usize,
    eps: &Tensor<E>,
) -> Result<Tensor<E>> {
    let x_t = forward_diffuse(schedule, x0, t, eps)?;
    let pred = network.predict(&x_t, t, cond)?;
    let diff = eps.sub(&pred)?;
    diff.mul(&diff)?.mean_all().map_err(Into::into)
}

/// Ancestral sampling from pure noise: T denoiser evaluations,
/// x_{t-1} = (x_t - beta_t/sqrt(1-alpha_bar_t) eps_theta) / sqrt(alpha_t)
/// + sqrt(beta_t) eta, with eta = 0 at the final step. Graph-free.
pub fn sample<E: Scalar, D: Denoiser<E> + ?Sized>(
    network: &D,
    schedule: &NoiseSchedule,
    cond: &Tensor<E>,
    latent_shape: &[usize],
    rng: &mut impl Rng,
) -> Result<Tensor<E>> {
    let mut x = Tensor::<E>::from_vec(
        latent_shape,
        (0..latent_shape.iter().product())
            .map(|_| E::from_f64(sample_standard_normal(rng)))
            .collect(),
    )?;
    for t in (1..=schedule.steps).rev() {
        let eps_hat = network.predict(&x, t, cond)?.detach();
        let ab = schedule.alpha_bar(t);
        let beta = schedule.beta(t);
        let coeff = E::from_f64(beta / (1.0 - ab).sqrt());
        let mean = x
            .sub(&eps_hat.mul_scalar(coeff)?)?
            .mul_scalar(E::from_f64(1.0 / schedule.alpha(t).sqrt()))?;
        x = if t > 1 {
            let eta = Tensor::from_vec(
                latent_shape,
                (0..mean.len()).map(|_| E::from_f64(sample_standard_normal(rng))).collect(),
            )?;
            mean.add(&eta.mul_scalar(E::from_f64(beta.sqrt()))?)?.detach()
        } else {
            mean.detach()
        };
    }
    Ok(x)
}

/// Sinusoidal embedding of an integer timestep.
pub fn timestep_embedding<E: Scalar>(t: usize, dim: usize) -> Tensor<E> {
    let half = dim / 2;
    let mut data = vec![E::ZERO; dim];
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        let angle = t as f64 * freq;
        data[i] = E::from_f64(angle.sin());
        data[half + i] = E::from_f64(angle.cos());
    }
    Tensor::from_vec(&[dim], data).unwrap()
}

enum FuseConv<E: Scalar> {
    Mscb(Mscb<E>),
    Plain(Conv3dLayer<E>),
}

/// Fuses the noisy latent with conditioning features: channel concatenation,
/// a broadcast timestep embedding, then an effective-5 MSCB (or a plain
/// 1x1x1 convolution when MSCB is ablated).
pub struct MscbFuse<E: Scalar> {
    time_proj: Linear<E>,
    conv: FuseConv<E>,
    embed_dim: usize,
    in_channels: usize,
    pub out_channels: usize,
}

impl<E: Scalar> MscbFuse<E> {
    pub fn new(
        prefix: &str,
        latent_channels: usize,
        cond_channels: usize,
        out_channels: usize,
        use_mscb: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let in_channels = latent_channels + cond_channels;
        let embed_dim = 16;
        let conv = if use_mscb {
            FuseConv::Mscb(Mscb::new(&format!("{prefix}/mscb"), in_channels, out_channels, 5, rng)?)
        } else {
            FuseConv::Plain(Conv3dLayer::new(
                &format!("{prefix}/plain"),
                in_channels,
                out_channels,
                [1; 3],
                [1; 3],
                [0; 3],
                [1; 3],
                true,
                rng,
            ))
        };
        Ok(MscbFuse {
            time_proj: Linear::new(&format!("{prefix}/time_proj"), embed_dim, in_channels, true, rng),
            conv,
            embed_dim,
            in_channels,
            out_channels,
        })
    }

    pub fn forward(&self, x_t: &Tensor<E>, cond: &Tensor<E>, t: usize) -> Result<Tensor<E>> {
        if x_t.shape()[1..] != cond.shape()[1..] {
            return Err(ModelError::Geometry(format!(
                "latent {:?} and condition {:?} spatial extents differ",
                x_t.shape(),
                cond.shape()
            )));
        }
        let cat = Tensor::concat(&[x_t, cond], 0)?;
        let emb = timestep_embedding::<E>(t, self.embed_dim).reshape(&[1, self.embed_dim])?;
        let per_channel = self.time_proj.forward(&emb)?.reshape(&[self.in_channels, 1, 1, 1])?;
        let conditioned = cat.add(&per_channel)?;
        match &self.conv {
            FuseConv::Mscb(m) => m.forward(&conditioned),
            FuseConv::Plain(c) => c.forward(&conditioned),
        }
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.time_proj.collect_params(out);
        match &self.conv {
            FuseConv::Mscb(m) => m.collect_params(out),
            FuseConv::Plain(c) => c.collect_params(out),
        }
    }
}
