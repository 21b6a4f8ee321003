//! Layer and instance normalization as fused ops with analytic backward.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{ParentGrads, Tensor};

pub const NORM_EPS: f64 = 1e-5;

struct NormStats<E> {
    xhat: Vec<E>,
    inv_std: Vec<E>,
}

/// Normalize each contiguous slice of `m` elements to zero mean, unit variance.
fn normalize_slices<E: Scalar>(x: &[E], m: usize, eps: E) -> NormStats<E> {
    let slices = x.len() / m;
    let mut xhat = vec![E::ZERO; x.len()];
    let mut inv_std = vec![E::ZERO; slices];
    let inv_m = E::ONE / E::from_usize(m);
    for s in 0..slices {
        let xs = &x[s * m..(s + 1) * m];
        let mean = xs.iter().copied().sum::<E>() * inv_m;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_m;
        let istd = E::ONE / (var + eps).sqrt();
        inv_std[s] = istd;
        for (o, &v) in xhat[s * m..(s + 1) * m].iter_mut().zip(xs) {
            *o = (v - mean) * istd;
        }
    }
    NormStats { xhat, inv_std }
}

/// dL/dx for a normalized slice given dL/dxhat.
fn norm_backward_slice<E: Scalar>(gxhat: &[E], xhat: &[E], inv_std: E, gx: &mut [E]) {
    let m = E::from_usize(gxhat.len());
    let sum_g: E = gxhat.iter().copied().sum();
    let sum_gx: E = gxhat.iter().zip(xhat).map(|(&g, &h)| g * h).sum();
    let mean_g = sum_g / m;
    let mean_gx = sum_gx / m;
    for ((o, &g), &h) in gx.iter_mut().zip(gxhat).zip(xhat) {
        *o = inv_std * (g - mean_g - h * mean_gx);
    }
}

impl<E: Scalar> Tensor<E> {
    /// Layer normalization over the trailing `norm_dims` dimensions, followed
    /// by the affine map `xhat * gain + bias`. `gain` and `bias` have the
    /// shape of the normalized tail.
    pub fn layer_norm(&self, norm_dims: usize, gain: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
        if norm_dims == 0 || norm_dims > self.rank() {
            return Err(TensorError::InvalidShape {
                op: "layer_norm",
                shape: self.shape().to_vec(),
                reason: format!("cannot normalize trailing {norm_dims} dims"),
            });
        }
        let tail = &self.shape()[self.rank() - norm_dims..];
        if gain.shape() != tail || bias.shape() != tail {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: tail.to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let m: usize = tail.iter().product();
        let eps = E::from_f64(NORM_EPS);
        let stats = normalize_slices(self.data(), m, eps);
        let slices = self.len() / m;
        let g = gain.data();
        let b = bias.data();
        let mut data = vec![E::ZERO; self.len()];
        for s in 0..slices {
            for j in 0..m {
                data[s * m + j] = stats.xhat[s * m + j] * g[j] + b[j];
            }
        }
        let tgain = gain.clone();
        let n_total = self.len();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |gy: &[E]| -> ParentGrads<E> {
                let g = tgain.data();
                let mut gx = vec![E::ZERO; n_total];
                let mut ggain = vec![E::ZERO; m];
                let mut gbias = vec![E::ZERO; m];
                let mut gxhat = vec![E::ZERO; m];
                for s in 0..slices {
                    let gy_s = &gy[s * m..(s + 1) * m];
                    let xhat_s = &stats.xhat[s * m..(s + 1) * m];
                    for j in 0..m {
                        ggain[j] += gy_s[j] * xhat_s[j];
                        gbias[j] += gy_s[j];
                        gxhat[j] = gy_s[j] * g[j];
                    }
                    norm_backward_slice(&gxhat, xhat_s, stats.inv_std[s], &mut gx[s * m..(s + 1) * m]);
                }
                vec![Some(gx), Some(ggain), Some(gbias)]
            }),
        ))
    }

    /// Instance normalization of a (C, L, W, H) volume: each channel's spatial
    /// block is normalized to zero mean, unit variance. No affine part.
    pub fn instance_norm(&self) -> Result<Tensor<E>> {
        if self.rank() != 4 {
            return Err(TensorError::InvalidShape {
                op: "instance_norm",
                shape: self.shape().to_vec(),
                reason: "expected rank-4 (channels, L, W, H)".into(),
            });
        }
        let m: usize = self.shape()[1..].iter().product();
        let eps = E::from_f64(NORM_EPS);
        let stats = normalize_slices(self.data(), m, eps);
        let slices = self.len() / m;
        let data = stats.xhat.clone();
        let n_total = self.len();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |gy: &[E]| {
                let mut gx = vec![E::ZERO; n_total];
                for s in 0..slices {
                    norm_backward_slice(
                        &gy[s * m..(s + 1) * m],
                        &stats.xhat[s * m..(s + 1) * m],
                        stats.inv_std[s],
                        &mut gx[s * m..(s + 1) * m],
                    );
                }
                vec![Some(gx)]
            }),
        ))
    }
}
