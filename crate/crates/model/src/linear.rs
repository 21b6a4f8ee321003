//! Token-wise linear layer over (S, C) sequences.

use rand::Rng;
use skimba_tensor::{Param, Scalar, Tensor};

use crate::error::Result;

pub struct Linear<E: Scalar> {
    /// (in_features, out_features)
    pub weight: Param<E>,
    pub bias: Option<Param<E>>,
}

impl<E: Scalar> Linear<E> {
    pub fn new(prefix: &str, in_features: usize, out_features: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let std = E::from_f64(1.0 / (in_features as f64).sqrt());
        Linear {
            weight: Param::new(
                format!("{prefix}/weight"),
                Tensor::randn_scaled(&[in_features, out_features], std, rng),
            ),
            bias: bias.then(|| Param::new(format!("{prefix}/bias"), Tensor::zeros(&[out_features]))),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = x.matmul(&self.weight.value())?;
        Ok(match &self.bias {
            Some(b) => y.add(&b.value())?,
            None => y,
        })
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }

    /// Zero all values; used to pin residual branches at identity.
    pub fn zero_init(&self) {
        self.weight.set_data(vec![E::ZERO; self.weight.value().len()]);
        if let Some(b) = &self.bias {
            b.set_data(vec![E::ZERO; b.value().len()]);
        }
    }
}
