use fvsr_tensor::{Graph, Scalar, Tensor, Var};

use super::model::Codec;
use super::params::Bound;
use crate::{CoreError, Result};

/// Linear-Gaussian VAE with a closed-form evidence.
///
/// Prior `z ~ N(0, I)`, likelihood `y | z ~ N(z, σ²I)`, so
/// `p(y) = N(0, (1 + σ²) I)`. The encoder is `q(z|y) = N(a·y, exp(ℓ) I)`;
/// with `a = 1/(1+σ²)` and `exp(ℓ) = σ²/(1+σ²)` it is the exact posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianVae {
    pub shape: Vec<usize>,
    pub sigma: f64,
    pub gain: f64,
    pub logvar: f64,
    pub use_latent: bool,
}

impl LinearGaussianVae {
    /// Model with the exact posterior as encoder.
    pub fn new(shape: &[usize], sigma: f64) -> Self {
        let s2 = sigma * sigma;
        Self {
            shape: shape.to_vec(),
            sigma,
            gain: 1.0 / (1.0 + s2),
            logvar: (s2 / (1.0 + s2)).ln(),
            use_latent: true,
        }
    }

    pub fn with_encoder(mut self, gain: f64, logvar: f64) -> Self {
        self.gain = gain;
        self.logvar = logvar;
        self
    }

    /// Decoder that outputs zero regardless of `z`.
    pub fn ignoring_latent(mut self) -> Self {
        self.use_latent = false;
        self
    }

    /// `log p(y)` in closed form.
    pub fn log_evidence<T: Scalar>(&self, y: &Tensor<T>) -> f64 {
        let v = 1.0 + self.sigma * self.sigma;
        let n = y.numel() as f64;
        -0.5 * y.sum_squares().as_f64() / v - 0.5 * n * (2.0 * std::f64::consts::PI * v).ln()
    }
}

impl<T: Scalar> Codec<T> for LinearGaussianVae {
    fn bind(&self, _g: &mut Graph<T>, _trainable: bool) -> Bound {
        Bound::empty()
    }

    fn encode_in(&self, g: &mut Graph<T>, _p: &Bound, y: Var) -> Result<(Var, Var)> {
        if g.shape(y) != self.shape.as_slice() {
            return Err(CoreError::Contract(format!(
                "input {:?} is not {:?}",
                g.shape(y),
                self.shape
            )));
        }
        let mean = g.scale(y, self.gain);
        let logvar = g.input(Tensor::full(self.shape.clone(), T::of(self.logvar)));
        Ok((mean, logvar))
    }

    fn decode_in(&self, g: &mut Graph<T>, _p: &Bound, z: Var) -> Result<Var> {
        Ok(if self.use_latent { z } else { g.scale(z, 0.0) })
    }

    fn latent_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input != self.shape.as_slice() {
            return Err(CoreError::Contract(format!(
                "input {input:?} is not {:?}",
                self.shape
            )));
        }
        Ok(self.shape.clone())
    }
}
