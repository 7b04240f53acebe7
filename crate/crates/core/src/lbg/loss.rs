use fvsr_tensor::{Graph, Rng, Scalar, Tensor, Var};

use crate::vae::{draw_noise, fan_in_uniform, free_energy_in, Bound, Codec, VaeModel};
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl std::str::FromStr for Reduction {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(CoreError::Config(format!(
                "unknown reduction `{other}` (expected mean or sum)"
            ))),
        }
    }
}

impl std::fmt::Display for Reduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_mse: f64,
    pub lambda_perc: f64,
    pub lambda_b: f64,
    pub lambda_reg: f64,
    pub beta: f64,
    pub sigma_rec: f64,
    pub mc_samples: usize,
    /// Per-sample clip bound on the contrastive term.
    pub bound_clip: f64,
    pub rec_reduction: Reduction,
    pub bound_reduction: Reduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mse: 1.0,
            lambda_perc: 0.1,
            lambda_b: 0.05,
            lambda_reg: 0.01,
            beta: 1.5,
            sigma_rec: 1.0,
            mc_samples: 1,
            bound_clip: 1e3,
            rec_reduction: Reduction::Mean,
            bound_reduction: Reduction::Mean,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_mse,
            self.lambda_perc,
            self.lambda_b,
            self.lambda_reg,
        ];
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(CoreError::Config("loss weights must be nonnegative".into()));
        }
        if !(self.beta >= 1.0) {
            return Err(CoreError::Config(format!(
                "loss.beta must be >= 1, got {}",
                self.beta
            )));
        }
        if !(self.sigma_rec > 0.0) {
            return Err(CoreError::Config(format!(
                "loss.sigma_rec must be > 0, got {}",
                self.sigma_rec
            )));
        }
        if self.mc_samples == 0 {
            return Err(CoreError::Config("loss.mc_samples must be >= 1".into()));
        }
        if !(self.bound_clip > 0.0) {
            return Err(CoreError::Config("loss.bound_clip must be > 0".into()));
        }
        Ok(())
    }
}

fn reduce<T: Scalar>(g: &mut Graph<T>, x: Var, how: Reduction) -> Var {
    match how {
        Reduction::Mean => g.mean(x),
        Reduction::Sum => g.sum(x),
    }
}

/// Fixed random-weight feature stack: three stride-2 3×3 convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualExtractor<T: Scalar> {
    layers: Vec<(Tensor<T>, Tensor<T>)>,
}

pub const PERCEPTUAL_CHANNELS: [usize; 4] = [3, 8, 16, 16];

impl<T: Scalar> PerceptualExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let layers = PERCEPTUAL_CHANNELS
            .windows(2)
            .map(|w| {
                let fan_in = w[0] * 9;
                (
                    fan_in_uniform(&[w[1], w[0], 3, 3], fan_in, &mut rng),
                    fan_in_uniform(&[w[1]], fan_in, &mut rng),
                )
            })
            .collect();
        Self { layers }
    }

    pub fn features_in(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let w = g.input(w.clone());
            let b = g.input(b.clone());
            h = g.conv2d(h, w, Some(b), 2, 1)?;
            if i + 1 < self.layers.len() {
                h = g.silu(h);
            }
        }
        Ok(h)
    }

    pub fn checksum(&self) -> u64 {
        self.layers.iter().fold(0, |acc, (w, b)| {
            acc ^ w.checksum().rotate_left(7) ^ b.checksum()
        })
    }
}

/// `λ_MSE·‖ŷ − y*‖² + λ_perc·‖Φ(ŷ) − Φ(y*)‖²`.
pub fn loss_rec_in<T: Scalar>(
    g: &mut Graph<T>,
    y_hat: Var,
    y_star: Var,
    w: &LossWeights,
    phi: &PerceptualExtractor<T>,
) -> Result<Var> {
    let d = g.sub(y_hat, y_star)?;
    let sq = g.square(d);
    let mse = reduce(g, sq, w.rec_reduction);
    let mut total = g.scale(mse, w.lambda_mse);
    if w.lambda_perc != 0.0 {
        let fa = phi.features_in(g, y_hat)?;
        let fb = phi.features_in(g, y_star)?;
        let d = g.sub(fa, fb)?;
        let sq = g.square(d);
        let perc = reduce(g, sq, w.rec_reduction);
        let perc = g.scale(perc, w.lambda_perc);
        total = g.add(total, perc)?;
    }
    Ok(total)
}

/// Tape handles of the contrastive term.
#[derive(Clone, Debug)]
pub struct BoundTerm {
    /// Clipped, reduced `F_ref − F_lb`.
    pub value: Var,
    pub f_ref: Var,
    pub f_lb: Var,
    pub clipped: bool,
    pub ref_params: Bound,
    pub lb_params: Bound,
}

/// `F_ref(ŷ) − F_lb(ŷ)` with both VAEs bound as constants, so gradient
/// reaches only `ŷ`. Both free energies use the same noise draws.
pub fn loss_bound_in<T: Scalar>(
    g: &mut Graph<T>,
    y_hat: Var,
    reference: &VaeModel<T>,
    lower: &VaeModel<T>,
    noise: &[Tensor<T>],
    w: &LossWeights,
) -> Result<BoundTerm> {
    let ref_params = reference.bind(g, false);
    let lb_params = lower.bind(g, false);
    let f_ref = free_energy_in(reference, g, &ref_params, y_hat, noise, w.sigma_rec)?.total;
    let f_lb = free_energy_in(lower, g, &lb_params, y_hat, noise, w.sigma_rec)?.total;
    let diff = g.sub(f_ref, f_lb)?;
    let diff = match w.bound_reduction {
        Reduction::Mean => g.scale(diff, 1.0 / g.value(y_hat).numel() as f64),
        Reduction::Sum => diff,
    };
    let clipped = g.value(diff).item().as_f64().abs() > w.bound_clip;
    let value = g.clamp(diff, -w.bound_clip, w.bound_clip);
    Ok(BoundTerm {
        value,
        f_ref,
        f_lb,
        clipped,
        ref_params,
        lb_params,
    })
}

/// Anisotropic total variation over the last two axes with a smoothed
/// absolute value `√(x² + ε²) − ε`.
pub fn regularizer_tv_in<T: Scalar>(g: &mut Graph<T>, y_hat: Var) -> Result<Var> {
    const EPS: f64 = 1e-6;
    let rank = g.shape(y_hat).len();
    if rank < 2 {
        return Err(CoreError::Contract(
            "total variation needs two spatial axes".into(),
        ));
    }
    let mut terms = Vec::new();
    for axis in [rank - 2, rank - 1] {
        if g.shape(y_hat)[axis] < 2 {
            continue;
        }
        let d = g.diff(y_hat, axis)?;
        let a = g.smooth_abs(d, EPS);
        terms.push(g.mean(a));
    }
    if terms.is_empty() {
        let zero = g.scale(y_hat, 0.0);
        return Ok(g.sum(zero));
    }
    Ok(g.add_all(&terms)?)
}

/// Per-term handles of the f16 objective.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Var,
    pub rec: Var,
    pub bound: Option<BoundTerm>,
    pub reg: Option<Var>,
}

/// Scalar breakdown for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub rec: f64,
    pub bound: f64,
    pub reg: f64,
    pub f_ref: f64,
    pub f_lb: f64,
    pub clipped: bool,
}

impl LossValues {
    pub fn is_finite(&self) -> bool {
        [self.total, self.rec, self.bound, self.reg]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl LossParts {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> LossValues {
        let v = |x: Var| g.value(x).item().as_f64();
        let (bound, f_ref, f_lb, clipped) = match &self.bound {
            Some(b) => (v(b.value), v(b.f_ref), v(b.f_lb), b.clipped),
            None => (0.0, f64::NAN, f64::NAN, false),
        };
        LossValues {
            total: v(self.total),
            rec: v(self.rec),
            bound,
            reg: self.reg.map_or(0.0, v),
            f_ref,
            f_lb,
            clipped,
        }
    }
}

/// `L_rec + λ_b·L_bound + λ_reg·R(ŷ)`. Terms with zero weight are not built.
#[allow(clippy::too_many_arguments)]
pub fn loss_f16_in<T: Scalar>(
    g: &mut Graph<T>,
    y_hat: Var,
    y_star: Var,
    reference: &VaeModel<T>,
    lower: &VaeModel<T>,
    noise: &[Tensor<T>],
    w: &LossWeights,
    phi: &PerceptualExtractor<T>,
) -> Result<LossParts> {
    let rec = loss_rec_in(g, y_hat, y_star, w, phi)?;
    let mut terms = vec![rec];
    let bound = if w.lambda_b != 0.0 {
        let b = loss_bound_in(g, y_hat, reference, lower, noise, w)?;
        terms.push(g.scale(b.value, w.lambda_b));
        Some(b)
    } else {
        None
    };
    let reg = if w.lambda_reg != 0.0 {
        let r = regularizer_tv_in(g, y_hat)?;
        terms.push(g.scale(r, w.lambda_reg));
        Some(r)
    } else {
        None
    };
    let total = g.add_all(&terms)?;
    Ok(LossParts {
        total,
        rec,
        bound,
        reg,
    })
}

/// Noise for the contrastive term of one sample.
pub fn bound_noise<T: Scalar>(
    reference: &VaeModel<T>,
    y_hat_shape: &[usize],
    w: &LossWeights,
    rng: &mut Rng,
) -> Result<Vec<Tensor<T>>> {
    let shape = reference.latent_shape(y_hat_shape)?;
    Ok(draw_noise(&shape, w.mc_samples, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::VaeConfig;

    fn tiny() -> VaeModel<f64> {
        let cfg = VaeConfig {
            f_enc: 4,
            f_dec: 4,
            base_channels: 3,
            latent_channels: 2,
            ..Default::default()
        };
        VaeModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn rec_is_zero_on_equal_and_plain_mse_without_perceptual() {
        let mut rng = Rng::new(1);
        let phi = PerceptualExtractor::<f64>::new(0);
        let a = Tensor::uniform([3, 16, 16], 0.0, 1.0, &mut rng);
        let b = Tensor::uniform([3, 16, 16], 0.0, 1.0, &mut rng);
        let w = LossWeights::default();
        let mut g = Graph::new();
        let (x, y) = (g.input(a.clone()), g.input(a.clone()));
        let l = loss_rec_in(&mut g, x, y, &w, &phi).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let w = LossWeights {
            lambda_perc: 0.0,
            ..Default::default()
        };
        let mut g = Graph::new();
        let (x, y) = (g.input(a.clone()), g.input(b.clone()));
        let l = loss_rec_in(&mut g, x, y, &w, &phi).unwrap();
        let mse = crate::datametrics::mse(&a, &b).unwrap();
        assert!((g.value(l).item() - mse).abs() < 1e-12);
    }

    #[test]
    fn perceptual_is_seeded() {
        let a = PerceptualExtractor::<f32>::new(4);
        assert_eq!(a, PerceptualExtractor::new(4));
        assert_ne!(a.checksum(), PerceptualExtractor::<f32>::new(5).checksum());
    }

    #[test]
    fn identical_vaes_give_zero_bound() {
        let psi = tiny();
        let w = LossWeights::default();
        let y = Tensor::uniform([3, 8, 8], 0.0, 1.0, &mut Rng::new(2));
        let noise = bound_noise(&psi, y.shape(), &w, &mut Rng::new(3)).unwrap();
        let mut g = Graph::new();
        let yv = g.variable(y);
        let b = loss_bound_in(&mut g, yv, &psi, &psi.clone(), &noise, &w).unwrap();
        assert_eq!(g.value(b.value).item(), 0.0);
    }

    #[test]
    fn tv_constant_and_step_edge() {
        let mut g = Graph::<f64>::new();
        let c = g.input(Tensor::full([3, 5, 6], 0.4));
        let r = regularizer_tv_in(&mut g, c).unwrap();
        assert_eq!(g.value(r).item(), 0.0);

        // step of height 1 between columns 2 and 3 in every row of one channel
        let (h, w) = (4, 6);
        let img = Tensor::from_fn([1, h, w], |i| if i % w >= 3 { 1.0 } else { 0.0 });
        let mut g = Graph::<f64>::new();
        let x = g.input(img);
        let r = regularizer_tv_in(&mut g, x).unwrap();
        let pairs = (h * (w - 1)) as f64;
        let expected = h as f64 / pairs;
        assert!((g.value(r).item() - expected).abs() < 1e-5);
    }

    #[test]
    fn zero_weights() {
        let psi = tiny();
        let phi = PerceptualExtractor::<f64>::new(0);
        let mut rng = Rng::new(1);
        let a = Tensor::uniform([3, 8, 8], 0.0, 1.0, &mut rng);
        let b = Tensor::uniform([3, 8, 8], 0.0, 1.0, &mut rng);
        let noise = bound_noise(&psi, a.shape(), &LossWeights::default(), &mut rng).unwrap();
        let zero = LossWeights {
            lambda_mse: 0.0,
            lambda_perc: 0.0,
            lambda_b: 0.0,
            lambda_reg: 0.0,
            ..Default::default()
        };
        let mut g = Graph::new();
        let (x, y) = (g.variable(a.clone()), g.input(b.clone()));
        let parts = loss_f16_in(&mut g, x, y, &psi, &psi, &noise, &zero, &phi).unwrap();
        assert_eq!(g.value(parts.total).item(), 0.0);

        let rec_only = LossWeights {
            lambda_b: 0.0,
            lambda_reg: 0.0,
            ..Default::default()
        };
        let mut g = Graph::new();
        let (x, y) = (g.variable(a), g.input(b));
        let parts = loss_f16_in(&mut g, x, y, &psi, &psi, &noise, &rec_only, &phi).unwrap();
        assert_eq!(g.value(parts.total).item(), g.value(parts.rec).item());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        for w in [
            LossWeights {
                beta: 0.5,
                ..Default::default()
            },
            LossWeights {
                lambda_b: -1.0,
                ..Default::default()
            },
            LossWeights {
                sigma_rec: 0.0,
                ..Default::default()
            },
            LossWeights {
                mc_samples: 0,
                ..Default::default()
            },
        ] {
            assert!(w.validate().is_err());
        }
    }
}
