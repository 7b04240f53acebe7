use fvsr_tensor::{Graph, Rng, Scalar, Tensor, Var};

use super::model::{Codec, LatentDist};
use super::params::Bound;
use crate::{CoreError, Result};

/// Negative ELBO of one input, `total = recon_nll + kl`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergy {
    pub recon_nll: f64,
    pub kl: f64,
    pub total: f64,
    pub mc_samples: usize,
    /// Sample standard deviation of the per-draw reconstruction NLL
    /// (0 for a single draw).
    pub recon_sd: f64,
}

impl FreeEnergy {
    /// Monte Carlo standard error of `total`.
    pub fn std_error(&self) -> f64 {
        self.recon_sd / (self.mc_samples as f64).sqrt()
    }
}

/// Tape handles of a free-energy evaluation.
#[derive(Clone, Debug)]
pub struct FreeEnergyVars {
    pub recon_nll: Var,
    pub kl: Var,
    pub total: Var,
    pub per_sample_nll: Vec<Var>,
}

impl FreeEnergyVars {
    pub fn value<T: Scalar>(&self, g: &Graph<T>) -> FreeEnergy {
        let draws: Vec<f64> = self
            .per_sample_nll
            .iter()
            .map(|&v| g.value(v).item().as_f64())
            .collect();
        let k = draws.len();
        let mean = draws.iter().sum::<f64>() / k as f64;
        let recon_sd = if k > 1 {
            (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        } else {
            0.0
        };
        FreeEnergy {
            recon_nll: g.value(self.recon_nll).item().as_f64(),
            kl: g.value(self.kl).item().as_f64(),
            total: g.value(self.total).item().as_f64(),
            mc_samples: k,
            recon_sd,
        }
    }
}

/// `z = mean + exp(½·logvar)·noise`.
pub fn reparameterize<T: Scalar>(dist: &LatentDist<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
    if noise.shape() != dist.mean.shape() || dist.logvar.shape() != dist.mean.shape() {
        return Err(CoreError::Contract(format!(
            "noise {:?} does not match latent {:?}",
            noise.shape(),
            dist.mean.shape()
        )));
    }
    let half = T::of(0.5);
    let std = dist.logvar.map(|lv| (half * lv).exp());
    let scaled = std.zip_map(noise, "reparameterize", |s, n| s * n)?;
    Ok(dist.mean.zip_map(&scaled, "reparameterize", |m, e| m + e)?)
}

/// In-graph reparameterization.
pub fn reparameterize_in<T: Scalar>(
    g: &mut Graph<T>,
    mean: Var,
    logvar: Var,
    noise: Var,
) -> Result<Var> {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let e = g.mul(std, noise)?;
    Ok(g.add(mean, e)?)
}

/// Standard normal draws for `mc_samples` latent samples of `shape`.
pub fn draw_noise<T: Scalar>(shape: &[usize], mc_samples: usize, rng: &mut Rng) -> Vec<Tensor<T>> {
    (0..mc_samples)
        .map(|_| Tensor::randn(shape.to_vec(), rng))
        .collect()
}

/// `−ELBO(y)` on the tape with a fixed-σ Gaussian likelihood and
/// `N(0, I)` prior, one decoder pass per noise tensor.
pub fn free_energy_in<T: Scalar, C: Codec<T> + ?Sized>(
    codec: &C,
    g: &mut Graph<T>,
    p: &Bound,
    y: Var,
    noise: &[Tensor<T>],
    sigma_rec: f64,
) -> Result<FreeEnergyVars> {
    free_energy_weighted_in(codec, g, p, y, noise, sigma_rec, 1.0)
}

/// As [`free_energy_in`] with the KL term scaled by `beta` in `total`.
pub fn free_energy_weighted_in<T: Scalar, C: Codec<T> + ?Sized>(
    codec: &C,
    g: &mut Graph<T>,
    p: &Bound,
    y: Var,
    noise: &[Tensor<T>],
    sigma_rec: f64,
    beta: f64,
) -> Result<FreeEnergyVars> {
    if noise.is_empty() {
        return Err(CoreError::Contract(
            "free energy needs mc_samples >= 1".into(),
        ));
    }
    if !(sigma_rec > 0.0) {
        return Err(CoreError::Contract(format!(
            "sigma_rec must be > 0, got {sigma_rec}"
        )));
    }
    let (mean, logvar) = codec.encode_in(g, p, y)?;
    let n = g.value(y).numel() as f64;
    let inv = 1.0 / (2.0 * sigma_rec * sigma_rec);
    let log_norm = 0.5 * n * (2.0 * std::f64::consts::PI * sigma_rec * sigma_rec).ln();
    let mut per_sample_nll = Vec::with_capacity(noise.len());
    for eps in noise {
        let e = g.input(eps.clone());
        let z = reparameterize_in(g, mean, logvar, e)?;
        let y_hat = codec.decode_in(g, p, z)?;
        let r = g.sub(y, y_hat)?;
        let sq = g.square(r);
        let s = g.sum(sq);
        let s = g.scale(s, inv);
        per_sample_nll.push(g.add_scalar(s, log_norm));
    }
    let sum = g.add_all(&per_sample_nll)?;
    let recon_nll = g.scale(sum, 1.0 / noise.len() as f64);
    let kl = g.gaussian_kl(mean, logvar)?;
    let total = if beta == 1.0 {
        g.add(recon_nll, kl)?
    } else {
        let weighted = g.scale(kl, beta);
        g.add(recon_nll, weighted)?
    };
    Ok(FreeEnergyVars {
        recon_nll,
        kl,
        total,
        per_sample_nll,
    })
}

/// Evaluates `F(y)` with `mc_samples` draws from `rng`.
pub fn free_energy<T: Scalar, C: Codec<T> + ?Sized>(
    codec: &C,
    y: &Tensor<T>,
    mc_samples: usize,
    sigma_rec: f64,
    rng: &mut Rng,
) -> Result<FreeEnergy> {
    let shape = codec.latent_shape(y.shape())?;
    let noise = draw_noise(&shape, mc_samples, rng);
    let mut g = Graph::new();
    let p = codec.bind(&mut g, false);
    let yv = g.input(y.clone());
    Ok(free_energy_in(codec, &mut g, &p, yv, &noise, sigma_rec)?.value(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::{LinearGaussianVae, VaeConfig, VaeModel};

    #[test]
    fn reparameterize_closed_forms() {
        let mut rng = Rng::new(0);
        let dist = LatentDist {
            mean: Tensor::<f64>::randn([2, 3], &mut rng),
            logvar: Tensor::zeros([2, 3]),
        };
        assert_eq!(
            reparameterize(&dist, &Tensor::zeros([2, 3])).unwrap(),
            dist.mean
        );
        let n = Tensor::randn([2, 3], &mut rng);
        let z = reparameterize(&dist, &n).unwrap();
        let expected = dist.mean.zip_map(&n, "t", |m, e| m + e).unwrap();
        assert!(z.max_abs_diff(&expected) < 1e-15);
        assert!(reparameterize(&dist, &Tensor::zeros([3, 2])).is_err());
    }

    #[test]
    fn reparameterized_variance() {
        let logvar = -0.7;
        let dist = LatentDist {
            mean: Tensor::<f64>::full([1], 0.3),
            logvar: Tensor::full([1], logvar),
        };
        let mut rng = Rng::new(8);
        let n = 100_000;
        let zs: Vec<f64> = (0..n)
            .map(|_| {
                reparameterize(&dist, &Tensor::randn([1], &mut rng))
                    .unwrap()
                    .item()
            })
            .collect();
        let mean = zs.iter().sum::<f64>() / n as f64;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = f64::exp(logvar);
        assert!((var / target - 1.0).abs() < 0.02, "{var} vs {target}");
    }

    #[test]
    fn total_is_sum_and_kl_nonnegative() {
        let cfg = VaeConfig {
            base_channels: 4,
            latent_channels: 4,
            ..Default::default()
        };
        let m = VaeModel::<f64>::new(cfg, 1).unwrap();
        let y = Tensor::uniform([3, 16, 16], 0.0, 1.0, &mut Rng::new(2));
        let fe = free_energy(&m, &y, 3, 1.0, &mut Rng::new(3)).unwrap();
        assert!((fe.total - (fe.recon_nll + fe.kl)).abs() <= 1e-9 * fe.total.abs());
        assert!(fe.kl >= 0.0);
        assert_eq!(fe.mc_samples, 3);
        assert!(free_energy(&m, &y, 0, 1.0, &mut Rng::new(3)).is_err());
    }

    #[test]
    fn prior_posterior_gives_zero_kl() {
        // posterior N(0, I), decoder ignores z
        let lg = LinearGaussianVae::new(&[4], 0.5)
            .with_encoder(0.0, 0.0)
            .ignoring_latent();
        let y = Tensor::<f64>::randn([4], &mut Rng::new(1));
        let fe = free_energy(&lg, &y, 4, 0.5, &mut Rng::new(2)).unwrap();
        assert_eq!(fe.kl, 0.0);
        assert_eq!(fe.recon_sd, 0.0);
    }

    #[test]
    fn doubling_samples_moves_total_less_than_one_sd() {
        let cfg = VaeConfig {
            base_channels: 4,
            latent_channels: 4,
            ..Default::default()
        };
        let m = VaeModel::<f64>::new(cfg, 5).unwrap();
        let y = Tensor::uniform([3, 16, 16], 0.0, 1.0, &mut Rng::new(2));
        let a = free_energy(&m, &y, 16, 1.0, &mut Rng::new(3)).unwrap();
        let b = free_energy(&m, &y, 32, 1.0, &mut Rng::new(4)).unwrap();
        let one = free_energy(&m, &y, 64, 1.0, &mut Rng::new(5)).unwrap();
        assert!((a.total - b.total).abs() < one.recon_sd);
    }
}
