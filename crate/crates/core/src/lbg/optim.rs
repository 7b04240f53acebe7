use fvsr_tensor::{Scalar, Tensor};

use crate::datametrics::AnyTensor;
use crate::vae::ParamStore;
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr >= 0.0)
            || !beta_ok(self.beta1)
            || !beta_ok(self.beta2)
            || !(self.eps > 0.0)
            || !(self.weight_decay >= 0.0)
        {
            return Err(CoreError::Config(format!(
                "invalid optimizer settings {self:?} (lr >= 0, betas in [0, 1), eps > 0, weight_decay >= 0)"
            )));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments, one
/// moment pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T: Scalar> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. Parameters with a `None` gradient are left alone,
    /// weight decay included.
    pub fn update(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(CoreError::Contract(format!(
                "optimizer tracks {} parameters, got {} gradients for {}",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let Some(g) = g else { continue };
            if g.shape() != p.value.shape() {
                return Err(CoreError::Contract(format!(
                    "gradient shape mismatch for {}",
                    p.name
                )));
            }
            let data = p.value.data_mut();
            for (((x, &gi), mi), vi) in data
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi.as_f64();
                let mn = beta1 * mi.as_f64() + (1.0 - beta1) * gi;
                let vn = beta2 * vi.as_f64() + (1.0 - beta2) * gi * gi;
                *mi = T::of(mn);
                *vi = T::of(vn);
                let xf = x.as_f64();
                let step = (mn / c1) / ((vn / c2).sqrt() + eps);
                *x = T::of(xf - lr * (step + weight_decay * xf));
            }
        }
        Ok(())
    }

    pub fn to_entries(&self, prefix: &str) -> Vec<(String, AnyTensor)> {
        let mut out = vec![(
            format!("{prefix}.step"),
            AnyTensor::F64(Tensor::scalar(self.step as f64)),
        )];
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((format!("{prefix}.m{i}"), AnyTensor::of(m)));
            out.push((format!("{prefix}.v{i}"), AnyTensor::of(v)));
        }
        out
    }

    pub fn load_entries(&mut self, prefix: &str, entries: &[(String, AnyTensor)]) -> Result<()> {
        use crate::datametrics::container::find;
        let step: Tensor<f64> = find(entries, &format!("{prefix}.step"))?.to();
        self.step = step.item() as u64;
        for i in 0..self.m.len() {
            for (name, slot) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let t: Tensor<T> = find(entries, &format!("{prefix}.{name}{i}"))?.to();
                if t.shape() != slot.shape() {
                    return Err(CoreError::Contract(format!(
                        "optimizer moment {prefix}.{name}{i} has wrong shape"
                    )));
                }
                *slot = t;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::Group;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(
            "p",
            Group::Head,
            Tensor::new([values.len()], values.to_vec()).unwrap(),
        );
        s
    }

    #[test]
    fn zero_grad_without_decay_is_identity() {
        let mut s = store(&[0.5, -1.0, 2.0]);
        let before = s.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        for _ in 0..3 {
            opt.update(&mut s, &[Some(Tensor::zeros([3]))]).unwrap();
        }
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut s = store(&[0.0, 0.0, 0.0]);
        let cfg = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        let g = [3.0, -0.2, 1e-3];
        opt.update(&mut s, &[Some(Tensor::new([3], g.to_vec()).unwrap())])
            .unwrap();
        for (x, gi) in s.get("p").unwrap().data().iter().zip(g) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((x - expected).abs() < 1e-12, "{x} vs {expected}");
        }
    }

    #[test]
    fn decay_only() {
        let mut s = store(&[1.0, -4.0]);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        opt.update(&mut s, &[Some(Tensor::zeros([2]))]).unwrap();
        let expected = [1.0 * (1.0 - 0.1 * 0.5), -4.0 * (1.0 - 0.1 * 0.5)];
        assert!(
            s.get("p")
                .unwrap()
                .max_abs_diff(&Tensor::new([2], expected.to_vec()).unwrap())
                < 1e-15
        );
    }

    #[test]
    fn zero_lr_and_missing_grads_leave_params() {
        let mut s = store(&[1.0, 2.0]);
        let before = s.clone();
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.0,
                ..Default::default()
            },
            &s,
        );
        opt.update(&mut s, &[Some(Tensor::full([2], 5.0))]).unwrap();
        assert_eq!(s, before);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.update(&mut s, &[None]).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn entries_round_trip() {
        let mut s = store(&[1.0, 2.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.update(&mut s, &[Some(Tensor::full([2], 0.3))]).unwrap();
        let mut fresh = AdamW::new(AdamWConfig::default(), &s);
        fresh.load_entries("opt", &opt.to_entries("opt")).unwrap();
        assert_eq!(fresh, opt);
    }
}
