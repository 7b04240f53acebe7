use fvsr_tensor::{Rng, Tensor};

use super::Clip;
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeParams {
    pub blur_sigma: f64,
    pub downscale: usize,
    pub noise_sigma: f64,
    pub quantize_levels: Option<u32>,
}

impl Default for DegradeParams {
    fn default() -> Self {
        Self {
            blur_sigma: 1.2,
            downscale: 4,
            noise_sigma: 0.02,
            quantize_levels: Some(256),
        }
    }
}

impl DegradeParams {
    pub fn validate(&self) -> Result<()> {
        if self.downscale == 0 {
            return Err(CoreError::Config("degrade.downscale must be >= 1".into()));
        }
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(CoreError::Config("degrade sigmas must be >= 0".into()));
        }
        if matches!(self.quantize_levels, Some(l) if l < 2) {
            return Err(CoreError::Config(
                "degrade.quantize_levels must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable blur over the last two axes of `[C, H, W]` with edge clamping.
pub fn blur(img: &Tensor<f64>, sigma: f64) -> Tensor<f64> {
    let taps = gaussian_kernel(sigma);
    if taps.len() == 1 {
        return img.clone();
    }
    let (c, h, w) = img.dims3("blur").expect("image is [C, H, W]");
    let r = (taps.len() / 2) as i64;
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];
    for p in 0..c {
        for y in 0..h {
            let row = &src[(p * h + y) * w..][..w];
            for x in 0..w {
                tmp[(p * h + y) * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        t * row[(x as i64 + k as i64 - r).clamp(0, w as i64 - 1) as usize]
                    })
                    .sum();
            }
        }
    }
    let plane = h * w;
    Tensor::from_fn(img.shape().to_vec(), |i| {
        let (p, y, x) = (i / plane, (i % plane) / w, i % w);
        taps.iter()
            .enumerate()
            .map(|(k, t)| {
                let sy = (y as i64 + k as i64 - r).clamp(0, h as i64 - 1) as usize;
                t * tmp[p * plane + sy * w + x]
            })
            .sum()
    })
}

/// Area average over `f × f` blocks of `[C, H, W]`.
pub fn box_downsample(img: &Tensor<f64>, f: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = img.dims3("box_downsample")?;
    if h % f != 0 || w % f != 0 {
        return Err(CoreError::InputSize(format!(
            "{h}x{w} is not divisible by downscale {f}"
        )));
    }
    let (ho, wo) = (h / f, w / f);
    let src = img.data();
    let norm = 1.0 / (f * f) as f64;
    Ok(Tensor::from_fn([c, ho, wo], |i| {
        let (p, y, x) = (i / (ho * wo), (i % (ho * wo)) / wo, i % wo);
        let mut s = 0.0;
        for dy in 0..f {
            let row = &src[(p * h + y * f + dy) * w + x * f..][..f];
            s += row.iter().sum::<f64>();
        }
        s * norm
    }))
}

/// Blur, area downsample, additive noise, optional quantization and clamp,
/// applied to every frame. Flow is area-averaged and divided by the factor.
pub fn degrade(clip: &Clip, p: &DegradeParams, seed: u64) -> Result<Clip> {
    p.validate()?;
    let f = p.downscale;
    if clip.height() % f != 0 || clip.width() % f != 0 {
        return Err(CoreError::InputSize(format!(
            "{}x{} is not divisible by downscale {f}",
            clip.height(),
            clip.width()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut frames = Vec::with_capacity(clip.len());
    for t in 0..clip.len() {
        let mut lr = box_downsample(&blur(&clip.frame(t), p.blur_sigma), f)?;
        for v in lr.data_mut() {
            if p.noise_sigma > 0.0 {
                *v += p.noise_sigma * rng.normal();
            }
            if let Some(levels) = p.quantize_levels {
                let q = (levels - 1) as f64;
                *v = (v.clamp(0.0, 1.0) * q).round() / q;
            }
            *v = v.clamp(0.0, 1.0);
        }
        frames.push(lr);
    }
    let flow = match &clip.flow {
        Some(flow) => {
            let [t1, _, h, w] = flow.shape().try_into().expect("flow rank");
            let planes = Tensor::new([t1 * 2, h, w], flow.data().to_vec())?;
            let small = box_downsample(&planes, f)?.map(|v| v / f as f64);
            Some(small.reshape([t1, 2, h / f, w / f])?)
        }
        None => None,
    };
    Clip::from_frames(&frames, flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datametrics::{synth_clip, ClipKind};

    #[test]
    fn identity_without_degradation() {
        let clip = synth_clip(ClipKind::Texture, 2, 16, 16, 3).unwrap();
        let p = DegradeParams {
            blur_sigma: 0.0,
            downscale: 1,
            noise_sigma: 0.0,
            quantize_levels: None,
        };
        assert_eq!(degrade(&clip, &p, 0).unwrap(), clip);
    }

    #[test]
    fn downscale_geometry_and_determinism() {
        let clip = synth_clip(ClipKind::MovingPattern, 2, 64, 64, 3).unwrap();
        let p = DegradeParams::default();
        let a = degrade(&clip, &p, 9).unwrap();
        assert_eq!(a.frames.shape(), &[2, 3, 16, 16]);
        assert_eq!(a.flow.as_ref().unwrap().shape(), &[1, 2, 16, 16]);
        assert_eq!(a, degrade(&clip, &p, 9).unwrap());
        assert!(a.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn indivisible_is_an_error() {
        let clip = synth_clip(ClipKind::Ramp, 1, 18, 16, 3).unwrap();
        assert!(matches!(
            degrade(&clip, &DegradeParams::default(), 0),
            Err(CoreError::InputSize(_))
        ));
    }

    #[test]
    fn kernel_is_normalized_with_three_sigma_radius() {
        let k = gaussian_kernel(1.2);
        assert_eq!(k.len(), 2 * 4 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_variance_on_gray() {
        // 4 frames of 3x160x160 gray, 1e5+ noisy pixels well inside [0, 1]
        let frames = Tensor::full([4, 3, 160, 160], 0.5);
        let clip = Clip::new(frames, None).unwrap();
        let p = DegradeParams {
            blur_sigma: 0.0,
            downscale: 1,
            noise_sigma: 0.1,
            quantize_levels: None,
        };
        let out = degrade(&clip, &p, 4).unwrap();
        let d = out.frames.data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 0.01).abs() < 0.001, "variance {var}");
    }
}
