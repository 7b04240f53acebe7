use fvsr_tensor::Tensor;

use super::Clip;
use crate::{CoreError, Result};

fn check_same(op: &str, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::Contract(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    check_same("mse", a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.numel().max(1) as f64)
}

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 8,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    ssim_with(a, b, SsimParams::default())
}

/// Mean SSIM over non-overlapping `window × window` tiles of every plane
/// (the last two axes are spatial). Partial tiles at the border are skipped.
pub fn ssim_with(a: &Tensor<f64>, b: &Tensor<f64>, p: SsimParams) -> Result<f64> {
    check_same("ssim", a, b)?;
    let rank = a.rank();
    if rank < 2 {
        return Err(CoreError::InputSize(
            "ssim needs at least 2 spatial axes".into(),
        ));
    }
    let (h, w) = (a.shape()[rank - 2], a.shape()[rank - 1]);
    let n = p.window;
    if n == 0 || h < n || w < n {
        return Err(CoreError::InputSize(format!(
            "ssim window {n} does not fit a {h}x{w} image"
        )));
    }
    let c1 = (p.k1 * p.peak).powi(2);
    let c2 = (p.k2 * p.peak).powi(2);
    let planes = a.numel() / (h * w);
    let count = (n * n) as f64;
    let (mut total, mut tiles) = (0.0, 0usize);
    for plane in 0..planes {
        let pa = &a.data()[plane * h * w..][..h * w];
        let pb = &b.data()[plane * h * w..][..h * w];
        for ty in 0..h / n {
            for tx in 0..w / n {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in ty * n..(ty + 1) * n {
                    for x in tx * n..(tx + 1) * n {
                        let (u, v) = (pa[y * w + x], pb[y * w + x]);
                        sa += u;
                        sb += v;
                        saa += u * u;
                        sbb += v * v;
                        sab += u * v;
                    }
                }
                let (ma, mb) = (sa / count, sb / count);
                let va = saa / count - ma * ma;
                let vb = sbb / count - mb * mb;
                let cov = sab / count - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                tiles += 1;
            }
        }
    }
    Ok(total / tiles as f64)
}

/// Backward warp of `[C, H, W]` by a `[2, H, W]` flow with wrap-around:
/// `out(y, x) = img(y - dy, x - dx)`. Integer displacements are copied
/// exactly, fractional ones bilinearly interpolated.
pub fn warp(img: &Tensor<f64>, flow: &[f64]) -> Result<Tensor<f64>> {
    let (_, h, w) = img.dims3("warp")?;
    let plane = h * w;
    if flow.len() != 2 * plane {
        return Err(CoreError::Contract(format!(
            "flow has {} values, expected {}",
            flow.len(),
            2 * plane
        )));
    }
    let src = img.data();
    let at = |c: usize, y: i64, x: i64| {
        src[c * plane + y.rem_euclid(h as i64) as usize * w + x.rem_euclid(w as i64) as usize]
    };
    Ok(Tensor::from_fn(img.shape().to_vec(), |i| {
        let (c, p) = (i / plane, i % plane);
        let sy = (p / w) as f64 - flow[p];
        let sx = (p % w) as f64 - flow[plane + p];
        if sy.fract() == 0.0 && sx.fract() == 0.0 {
            return at(c, sy as i64, sx as i64);
        }
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as i64, x0 as i64);
        (1.0 - fy) * ((1.0 - fx) * at(c, y0, x0) + fx * at(c, y0, x0 + 1))
            + fy * ((1.0 - fx) * at(c, y0 + 1, x0) + fx * at(c, y0 + 1, x0 + 1))
    }))
}

/// Mean squared difference between each frame and its predecessor warped by
/// the ground-truth flow, averaged over frame pairs and scaled by 10³.
pub fn warp_error(clip: &Clip) -> Result<f64> {
    let flow = clip
        .flow
        .as_ref()
        .ok_or_else(|| CoreError::Contract("warp_error needs ground-truth flow".into()))?;
    let pairs = clip.len() - 1;
    let per = 2 * clip.height() * clip.width();
    let mut total = 0.0;
    for t in 0..pairs {
        let warped = warp(&clip.frame(t), &flow.data()[t * per..(t + 1) * per])?;
        total += mse(&clip.frame(t + 1), &warped)?;
    }
    Ok(1e3 * total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datametrics::{synth_clip, synth_clip_with, ClipKind, SynthOptions};
    use fvsr_tensor::Rng;

    #[test]
    fn psnr_closed_forms() {
        let a = Tensor::full([3, 4, 4], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_falls_with_noise() {
        let mut rng = Rng::new(2);
        let a: Tensor<f64> = Tensor::uniform([3, 32, 32], 0.0, 1.0, &mut rng);
        let noise: Tensor<f64> = Tensor::randn([3, 32, 32], &mut rng);
        let vals: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|s| psnr(&a, &a.zip_map(&noise, "n", |x, n| x + s * n).unwrap(), 1.0).unwrap())
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2]);
    }

    #[test]
    fn ssim_identity_symmetry_and_inversion() {
        let opts = SynthOptions {
            period: Some(4),
            monochrome: true,
            ..Default::default()
        };
        let a = synth_clip_with(ClipKind::Checker, 1, 32, 32, 0, opts)
            .unwrap()
            .frame(0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.2);
        let b = synth_clip(ClipKind::Texture, 1, 32, 32, 1)
            .unwrap()
            .frame(0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&Tensor::zeros([4, 4]), &Tensor::zeros([4, 4])).is_err());
    }

    #[test]
    fn warp_error_zero_on_exact_shift_and_static() {
        let clip = synth_clip(ClipKind::MovingPattern, 4, 32, 32, 8).unwrap();
        assert_eq!(warp_error(&clip).unwrap(), 0.0);
        let still = synth_clip(ClipKind::Texture, 3, 16, 16, 8).unwrap();
        assert_eq!(warp_error(&still).unwrap(), 0.0);
        let no_flow = Clip::new(still.frames.clone(), None).unwrap();
        assert!(warp_error(&no_flow).is_err());
    }

    #[test]
    fn warp_error_of_independent_noise() {
        let sigma: f64 = 0.05;
        let mut rng = Rng::new(6);
        let frames: Tensor<f64> = Tensor::randn([5, 1, 128, 128], &mut rng);
        let frames = frames.map(|n| 0.5 + sigma * n);
        let clip = Clip::new(frames, Some(Tensor::zeros([4, 2, 128, 128]))).unwrap();
        let expected = 2.0 * sigma * sigma * 1e3;
        let got = warp_error(&clip).unwrap();
        assert!(
            (got - expected).abs() < 0.1 * expected,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn fractional_warp_interpolates() {
        let img = Tensor::from_fn([1, 1, 4], |i| i as f64);
        let mut flow = vec![0.0; 8];
        flow[4..].iter_mut().for_each(|v| *v = 0.5);
        let out = warp(&img.reshape([1, 1, 4]).unwrap(), &flow).unwrap();
        // x=1 samples at 0.5 -> 0.5; x=0 wraps between 3 and 0 -> 1.5
        assert_eq!(out.data(), &[1.5, 0.5, 1.5, 2.5]);
    }
}
