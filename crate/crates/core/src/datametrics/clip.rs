use std::fmt;
use std::str::FromStr;

use fvsr_tensor::{Rng, Tensor};

use crate::{CoreError, Result};

/// A short video: `frames` is `[T, C, H, W]` with values in `[0, 1]`.
///
/// `flow`, when present, is `[T-1, 2, H, W]`; entry `t` holds the `(dy, dx)`
/// displacement taking frame `t` to frame `t + 1`, so that
/// `frame[t+1](y, x) = frame[t](y - dy, x - dx)` with wrap-around.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Tensor<f64>,
    pub flow: Option<Tensor<f64>>,
}

impl Clip {
    pub fn new(frames: Tensor<f64>, flow: Option<Tensor<f64>>) -> Result<Self> {
        let &[t, _, h, w] = frames.shape() else {
            return Err(CoreError::Contract(format!(
                "clip frames must be [T, C, H, W], got {:?}",
                frames.shape()
            )));
        };
        if let Some(flow) = &flow {
            if t < 2 || flow.shape() != [t - 1, 2, h, w] {
                return Err(CoreError::Contract(format!(
                    "flow {:?} does not match {t} frames of {h}x{w}",
                    flow.shape()
                )));
            }
        }
        Ok(Self { frames, flow })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    fn frame_len(&self) -> usize {
        self.channels() * self.height() * self.width()
    }

    /// Frame `t` as `[C, H, W]`.
    pub fn frame(&self, t: usize) -> Tensor<f64> {
        let n = self.frame_len();
        let shape = [self.channels(), self.height(), self.width()];
        Tensor::new(shape, self.frames.data()[t * n..(t + 1) * n].to_vec()).expect("frame slice")
    }

    pub fn from_frames(frames: &[Tensor<f64>], flow: Option<Tensor<f64>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| CoreError::Contract("clip needs at least one frame".into()))?;
        let (c, h, w) = first.dims3("clip")?;
        let mut data = Vec::with_capacity(frames.len() * first.numel());
        for f in frames {
            if f.shape() != first.shape() {
                return Err(CoreError::Contract(format!(
                    "frame shape {:?} differs from {:?}",
                    f.shape(),
                    first.shape()
                )));
            }
            data.extend_from_slice(f.data());
        }
        Clip::new(Tensor::new([frames.len(), c, h, w], data)?, flow)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipKind {
    Checker,
    Ramp,
    Texture,
    MovingPattern,
}

impl ClipKind {
    pub const ALL: [ClipKind; 4] = [
        ClipKind::Checker,
        ClipKind::Ramp,
        ClipKind::Texture,
        ClipKind::MovingPattern,
    ];
}

impl FromStr for ClipKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(ClipKind::Checker),
            "ramp" => Ok(ClipKind::Ramp),
            "texture" => Ok(ClipKind::Texture),
            "moving_pattern" => Ok(ClipKind::MovingPattern),
            other => Err(CoreError::Config(format!(
                "unknown clip kind `{other}` (expected checker, ramp, texture or moving_pattern)"
            ))),
        }
    }
}

impl fmt::Display for ClipKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClipKind::Checker => "checker",
            ClipKind::Ramp => "ramp",
            ClipKind::Texture => "texture",
            ClipKind::MovingPattern => "moving_pattern",
        })
    }
}

/// Overrides for procedural parameters that are otherwise drawn from the seed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SynthOptions {
    /// Checker block side length in pixels.
    pub period: Option<usize>,
    /// Per-frame integer displacement `(dy, dx)` of a moving pattern.
    pub velocity: Option<(i64, i64)>,
    /// Black and white instead of two random colours (checker only).
    pub monochrome: bool,
}

pub fn synth_clip(kind: ClipKind, t: usize, h: usize, w: usize, seed: u64) -> Result<Clip> {
    synth_clip_with(kind, t, h, w, seed, SynthOptions::default())
}

pub fn synth_clip_with(
    kind: ClipKind,
    t: usize,
    h: usize,
    w: usize,
    seed: u64,
    opts: SynthOptions,
) -> Result<Clip> {
    if h < 16 || w < 16 || t == 0 {
        return Err(CoreError::InputSize(format!(
            "synthetic clips need T >= 1 and H, W >= 16, got {t}x{h}x{w}"
        )));
    }
    let mut rng = Rng::new(seed);
    let (base, velocity) = match kind {
        ClipKind::Checker => (checker(h, w, &mut rng, opts), (0, 0)),
        ClipKind::Ramp => (ramp(h, w, &mut rng), (0, 0)),
        ClipKind::Texture => (texture(h, w, &mut rng), (0, 0)),
        ClipKind::MovingPattern => {
            let mut img = texture(h, w, &mut rng);
            overlay_shapes(&mut img, h, w, &mut rng);
            let v = opts.velocity.unwrap_or_else(|| {
                let vy = rng.below(5) as i64 - 2;
                let vx = rng.below(5) as i64 - 2;
                (vy, vx)
            });
            (img, v)
        }
    };
    let frames: Vec<Tensor<f64>> = (0..t)
        .map(|i| shift_wrap(&base, velocity.0 * i as i64, velocity.1 * i as i64))
        .collect();
    let flow = (t >= 2).then(|| {
        let plane = h * w;
        Tensor::from_fn([t - 1, 2, h, w], |i| {
            if (i / plane) % 2 == 0 {
                velocity.0 as f64
            } else {
                velocity.1 as f64
            }
        })
    });
    Clip::from_frames(&frames, flow)
}

fn color(rng: &mut Rng) -> [f64; 3] {
    [rng.uniform(), rng.uniform(), rng.uniform()]
}

fn checker(h: usize, w: usize, rng: &mut Rng, opts: SynthOptions) -> Tensor<f64> {
    let (period, oy, ox) = match opts.period {
        Some(p) => (p.max(1), 0, 0),
        None => {
            let p = 4 + rng.below(13);
            (p, rng.below(p), rng.below(p))
        }
    };
    let (a, b) = if opts.monochrome {
        ([0.0; 3], [1.0; 3])
    } else {
        (color(rng), color(rng))
    };
    let plane = h * w;
    Tensor::from_fn([3, h, w], |i| {
        let (c, y, x) = (i / plane, (i % plane) / w, i % w);
        if ((y + oy) / period + (x + ox) / period) % 2 == 0 {
            a[c]
        } else {
            b[c]
        }
    })
}

fn ramp(h: usize, w: usize, rng: &mut Rng) -> Tensor<f64> {
    let plane = h * w;
    let mut coef = [[0.0; 3]; 3];
    for c in &mut coef {
        let angle = 2.0 * std::f64::consts::PI * rng.uniform();
        let lo = 0.1 * rng.uniform();
        let span = 0.5 + 0.4 * rng.uniform();
        *c = [angle.cos() * span, angle.sin() * span, lo];
    }
    Tensor::from_fn([3, h, w], |i| {
        let (c, y, x) = (i / plane, (i % plane) / w, i % w);
        let u = (y as f64 + 0.5) / h as f64 - 0.5;
        let v = (x as f64 + 0.5) / w as f64 - 0.5;
        let [a, b, lo] = coef[c];
        (0.5 + a * u + b * v + lo).clamp(0.0, 1.0)
    })
}

/// Sum of a few random plane waves with integer frequencies, periodic on the
/// frame so that wrap-around shifts stay seamless.
fn texture(h: usize, w: usize, rng: &mut Rng) -> Tensor<f64> {
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            let fy = rng.below(7) as f64 - 3.0;
            let fx = rng.below(7) as f64 - 3.0 + 1.0;
            let phase = 2.0 * std::f64::consts::PI * rng.uniform();
            let amp = [
                rng.uniform() - 0.5,
                rng.uniform() - 0.5,
                rng.uniform() - 0.5,
            ];
            (fy, fx, phase, amp)
        })
        .collect();
    let base = color(rng);
    let plane = h * w;
    Tensor::from_fn([3, h, w], |i| {
        let (c, y, x) = (i / plane, (i % plane) / w, i % w);
        let u = 2.0 * std::f64::consts::PI * y as f64 / h as f64;
        let v = 2.0 * std::f64::consts::PI * x as f64 / w as f64;
        let s: f64 = waves
            .iter()
            .map(|&(fy, fx, phase, amp)| amp[c] * 0.5 * (fy * u + fx * v + phase).sin())
            .sum();
        (0.25 + 0.5 * base[c] + s).clamp(0.0, 1.0)
    })
}

/// Paints a few solid axis-aligned rectangles and discs.
fn overlay_shapes(img: &mut Tensor<f64>, h: usize, w: usize, rng: &mut Rng) {
    let plane = h * w;
    for _ in 0..3 {
        let col = color(rng);
        let cy = rng.below(h) as f64;
        let cx = rng.below(w) as f64;
        let ry = (h as f64 / 10.0) * (1.0 + 1.5 * rng.uniform());
        let rx = (w as f64 / 10.0) * (1.0 + 1.5 * rng.uniform());
        let disc = rng.uniform() < 0.5;
        let data = img.data_mut();
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                let inside = if disc {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    for (c, v) in col.iter().enumerate() {
                        data[c * plane + y * w + x] = *v;
                    }
                }
            }
        }
    }
}

/// `out(y, x) = img(y - dy, x - dx)` with wrap-around, for `[C, H, W]`.
pub fn shift_wrap(img: &Tensor<f64>, dy: i64, dx: i64) -> Tensor<f64> {
    let (_, h, w) = img.dims3("shift_wrap").expect("image is [C, H, W]");
    let plane = h * w;
    let src = img.data();
    Tensor::from_fn(img.shape().to_vec(), |i| {
        let (c, y, x) = (i / plane, (i % plane) / w, i % w);
        let sy = (y as i64 - dy).rem_euclid(h as i64) as usize;
        let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
        src[c * plane + sy * w + sx]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checker_period_two_alternates() {
        let opts = SynthOptions {
            period: Some(2),
            monochrome: true,
            ..Default::default()
        };
        let clip = synth_clip_with(ClipKind::Checker, 1, 16, 16, 1, opts).unwrap();
        let f = clip.frame(0);
        let d = f.data();
        for y in 0..16 {
            for x in 0..16 {
                let v = d[y * 16 + x];
                assert!(v == 0.0 || v == 1.0);
                assert_eq!(v, d[(y ^ 1) * 16 + x], "blocks are 2 wide");
                if y + 2 < 16 {
                    assert_ne!(v, d[(y + 2) * 16 + x]);
                }
            }
        }
    }

    #[test]
    fn moving_pattern_shifts_by_velocity() {
        let opts = SynthOptions {
            velocity: Some((1, 0)),
            ..Default::default()
        };
        let clip = synth_clip_with(ClipKind::MovingPattern, 3, 16, 20, 5, opts).unwrap();
        for t in 0..2 {
            assert_eq!(clip.frame(t + 1), shift_wrap(&clip.frame(t), 1, 0));
        }
        let flow = clip.flow.as_ref().unwrap();
        let plane = 16 * 20;
        assert!(flow.data()[..plane].iter().all(|&v| v == 1.0));
        assert!(flow.data()[plane..2 * plane].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_clip() {
        for kind in ClipKind::ALL {
            let a = synth_clip(kind, 2, 16, 16, 11).unwrap();
            let b = synth_clip(kind, 2, 16, 16, 11).unwrap();
            assert_eq!(a, b);
            assert!(a.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_small_and_unknown() {
        assert!(synth_clip(ClipKind::Ramp, 1, 8, 16, 0).is_err());
        assert!("plasma".parse::<ClipKind>().is_err());
        assert_eq!(
            "moving_pattern".parse::<ClipKind>().unwrap(),
            ClipKind::MovingPattern
        );
    }
}
