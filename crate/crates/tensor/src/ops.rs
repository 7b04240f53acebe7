//! Tensor-level forward operations, usable without a graph.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry, InterpMode, Resampler1d};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    const OP: &str = "conv2d";
    let (c_in, h, w) = input.dims3(OP)?;
    let [c_out, wc_in, kh, kw] = *weight.shape() else {
        return Err(TensorError::Rank {
            op: OP,
            expected: 4,
            got: weight.rank(),
        });
    };
    if wc_in != c_in {
        return Err(TensorError::Dimension {
            op: OP,
            axis: 1,
            expected: c_in,
            got: wc_in,
        });
    }
    if kh != kw {
        return Err(TensorError::Dimension {
            op: OP,
            axis: 3,
            expected: kh,
            got: kw,
        });
    }
    if kh % 2 == 0 {
        return Err(TensorError::Config {
            op: OP,
            msg: format!("kernel size {kh} is not odd"),
        });
    }
    if stride == 0 {
        return Err(TensorError::Config {
            op: OP,
            msg: "stride must be at least 1".into(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(TensorError::Dimension {
                op: OP,
                axis: 0,
                expected: c_out,
                got: b.shape().first().copied().unwrap_or(0),
            });
        }
    }
    let out_dim = |n: usize, axis: usize| -> Result<usize> {
        let padded = n + 2 * padding;
        if padded < kh {
            return Err(TensorError::Dimension {
                op: OP,
                axis,
                expected: kh,
                got: padded,
            });
        }
        Ok((padded - kh) / stride + 1)
    };
    Ok(ConvGeometry {
        c_in,
        h,
        w,
        c_out,
        k: kh,
        stride,
        padding,
        h_out: out_dim(h, 1)?,
        w_out: out_dim(w, 2)?,
    })
}

/// Cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, k, k]` weights.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, stride, padding)?;
    let out = kernels::conv2d_forward(input.data(), weight.data(), bias.map(|b| b.data()), &g);
    Tensor::new([g.c_out, g.h_out, g.w_out], out)
}

pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("pixel_shuffle")?;
    if r == 0 || c % (r * r) != 0 {
        return Err(TensorError::Config {
            op: "pixel_shuffle",
            msg: format!("{c} channels not divisible by r²={}", r * r),
        });
    }
    let c_out = c / (r * r);
    Tensor::new(
        [c_out, h * r, w * r],
        kernels::pixel_shuffle(input.data(), c_out, h, w, r),
    )
}

pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("pixel_unshuffle")?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(TensorError::Config {
            op: "pixel_unshuffle",
            msg: format!("spatial size {h}x{w} not divisible by r={r}"),
        });
    }
    let (ho, wo) = (h / r, w / r);
    Tensor::new(
        [c * r * r, ho, wo],
        kernels::pixel_unshuffle(input.data(), c, ho, wo, r),
    )
}

pub fn pad_replicate<T: Scalar>(input: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("pad_replicate")?;
    Tensor::new(
        [c, h + 2 * pad, w + 2 * pad],
        kernels::pad_replicate(input.data(), c, h, w, pad),
    )
}

pub fn parse_interp_mode(name: &str) -> Result<InterpMode> {
    name.parse().map_err(|msg| TensorError::Config {
        op: "interpolate_upsample",
        msg,
    })
}

pub(crate) fn resamplers(shape: &[usize], r: usize) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::Rank {
            op: "interpolate_upsample",
            expected: 2,
            got: shape.len(),
        });
    }
    if r == 0 {
        return Err(TensorError::Config {
            op: "interpolate_upsample",
            msg: "scale factor must be at least 1".into(),
        });
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    let planes = shape[..shape.len() - 2].iter().product();
    Ok((planes, h, w))
}

/// Upsamples the last two axes by `r`; leading axes are independent planes.
pub fn interpolate_upsample<T: Scalar>(
    input: &Tensor<T>,
    r: usize,
    mode: InterpMode,
) -> Result<Tensor<T>> {
    let (planes, h, w) = resamplers(input.shape(), r)?;
    let ry = Resampler1d::new(h, r, mode);
    let rx = Resampler1d::new(w, r, mode);
    let mut shape = input.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = h * r;
    shape[n - 1] = w * r;
    Tensor::new(
        shape,
        kernels::resample_forward(input.data(), planes, &ry, &rx),
    )
}

/// `[C, ...] -> [C·times, ...]`, channel `c` copied into `c·times .. c·times + times`.
pub fn repeat_channels<T: Scalar>(input: &Tensor<T>, times: usize) -> Result<Tensor<T>> {
    let c = *input.shape().first().ok_or(TensorError::Rank {
        op: "repeat_channels",
        expected: 1,
        got: 0,
    })?;
    let plane = input.numel() / c.max(1);
    let mut data = Vec::with_capacity(input.numel() * times);
    for ch in input.data().chunks(plane.max(1)).take(c) {
        for _ in 0..times {
            data.extend_from_slice(ch);
        }
    }
    let mut shape = input.shape().to_vec();
    shape[0] = c * times;
    Tensor::new(shape, data)
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(TensorError::Rank {
            op: "matmul",
            expected: 2,
            got: if a.rank() != 2 { a.rank() } else { b.rank() },
        });
    };
    if k != k2 {
        return Err(TensorError::Dimension {
            op: "matmul",
            axis: 0,
            expected: k,
            got: k2,
        });
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        (k as isize, 1),
        b.data(),
        (n as isize, 1),
        T::zero(),
        &mut out,
        (n as isize, 1),
    );
    Tensor::new([m, n], out)
}

/// `½ Σ (exp(logvar) + mean² − 1 − logvar)`: KL of a diagonal Gaussian from N(0, I).
pub fn gaussian_kl<T: Scalar>(mean: &Tensor<T>, logvar: &Tensor<T>) -> Result<T> {
    crate::tensor::ensure_same_shape("gaussian_kl", mean.shape(), logvar.shape())?;
    let half = T::of(0.5);
    Ok(mean
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &lv)| half * (lv.exp() + m * m - T::one() - lv))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn replicate_padding_copies_edges() {
        let x = Tensor::<f64>::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pad_replicate(&x, 1).unwrap();
        assert_eq!(p.shape(), &[1, 4, 4]);
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(p.data(), &expected);
        assert_eq!(pad_replicate(&x, 0).unwrap(), x);
    }

    /// Direct six-fold loop oracle, independent of the im2col path.
    fn conv_naive(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (ci, h, wd) = x.dims3("t").unwrap();
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros([co, ho, wo]);
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.data()[(c * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * ci + c) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = Rng::new(1);
        let x = Tensor::<f64>::randn([3, 5, 6], &mut rng);
        let mut w = Tensor::zeros([3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &w, Some(&Tensor::zeros([3])), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones_sum() {
        let x = Tensor::<f64>::full([1, 3, 3], 1.0);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = Rng::new(11);
        // The two samples of a 2×3×8×8 batch.
        for _ in 0..2 {
            let x = Tensor::<f64>::randn([3, 8, 8], &mut rng);
            let w = Tensor::randn([4, 3, 3, 3], &mut rng);
            let b = Tensor::randn([4], &mut rng);
            for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
                let fast = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
                let slow = conv_naive(&x, &w, &b, stride, pad);
                assert_eq!(fast.shape(), slow.shape());
                for (a, e) in fast.data().iter().zip(slow.data()) {
                    assert!(
                        (a - e).abs() <= 1e-6 * e.abs().max(1e-12) + 1e-12,
                        "{a} vs {e}"
                    );
                }
            }
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros([3, 8, 8]);
        let w = Tensor::zeros([4, 2, 3, 3]);
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        assert!(matches!(
            err,
            TensorError::Dimension {
                axis: 1,
                expected: 3,
                got: 2,
                ..
            }
        ));
        let even = Tensor::zeros([4, 3, 2, 2]);
        assert!(matches!(
            conv2d(&x, &even, None, 1, 1),
            Err(TensorError::Config { .. })
        ));
        let big = Tensor::zeros([4, 3, 11, 11]);
        assert!(conv2d(&x, &big, None, 1, 0).is_err());
    }

    #[test]
    fn pixel_shuffle_layout() {
        let x = Tensor::<f64>::new([4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert!(matches!(
            pixel_shuffle(&Tensor::<f64>::zeros([3, 2, 2]), 2),
            Err(TensorError::Config { .. })
        ));
    }

    #[test]
    fn pixel_shuffle_index_map() {
        let (c, r, h, w) = (2, 3, 2, 4);
        let x = Tensor::<f64>::from_fn([c * r * r, h, w], |i| i as f64);
        let y = pixel_shuffle(&x, r).unwrap();
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    for yy in 0..h {
                        for xx in 0..w {
                            let src = ((ch * r * r + dy * r + dx) * h + yy) * w + xx;
                            let dst = (ch * h * r + yy * r + dy) * w * r + xx * r + dx;
                            assert_eq!(y.data()[dst], x.data()[src]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn interpolate_identity_and_nearest() {
        let x = Tensor::<f64>::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        for mode in [
            InterpMode::Nearest,
            InterpMode::Bilinear,
            InterpMode::Bicubic,
        ] {
            assert_eq!(interpolate_upsample(&x, 1, mode).unwrap(), x);
        }
        let y = interpolate_upsample(&x, 2, InterpMode::Nearest).unwrap();
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn bilinear_preserves_linear_ramp_away_from_clamped_edge() {
        // x[i, j] = 2i + 3j + 1. Half-pixel sampling puts output (o) at input
        // coordinate (o + 0.5)/r - 0.5, which stays inside [0, n-1] except for
        // the outermost output sample on each side, where the edge clamps.
        let (h, w, r) = (5, 7, 2);
        let x = Tensor::<f64>::from_fn([1, h, w], |i| {
            2.0 * (i / w) as f64 + 3.0 * (i % w) as f64 + 1.0
        });
        let y = interpolate_upsample(&x, r, InterpMode::Bilinear).unwrap();
        let coord =
            |o: usize, n: usize| ((o as f64 + 0.5) / r as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        for oy in 0..h * r {
            for ox in 0..w * r {
                let expected = 2.0 * coord(oy, h) + 3.0 * coord(ox, w) + 1.0;
                let got = y.data()[oy * w * r + ox];
                assert!(
                    (got - expected).abs() < 1e-12,
                    "({oy},{ox}) {got} vs {expected}"
                );
            }
        }
        // Interior samples are an exact ramp with step 1/r.
        assert!((y.data()[2 * w * r + 3] - y.data()[2 * w * r + 2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_mode_is_config_error() {
        assert!(matches!(
            parse_interp_mode("lanczos"),
            Err(TensorError::Config { .. })
        ));
        assert_eq!(parse_interp_mode("bicubic").unwrap(), InterpMode::Bicubic);
    }

    #[test]
    fn kl_closed_forms() {
        let z = Tensor::<f64>::zeros([4]);
        assert_eq!(gaussian_kl(&z, &z).unwrap(), 0.0);
        let m = Tensor::<f64>::full([1], 1.0);
        let lv = Tensor::<f64>::zeros([1]);
        assert_eq!(gaussian_kl(&m, &lv).unwrap(), 0.5);
    }
}
