//! Raw slice kernels behind the graph operations.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    /// Rows of the unfolded input matrix.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn macs(&self) -> u64 {
        (self.c_out * self.patch_len() * self.positions()) as u64
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds `[C, H, W]` into `[C·k·k, H'·W']`, zero outside the padded border.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `[C, H, W]`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, x: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c_in {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

fn unfold<'a, T: Scalar>(x: &'a [T], g: &ConvGeometry, scratch: &'a mut Vec<T>) -> &'a [T] {
    if g.is_pointwise() {
        x
    } else {
        scratch.clear();
        scratch.resize(g.patch_len() * g.positions(), T::zero());
        im2col(x, g, scratch);
        scratch
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &ConvGeometry,
) -> Vec<T> {
    let p = g.positions();
    let kk = g.patch_len();
    let mut out = vec![T::zero(); g.c_out * p];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(p).enumerate() {
            chunk.fill(b[co]);
        }
    }
    let mut scratch = Vec::new();
    let cols = unfold(x, g, &mut scratch);
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        g.c_out,
        kk,
        p,
        T::one(),
        weight,
        (kk as isize, 1),
        cols,
        (p as isize, 1),
        beta,
        &mut out,
        (p as isize, 1),
    );
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeometry,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let p = g.positions();
    let kk = g.patch_len();
    let (need_x, need_w, need_b) = need;

    let weight_grad = need_w.then(|| {
        let mut scratch = Vec::new();
        let cols = unfold(x, g, &mut scratch);
        let mut dw = vec![T::zero(); g.c_out * kk];
        // dW = dY · colsᵀ
        T::gemm(
            g.c_out,
            p,
            kk,
            T::one(),
            dy,
            (p as isize, 1),
            cols,
            (1, p as isize),
            T::zero(),
            &mut dw,
            (kk as isize, 1),
        );
        dw
    });

    let input_grad = need_x.then(|| {
        let mut dcols = vec![T::zero(); kk * p];
        // dcols = Wᵀ · dY
        T::gemm(
            kk,
            g.c_out,
            p,
            T::one(),
            weight,
            (1, kk as isize),
            dy,
            (p as isize, 1),
            T::zero(),
            &mut dcols,
            (p as isize, 1),
        );
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![T::zero(); g.c_in * g.h * g.w];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });

    let bias_grad = need_b.then(|| dy.chunks(p).map(|row| row.iter().copied().sum()).collect());

    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    }
}

/// `[C·r², H, W] -> [C, r·H, r·W]`, mapping `(c·r² + dy·r + dx, h, w)` to `(c, h·r + dy, w·r + dx)`.
pub fn pixel_shuffle<T: Scalar>(x: &[T], c_out: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (ho, wo) = (h * r, w * r);
    for c in 0..c_out {
        for dy in 0..r {
            for dx in 0..r {
                let src = &x[((c * r + dy) * r + dx) * h * w..][..h * w];
                for y in 0..h {
                    let row = &mut out[c * ho * wo + (y * r + dy) * wo..][..wo];
                    for xx in 0..w {
                        row[xx * r + dx] = src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle`]: `[C, r·H, r·W] -> [C·r², H, W]` where `h`, `w` are the output dims.
pub fn pixel_unshuffle<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (hi, wi) = (h * r, w * r);
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let dst = &mut out[((ch * r + dy) * r + dx) * h * w..][..h * w];
                for y in 0..h {
                    let row = &x[ch * hi * wi + (y * r + dy) * wi..][..wi];
                    for xx in 0..w {
                        dst[y * w + xx] = row[xx * r + dx];
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InterpMode {
    Nearest,
    Bilinear,
    Bicubic,
}

impl InterpMode {
    pub fn taps(self) -> usize {
        match self {
            InterpMode::Nearest => 1,
            InterpMode::Bilinear => 2,
            InterpMode::Bicubic => 4,
        }
    }
}

impl std::str::FromStr for InterpMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(InterpMode::Nearest),
            "bilinear" => Ok(InterpMode::Bilinear),
            "bicubic" => Ok(InterpMode::Bicubic),
            other => Err(format!("unknown interpolation mode `{other}`")),
        }
    }
}

impl std::fmt::Display for InterpMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InterpMode::Nearest => "nearest",
            InterpMode::Bilinear => "bilinear",
            InterpMode::Bicubic => "bicubic",
        })
    }
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Fixed-tap 1-D resampling operator for an integer upscale factor.
///
/// Sample positions are half-pixel centered, `src = (dst + 0.5) / r - 0.5`,
/// and out-of-range taps clamp to the edge.
#[derive(Clone, Debug)]
pub struct Resampler1d {
    pub n_in: usize,
    pub n_out: usize,
    pub taps: usize,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl Resampler1d {
    pub fn new(n_in: usize, r: usize, mode: InterpMode) -> Self {
        let n_out = n_in * r;
        let taps = mode.taps();
        let mut index = Vec::with_capacity(n_out * taps);
        let mut weight = Vec::with_capacity(n_out * taps);
        let clamp = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
        for o in 0..n_out {
            let src = (o as f64 + 0.5) / r as f64 - 0.5;
            match mode {
                InterpMode::Nearest => {
                    index.push(o / r);
                    weight.push(1.0);
                }
                InterpMode::Bilinear => {
                    let i0 = src.floor();
                    let t = src - i0;
                    index.extend([clamp(i0 as isize), clamp(i0 as isize + 1)]);
                    weight.extend([1.0 - t, t]);
                }
                InterpMode::Bicubic => {
                    let i0 = src.floor();
                    let t = src - i0;
                    for j in -1..=2isize {
                        index.push(clamp(i0 as isize + j));
                        weight.push(cubic_weight(t - j as f64));
                    }
                }
            }
        }
        Self {
            n_in,
            n_out,
            taps,
            index,
            weight,
        }
    }

    fn taps_of(&self, o: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = o * self.taps;
        self.index[s..s + self.taps]
            .iter()
            .copied()
            .zip(self.weight[s..s + self.taps].iter().copied())
    }
}

/// Separable 2-D upsampling of `planes` stacked `[H, W]` images.
pub fn resample_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    ry: &Resampler1d,
    rx: &Resampler1d,
) -> Vec<T> {
    let (h, w, ho, wo) = (ry.n_in, rx.n_in, ry.n_out, rx.n_out);
    let mut tmp = vec![T::zero(); planes * h * wo];
    for p in 0..planes {
        for y in 0..h {
            let src = &x[(p * h + y) * w..][..w];
            let dst = &mut tmp[(p * h + y) * wo..][..wo];
            for (o, d) in dst.iter_mut().enumerate() {
                *d = rx
                    .taps_of(o)
                    .fold(T::zero(), |acc, (i, wt)| acc + src[i] * T::of(wt));
            }
        }
    }
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        for o in 0..ho {
            let dst = &mut out[(p * ho + o) * wo..][..wo];
            for (i, wt) in ry.taps_of(o) {
                let src = &tmp[(p * h + i) * wo..][..wo];
                let wt = T::of(wt);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s * wt;
                }
            }
        }
    }
    out
}

/// Transpose of [`resample_forward`].
pub fn resample_adjoint<T: Scalar>(
    dy: &[T],
    planes: usize,
    ry: &Resampler1d,
    rx: &Resampler1d,
) -> Vec<T> {
    let (h, w, ho, wo) = (ry.n_in, rx.n_in, ry.n_out, rx.n_out);
    if ry.taps == 1 && rx.taps == 1 {
        // Nearest: scatter in output raster order, so each source pixel sums
        // its block row by row, the same order as channel repeat + pixel shuffle.
        let mut dx = vec![T::zero(); planes * h * w];
        for p in 0..planes {
            for o in 0..ho {
                let src = &dy[(p * ho + o) * wo..][..wo];
                let dst = &mut dx[(p * h + ry.index[o]) * w..][..w];
                for (ox, &s) in src.iter().enumerate() {
                    let i = rx.index[ox];
                    dst[i] = dst[i] + s;
                }
            }
        }
        return dx;
    }
    let mut tmp = vec![T::zero(); planes * h * wo];
    for p in 0..planes {
        for o in 0..ho {
            let src = &dy[(p * ho + o) * wo..][..wo];
            for (i, wt) in ry.taps_of(o) {
                let dst = &mut tmp[(p * h + i) * wo..][..wo];
                let wt = T::of(wt);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s * wt;
                }
            }
        }
    }
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            let src = &tmp[(p * h + y) * wo..][..wo];
            let dst = &mut dx[(p * h + y) * w..][..w];
            for (o, &s) in src.iter().enumerate() {
                for (i, wt) in rx.taps_of(o) {
                    dst[i] = dst[i] + s * T::of(wt);
                }
            }
        }
    }
    dx
}

/// Source index of each padded position under edge replication.
fn replicate_index(i: usize, pad: usize, n: usize) -> usize {
    i.saturating_sub(pad).min(n - 1)
}

/// Edge-replicate padding of `planes` planes of `h × w` by `pad` on every side.
pub fn pad_replicate<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, pad: usize) -> Vec<T> {
    let (ho, wo) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let plane = &x[p * h * w..][..h * w];
        for y in 0..ho {
            let row = &plane[replicate_index(y, pad, h) * w..][..w];
            out.extend((0..wo).map(|xo| row[replicate_index(xo, pad, w)]));
        }
    }
    out
}

/// Adjoint of [`pad_replicate`]: border gradients fold back onto edge pixels.
pub fn pad_replicate_adjoint<T: Scalar>(
    dy: &[T],
    planes: usize,
    h: usize,
    w: usize,
    pad: usize,
) -> Vec<T> {
    let (ho, wo) = (h + 2 * pad, w + 2 * pad);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * ho * wo..][..ho * wo];
        let dst = &mut dx[p * h * w..][..h * w];
        for y in 0..ho {
            let row = replicate_index(y, pad, h) * w;
            for xo in 0..wo {
                let i = row + replicate_index(xo, pad, w);
                dst[i] = dst[i] + src[y * wo + xo];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_kernel_partition_of_unity() {
        for i in 0..10 {
            let t = i as f64 / 10.0;
            let s: f64 = (-1..=2).map(|j| cubic_weight(t - j as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
    }

    #[test]
    fn resampler_rows_sum_to_one() {
        for mode in [
            InterpMode::Nearest,
            InterpMode::Bilinear,
            InterpMode::Bicubic,
        ] {
            let rs = Resampler1d::new(5, 3, mode);
            for o in 0..rs.n_out {
                let s: f64 = rs.taps_of(o).map(|(_, w)| w).sum();
                assert!((s - 1.0).abs() < 1e-12, "{mode} row {o}");
            }
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeometry {
            c_in: 2,
            h: 5,
            w: 4,
            c_out: 1,
            k: 3,
            stride: 2,
            padding: 1,
            h_out: 3,
            w_out: 2,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.patch_len() * g.positions())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
