use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Element type tag, also the on-disk dtype code of the tensor container.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element of a [`Tensor`](crate::Tensor).
///
/// Implemented for `f32` (training default) and `f64` (verification).
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + Sum + 'static {
    const DTYPE: DType;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Raw bit pattern widened to 64 bits, used for checksums and bit-exact comparison.
    fn bits(self) -> u64;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from the first `DTYPE.size_of()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a·b + beta * c` for an `m×k` by `k×n` product with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

fn span(rows: usize, cols: usize, strides: (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * strides.0 + (cols - 1) as isize * strides.1) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $gemm:path, $bits:expr) => {
        impl Scalar for $t {
            const DTYPE: DType = $dtype;

            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn bits(self) -> u64 {
                $bits(self)
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(
                    a.len() >= span(m, k, a_strides),
                    "gemm: lhs buffer too short"
                );
                assert!(
                    b.len() >= span(k, n, b_strides),
                    "gemm: rhs buffer too short"
                );
                assert!(
                    c.len() >= span(m, n, c_strides),
                    "gemm: output buffer too short"
                );
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every index the kernel touches,
                // and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, DType::F32, matrixmultiply::sgemm, |x: f32| x.to_bits()
    as u64);
impl_scalar!(f64, DType::F64, matrixmultiply::dgemm, |x: f64| x.to_bits());
