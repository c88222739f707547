use num_traits::Float;
use std::fmt::{Debug, Display};

/// Floating point element type usable in tensors.
///
/// Training runs in `f32`; gradient checking runs in `f64`.
pub trait Real:
    Float + Debug + Display + Default + Send + Sync + std::iter::Sum + 'static
{
    /// Code stored in the VRT1 header.
    const DTYPE_CODE: u8;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for row-major `a: m×k`, `b: k×n`, `c: m×n`
    /// given explicit row/column strides.
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

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    const BYTES: usize;
}

macro_rules! check_extent {
    ($buf:expr, $rows:expr, $cols:expr, $s:expr) => {
        assert!(
            $rows == 0
                || $cols == 0
                || (($rows as isize - 1) * $s.0 + ($cols as isize - 1) * $s.1) < $buf.len() as isize
        );
    };
}

impl Real for f32 {
    const DTYPE_CODE: u8 = 0;
    const NAME: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
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
        check_extent!(a, m, k, a_strides);
        check_extent!(b, k, n, b_strides);
        check_extent!(c, m, n, c_strides);
        // SAFETY: the extent checks above guarantee every addressed element
        // lies inside its slice.
        unsafe {
            matrixmultiply::sgemm(
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

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE_CODE: u8 = 1;
    const NAME: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
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
        check_extent!(a, m, k, a_strides);
        check_extent!(b, k, n, b_strides);
        check_extent!(c, m, n, c_strides);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
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

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
