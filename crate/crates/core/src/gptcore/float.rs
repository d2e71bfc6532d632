//! Scalar abstraction over `f32` (training) and `f64` (gradient checks), and
//! strided GEMM wrappers around `matrixmultiply`.
//!
//! `matrixmultiply` runs single threaded with a summation order fixed by the
//! matrix shapes, so identical inputs give bitwise identical outputs.

use std::fmt::Debug;

pub trait Float:
    num_traits::Float + num_traits::FromPrimitive + std::iter::Sum + Default + Debug + Send + Sync + 'static
{
    /// Bytes per element in checkpoints.
    const BYTES: u8;

    /// # Safety
    /// Pointers and strides must describe valid matrices (see
    /// `matrixmultiply::sgemm`).
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Element-wise `exp` in place.
    fn exp_in_place(xs: &mut [Self]);

    fn from_f64_lossy(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Float for f32 {
    const BYTES: u8 = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn exp_in_place(xs: &mut [f32]) {
        for x in xs {
            *x = exp_f32(*x);
        }
    }
}

impl Float for f64 {
    const BYTES: u8 = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn exp_in_place(xs: &mut [f64]) {
        for x in xs {
            *x = x.exp();
        }
    }
}

/// `exp` for `f32` by range reduction to `[-ln2/2, ln2/2]` and a degree-7
/// polynomial (Cephes coefficients), accurate to about 2 ulp. Written with
/// plain arithmetic so loops over slices vectorise; inputs are clamped to
/// `[-87, 88]`, so results stay finite and normal.
#[inline(always)]
pub fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = x.clamp(-87.0, 88.0);
    let n = (x * LOG2E + ROUND) - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let e = p * r * r + r + 1.0;
    let scale = f32::from_bits((((n as i32) + 127) as u32) << 23);
    e * scale
}

/// A read-only strided matrix view: element (i, j) is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct View<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> View<'a, F> {
    /// Row-major contiguous `rows x cols`.
    pub fn rm(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `cols x rows` buffer.
    pub fn rm_t(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: 1, cs: rows }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha * a * b + beta * c` where `c` is row-major with row stride `rsc`.
pub fn gemm<F: Float>(alpha: F, a: View<'_, F>, b: View<'_, F>, beta: F, c: &mut [F], rsc: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + n <= c.len(), "output out of bounds");
    if k == 0 {
        for i in 0..m {
            for x in &mut c[i * rsc..i * rsc + n] {
                *x = beta * *x;
            }
        }
        return;
    }
    a.check();
    b.check();
    // SAFETY: bounds of all three operands were checked above.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `y (+)= x * w^T` for row-major `x: rows x inner`, `w: out x inner`.
pub fn matmul_nt<F: Float>(x: &[F], rows: usize, inner: usize, w: &[F], out: usize, y: &mut [F], accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    gemm(F::one(), View::rm(x, rows, inner), View::rm_t(w, inner, out), beta, y, out);
}

/// `y (+)= a * b` for row-major `a: m x k`, `b: k x n`.
pub fn matmul_nn<F: Float>(a: &[F], m: usize, k: usize, b: &[F], n: usize, y: &mut [F], accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    gemm(F::one(), View::rm(a, m, k), View::rm(b, k, n), beta, y, n);
}

/// `y (+)= a^T * b` for row-major `a: k x m`, `b: k x n`.
pub fn matmul_tn<F: Float>(a: &[F], k: usize, m: usize, b: &[F], n: usize, y: &mut [F], accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    gemm(F::one(), View::rm_t(a, m, k), View::rm(b, k, n), beta, y, n);
}
