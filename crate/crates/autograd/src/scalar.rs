use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point element type usable on the tape.
///
/// Implemented for `f32` (training) and `f64` (oracle checks).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` on raw strided row/column views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n` views.
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

    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Shorthand for converting an `f64` literal into `S`.
#[inline]
pub fn lit<S: Scalar>(v: f64) -> S {
    S::from_f64_lossy(v)
}

/// `tanh` through a single `exp`; absolute error is within a few ulps of 1.
#[inline]
pub fn tanh<S: Scalar>(v: S) -> S {
    let e = (-(v.abs() + v.abs())).exp();
    let t = (S::one() - e) / (S::one() + e);
    if v < S::zero() {
        -t
    } else {
        t
    }
}

/// Transpose flags for [`gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// Row-major GEMM: `c (m x n) = alpha * op(a) * op(b) + beta * c`.
///
/// `a` is stored row-major as `m x k` (or `k x m` when transposed), same for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    ta: Trans,
    b: &[S],
    tb: Trans,
    beta: S,
    c: &mut [S],
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: out too short");
    if m == 0 || n == 0 {
        return;
    }
    if small_gemm(m, k, n, alpha, a, ta, b, tb, beta, c) {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    // SAFETY: lengths checked above; strides describe in-bounds row-major views.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: S = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    acc.iter().copied().sum::<S>() + tail
}

const SMALL_GEMM_MACS: usize = 1 << 16;

/// Direct loops for shapes where packing dominates: a short inner dimension
/// with a plain right-hand side, a tiny output with a long inner dimension,
/// or any product small enough overall.
#[allow(clippy::too_many_arguments)]
fn small_gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    ta: Trans,
    b: &[S],
    tb: Trans,
    beta: S,
    c: &mut [S],
) -> bool {
    let at = |i: usize, p: usize| match ta {
        Trans::No => a[i * k + p],
        Trans::Yes => a[p * m + i],
    };
    let tiny = m * k * n <= SMALL_GEMM_MACS;
    if (m * k <= 64 || tiny) && tb == Trans::No {
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            if beta == S::zero() {
                row.fill(S::zero());
            } else if beta != S::one() {
                row.iter_mut().for_each(|v| *v *= beta);
            }
            for p in 0..k {
                let w = alpha * at(i, p);
                for (o, &x) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += w * x;
                }
            }
        }
        return true;
    }
    if (m * n <= 64 || tiny) && ta == Trans::No && tb == Trans::Yes {
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let dot = dot(ar, &b[j * k..(j + 1) * k]);
                let o = &mut c[i * n + j];
                *o = if beta == S::zero() { alpha * dot } else { beta * *o + alpha * dot };
            }
        }
        return true;
    }
    false
}
