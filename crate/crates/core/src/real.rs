use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst};
use realfft::FftNum;

/// Scalar type of every tensor, spectrogram and signal in the crate.
///
/// Implemented for `f32` (training and inference) and `f64` (gradient
/// checks and reference computations).
pub trait Real:
    Float + FloatConst + FftNum + Default + Sum + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal into this precision.
    fn lit(x: f64) -> Self;

    fn to_f64(self) -> f64;

    /// Row-major matrix product `c = a·b` (or `c += a·b` when `accumulate`).
    ///
    /// `a` is `m×k` (stored `k×m` when `trans_a`), `b` is `k×n` (stored
    /// `n×k` when `trans_b`), `c` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    /// Elementwise `x·sigmoid(x)` in place.
    fn silu_slice(x: &mut [Self]);
}

fn silu_exact<T: Float>(x: &mut [T]) {
    for v in x.iter_mut() {
        let s = if *v >= T::zero() {
            T::one() / (T::one() + (-*v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        *v = *v * s;
    }
}

/// `exp` for `x` in `[-87, 88]`, branch-free so the loop vectorizes.
/// Relative error below 2e-7.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0;
    let x = x.max(-87.0).min(88.0);
    let k = x * std::f32::consts::LOG2_E + MAGIC;
    let n = k - MAGIC;
    let r = (x - n * 0.693_359_4) + n * 2.121_944_4e-4;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0 + r / 5040.0))))));
    // The low mantissa bits of `k` hold `n` offset by MAGIC's mantissa.
    let bits = k.to_bits().wrapping_sub(MAGIC.to_bits()).wrapping_add(127) << 23;
    p * f32::from_bits(bits)
}

fn silu_f32(x: &mut [f32]) {
    for v in x.iter_mut() {
        *v /= 1.0 + exp_f32(-*v);
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // (row stride, col stride) of the logical rows×cols view.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $silu:path) => {
        impl Real for $t {
            #[inline(always)]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the slice length assertions above cover every
                // element addressed by the given dimensions and strides.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
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

            fn silu_slice(x: &mut [Self]) {
                $silu(x)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, silu_f32);
impl_real!(f64, matrixmultiply::dgemm, silu_exact);
