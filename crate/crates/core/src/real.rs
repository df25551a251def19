//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Everything is written against [`Real`], implemented for `f32` and `f64`.
//! Special functions that need more precision than `f32` offers
//! (normal quantiles, `erfc`) are evaluated in `f64` and cast back.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Largest `x` for which `exp(x)` is finite.
    const EXP_MAX: Self;
    /// Below this (natural log) value `exp_in_place` returns exactly zero.
    const EXP_MIN: Self;

    /// Lossless-enough conversion from an `f64` literal.
    #[inline(always)]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline(always)]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline(always)]
    fn from_usize_c(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    /// Complementary error function.
    fn erfc_real(self) -> Self;

    /// Element-wise `exp` over a slice, written so that the compiler emits
    /// SIMD code. Accuracy is within a few ulp of `std` for arguments in
    /// `[EXP_MIN, EXP_MAX]`; smaller arguments give `0`, larger give `inf`.
    fn exp_in_place(xs: &mut [Self]);

    /// Element-wise `exp(-0.5 * x)` fused into one pass.
    fn exp_neg_half_in_place(xs: &mut [Self]) {
        let mh = Self::c(-0.5);
        for v in xs.iter_mut() {
            *v *= mh;
        }
        Self::exp_in_place(xs);
    }
}

const LN2_HI_64: f64 = 6.931_471_803_691_238_164_90e-01;
const LN2_LO_64: f64 = 1.908_214_929_270_587_700_02e-10;

#[inline(always)]
fn exp_lane_f64(x: f64) -> f64 {
    const MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let xc = x.clamp(-708.0, 709.0);
    let t = xc.mul_add(std::f64::consts::LOG2_E, MAGIC);
    let n = t - MAGIC;
    let r = (-n).mul_add(LN2_HI_64, xc);
    let r = (-n).mul_add(LN2_LO_64, r);
    // degree-13 Taylor polynomial on |r| <= ln2/2, Estrin layout
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let a01 = r + 1.0;
    let a23 = r.mul_add(1.0 / 6.0, 0.5);
    let a45 = r.mul_add(1.0 / 120.0, 1.0 / 24.0);
    let a67 = r.mul_add(1.0 / 5_040.0, 1.0 / 720.0);
    let a89 = r.mul_add(1.0 / 362_880.0, 1.0 / 40_320.0);
    let a1011 = r.mul_add(1.0 / 39_916_800.0, 1.0 / 3_628_800.0);
    let a1213 = r.mul_add(1.0 / 6_227_020_800.0, 1.0 / 479_001_600.0);
    let b03 = a23.mul_add(r2, a01);
    let b47 = a67.mul_add(r2, a45);
    let b811 = a1011.mul_add(r2, a89);
    let c07 = b47.mul_add(r4, b03);
    let c813 = a1213.mul_add(r4, b811);
    let p = c813.mul_add(r8, c07);
    let bits = t
        .to_bits()
        .wrapping_sub(MAGIC.to_bits())
        .wrapping_add(1023)
        << 52;
    let y = p * f64::from_bits(bits);
    let y = if x < -708.0 { 0.0 } else { y };
    if x > 709.0 {
        f64::INFINITY
    } else {
        y
    }
}

#[inline(always)]
fn exp_lane_f32(x: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0; // 1.5 * 2^23
    const LN2_HI: f32 = 0.693_145_751_953_125;
    const LN2_LO: f32 = 1.428_606_765_330_187_045e-06;
    let xc = x.clamp(-87.0, 88.0);
    let t = xc.mul_add(std::f32::consts::LOG2_E, MAGIC);
    let n = t - MAGIC;
    let r = (-n).mul_add(LN2_HI, xc);
    let r = (-n).mul_add(LN2_LO, r);
    let mut p = 1.0 / 5_040.0;
    p = p.mul_add(r, 1.0 / 720.0);
    p = p.mul_add(r, 1.0 / 120.0);
    p = p.mul_add(r, 1.0 / 24.0);
    p = p.mul_add(r, 1.0 / 6.0);
    p = p.mul_add(r, 0.5);
    p = p.mul_add(r, 1.0);
    p = p.mul_add(r, 1.0);
    let bits = t.to_bits().wrapping_sub(MAGIC.to_bits()).wrapping_add(127) << 23;
    let y = p * f32::from_bits(bits);
    let y = if x < -87.0 { 0.0 } else { y };
    if x > 88.0 {
        f32::INFINITY
    } else {
        y
    }
}

impl Real for f64 {
    const EXP_MAX: f64 = 709.0;
    const EXP_MIN: f64 = -708.0;

    fn erfc_real(self) -> f64 {
        libm::erfc(self)
    }

    fn exp_in_place(xs: &mut [f64]) {
        for v in xs.iter_mut() {
            *v = exp_lane_f64(*v);
        }
    }

    fn exp_neg_half_in_place(xs: &mut [f64]) {
        for v in xs.iter_mut() {
            *v = exp_lane_f64(-0.5 * *v);
        }
    }
}

impl Real for f32 {
    const EXP_MAX: f32 = 88.0;
    const EXP_MIN: f32 = -87.0;

    fn erfc_real(self) -> f32 {
        libm::erfc(self as f64) as f32
    }

    fn exp_in_place(xs: &mut [f32]) {
        for v in xs.iter_mut() {
            *v = exp_lane_f32(*v);
        }
    }

    fn exp_neg_half_in_place(xs: &mut [f32]) {
        for v in xs.iter_mut() {
            *v = exp_lane_f32(-0.5 * *v);
        }
    }
}

/// Cast a slice of `f64` into `T`.
pub fn cast_vec<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::c(x)).collect()
}
