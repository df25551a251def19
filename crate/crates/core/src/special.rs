//! Normal distribution helpers and log-space accumulation.

use crate::real::Real;

/// Standard normal CDF.
pub fn norm_cdf<T: Real>(x: T) -> T {
    T::c(0.5) * (-x * T::FRAC_1_SQRT_2()).erfc_real()
}

/// Standard normal survival function, `1 - Phi(x)` without cancellation.
pub fn norm_sf<T: Real>(x: T) -> T {
    T::c(0.5) * (x * T::FRAC_1_SQRT_2()).erfc_real()
}

pub fn norm_pdf<T: Real>(x: T) -> T {
    (T::c(-0.5) * x * x).exp() / (T::TAU()).sqrt()
}

pub fn norm_logpdf<T: Real>(x: T) -> T {
    T::c(-0.5) * x * x - T::c(0.5) * T::TAU().ln()
}

/// `Phi(b) - Phi(a)` for `a <= b`, choosing the tail that avoids cancellation.
pub fn norm_interval<T: Real>(a: T, b: T) -> T {
    if a > T::zero() {
        norm_sf(a) - norm_sf(b)
    } else if b < T::zero() {
        norm_cdf(b) - norm_cdf(a)
    } else {
        T::one() - norm_cdf(a) - norm_sf(b)
    }
}

/// Inverse standard normal CDF (Wichura's AS241, ~1e-16 relative accuracy).
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_700_853)
                * r
                + 45921.953_931_549_871_457)
                * r
                + 13731.693_765_509_461_125)
                * r
                + 1971.590_950_306_551_442_7)
                * r
                + 133.141_667_891_784_377_02)
                * r
                + 3.387_132_872_796_366_608)
            / (((((((5226.495_278_852_545_925 * r + 28729.085_735_721_942_674) * r
                + 39307.895_800_092_710_61)
                * r
                + 21213.794_301_586_595_867)
                * r
                + 5394.196_021_424_751_077_1)
                * r
                + 687.187_007_492_057_908_95)
                * r
                + 42.313_330_701_600_911_252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.745_450_142_783_414_076_4e-4 * r + 0.022_723_844_989_269_184_583) * r
            + 0.241_780_725_177_450_611_77)
            * r
            + 1.270_458_252_452_368_382_6)
            * r
            + 3.647_848_324_763_204_605_04)
            * r
            + 5.769_497_221_460_691_405_5)
            * r
            + 4.630_337_846_156_545_295_9)
            * r
            + 1.423_437_110_749_683_577_34)
            / (((((((1.050_750_071_644_416_843_5e-9 * r + 5.475_938_084_995_344_946e-4)
                * r
                + 0.015_198_666_563_616_457_2)
                * r
                + 0.148_103_976_427_480_074_59)
                * r
                + 0.689_767_334_985_100_004_55)
                * r
                + 1.676_384_830_183_803_849_4)
                * r
                + 2.053_191_626_637_758_821_87)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.010_334_399_292_288_132_65e-7 * r + 2.711_555_568_743_487_578_11e-5) * r
            + 0.001_242_660_947_388_078_438_6)
            * r
            + 0.026_532_189_526_576_123_093)
            * r
            + 0.296_560_571_828_504_891_23)
            * r
            + 1.784_826_539_917_291_335_8)
            * r
            + 5.463_784_911_164_114_369_9)
            * r
            + 6.657_904_643_501_103_777_2)
            / (((((((2.044_263_103_389_939_785_64e-15 * r + 1.421_511_758_316_445_887_88e-7)
                * r
                + 1.846_318_317_510_054_681_8e-5)
                * r
                + 7.868_691_311_456_132_591e-4)
                * r
                + 0.014_875_361_290_850_614_852)
                * r
                + 0.136_929_880_922_735_805_31)
                * r
                + 0.599_832_206_555_887_937_69)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Quantile of a standard normal truncated to `[a, b]` at level `u in [0,1]`.
///
/// Works from whichever tail keeps the probabilities away from 1 so that
/// intervals far out in either tail keep full relative precision.
pub fn truncated_std_normal_ppf(a: f64, b: f64, u: f64) -> f64 {
    let x = if a >= 0.0 {
        let (sa, sb) = (norm_sf(a), norm_sf(b));
        -norm_ppf(sa - u * (sa - sb))
    } else {
        let (ca, cb) = (norm_cdf(a), norm_cdf(b));
        if b <= 0.0 || cb - ca > 0.0 {
            norm_ppf(ca + u * (cb - ca))
        } else {
            a
        }
    };
    if x.is_nan() {
        return 0.5 * (a.max(-40.0) + b.min(40.0));
    }
    x.clamp(a, b)
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln(sum_i exp(v_i))`; `-inf` for an empty slice.
pub fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    if m == T::infinity() {
        return m;
    }
    let s: T = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((norm_cdf(1.0_f64) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_sf(-1.0_f64) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_sf(10.0_f64) / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
        assert_eq!(norm_cdf(0.0_f64), 0.5);
    }

    #[test]
    fn ppf_inverts_cdf() {
        for &p in &[1e-300, 1e-20, 1e-8, 0.001, 0.2, 0.5, 0.75, 0.999, 1.0 - 1e-12] {
            let x = norm_ppf(p);
            let back = if x < 0.0 { norm_cdf(x) } else { 1.0 - norm_sf(x) };
            assert!((back - p).abs() <= 1e-14 * p.max(1e-300) + 1e-16, "p={p}");
        }
        assert!((norm_ppf(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
    }

    #[test]
    fn interval_far_tail() {
        let v = norm_interval(9.0_f64, 10.0);
        let want = norm_sf(9.0_f64) - norm_sf(10.0);
        assert!(v > 0.0 && (v - want).abs() < 1e-30);
        assert!((norm_interval(-1.0_f64, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
    }

    #[test]
    fn truncated_ppf_stays_inside() {
        for &(a, b) in &[(-1.0, 1.0), (8.0, 9.0), (-12.0, -11.0), (-0.5, 30.0)] {
            for i in 0..=20 {
                let u = i as f64 / 20.0;
                let x = truncated_std_normal_ppf(a, b, u);
                assert!(x >= a && x <= b, "a={a} b={b} u={u} x={x}");
            }
        }
        assert!((truncated_std_normal_ppf(-1.0, 1.0, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_stable() {
        let v = [-1000.0_f64, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert!((log_add_exp(0.0_f64, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
    }
}
