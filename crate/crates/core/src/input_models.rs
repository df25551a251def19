//! Product input densities built from independent univariate marginals,
//! plus the affine map into the standardized coordinates used by the
//! surrogate and the proposal.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::points::PointSet;
use crate::real::Real;
use crate::rng::open_unit;
use crate::special::{norm_cdf, norm_interval, norm_ppf, truncated_std_normal_ppf};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Lognormal { mu_log: f64, sigma_log: f64 },
    TruncatedNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
}

impl Marginal {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::Uniform { lo, hi }.validated()
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::Normal { mean, sd }.validated()
    }

    pub fn lognormal(mu_log: f64, sigma_log: f64) -> Result<Self> {
        Self::Lognormal { mu_log, sigma_log }.validated()
    }

    /// Lognormal with the given arithmetic mean and coefficient of variation.
    pub fn lognormal_from_mean_cv(mean: f64, cv: f64) -> Result<Self> {
        if !(mean > 0.0) || !(cv > 0.0) {
            return Err(invalid("lognormal mean and cv must be positive"));
        }
        let s2 = (1.0 + cv * cv).ln();
        Self::lognormal(mean.ln() - 0.5 * s2, s2.sqrt())
    }

    pub fn truncated_normal(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::TruncatedNormal { mean, sd, lo, hi }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Self::Uniform { lo, hi } => {
                if !finite(&[lo, hi]) || !(lo < hi) {
                    return Err(invalid(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
                }
            }
            Self::Normal { mean, sd } => {
                if !finite(&[mean, sd]) || !(sd > 0.0) {
                    return Err(invalid(format!("normal needs sd > 0, got {sd}")));
                }
            }
            Self::Lognormal { mu_log, sigma_log } => {
                if !finite(&[mu_log, sigma_log]) || !(sigma_log > 0.0) {
                    return Err(invalid(format!("lognormal needs sigma_log > 0, got {sigma_log}")));
                }
            }
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                if !finite(&[mean, sd, lo, hi]) || !(sd > 0.0) || !(lo < hi) {
                    return Err(invalid("truncated normal needs sd > 0 and lo < hi"));
                }
                let z = norm_interval((lo - mean) / sd, (hi - mean) / sd);
                if !(z > 0.0) {
                    return Err(invalid("truncated normal interval carries no mass"));
                }
            }
        }
        Ok(self)
    }

    /// Support as a closed interval (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::Uniform { lo, hi } | Self::TruncatedNormal { lo, hi, .. } => (lo, hi),
            Self::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Lognormal { .. } => (0.0, f64::INFINITY),
        }
    }

    pub fn is_bounded(&self) -> bool {
        let (a, b) = self.support();
        a.is_finite() && b.is_finite()
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Normal { mean, .. } => mean,
            Self::Lognormal { mu_log, sigma_log } => (mu_log + 0.5 * sigma_log * sigma_log).exp(),
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
                let z = norm_interval(a, b);
                mean + sd * (phi(a) - phi(b)) / z
            }
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
            Self::Normal { sd, .. } => sd,
            Self::Lognormal { mu_log, sigma_log } => {
                let s2 = sigma_log * sigma_log;
                ((s2.exp() - 1.0) * (2.0 * mu_log + s2).exp()).sqrt()
            }
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
                let z = norm_interval(a, b);
                let t1 = (a * phi(a) - b * phi(b)) / z;
                let t2 = (phi(a) - phi(b)) / z;
                sd * (1.0 + t1 - t2 * t2).max(0.0).sqrt()
            }
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Normal { mean, sd } => {
                let u = (x - mean) / sd;
                -0.5 * u * u - sd.ln() - LN_SQRT_2PI
            }
            Self::Lognormal { mu_log, sigma_log } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let lx = x.ln();
                let u = (lx - mu_log) / sigma_log;
                -0.5 * u * u - lx - sigma_log.ln() - LN_SQRT_2PI
            }
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                if x < lo || x > hi {
                    return f64::NEG_INFINITY;
                }
                let u = (x - mean) / sd;
                let z = norm_interval((lo - mean) / sd, (hi - mean) / sd);
                -0.5 * u * u - sd.ln() - LN_SQRT_2PI - z.ln()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Normal { mean, sd } => norm_cdf((x - mean) / sd),
            Self::Lognormal { mu_log, sigma_log } => {
                if x <= 0.0 {
                    0.0
                } else {
                    norm_cdf((x.ln() - mu_log) / sigma_log)
                }
            }
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                if x <= lo {
                    return 0.0;
                }
                if x >= hi {
                    return 1.0;
                }
                let a = (lo - mean) / sd;
                norm_interval(a, (x - mean) / sd) / norm_interval(a, (hi - mean) / sd)
            }
        }
    }

    /// Inverse CDF at `u in (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Self::Uniform { lo, hi } => lo + u * (hi - lo),
            Self::Normal { mean, sd } => mean + sd * norm_ppf(u),
            Self::Lognormal { mu_log, sigma_log } => (mu_log + sigma_log * norm_ppf(u)).exp(),
            Self::TruncatedNormal { mean, sd, lo, hi } => {
                let x = mean + sd * truncated_std_normal_ppf((lo - mean) / sd, (hi - mean) / sd, u);
                x.clamp(lo, hi)
            }
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(open_unit(rng))
    }
}

fn phi(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x - LN_SQRT_2PI).exp()
    }
}

/// Product density `p(x) = prod_i p_i(x_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDensity {
    marginals: Vec<Marginal>,
}

impl InputDensity {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(invalid("input density needs at least one marginal"));
        }
        let marginals = marginals.into_iter().map(Marginal::validated).collect::<Result<_>>()?;
        Ok(Self { marginals })
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn log_density<T: Real>(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(invalid(format!("point has dimension {}, expected {}", x.len(), self.dim())));
        }
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked<T: Real>(&self, x: &[T]) -> T {
        let mut s = 0.0;
        for (m, &xi) in self.marginals.iter().zip(x) {
            s += m.log_pdf(xi.f64());
            if s == f64::NEG_INFINITY {
                break;
            }
        }
        T::c(s)
    }

    pub fn in_support<T: Real>(&self, x: &[T]) -> bool {
        self.marginals.iter().zip(x).all(|(m, &xi)| {
            let (a, b) = m.support();
            let v = xi.f64();
            v >= a && v <= b
        })
    }

    pub fn sample_one<T: Real, R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        for (m, o) in self.marginals.iter().zip(out.iter_mut()) {
            *o = T::c(m.sample(rng));
        }
    }

    pub fn sample<T: Real, R: RngCore + ?Sized>(&self, rng: &mut R, n: usize) -> Result<PointSet<T>> {
        if n == 0 {
            return Err(invalid("sample count must be at least 1"));
        }
        let d = self.dim();
        let mut pts = PointSet::with_capacity(d, n);
        let mut buf = vec![T::zero(); d];
        for _ in 0..n {
            self.sample_one(rng, &mut buf);
            pts.push(&buf);
        }
        Ok(pts)
    }

    pub fn standardizer(&self) -> Standardizer {
        Standardizer::for_density(self)
    }
}

/// Per-coordinate affine map `z = (x - lo) / (hi - lo)` onto a reference box.
///
/// Bounded marginals use their support; unbounded ones use `mean +/- 4 sd`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    lo: Vec<f64>,
    width: Vec<f64>,
    log_jacobian: f64,
    z_lo: Vec<f64>,
    z_hi: Vec<f64>,
}

impl Standardizer {
    pub fn for_density(p: &InputDensity) -> Self {
        let mut lo = Vec::new();
        let mut width = Vec::new();
        let mut z_lo = Vec::new();
        let mut z_hi = Vec::new();
        for m in p.marginals() {
            let (a, b) = if m.is_bounded() {
                m.support()
            } else {
                let (mu, s) = (m.mean(), m.sd());
                (mu - 4.0 * s, mu + 4.0 * s)
            };
            let w = b - a;
            let (sa, sb) = m.support();
            lo.push(a);
            width.push(w);
            z_lo.push(if sa.is_finite() { (sa - a) / w } else { f64::NEG_INFINITY });
            z_hi.push(if sb.is_finite() { (sb - a) / w } else { f64::INFINITY });
        }
        let log_jacobian = width.iter().map(|w| w.ln()).sum();
        Self { lo, width, log_jacobian, z_lo, z_hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn to_z<T: Real>(&self, x: &[T], z: &mut [T]) {
        for k in 0..self.lo.len() {
            z[k] = T::c((x[k].f64() - self.lo[k]) / self.width[k]);
        }
    }

    pub fn to_x<T: Real>(&self, z: &[T], x: &mut [T]) {
        for k in 0..self.lo.len() {
            x[k] = T::c(self.lo[k] + z[k].f64() * self.width[k]);
        }
    }

    pub fn points_to_z<T: Real>(&self, xs: &PointSet<T>) -> PointSet<T> {
        let mut out = xs.clone();
        for i in 0..xs.len() {
            self.to_z(xs.row(i), out.row_mut(i));
        }
        out
    }

    pub fn points_to_x<T: Real>(&self, zs: &PointSet<T>) -> PointSet<T> {
        let mut out = zs.clone();
        for i in 0..zs.len() {
            self.to_x(zs.row(i), out.row_mut(i));
        }
        out
    }

    /// `ln prod_k width_k`, so that `ln p_z(z) = ln p_x(x(z)) + log_jacobian`.
    pub fn log_jacobian(&self) -> f64 {
        self.log_jacobian
    }

    /// Support of the input density in standardized coordinates.
    pub fn z_support(&self) -> (&[f64], &[f64]) {
        (&self.z_lo, &self.z_hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamTag};

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn uniform_square_log_density() {
        let p = InputDensity::new(vec![Marginal::uniform(-1.0, 1.0).unwrap(); 2]).unwrap();
        assert_eq!(p.log_density(&[0.3_f64, -0.7]).unwrap(), 0.25f64.ln());
        assert_eq!(p.log_density(&[1.3_f64, 0.0]).unwrap(), f64::NEG_INFINITY);
        assert!(p.log_density(&[0.0_f64]).is_err());
    }

    #[test]
    fn lognormal_density_at_median() {
        let s = 0.246;
        let m = Marginal::lognormal(450f64.ln(), s).unwrap();
        let want = 1.0 / (450.0 * s) / (2.0 * std::f64::consts::PI).sqrt();
        assert!((m.log_pdf(450.0).exp() - want).abs() < 1e-15 * want.max(1.0));
    }

    #[test]
    fn truncated_normal_integrates_to_one() {
        let m = Marginal::truncated_normal(0.04, 5e-4, 0.038, 0.042).unwrap();
        let v = trapezoid(|x| m.log_pdf(x).exp(), 0.038, 0.042, 100_000);
        assert!((v - 1.0).abs() < 1e-6, "{v}");
        let m = Marginal::truncated_normal(370e6, 30e6, 250e6, 500e6).unwrap();
        let v = trapezoid(|x| m.log_pdf(x).exp(), 250e6, 500e6, 100_000);
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn unbounded_marginals_integrate_to_one() {
        for m in [Marginal::normal(1e4, 200.0).unwrap(), Marginal::lognormal(450f64.ln(), 0.25).unwrap()] {
            let (mu, s) = (m.mean(), m.sd());
            let a = (mu - 10.0 * s).max(0.0);
            let v = trapezoid(|x| m.log_pdf(x).exp(), a, mu + 10.0 * s, 100_000);
            assert!((v - 1.0).abs() < 1e-6, "{m:?}: {v}");
        }
    }

    #[test]
    fn uniform_sample_mean_near_zero() {
        let p = InputDensity::new(vec![Marginal::uniform(-1.0, 1.0).unwrap(); 2]).unwrap();
        let mut r = stream(3, StreamTag::Misc, 0);
        let n = 100_000;
        let xs: PointSet<f64> = p.sample(&mut r, n).unwrap();
        let se = (1.0 / 3.0 / n as f64).sqrt();
        for k in 0..2 {
            let m: f64 = xs.column(k).iter().sum::<f64>() / n as f64;
            assert!(m.abs() < 3.0 * se, "coordinate {k}: {m}");
        }
    }

    #[test]
    fn truncated_samples_in_support() {
        let m = Marginal::truncated_normal(0.0, 1.0, -1.0, 1.0).unwrap();
        let mut r = stream(4, StreamTag::Misc, 0);
        for _ in 0..100_000 {
            let x = m.sample(&mut r);
            assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn lognormal_sample_median() {
        let m = Marginal::lognormal(450f64.ln(), 0.246).unwrap();
        let mut r = stream(5, StreamTag::Misc, 0);
        let mut xs: Vec<f64> = (0..1_000_000).map(|_| m.sample(&mut r)).collect();
        xs.sort_by(f64::total_cmp);
        let med = 0.5 * (xs[499_999] + xs[500_000]);
        assert!((med / 450.0 - 1.0).abs() < 0.01, "{med}");
    }

    #[test]
    fn ks_statistic_below_critical_value() {
        let kinds = [
            Marginal::uniform(-2.0, 3.0).unwrap(),
            Marginal::normal(1.0, 2.0).unwrap(),
            Marginal::lognormal(0.5, 0.3).unwrap(),
            Marginal::truncated_normal(0.0, 1.0, -0.5, 2.0).unwrap(),
        ];
        let n = 100_000;
        let crit = 1.628 / (n as f64).sqrt();
        for (i, m) in kinds.iter().enumerate() {
            let mut r = stream(11, StreamTag::Misc, i as u64);
            let mut xs: Vec<f64> = (0..n).map(|_| m.sample(&mut r)).collect();
            xs.sort_by(f64::total_cmp);
            let mut d: f64 = 0.0;
            for (k, &x) in xs.iter().enumerate() {
                let f = m.cdf(x);
                d = d.max((f - k as f64 / n as f64).abs()).max(((k + 1) as f64 / n as f64 - f).abs());
            }
            assert!(d < crit, "{m:?}: D = {d}");
        }
    }

    #[test]
    fn log_density_finite_inside_infinite_outside() {
        let m = Marginal::truncated_normal(0.0, 1.0, -1.0, 1.0).unwrap();
        assert!(m.log_pdf(0.99).is_finite());
        assert_eq!(m.log_pdf(1.01), f64::NEG_INFINITY);
        let m = Marginal::lognormal(0.0, 1.0).unwrap();
        assert_eq!(m.log_pdf(-1.0), f64::NEG_INFINITY);
        assert_eq!(m.log_pdf(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Marginal::uniform(1.0, 1.0).is_err());
        assert!(Marginal::normal(0.0, 0.0).is_err());
        assert!(Marginal::lognormal(0.0, -1.0).is_err());
        assert!(Marginal::truncated_normal(0.0, 1.0, 50.0, 60.0).is_err());
    }

    #[test]
    fn mean_cv_conversion() {
        let m = Marginal::lognormal_from_mean_cv(2.1e11, 0.05).unwrap();
        assert!((m.mean() / 2.1e11 - 1.0).abs() < 1e-12);
        assert!((m.sd() / (0.05 * 2.1e11) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardizer_round_trip_and_box() {
        let p = InputDensity::new(vec![
            Marginal::uniform(3.0, 3.1).unwrap(),
            Marginal::normal(1e4, 200.0).unwrap(),
        ])
        .unwrap();
        let s = p.standardizer();
        let mut z = [0.0_f64; 2];
        s.to_z(&[3.05, 1e4 + 800.0], &mut z);
        assert!((z[0] - 0.5).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
        let mut x = [0.0_f64; 2];
        s.to_x(&z, &mut x);
        assert!((x[0] - 3.05).abs() < 1e-12 && (x[1] - 10_800.0).abs() < 1e-9);
        let (lo, hi) = s.z_support();
        assert_eq!((lo[0], hi[0]), (0.0, 1.0));
        assert!(lo[1].is_infinite() && hi[1].is_infinite());
        assert!((s.log_jacobian() - (0.1f64 * 1600.0).ln()).abs() < 1e-12);
    }
}
