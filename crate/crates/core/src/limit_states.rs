//! Benchmark limit-state functions. Failure is always `g(x) > t`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{invalid, Result};
use crate::input_models::{InputDensity, Marginal};
use crate::real::Real;

pub trait LimitState: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<f64>;
    /// Threshold used when the caller does not give one.
    fn default_threshold(&self) -> f64;
    /// The input density the benchmark is defined under.
    fn input_density(&self) -> InputDensity;
}

fn check_dim(name: &str, x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(invalid(format!("{name} expects {d} inputs, got {}", x.len())));
    }
    Ok(())
}

pub fn herbie_value(x: &[f64]) -> f64 {
    x.iter()
        .map(|&v| {
            (-(v - 1.0) * (v - 1.0)).exp() + (-0.8 * (v + 1.0) * (v + 1.0)).exp()
                - 0.05 * (8.0 * (v + 0.1)).sin()
        })
        .sum()
}

pub fn four_branch_value(x1: f64, x2: f64) -> f64 {
    let g1 = 3.0 + 0.1 * (x1 - x2) * (x1 - x2) - (x1 + x2) * FRAC_1_SQRT_2;
    let g2 = 3.0 + 0.1 * (x1 - x2) * (x1 - x2) + (x1 + x2) * FRAC_1_SQRT_2;
    let g3 = (x1 - x2) + 7.0 * FRAC_1_SQRT_2;
    let g4 = (x2 - x1) + 7.0 * FRAC_1_SQRT_2;
    g1.min(g2).min(g3).min(g4)
}

pub const CANTILEVER_WIDTH: f64 = 0.30;
pub const CANTILEVER_MAX_DEFLECTION: f64 = 0.02;

/// Tip deflection `4 P L^3 / (E b Theta^3)`.
pub fn cantilever_deflection(p: f64, l: f64, e: f64, theta: f64) -> f64 {
    4.0 * p * l * l * l / (e * CANTILEVER_WIDTH * theta * theta * theta)
}

pub const SHAFT_LENGTH: f64 = 1.2;
pub const SHAFT_SAFETY_FACTOR: f64 = 1.5;
pub const SHAFT_MAX_TWIST: f64 = 0.06;
pub const SHAFT_D_NOM: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShaftResponse {
    pub von_mises: f64,
    pub twist: f64,
    pub stress_ratio: f64,
    pub twist_ratio: f64,
}

pub fn shaft_response(m: f64, t: f64, d: f64, sigma_y: f64, g: f64) -> ShaftResponse {
    let d3 = d * d * d;
    let sigma_b = 32.0 * m / (PI * d3);
    let tau = 16.0 * t / (PI * d3);
    let von_mises = (sigma_b * sigma_b + 3.0 * tau * tau).sqrt();
    let twist = 32.0 * t * SHAFT_LENGTH / (g * PI * d3 * d);
    ShaftResponse {
        von_mises,
        twist,
        stress_ratio: von_mises / (sigma_y / SHAFT_SAFETY_FACTOR),
        twist_ratio: twist / SHAFT_MAX_TWIST,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Herbie;

impl LimitState for Herbie {
    fn name(&self) -> &str {
        "herbie"
    }
    fn dim(&self) -> usize {
        2
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim("herbie", x, 2)?;
        Ok(herbie_value(x))
    }
    fn default_threshold(&self) -> f64 {
        2.0
    }
    fn input_density(&self) -> InputDensity {
        InputDensity::new(vec![Marginal::Uniform { lo: -2.0, hi: 2.0 }; 2]).expect("valid")
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FourBranch;

impl LimitState for FourBranch {
    fn name(&self) -> &str {
        "four_branch"
    }
    fn dim(&self) -> usize {
        2
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim("four_branch", x, 2)?;
        Ok(four_branch_value(x[0], x[1]))
    }
    fn default_threshold(&self) -> f64 {
        2.0
    }
    fn input_density(&self) -> InputDensity {
        InputDensity::new(vec![Marginal::Uniform { lo: -8.0, hi: 8.0 }; 2]).expect("valid")
    }
}

/// Inputs ordered `(P, L, E, Theta)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Cantilever;

impl LimitState for Cantilever {
    fn name(&self) -> &str {
        "cantilever"
    }
    fn dim(&self) -> usize {
        4
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim("cantilever", x, 4)?;
        let (p, l, e, theta) = (x[0], x[1], x[2], x[3]);
        if !(theta > 0.0) || !(e > 0.0) {
            return Err(invalid("cantilever needs Theta > 0 and E > 0"));
        }
        Ok(cantilever_deflection(p, l, e, theta) - CANTILEVER_MAX_DEFLECTION)
    }
    fn default_threshold(&self) -> f64 {
        0.0
    }
    fn input_density(&self) -> InputDensity {
        InputDensity::new(vec![
            Marginal::Normal { mean: 1e4, sd: 200.0 },
            Marginal::Uniform { lo: 3.0, hi: 3.1 },
            Marginal::lognormal_from_mean_cv(2.1e11, 0.05).expect("valid"),
            Marginal::Uniform { lo: 0.1, hi: 0.2 },
        ])
        .expect("valid")
    }
}

/// Inputs ordered `(M, T, d, sigma_y, G)`.
#[derive(Clone, Copy, Debug)]
pub struct Shaft {
    pub d_nom: f64,
}

impl Default for Shaft {
    fn default() -> Self {
        Self { d_nom: SHAFT_D_NOM }
    }
}

impl LimitState for Shaft {
    fn name(&self) -> &str {
        "shaft"
    }
    fn dim(&self) -> usize {
        5
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim("shaft", x, 5)?;
        let (m, t, d, sy, g) = (x[0], x[1], x[2], x[3], x[4]);
        if !(d > 0.0) || !(sy > 0.0) || !(g > 0.0) {
            return Err(invalid("shaft needs d, sigma_y and G positive"));
        }
        let r = shaft_response(m, t, d, sy, g);
        Ok(r.stress_ratio.max(r.twist_ratio))
    }
    fn default_threshold(&self) -> f64 {
        1.0
    }
    fn input_density(&self) -> InputDensity {
        let s = |cv: f64| (1.0 + cv * cv).ln().sqrt();
        InputDensity::new(vec![
            Marginal::Lognormal { mu_log: 450f64.ln(), sigma_log: s(0.25) },
            Marginal::Lognormal { mu_log: 300f64.ln(), sigma_log: s(0.30) },
            Marginal::TruncatedNormal { mean: self.d_nom, sd: 5e-4, lo: self.d_nom - 0.002, hi: self.d_nom + 0.002 },
            Marginal::TruncatedNormal { mean: 370e6, sd: 30e6, lo: 250e6, hi: 500e6 },
            Marginal::TruncatedNormal { mean: 80e9, sd: 3e9, lo: 70e9, hi: 90e9 },
        ])
        .expect("valid")
    }
}

/// `g = min(x1, x2)` on `[-1, 1]^2`; with `t = 0` the failure set is the
/// upper-right quadrant and `P_F = 1/4`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Quadrant;

impl LimitState for Quadrant {
    fn name(&self) -> &str {
        "quadrant"
    }
    fn dim(&self) -> usize {
        2
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim("quadrant", x, 2)?;
        Ok(x[0].min(x[1]))
    }
    fn default_threshold(&self) -> f64 {
        0.0
    }
    fn input_density(&self) -> InputDensity {
        InputDensity::new(vec![Marginal::Uniform { lo: -1.0, hi: 1.0 }; 2]).expect("valid")
    }
}

pub const BENCHMARKS: [&str; 5] = ["herbie", "four_branch", "cantilever", "shaft", "quadrant"];

pub fn registry(name: &str) -> Result<Box<dyn LimitState>> {
    Ok(match name {
        "herbie" => Box::new(Herbie),
        "four_branch" => Box::new(FourBranch),
        "cantilever" => Box::new(Cantilever),
        "shaft" => Box::new(Shaft::default()),
        "quadrant" => Box::new(Quadrant),
        other => return Err(invalid(format!("unknown benchmark '{other}'"))),
    })
}

/// Counts every call that reaches the wrapped limit state.
pub struct Oracle<'a> {
    inner: &'a dyn LimitState,
    calls: AtomicU64,
}

impl<'a> Oracle<'a> {
    pub fn new(inner: &'a dyn LimitState) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn evaluate<T: Real>(&self, x: &[T]) -> Result<T> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let xs: Vec<f64> = x.iter().map(|v| v.f64()).collect();
        self.inner.evaluate(&xs).map(T::c)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn limit_state(&self) -> &dyn LimitState {
        self.inner
    }
}
