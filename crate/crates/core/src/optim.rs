//! Box-constrained L-BFGS for smooth maximization problems.

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iters: 60, memory: 6, grad_tol: 1e-6, rel_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub evals: usize,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for k in 0..x.len() {
        x[k] = x[k].clamp(lo[k], hi[k]);
    }
}

/// Maximize `f` over the box `[lo, hi]`. `f` returns `(value, gradient)`
/// and may return `None` where it cannot be evaluated; such points are
/// treated as worse than anything seen.
pub fn maximize<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut evals = 1;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iters = 0;
    // minimize -f internally
    let free = |x: &[f64], g: &[f64], k: usize| !((x[k] <= lo[k] && g[k] < 0.0) || (x[k] >= hi[k] && g[k] > 0.0));
    while iters < opts.max_iters {
        iters += 1;
        let pg: f64 = (0..n).filter(|&k| free(&x, &g, k)).map(|k| g[k] * g[k]).sum::<f64>().sqrt();
        if pg < opts.grad_tol {
            break;
        }
        // two-loop recursion on the ascent direction
        let mut q: Vec<f64> = (0..n).map(|k| if free(&x, &g, k) { g[k] } else { 0.0 }).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            let rho = 1.0 / dotv(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dotv(&s_hist[i], &q);
            for k in 0..n {
                q[k] -= alpha[i] * y_hist[i][k];
            }
        }
        if m > 0 {
            let gamma = dotv(&s_hist[m - 1], &y_hist[m - 1]) / dotv(&y_hist[m - 1], &y_hist[m - 1]);
            for v in q.iter_mut() {
                *v *= gamma;
            }
        } else {
            let s = 1.0 / pg.max(1e-12);
            for v in q.iter_mut() {
                *v *= s.min(1.0);
            }
        }
        for i in 0..m {
            let rho = 1.0 / dotv(&y_hist[i], &s_hist[i]);
            let beta = rho * dotv(&y_hist[i], &q);
            for k in 0..n {
                q[k] += s_hist[i][k] * (alpha[i] - beta);
            }
        }
        for k in 0..n {
            if !free(&x, &g, k) {
                q[k] = 0.0;
            }
        }
        let mut slope = dotv(&q, &g);
        if !(slope > 0.0) {
            q = (0..n).map(|k| if free(&x, &g, k) { g[k] } else { 0.0 }).collect();
            slope = dotv(&q, &g);
            s_hist.clear();
            y_hist.clear();
        }
        // backtracking on the projected path
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut xn: Vec<f64> = (0..n).map(|k| x[k] + step * q[k]).collect();
            project(&mut xn, lo, hi);
            evals += 1;
            if let Some((fnew, gnew)) = f(&xn) {
                let moved: f64 = (0..n).map(|k| (xn[k] - x[k]) * g[k]).sum();
                if fnew >= fx + 1e-4 * moved.min(step * slope) {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else { break };
        let s: Vec<f64> = (0..n).map(|k| xn[k] - x[k]).collect();
        // curvature pair for the minimization of -f
        let y: Vec<f64> = (0..n).map(|k| g[k] - gnew[k]).collect();
        let improvement = fnew - fx;
        x = xn;
        g = gnew;
        let old = fx;
        fx = fnew;
        if dotv(&s, &y) > 1e-12 * dotv(&s, &s).sqrt() * dotv(&y, &y).sqrt() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        if improvement.abs() <= opts.rel_tol * old.abs().max(1.0) {
            break;
        }
    }
    Some(LbfgsResult { x, value: fx, iters, evals })
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_maximum_of_concave_quadratic() {
        let f = |x: &[f64]| {
            let v = -((x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2));
            Some((v, vec![-2.0 * (x[0] - 1.0), -20.0 * (x[1] + 2.0)]))
        };
        let r = maximize(f, &[0.0, 0.0], &[-5.0, -5.0], &[5.0, 5.0], &LbfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] + 2.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| Some((x[0] - x[1] * x[1], vec![1.0, -2.0 * x[1]]));
        let r = maximize(f, &[0.0, 1.0], &[-1.0, -1.0], &[2.0, 1.0], &LbfgsOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-12);
        assert!(r.x[1].abs() < 1e-4);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let ga = 2.0 * (1.0 - a) + 400.0 * a * (b - a * a);
            let gb = -200.0 * (b - a * a);
            Some((v, vec![ga, gb]))
        };
        let opts = LbfgsOptions { max_iters: 500, ..Default::default() };
        let r = maximize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r);
    }
}
