//! The adaptive sampling loop, replication studies, the two-stage baseline
//! and the ground-truth / proposal diagnostics.

mod baseline;
mod diagnostics;
mod mixture;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{mf_mis_from_parts, mis_from_parts, surrogate_error_from_parts, ProposalHistory, Snapshot};
use crate::gp_surrogate::{fit_gp, FitOptions, GpPosterior, KernelFamily};
use crate::input_models::{InputDensity, Standardizer};
use crate::limit_states::{registry, LimitState, Oracle};
use crate::points::{Dataset, PointSet};
use crate::proposal_kde::{eta_schedule, Bandwidth, MixtureProposal, WeightedKde, WEIGHT_FLOOR};
use crate::real::Real;
use crate::rng::{stream, StreamTag};

pub use baseline::{run_two_stage_is_baseline, stage_two_count};
pub use diagnostics::{dense_mc_ground_truth, tv_distance_check, tv_distance_grid, GroundTruth};
use mixture::{MixtureTracker, TrackedPoints};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Mis,
    MfMis,
    SurrogateError,
}

/// What plays the role of the surrogate inside the loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    #[default]
    Gp,
    /// The limit state itself, queried without touching the oracle counter.
    /// Its soft failure probability is the exact indicator.
    Exact,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Mis, EstimatorKind::MfMis, EstimatorKind::SurrogateError]
}

/// `(N0, T, N_b)` used when a config does not set them.
pub fn default_budget(benchmark: &str) -> (usize, usize, usize) {
    match benchmark {
        "cantilever" => (50, 50, 5),
        "shaft" => (50, 200, 5),
        _ => (5, 100, 5),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: String,
    pub threshold: f64,
    pub n0: usize,
    pub iterations: usize,
    pub batch: usize,
    pub pilot: usize,
    pub alpha: f64,
    pub bandwidth: Bandwidth,
    pub c: f64,
    pub gamma: f64,
    pub surrogate_samples: usize,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub replications: usize,
    pub kernel: KernelFamily,
    /// A full multi-start hyperparameter search every this many fits;
    /// the fits in between start from the previous optimum.
    pub full_fit_every: usize,
    pub surrogate: SurrogateKind,
    pub screen_pilot: bool,
    pub baseline_split: f64,
    pub record_timing: bool,
}

impl RunConfig {
    pub fn new(benchmark: &str, threshold: f64) -> Self {
        let (n0, iterations, batch) = default_budget(benchmark);
        Self {
            benchmark: benchmark.to_string(),
            threshold,
            n0,
            iterations,
            batch,
            pilot: 200_000,
            alpha: 0.97,
            bandwidth: Bandwidth::default(),
            c: 0.3,
            gamma: 0.5,
            surrogate_samples: 100_000,
            estimators: default_estimators(),
            seed: 0,
            replications: 10,
            kernel: KernelFamily::default(),
            full_fit_every: 10,
            surrogate: SurrogateKind::default(),
            screen_pilot: true,
            baseline_split: 0.5,
            record_timing: false,
        }
    }

    pub fn budget(&self) -> usize {
        self.n0 + self.iterations * self.batch
    }

    pub fn wants(&self, e: EstimatorKind) -> bool {
        self.estimators.contains(&e)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.threshold.is_finite() {
            return bad("threshold must be finite".into());
        }
        if self.n0 < 2 {
            return bad(format!("n0 must be at least 2, got {}", self.n0));
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if self.batch < 1 {
            return bad("batch must be at least 1".into());
        }
        if self.pilot < self.batch {
            return bad(format!("pilot size {} smaller than batch {}", self.pilot, self.batch));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("0 < gamma < 1 required, got {}", self.gamma));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        if self.full_fit_every < 1 {
            return bad("full_fit_every must be at least 1".into());
        }
        if !(self.baseline_split > 0.0 && self.baseline_split < 1.0) {
            return bad(format!("baseline_split must lie in (0, 1), got {}", self.baseline_split));
        }
        self.bandwidth.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// A limit state together with the input density it is evaluated under.
#[derive(Clone)]
pub struct Problem {
    pub limit_state: Arc<dyn LimitState>,
    pub input: Arc<InputDensity>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem").field("limit_state", &self.limit_state.name()).field("input", &self.input).finish()
    }
}

impl Problem {
    pub fn benchmark(name: &str) -> Result<Self> {
        let ls: Arc<dyn LimitState> = Arc::from(registry(name)?);
        let input = Arc::new(ls.input_density());
        Ok(Self { limit_state: ls, input })
    }

    pub fn with_input(limit_state: Arc<dyn LimitState>, input: InputDensity) -> Result<Self> {
        if input.dim() != limit_state.dim() {
            return Err(Error::Config(format!(
                "{} takes {} inputs but {} marginals were given",
                limit_state.name(),
                limit_state.dim(),
                input.dim()
            )));
        }
        Ok(Self { limit_state, input: Arc::new(input) })
    }

    pub fn dim(&self) -> usize {
        self.input.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub n_evals: usize,
    pub p_mis: f64,
    /// Clamped at zero.
    pub p_mf_mis: f64,
    pub p_mf_mis_raw: f64,
    pub r_hat: f64,
    /// Exploration weight of the last proposal sampled before this row.
    pub eta: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSummary {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub nugget: f64,
    pub n_train: usize,
    pub log_marginal_likelihood: f64,
}

impl GpSummary {
    fn of<T: Real>(gp: &GpPosterior<T>) -> Self {
        let k = gp.kernel();
        Self {
            family: k.family,
            lengthscales: k.lengthscales.iter().map(|v| v.f64()).collect(),
            signal_variance: k.signal_variance.f64(),
            nugget: k.nugget.f64(),
            n_train: gp.n_train(),
            log_marginal_likelihood: gp.report().best_lml,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunTrace<T> {
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    pub dataset: Dataset<T>,
    /// History index of the proposal each dataset point was drawn from.
    pub sample_proposal: Vec<usize>,
    pub history: ProposalHistory<T>,
    /// Proposal built from the fit on the seed design.
    pub first_proposal: Option<MixtureProposal<T>>,
    /// Proposal built from the fit on the whole dataset.
    pub final_proposal: Option<MixtureProposal<T>>,
    pub gp: Option<GpSummary>,
    pub oracle_calls: u64,
    pub pool_size: usize,
    /// Iterations whose pilot weights were all zero.
    pub degenerate_iterations: Vec<usize>,
    pub notes: Vec<String>,
}

impl<T: Real> RunTrace<T> {
    fn empty(seed: u64, input: Arc<InputDensity>, n0: usize) -> Result<Self> {
        Ok(Self {
            seed,
            rows: Vec::new(),
            dataset: Dataset::new(input.dim()),
            sample_proposal: Vec::new(),
            history: ProposalHistory::new(input, n0)?,
            first_proposal: None,
            final_proposal: None,
            gp: None,
            oracle_calls: 0,
            pool_size: 0,
            degenerate_iterations: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct RunAbort<T> {
    pub error: Error,
    pub partial: Option<Box<RunTrace<T>>>,
}

impl<T> std::fmt::Display for RunAbort<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rows = self.partial.as_ref().map(|p| p.rows.len()).unwrap_or(0);
        write!(f, "{} (after {rows} trace rows)", self.error)
    }
}

impl<T: std::fmt::Debug> std::error::Error for RunAbort<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl<T> From<Error> for RunAbort<T> {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

enum Fitted<T: Real> {
    Gp(GpPosterior<T>),
    Exact(Arc<dyn LimitState>),
}

fn exact_values<T: Real>(ls: &dyn LimitState, xs: &PointSet<T>) -> Result<Vec<T>> {
    let mut buf = vec![0.0; xs.dim()];
    xs.iter()
        .map(|x| {
            for (b, v) in buf.iter_mut().zip(x) {
                *b = v.f64();
            }
            ls.evaluate(&buf).map(T::c)
        })
        .collect()
}

fn indicator<T: Real>(v: &[T], t: T) -> Vec<T> {
    v.iter().map(|y| if *y > t { T::one() } else { T::zero() }).collect()
}

impl<T: Real> Fitted<T> {
    fn probs(&self, x: &PointSet<T>, z: &PointSet<T>, t: T, screen: Option<(T, f64)>) -> Result<Vec<T>> {
        match self {
            Fitted::Gp(gp) => Ok(gp.soft_failure_probs_batch(z, t, screen).probs),
            Fitted::Exact(ls) => Ok(indicator(&exact_values(ls.as_ref(), x)?, t)),
        }
    }

    fn means(&self, x: &PointSet<T>, z: &PointSet<T>) -> Result<Vec<T>> {
        match self {
            Fitted::Gp(gp) => Ok(gp.predict_mean_batch_z(z)),
            Fitted::Exact(ls) => exact_values(ls.as_ref(), x),
        }
    }
}

fn fit_surrogate<T: Real>(
    cfg: &RunConfig,
    problem: &Problem,
    data: &Dataset<T>,
    std: &Standardizer,
    fit_index: usize,
    previous: Option<&GpSummary>,
) -> Result<Fitted<T>> {
    match cfg.surrogate {
        SurrogateKind::Exact => Ok(Fitted::Exact(problem.limit_state.clone())),
        SurrogateKind::Gp => {
            let mut opts = FitOptions::default();
            if let Some(prev) = previous.filter(|_| fit_index % cfg.full_fit_every != 0) {
                opts.n_local = 1;
                opts.warm_start = Some(prev.lengthscales.clone());
            }
            Ok(Fitted::Gp(fit_gp(data, std, cfg.kernel, &opts)?))
        }
    }
}

/// Mutable state of one run.
struct Loop<'a, T: Real> {
    cfg: &'a RunConfig,
    problem: &'a Problem,
    oracle: Oracle<'a>,
    std: Standardizer,
    t: T,
    trace: RunTrace<T>,
    tracker: MixtureTracker<T>,
    expensive: TrackedPoints<T>,
    pool: TrackedPoints<T>,
    pool_ratio: usize,
    pilot_x: PointSet<T>,
    pilot_z: PointSet<T>,
    started: Instant,
    buf: Vec<T>,
}

impl<'a, T: Real> Loop<'a, T> {
    fn evaluate(&mut self, xs: &PointSet<T>, proposal: usize) -> Result<()> {
        for x in xs.iter() {
            let y = self.oracle.evaluate(x)?;
            if !y.is_finite() {
                return Err(Error::Numerical(format!("oracle returned {y} at {x:?}")));
            }
            self.trace.dataset.push(x, y);
            self.trace.sample_proposal.push(proposal);
        }
        self.tracker.add_points(&mut self.expensive, xs)
    }

    fn grow_pool(&mut self, draw: impl FnOnce(&mut crate::rng::Stream, usize) -> Result<PointSet<T>>, index: u64, count: usize) -> Result<()> {
        let n = self.pool_ratio * count;
        if n == 0 {
            return Ok(());
        }
        let mut rng = stream(self.cfg.seed, StreamTag::SurrogatePool, index);
        let xs = draw(&mut rng, n)?;
        self.tracker.add_points(&mut self.pool, &xs)
    }

    fn row(&mut self, fit: &Fitted<T>, eta: f64) -> Result<TraceRow> {
        let n = self.expensive.len();
        for i in 0..n {
            self.tracker.catch_up(&mut self.expensive, i, true, &mut self.buf);
        }
        let w: Vec<T> = (0..n).map(|i| T::c(self.tracker.weight(&self.expensive, i))).collect();
        let failed: Vec<bool> = self.trace.dataset.y.iter().map(|y| *y > self.t).collect();
        let nan = f64::NAN;
        let p_mis = if self.cfg.wants(EstimatorKind::Mis) { mis_from_parts(&w, &failed).f64() } else { nan };
        let (p_mf, p_mf_raw) = if self.cfg.wants(EstimatorKind::MfMis) {
            let g_exp = fit.means(&self.expensive.x, &self.expensive.z)?;
            let expensive: Vec<(T, bool, bool)> =
                w.iter().zip(&failed).zip(&g_exp).map(|((w, f), g)| (*w, *f, *g > self.t)).collect();
            let g_pool = fit.means(&self.pool.x, &self.pool.z)?;
            let mut surrogate = Vec::with_capacity(g_pool.len());
            for (i, g) in g_pool.iter().enumerate() {
                if *g > self.t {
                    self.tracker.catch_up(&mut self.pool, i, false, &mut self.buf);
                    surrogate.push((T::c(self.tracker.weight(&self.pool, i)), true));
                } else {
                    surrogate.push((T::zero(), false));
                }
            }
            let mf = mf_mis_from_parts(&surrogate, &expensive);
            (mf.value.f64(), mf.raw.f64())
        } else {
            (nan, nan)
        };
        let r_hat = if self.cfg.wants(EstimatorKind::SurrogateError) {
            let pi = fit.probs(&self.expensive.x, &self.expensive.z, self.t, None)?;
            surrogate_error_from_parts(&w, &failed, &pi).r_hat.f64()
        } else {
            nan
        };
        let wall_ms = if self.cfg.record_timing { self.started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        Ok(TraceRow { n_evals: n, p_mis, p_mf_mis: p_mf, p_mf_mis_raw: p_mf_raw, r_hat, eta, wall_ms })
    }

    fn proposal(&mut self, fit: &Fitted<T>, iteration: usize) -> Result<MixtureProposal<T>> {
        let screen = self.cfg.screen_pilot.then(|| (T::c(self.cfg.alpha), WEIGHT_FLOOR));
        let probs = fit.probs(&self.pilot_x, &self.pilot_z, self.t, screen)?;
        let kde = WeightedKde::build(&self.pilot_z, &probs, T::c(self.cfg.alpha), self.cfg.bandwidth, &self.std)?;
        let eta = if kde.is_degenerate() {
            self.trace.degenerate_iterations.push(iteration);
            1.0
        } else {
            eta_schedule(iteration, self.cfg.c, self.cfg.gamma)?
        };
        MixtureProposal::new(Arc::new(kde), T::c(eta), self.problem.input.clone())
    }

    fn step(&mut self, q: MixtureProposal<T>, iteration: usize) -> Result<()> {
        let nb = self.cfg.batch;
        let mut rng = stream(self.cfg.seed, StreamTag::Batch, iteration as u64);
        let xs = q.sample_mixture(&mut rng, nb)?;
        let index = self.trace.history.push(Snapshot::Mixture(q.clone()), nb)?;
        self.tracker.push(q.kde().clone(), q.eta().f64(), nb);
        self.evaluate(&xs, index)?;
        self.grow_pool(|rng, n| q.sample_mixture(rng, n), iteration as u64, nb)
    }

    fn run(&mut self) -> Result<()> {
        let (cfg, input) = (self.cfg, self.problem.input.clone());
        let xs = input.sample(&mut stream(cfg.seed, StreamTag::Seed, 0), cfg.n0)?;
        self.evaluate(&xs, 0)?;
        self.grow_pool(|rng, n| input.sample(rng, n), 0, cfg.n0)?;
        let mut eta = 1.0;
        for k in 0..=cfg.iterations {
            let fit = fit_surrogate(cfg, self.problem, &self.trace.dataset, &self.std, k, self.trace.gp.as_ref())?;
            if let Fitted::Gp(gp) = &fit {
                self.trace.gp = Some(GpSummary::of(gp));
            }
            let row = self.row(&fit, eta)?;
            log::debug!("n={} mis={:e} mf={:e} r={:e} eta={}", row.n_evals, row.p_mis, row.p_mf_mis, row.r_hat, row.eta);
            self.trace.rows.push(row);
            let q = self.proposal(&fit, k + 1)?;
            if k == 0 {
                self.trace.first_proposal = Some(q.clone());
            }
            if k == cfg.iterations {
                self.trace.final_proposal = Some(q);
                break;
            }
            eta = q.eta().f64();
            self.step(q, k + 1)?;
        }
        self.trace.oracle_calls = self.oracle.calls();
        self.trace.pool_size = self.pool.len();
        if self.tracker.uses_interpolation() {
            self.trace.notes.push("pool mixture densities interpolated".into());
        }
        let budget = cfg.budget() as u64;
        if self.trace.oracle_calls != budget || self.trace.dataset.len() as u64 != budget {
            return Err(Error::Numerical(format!("budget audit: {} oracle calls for budget {budget}", self.trace.oracle_calls)));
        }
        Ok(())
    }
}

/// Surrogate pool points drawn per expensive sample.
pub fn pool_ratio(cfg: &RunConfig) -> usize {
    if !cfg.wants(EstimatorKind::MfMis) || cfg.surrogate_samples == 0 {
        return 0;
    }
    cfg.surrogate_samples.div_ceil(cfg.budget())
}

/// One full adaptive run. Deterministic in `cfg.seed`.
pub fn run_kde_ais<T: Real>(problem: &Problem, cfg: &RunConfig) -> std::result::Result<RunTrace<T>, RunAbort<T>> {
    cfg.validate()?;
    if problem.limit_state.dim() != problem.dim() {
        return Err(Error::Config("limit state and input density dimensions differ".into()).into());
    }
    let std = problem.input.standardizer();
    let pilot_x = problem.input.sample(&mut stream(cfg.seed, StreamTag::Pilot, 0), cfg.pilot)?;
    let pilot_z = std.points_to_z(&pilot_x);
    let d = problem.dim();
    let mut state = Loop {
        cfg,
        problem,
        oracle: Oracle::new(problem.limit_state.as_ref()),
        std,
        t: T::c(cfg.threshold),
        trace: RunTrace::empty(cfg.seed, problem.input.clone(), cfg.n0)?,
        tracker: MixtureTracker::new(problem.input.clone(), cfg.n0),
        expensive: TrackedPoints::new(d),
        pool: TrackedPoints::new(d),
        pool_ratio: pool_ratio(cfg),
        pilot_x,
        pilot_z,
        started: Instant::now(),
        buf: Vec::new(),
    };
    match state.run() {
        Ok(()) => Ok(state.trace),
        Err(error) => {
            state.trace.oracle_calls = state.oracle.calls();
            state.trace.pool_size = state.pool.len();
            Err(RunAbort { error, partial: Some(Box::new(state.trace)) })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
    pub median: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        let n = v.len();
        if n == 0 {
            return Self { count: 0, mean: f64::NAN, sd: f64::NAN, median: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Self { count: n, mean, sd, median }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowStats {
    pub n_evals: usize,
    pub p_mis: Stats,
    pub p_mf_mis: Stats,
    pub r_hat: Stats,
}

#[derive(Debug)]
pub struct ReplicationSummary<T> {
    pub base_seed: u64,
    pub traces: Vec<RunTrace<T>>,
    /// Seeds of runs that aborted, with their error.
    pub failures: Vec<(u64, String)>,
    pub partial: bool,
    pub final_mis: Stats,
    pub final_mf_mis: Stats,
    pub final_r_hat: Stats,
    pub per_row: Vec<RowStats>,
}

impl<T: Real> ReplicationSummary<T> {
    fn from_traces(base_seed: u64, traces: Vec<RunTrace<T>>, failures: Vec<(u64, String)>) -> Self {
        let last = |f: fn(&TraceRow) -> f64| -> Vec<f64> { traces.iter().filter_map(|t| t.final_row().map(f)).collect() };
        let rows = traces.iter().map(|t| t.rows.len()).min().unwrap_or(0);
        let per_row = (0..rows)
            .map(|i| {
                let col = |f: fn(&TraceRow) -> f64| -> Vec<f64> { traces.iter().map(|t| f(&t.rows[i])).collect() };
                RowStats {
                    n_evals: traces[0].rows[i].n_evals,
                    p_mis: Stats::of(&col(|r| r.p_mis)),
                    p_mf_mis: Stats::of(&col(|r| r.p_mf_mis)),
                    r_hat: Stats::of(&col(|r| r.r_hat)),
                }
            })
            .collect();
        Self {
            base_seed,
            final_mis: Stats::of(&last(|r| r.p_mis)),
            final_mf_mis: Stats::of(&last(|r| r.p_mf_mis)),
            final_r_hat: Stats::of(&last(|r| r.r_hat)),
            per_row,
            partial: !failures.is_empty(),
            traces,
            failures,
        }
    }
}

/// `r` runs with seeds `base_seed + i`, executed in parallel.
pub fn run_replications<T: Real>(problem: &Problem, cfg: &RunConfig, r: usize, base_seed: u64) -> Result<ReplicationSummary<T>> {
    if r == 0 {
        return Err(Error::Config("replication count must be at least 1".into()));
    }
    cfg.validate()?;
    let results: Vec<(u64, std::result::Result<RunTrace<T>, RunAbort<T>>)> = (0..r as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i);
            let c = RunConfig { seed, ..cfg.clone() };
            (seed, run_kde_ais(problem, &c))
        })
        .collect();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(t) => traces.push(t),
            Err(RunAbort { error: Error::Config(m), .. }) => return Err(Error::Config(m)),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if traces.is_empty() {
        let (seed, msg) = &failures[0];
        return Err(Error::Numerical(format!("all {r} replications failed; seed {seed}: {msg}")));
    }
    Ok(ReplicationSummary::from_traces(base_seed, traces, failures))
}
