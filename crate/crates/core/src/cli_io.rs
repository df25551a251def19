//! Experiment files, trace CSVs and run summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver::{
    default_budget, EstimatorKind, GpSummary, GroundTruth, Problem, ReplicationSummary, RowStats, RunConfig, RunTrace,
    Stats, SurrogateKind, TraceRow,
};
use crate::error::{invalid, Error, Result};
use crate::gp_surrogate::KernelFamily;
use crate::input_models::{InputDensity, Marginal};
use crate::limit_states::registry;
use crate::proposal_kde::Bandwidth;
use crate::real::Real;

pub const TRACE_HEADER: &str = "n_evals,p_mis,p_mf_mis,r_hat,eta,wall_ms";

/// On-disk experiment description. Everything except `benchmark` is optional;
/// the budget defaults depend on the benchmark.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub benchmark: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<Bandwidth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<EstimatorKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_fit_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_pilot: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_split: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_timing: Option<bool>,
    /// One marginal per input dimension; replaces the benchmark's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<Marginal>>,
}

impl ExperimentFile {
    /// Fill defaults and validate.
    pub fn resolve(&self) -> Result<(RunConfig, InputDensity)> {
        let ls = registry(&self.benchmark).map_err(|e| Error::Config(e.to_string()))?;
        let t = self.threshold.unwrap_or_else(|| ls.default_threshold());
        let d = RunConfig::new(&self.benchmark, t);
        let (n0, iterations, batch) = default_budget(&self.benchmark);
        let cfg = RunConfig {
            benchmark: self.benchmark.clone(),
            threshold: t,
            n0: self.n0.unwrap_or(n0),
            iterations: self.iterations.unwrap_or(iterations),
            batch: self.batch.unwrap_or(batch),
            pilot: self.pilot.unwrap_or(d.pilot),
            alpha: self.alpha.unwrap_or(d.alpha),
            bandwidth: self.bandwidth.unwrap_or(d.bandwidth),
            c: self.c.unwrap_or(d.c),
            gamma: self.gamma.unwrap_or(d.gamma),
            surrogate_samples: self.surrogate_samples.unwrap_or(d.surrogate_samples),
            estimators: self.estimators.clone().unwrap_or(d.estimators),
            seed: self.seed.unwrap_or(d.seed),
            replications: self.replications.unwrap_or(d.replications),
            kernel: self.kernel.unwrap_or(d.kernel),
            full_fit_every: self.full_fit_every.unwrap_or(d.full_fit_every),
            surrogate: self.surrogate.unwrap_or(d.surrogate),
            screen_pilot: self.screen_pilot.unwrap_or(d.screen_pilot),
            baseline_split: self.baseline_split.unwrap_or(d.baseline_split),
            record_timing: self.record_timing.unwrap_or(d.record_timing),
        };
        cfg.validate()?;
        let input = match &self.inputs {
            Some(m) => InputDensity::new(m.clone()).map_err(|e| Error::Config(format!("inputs: {e}")))?,
            None => ls.input_density(),
        };
        if input.dim() != ls.dim() {
            return Err(Error::Config(format!("inputs: {} needs {} marginals, got {}", self.benchmark, ls.dim(), input.dim())));
        }
        Ok((cfg, input))
    }

    /// Fully populated file describing `cfg` and `input`.
    pub fn from_config(cfg: &RunConfig, input: &InputDensity) -> Self {
        Self {
            benchmark: cfg.benchmark.clone(),
            threshold: Some(cfg.threshold),
            n0: Some(cfg.n0),
            iterations: Some(cfg.iterations),
            batch: Some(cfg.batch),
            pilot: Some(cfg.pilot),
            alpha: Some(cfg.alpha),
            bandwidth: Some(cfg.bandwidth),
            c: Some(cfg.c),
            gamma: Some(cfg.gamma),
            surrogate_samples: Some(cfg.surrogate_samples),
            estimators: Some(cfg.estimators.clone()),
            seed: Some(cfg.seed),
            replications: Some(cfg.replications),
            kernel: Some(cfg.kernel),
            full_fit_every: Some(cfg.full_fit_every),
            surrogate: Some(cfg.surrogate),
            screen_pilot: Some(cfg.screen_pilot),
            baseline_split: Some(cfg.baseline_split),
            record_timing: Some(cfg.record_timing),
            inputs: Some(input.marginals().to_vec()),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

pub fn parse_config_str(text: &str) -> Result<(RunConfig, InputDensity)> {
    let file: ExperimentFile = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    file.resolve()
}

pub fn parse_config(path: &Path) -> Result<(RunConfig, InputDensity)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn serialize_config(cfg: &RunConfig, input: &InputDensity) -> String {
    serde_json::to_string_pretty(&ExperimentFile::from_config(cfg, input)).expect("config serializes")
}

/// Build the problem a parsed config describes.
pub fn problem_for(cfg: &RunConfig, input: InputDensity) -> Result<Problem> {
    let ls = registry(&cfg.benchmark).map_err(|e| Error::Config(e.to_string()))?;
    Problem::with_input(ls.into(), input)
}

/// Process exit status for a failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Numerical(_) | Error::GpFit(_) => 3,
        Error::Io { .. } => 4,
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(invalid("refusing to write an empty trace"));
    }
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        // `{:?}` prints the shortest string that parses back to the same bits
        writeln!(s, "{},{:?},{:?},{:?},{:?},{:?}", r.n_evals, r.p_mis, r.p_mf_mis, r.r_hat, r.eta, r.wall_ms).unwrap();
    }
    Ok(s)
}

/// The six CSV columns of each row, in file order.
pub type TraceColumns = (usize, f64, f64, f64, f64, f64);

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceColumns>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(invalid("trace CSV header mismatch"));
    }
    let num = |v: Option<&str>, line: usize| -> Result<f64> {
        v.ok_or_else(|| invalid(format!("line {line}: missing column")))?
            .parse::<f64>()
            .map_err(|e| invalid(format!("line {line}: {e}")))
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let mut it = l.split(',');
            let n = it
                .next()
                .unwrap_or("")
                .parse::<usize>()
                .map_err(|e| invalid(format!("line {}: {e}", i + 2)))?;
            let row = (n, num(it.next(), i + 2)?, num(it.next(), i + 2)?, num(it.next(), i + 2)?, num(it.next(), i + 2)?, num(it.next(), i + 2)?);
            if it.next().is_some() {
                return Err(invalid(format!("line {}: too many columns", i + 2)));
            }
            Ok(row)
        })
        .collect()
}

pub fn dataset_csv<T: Real>(trace: &RunTrace<T>) -> String {
    let d = trace.dataset.dim();
    let mut s = String::new();
    for k in 1..=d {
        write!(s, "x{k},").unwrap();
    }
    s.push_str("y\n");
    for (x, y) in trace.dataset.x.iter().zip(&trace.dataset.y) {
        for v in x {
            write!(s, "{:?},", v.f64()).unwrap();
        }
        writeln!(s, "{:?}", y.f64()).unwrap();
    }
    s
}

pub fn provenance() -> String {
    format!("kdeais {} ({})", env!("CARGO_PKG_VERSION"), option_env!("KDEAIS_GIT_REV").unwrap_or("unknown revision"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEstimates {
    pub n_evals: usize,
    pub p_mis: Option<f64>,
    pub p_mf_mis: Option<f64>,
    pub p_mf_mis_raw: Option<f64>,
    pub r_hat: Option<f64>,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub provenance: String,
    pub seed: u64,
    pub final_estimates: FinalEstimates,
    pub oracle_calls: u64,
    pub surrogate_pool: usize,
    pub gp: Option<GpSummary>,
    pub degenerate_iterations: Vec<usize>,
    pub notes: Vec<String>,
    pub config: ExperimentFile,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn run_summary<T: Real>(trace: &RunTrace<T>, cfg: &RunConfig, input: &InputDensity) -> Result<RunSummary> {
    let last = trace.final_row().ok_or_else(|| invalid("trace has no rows"))?;
    Ok(RunSummary {
        provenance: provenance(),
        seed: trace.seed,
        final_estimates: FinalEstimates {
            n_evals: last.n_evals,
            p_mis: finite(last.p_mis),
            p_mf_mis: finite(last.p_mf_mis),
            p_mf_mis_raw: finite(last.p_mf_mis_raw),
            r_hat: finite(last.r_hat),
            eta: last.eta,
        },
        oracle_calls: trace.oracle_calls,
        surrogate_pool: trace.pool_size,
        gp: trace.gp.clone(),
        degenerate_iterations: trace.degenerate_iterations.clone(),
        notes: trace.notes.clone(),
        config: ExperimentFile::from_config(&RunConfig { seed: trace.seed, ..cfg.clone() }, input),
    })
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Writes `trace.csv`, `summary.json` and `dataset.csv` into `out_dir`.
pub fn write_trace<T: Real>(trace: &RunTrace<T>, cfg: &RunConfig, input: &InputDensity, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = trace_csv(&trace.rows)?;
    let summary = serde_json::to_string_pretty(&run_summary(trace, cfg, input)?).expect("summary serializes");
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    Ok(vec![
        write_file(out_dir.join("trace.csv"), &csv)?,
        write_file(out_dir.join("summary.json"), &(summary + "\n"))?,
        write_file(out_dir.join("dataset.csv"), &dataset_csv(trace))?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationDocument {
    pub provenance: String,
    pub base_seed: u64,
    pub replications: usize,
    pub partial: bool,
    pub failures: Vec<(u64, String)>,
    pub final_mis: Stats,
    pub final_mf_mis: Stats,
    pub final_r_hat: Stats,
    pub per_row: Vec<RowStats>,
    pub config: ExperimentFile,
}

/// One subdirectory per replication plus a top-level `summary.json`.
pub fn write_replications<T: Real>(
    summary: &ReplicationSummary<T>,
    cfg: &RunConfig,
    input: &InputDensity,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for (i, tr) in summary.traces.iter().enumerate() {
        files.extend(write_trace(tr, cfg, input, &out_dir.join(format!("rep_{i:03}")))?);
    }
    let doc = ReplicationDocument {
        provenance: provenance(),
        base_seed: summary.base_seed,
        replications: summary.traces.len() + summary.failures.len(),
        partial: summary.partial,
        failures: summary.failures.clone(),
        final_mis: summary.final_mis,
        final_mf_mis: summary.final_mf_mis,
        final_r_hat: summary.final_r_hat,
        per_row: summary.per_row.clone(),
        config: ExperimentFile::from_config(&RunConfig { seed: summary.base_seed, ..cfg.clone() }, input),
    };
    let text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    files.push(write_file(out_dir.join("summary.json"), &(text + "\n"))?);
    Ok(files)
}

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_file(path.to_path_buf(), &(text + "\n"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub provenance: String,
    pub benchmark: String,
    pub threshold: f64,
    pub seed: u64,
    pub truth: GroundTruth,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, v: f64) -> TraceRow {
        TraceRow { n_evals: n, p_mis: v, p_mf_mis: v / 3.0, p_mf_mis_raw: v / 3.0, r_hat: 0.1 + v, eta: 0.3, wall_ms: 0.0 }
    }

    #[test]
    fn minimal_herbie_config_takes_defaults() {
        let (cfg, input) = parse_config_str(r#"{"benchmark": "herbie", "threshold": 2.0}"#).unwrap();
        assert_eq!(cfg.budget(), 505);
        assert_eq!((cfg.n0, cfg.iterations, cfg.batch), (5, 100, 5));
        assert_eq!(cfg.alpha, 0.97);
        assert_eq!(cfg.bandwidth, Bandwidth::Fixed(0.2));
        assert_eq!(cfg.c, 0.3);
        assert_eq!(cfg.gamma, 0.5);
        assert_eq!(cfg.pilot, 200_000);
        assert_eq!(cfg.surrogate_samples, 100_000);
        assert_eq!(input, registry("herbie").unwrap().input_density());
    }

    #[test]
    fn gamma_out_of_range_is_rejected() {
        let e = parse_config_str(r#"{"benchmark": "herbie", "threshold": 2.0, "gamma": 1.5}"#).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("0 < gamma < 1")), "{e}");
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let e = parse_config_str(r#"{"benchmark": "herbie", "threshold": 2.0, "bandwith": 0.3}"#).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("bandwith")), "{e}");
        let e = parse_config_str(r#"{"benchmark": "herbie", "inputs": [{"dist": "uniform", "lo": 0, "hi": 1, "x": 2}, {"dist": "uniform", "lo": 0, "hi": 1}]}"#).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("`x`")), "{e}");
    }

    #[test]
    fn unknown_benchmark_and_bad_inputs() {
        assert!(matches!(parse_config_str(r#"{"benchmark": "nope"}"#), Err(Error::Config(_))));
        assert!(matches!(
            parse_config_str(r#"{"benchmark": "herbie", "inputs": [{"dist": "uniform", "lo": 0, "hi": 1}]}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config_str(r#"{"benchmark": "herbie", "inputs": [{"dist": "uniform", "lo": 1, "hi": 0}, {"dist": "uniform", "lo": 0, "hi": 1}]}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn inputs_override_the_benchmark_density() {
        let (_, input) = parse_config_str(
            r#"{"benchmark": "quadrant", "inputs": [{"dist": "normal", "mean": 0, "sd": 1}, {"dist": "truncated_normal", "mean": 0, "sd": 1, "lo": -1, "hi": 2}]}"#,
        )
        .unwrap();
        assert_eq!(input.marginals()[0], Marginal::Normal { mean: 0.0, sd: 1.0 });
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = RunConfig::new("cantilever", 0.0);
        cfg.bandwidth = Bandwidth::NormalReference;
        cfg.estimators = vec![EstimatorKind::MfMis];
        cfg.seed = 77;
        let input = registry("cantilever").unwrap().input_density();
        let text = serialize_config(&cfg, &input);
        let (back, back_input) = parse_config_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back_input, input);
    }

    #[test]
    fn empty_trace_is_rejected() {
        assert!(trace_csv(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let vals = [0.1, 1.0 / 3.0, 2.0e-300, 9.144e-5, f64::MIN_POSITIVE, 123456789.0, 0.0];
        let rows: Vec<TraceRow> = vals.iter().enumerate().map(|(i, v)| row(5 + 5 * i, *v)).collect();
        let text = trace_csv(&rows).unwrap();
        assert!(text.starts_with("n_evals,p_mis,p_mf_mis,r_hat,eta,wall_ms\n"));
        let back = parse_trace_csv(&text).unwrap();
        for (r, b) in rows.iter().zip(&back) {
            assert_eq!(r.n_evals, b.0);
            assert_eq!(r.p_mis.to_bits(), b.1.to_bits());
            assert_eq!(r.p_mf_mis.to_bits(), b.2.to_bits());
            assert_eq!(r.r_hat.to_bits(), b.3.to_bits());
            assert_eq!(r.eta.to_bits(), b.4.to_bits());
            assert_eq!(r.wall_ms.to_bits(), b.5.to_bits());
        }
        let nan = trace_csv(&[TraceRow { p_mf_mis: f64::NAN, ..row(5, 0.2) }]).unwrap();
        assert!(parse_trace_csv(&nan).unwrap()[0].2.is_nan());
    }

    #[test]
    fn malformed_csv() {
        assert!(parse_trace_csv("a,b\n1,2").is_err());
        assert!(parse_trace_csv(&format!("{TRACE_HEADER}\n5,0.1,0.1,0.1,0.3")).is_err());
        assert!(parse_trace_csv(&format!("{TRACE_HEADER}\n5,0.1,x,0.1,0.3,0")).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::GpFit("x".into())), 3);
        let io = Error::Io { path: "p".into(), source: std::io::Error::other("x") };
        assert_eq!(exit_code(&io), 4);
    }
}
