use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kdeais::cli_io::{self, TruthDocument};
use kdeais::driver::{dense_mc_ground_truth, tv_distance_check};
use kdeais::{run_kde_ais, run_replications, Error, Problem, RunConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "kdeais", version, about = "Failure probability estimation with KDE adaptive importance sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment file (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Single run
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Independent runs with seeds seed, seed+1, ...
    Replicate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Dense Monte Carlo reference value
    Truth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
    /// Total variation distance of the first and final proposals to the optimal density (2-D only)
    Tv {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
}

fn load(common: &Common) -> Result<(RunConfig, kdeais::input_models::InputDensity, Problem), Error> {
    let (mut cfg, input) = cli_io::parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let problem = cli_io::problem_for(&cfg, input.clone())?;
    Ok((cfg, input, problem))
}

fn run(common: &Common) -> Result<(), Error> {
    let (cfg, input, problem) = load(common)?;
    match run_kde_ais::<f64>(&problem, &cfg) {
        Ok(trace) => {
            report(&cli_io::write_trace(&trace, &cfg, &input, &common.out)?);
            Ok(())
        }
        Err(abort) => {
            if let Some(partial) = abort.partial.filter(|p| !p.rows.is_empty()) {
                log::warn!("run aborted; writing {} completed rows", partial.rows.len());
                report(&cli_io::write_trace(&partial, &cfg, &input, &common.out)?);
            }
            Err(abort.error)
        }
    }
}

fn replicate(common: &Common, replications: Option<usize>) -> Result<(), Error> {
    let (cfg, input, problem) = load(common)?;
    let r = replications.unwrap_or(cfg.replications);
    let summary = run_replications::<f64>(&problem, &cfg, r, cfg.seed)?;
    for (seed, msg) in &summary.failures {
        log::warn!("seed {seed} failed: {msg}");
    }
    report(&cli_io::write_replications(&summary, &cfg, &input, &common.out)?);
    log::info!(
        "median final MF-MIS {:e}, MIS {:e} over {} runs",
        summary.final_mf_mis.median,
        summary.final_mis.median,
        summary.traces.len()
    );
    Ok(())
}

fn truth(common: &Common, samples: usize, repeats: usize) -> Result<(), Error> {
    let (cfg, _, problem) = load(common)?;
    let truth = dense_mc_ground_truth(problem.limit_state.as_ref(), &problem.input, cfg.threshold, samples, repeats, cfg.seed)?;
    log::info!("P_F = {:e} +- {:e}", truth.mean, truth.stderr);
    let doc = TruthDocument {
        provenance: cli_io::provenance(),
        benchmark: cfg.benchmark.clone(),
        threshold: cfg.threshold,
        seed: cfg.seed,
        truth,
    };
    report(&[cli_io::write_json(&doc, &common.out.join("truth.json"))?]);
    Ok(())
}

fn tv(common: &Common, grid: usize) -> Result<(), Error> {
    let (cfg, input, problem) = load(common)?;
    if problem.dim() != 2 {
        return Err(Error::Config(format!("tv needs a 2-D benchmark, {} has {} inputs", cfg.benchmark, problem.dim())));
    }
    let trace = run_kde_ais::<f64>(&problem, &cfg).map_err(|a| a.error)?;
    let ls = problem.limit_state.as_ref();
    let distance = |q: &Option<kdeais::MixtureProposalF64>| -> Result<Option<f64>, Error> {
        q.as_ref().map(|q| tv_distance_check(q, ls, cfg.threshold, grid)).transpose()
    };
    let (first, last) = (distance(&trace.first_proposal)?, distance(&trace.final_proposal)?);
    let mut files = cli_io::write_trace(&trace, &cfg, &input, &common.out)?;
    let doc = json!({
        "provenance": cli_io::provenance(),
        "seed": cfg.seed,
        "grid": grid,
        "tv_initial": first,
        "tv_final": last,
    });
    files.push(cli_io::write_json(&doc, &common.out.join("tv.json"))?);
    report(&files);
    Ok(())
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("{}", Path::new(f).display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KDEAIS_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common } => run(common),
        Command::Replicate { common, replications } => replicate(common, *replications),
        Command::Truth { common, samples, repeats } => truth(common, *samples, *repeats),
        Command::Tv { common, grid } => tv(common, *grid),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(cli_io::exit_code(&e) as u8)
        }
    }
}
