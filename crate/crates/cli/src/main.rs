use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use quasirb::store;
use quasirb_cli::{bench, pipeline, verify, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "quasirb", version, about = "Certified reduced-basis pipeline for parametrized nonlinear magnetostatics")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the fine mesh.
    Mesh,
    /// Truth Newton solve at one parameter; writes the nodal field.
    Truth {
        /// Comma-separated parameter.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        param: Vec<f64>,
    },
    /// Two-stage EIM / greedy build; writes the model container and histories.
    Offline,
    /// Batch online queries with error certificates.
    Online {
        #[arg(long)]
        model: PathBuf,
        /// One parameter per line.
        #[arg(long)]
        params: PathBuf,
        /// Also write the lifted field of every query.
        #[arg(long)]
        fields: bool,
    },
    /// Compare the model with truth solves on the test set.
    Verify {
        #[arg(long)]
        model: PathBuf,
    },
    /// Time truth and online solves.
    Bench {
        #[arg(long)]
        model: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.output {
        cfg.output = o;
    }
    cfg.validate()?;
    let jobs = cfg.jobs;
    quasirb::par::with_jobs(jobs, move || dispatch(&cfg, cli.command))
}

fn dispatch(cfg: &RunConfig, command: Command) -> Result<()> {
    match command {
        Command::Mesh => {
            let path = pipeline::cmd_mesh(cfg)?;
            println!("{}", path.display());
        }
        Command::Truth { param } => {
            if param.is_empty() {
                bail!("--param is required");
            }
            let path = pipeline::cmd_truth(cfg, &param)?;
            println!("{}", path.display());
        }
        Command::Offline => {
            let r = pipeline::cmd_offline(cfg)?;
            println!(
                "N = {}, M = {}, max estimator {:e} ({:?}); written to {}",
                r.model.n(),
                r.model.m(),
                r.stage2_history.final_max_delta(),
                r.stage2_history.stop,
                cfg.output.display()
            );
        }
        Command::Online { model, params, fields } => {
            let model = load(&model)?;
            let params = pipeline::read_params(&params)?;
            let path = pipeline::cmd_online(cfg, &model, &params, fields)?;
            println!("{}", path.display());
        }
        Command::Verify { model } => {
            let model = load(&model)?;
            let r = verify::cmd_verify(cfg, &model)?;
            println!(
                "{} test parameters, {} truth failures, {} violations with the certified floor",
                r.tested,
                r.truth_failures.len(),
                r.floor_violations()
            );
            for row in &r.table {
                println!(
                    "N = {:2} M = {:2}: max Δ {:.3e}, mean Δ {:.3e}, mean η {:.3e}, max η {:.3e}",
                    row.n, row.m, row.max_delta, row.mean_delta, row.mean_effectivity, row.max_effectivity
                );
            }
        }
        Command::Bench { model } => {
            let model = load(&model)?;
            let r = bench::cmd_bench(cfg, &model)?;
            println!(
                "truth {:?}, online {:?} (speedup {:.1}), with estimator {:?} (speedup {:.2})",
                r.truth,
                r.online,
                r.speedup(),
                r.online_with_estimator,
                r.speedup_with_estimator()
            );
        }
    }
    Ok(())
}

fn load(path: &PathBuf) -> Result<quasirb::offline::RbModel> {
    store::load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
