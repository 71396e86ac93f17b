//! Problem setup and the mesh / truth / offline / online commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quasirb::eim::EimApproximation;
use quasirb::fem::{write_field_csv, write_mesh, BoundaryMode};
use quasirb::geometry::{benchmark_cell, read_geometry, MacroDecomposition, ParameterBox};
use quasirb::material::{
    parse_bh_table, validate_curve, Curve, RegionReluctivity, RegionSource, ReluctivityModel, SourceData,
};
use quasirb::offline::{two_stage_build, GreedyHistory, GreedyOptions, RbModel, SnapshotCache, TwoStageOptions, TwoStageResult};
use quasirb::online::{lift, solve_and_estimate_batch, OnlineOptions};
use quasirb::par::Execution;
use quasirb::store;
use quasirb::truth::{NewtonOptions, TruthProblem};

use crate::config::RunConfig;

pub fn geometry(cfg: &RunConfig) -> Result<MacroDecomposition> {
    match &cfg.geometry {
        Some(path) => read_geometry(path).with_context(|| format!("reading geometry {}", path.display())),
        None => Ok(benchmark_cell()),
    }
}

pub fn material(cfg: &RunConfig) -> Result<ReluctivityModel> {
    let m = &cfg.material;
    let regions = RegionReluctivity {
        air: m.nu_air,
        magnet: m.nu_magnet,
        coil: m.nu_coil,
    };
    let mut model = match m.curve.as_str() {
        "exponential" => {
            let [k1, k2, k3] = m.coefficients;
            ReluctivityModel::exponential(k1, k2, k3)
        }
        "table" => {
            let Some(path) = &m.table else {
                bail!("curve = \"table\" needs material.table");
            };
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ReluctivityModel::from_bh_table(&parse_bh_table(&text)?)?
        }
        "constant" => ReluctivityModel {
            curve: Curve::Constant(m.constant),
            nu0: m.constant.max(m.nu_air),
            regions,
        },
        other => bail!("unknown curve `{other}`"),
    };
    model.regions = regions;
    Ok(model)
}

pub fn sources(cfg: &RunConfig) -> SourceData {
    SourceData {
        current: RegionSource {
            coil: cfg.material.coil_current,
            ..Default::default()
        },
        magnet_field: RegionSource {
            magnet: cfg.material.magnet_field,
            ..Default::default()
        },
    }
}

pub fn boundary_mode(cfg: &RunConfig) -> Result<BoundaryMode> {
    match cfg.boundary.as_str() {
        "anti-periodic" => Ok(BoundaryMode::AntiPeriodic),
        "dirichlet" => Ok(BoundaryMode::AllDirichlet),
        other => bail!("unknown boundary mode `{other}`"),
    }
}

pub fn problem(cfg: &RunConfig) -> Result<TruthProblem> {
    problem_at_level(cfg, cfg.level)
}

pub fn problem_at_level(cfg: &RunConfig, level: u32) -> Result<TruthProblem> {
    Ok(TruthProblem::new(
        geometry(cfg)?,
        level,
        boundary_mode(cfg)?,
        material(cfg)?,
        sources(cfg),
    )?)
}

/// Curve-certified lower bound on the iron reluctivity over `[0, flux_range]`.
pub fn nu_lb_floor(cfg: &RunConfig, material: &ReluctivityModel) -> Result<f64> {
    let bounds = validate_curve(material, cfg.material.flux_range, 2000)
        .context("validating the reluctivity curve for the certified lower bound")?;
    Ok(bounds.nu_lb)
}

pub fn newton_options(cfg: &RunConfig) -> NewtonOptions {
    NewtonOptions {
        tol: cfg.tolerances.truth,
        ..NewtonOptions::default()
    }
}

pub fn online_options(cfg: &RunConfig) -> Result<OnlineOptions> {
    Ok(OnlineOptions {
        tol: cfg.tolerances.online,
        jacobian: cfg.jacobian_mode()?,
        nu_lb: cfg.nu_lb_mode()?,
        eim_error: cfg.online.eim_error,
        ..OnlineOptions::default()
    })
}

pub fn execution(cfg: &RunConfig) -> Execution {
    if cfg.jobs == 1 {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

pub fn counts(b: &ParameterBox, grid: &[usize], name: &str) -> Result<Vec<usize>> {
    match grid.len() {
        1 => Ok(vec![grid[0]; b.dims()]),
        n if n == b.dims() => Ok(grid.to_vec()),
        n => bail!("grid {name} has {n} sizes, the parameter box has {} dimensions", b.dims()),
    }
}

/// One uniform draw inside every cell of the `counts` tensor grid, cells in
/// grid order.
pub fn stratified_sample(b: &ParameterBox, counts: &[usize], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = b.grid(counts).len();
    (0..cells)
        .map(|mut idx| {
            let mut cell = vec![0; counts.len()];
            for d in (0..counts.len()).rev() {
                cell[d] = idx % counts[d];
                idx /= counts[d];
            }
            let t: Vec<f64> = cell
                .iter()
                .zip(counts)
                .map(|(&i, &c)| (i as f64 + rng.gen::<f64>()) / c as f64)
                .collect();
            b.from_unit(&t)
        })
        .collect()
}

pub fn test_parameters(cfg: &RunConfig, b: &ParameterBox) -> Result<Vec<Vec<f64>>> {
    let c = counts(b, &cfg.grids.test, "test")?;
    Ok(match cfg.grids.test_sampling.as_str() {
        "regular" => b.grid(&c),
        _ => stratified_sample(b, &c, cfg.seed),
    })
}

pub fn two_stage_options(cfg: &RunConfig, problem: &TruthProblem) -> Result<TwoStageOptions> {
    let b = &problem.geometry.parameter_box;
    Ok(TwoStageOptions {
        eim_train: b.grid(&counts(b, &cfg.grids.eim, "eim")?),
        train: b.grid(&counts(b, &cfg.grids.train, "train")?),
        eps_eim: cfg.tolerances.eim,
        m_max: cfg.limits.m_max,
        nu_lb_floor: nu_lb_floor(cfg, &problem.material)?,
        greedy: GreedyOptions {
            eps_rb: cfg.tolerances.rb,
            n_max: cfg.limits.n_max,
            online: online_options(cfg)?,
            newton: newton_options(cfg),
            exec: execution(cfg),
        },
    })
}

/// Parameters as whitespace- or comma-separated rows; `#` starts a comment.
pub fn parse_params(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().with_context(|| format!("line {}: bad number `{s}`", k + 1)))
            .collect::<Result<_>>()?;
        out.push(row);
    }
    Ok(out)
}

pub fn read_params(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_params(&text)
}

pub fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(dir, name)?))
}

fn join(p: &[f64]) -> String {
    p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn secs(d: Duration) -> String {
    format!("{:e}", d.as_secs_f64())
}

pub fn write_resolved_config(cfg: &RunConfig) -> Result<()> {
    let mut w = create(&cfg.output, "config.toml")?;
    w.write_all(cfg.to_toml().as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn cmd_mesh(cfg: &RunConfig) -> Result<PathBuf> {
    let problem = problem(cfg)?;
    let mut w = create(&cfg.output, "mesh.txt")?;
    write_mesh(&problem.space.mesh, &mut w)?;
    w.flush()?;
    log::info!(
        "mesh: {} nodes, {} triangles, {} unknowns",
        problem.space.mesh.node_count(),
        problem.space.mesh.len(),
        problem.dim()
    );
    Ok(cfg.output.join("mesh.txt"))
}

pub fn cmd_truth(cfg: &RunConfig, p: &[f64]) -> Result<PathBuf> {
    let problem = problem(cfg)?;
    let sol = problem.newton_solve(p, &newton_options(cfg), None)?;
    log::info!("truth solve: {} iterations, residual {:e}", sol.iterations, sol.residual);
    let mut w = create(&cfg.output, "truth.csv")?;
    write_field_csv(&problem.space, &sol.values, &mut w)?;
    w.flush()?;
    Ok(cfg.output.join("truth.csv"))
}

pub fn write_greedy_csv(history: &GreedyHistory, dir: &Path, name: &str) -> Result<()> {
    let mut w = csv_writer(dir, name)?;
    w.write_record([
        "round",
        "n",
        "m",
        "selected",
        "max_delta",
        "max_delta_rb",
        "max_delta_eim",
        "max_eim_error",
    ])?;
    for (k, r) in history.rounds.iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.selected.as_deref().map(join).unwrap_or_default(),
            format!("{:e}", r.max_delta),
            format!("{:e}", r.max_delta_rb),
            format!("{:e}", r.max_delta_eim),
            format!("{:e}", r.max_eim_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_eim_csv(eim: &EimApproximation, dir: &Path, name: &str) -> Result<()> {
    let mut w = csv_writer(dir, name)?;
    w.write_record(["m", "selected", "magic_point", "max_error"])?;
    for (m, err) in eim.history.iter().enumerate() {
        let (sel, point) = match eim.selected.get(m) {
            Some(_) => (join(&eim.parameters[m]), eim.magic[m].to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([m.to_string(), sel, point, format!("{err:e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_offline(cfg: &RunConfig) -> Result<TwoStageResult> {
    let problem = problem(cfg)?;
    let opts = two_stage_options(cfg, &problem)?;
    log::info!(
        "offline: {} unknowns, ν_LB floor {}, {} EIM and {} training parameters",
        problem.dim(),
        opts.nu_lb_floor,
        opts.eim_train.len(),
        opts.train.len()
    );
    let mut cache = SnapshotCache::new();
    let result = two_stage_build(&problem, &opts, &mut cache)?;
    write_resolved_config(cfg)?;
    store::save_model(&result.model, cfg.output.join("model.qrb"))?;
    write_greedy_csv(&result.stage1_history, &cfg.output, "greedy_stage1.csv")?;
    write_greedy_csv(&result.stage2_history, &cfg.output, "greedy_stage2.csv")?;
    write_eim_csv(&result.stage1_eim, &cfg.output, "eim_stage1.csv")?;
    write_eim_csv(&result.stage2_eim, &cfg.output, "eim_stage2.csv")?;
    log::info!(
        "offline done: N = {}, M = {}, final max estimator {:e} ({:?})",
        result.model.n(),
        result.model.m(),
        result.stage2_history.final_max_delta(),
        result.stage2_history.stop
    );
    Ok(result)
}

/// Batch online queries; every parameter is checked against the box first.
pub fn cmd_online(cfg: &RunConfig, model: &RbModel, params: &[Vec<f64>], export_fields: bool) -> Result<PathBuf> {
    for p in params {
        model.geometry.parameter_box.check(p)?;
    }
    let opts = online_options(cfg)?;
    let results = solve_and_estimate_batch(model, params, &opts, execution(cfg));
    let mut w = csv_writer(&cfg.output, "online.csv")?;
    w.write_record([
        "parameter",
        "n",
        "m",
        "iterations",
        "delta",
        "delta_rb",
        "delta_eim",
        "eim_error",
        "nu_lb",
        "nu_lb_mode",
        "certified",
        "solve_time_s",
        "estimator_time_s",
    ])?;
    for (k, (p, r)) in params.iter().zip(results).enumerate() {
        let (sol, cert) = r.with_context(|| format!("online solve at parameter {}", join(p)))?;
        w.write_record([
            join(p),
            model.n().to_string(),
            model.m().to_string(),
            sol.iterations.to_string(),
            format!("{:e}", cert.delta),
            format!("{:e}", cert.delta_rb),
            format!("{:e}", cert.delta_eim),
            format!("{:e}", cert.eim_error),
            cert.nu_lb.to_string(),
            cert.nu_lb_mode.name().to_string(),
            cert.certified.to_string(),
            secs(sol.solve_time),
            secs(cert.estimator_time),
        ])?;
        if export_fields {
            let problem = problem(cfg)?;
            if problem.dim() != model.basis.nrows() {
                bail!("the configured mesh does not match the model's truth space");
            }
            let mut f = create(&cfg.output, &format!("field_{k}.csv"))?;
            write_field_csv(&problem.space, &lift(model, &sol), &mut f)?;
            f.flush()?;
        }
    }
    w.flush()?;
    Ok(cfg.output.join("online.csv"))
}
