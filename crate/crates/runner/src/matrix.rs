//! Benchmark matrix: independent seeded runs on a worker pool, written to CSV.

use std::fs;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use eee_core::baselines::{ga_run, pso_run, random_search, Algorithm, GaConfig, PsoConfig};
use eee_core::external::ExternalOracle;
use eee_core::metrics::{aggregate, Aggregate};
use eee_core::orchestrator::{run, RunRecord};
use eee_core::validation::{make_problem, ErrorSpec, ExplicitComponent, ExplicitKind, ImplicitComponent, Problem};
use eee_core::{Error, Result};

use crate::config::{RunConfig, Target};

pub const RUNS_HEADER: [&str; 8] = [
    "run_id",
    "seed",
    "success",
    "queries",
    "final_e_o",
    "rounds",
    "gate_fires",
    "explore_queries",
];

pub const AGGREGATE_HEADER: [&str; 10] = [
    "problem", "algo", "kernel", "init", "runs", "t_0.5", "t_mean", "t_sigma", "t_max", "r_f",
];

#[derive(Debug)]
pub struct MatrixOutcome {
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
    pub aborted: usize,
}

/// `(problem seed, run seed)` for every run, derived from the master seed only.
pub fn run_seeds(master: u64, runs: usize) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..runs).map(|_| (rng.random(), rng.random())).collect()
}

fn build_problem(target: &Target, problem_seed: u64) -> Result<Problem> {
    match target {
        Target::Builtin(name) => make_problem(name, problem_seed),
        Target::External {
            command,
            state_dim,
            implicit_dim,
            threshold,
            timeout_secs,
        } => {
            let spec = ErrorSpec::new(
                *state_dim,
                vec![ImplicitComponent::mean("e_imp", *implicit_dim, 1.0)],
                vec![ExplicitComponent::mean("e_b", ExplicitKind::Boundary, *state_dim, 0.1)],
                *threshold,
            )?;
            let oracle = ExternalOracle::spawn_command_line(command, Duration::from_secs(*timeout_secs))?;
            Ok(Problem::new("external", spec, Box::new(oracle)))
        }
    }
}

fn one_run(cfg: &RunConfig, problem_seed: u64, run_seed: u64) -> Result<RunRecord> {
    let mut problem = match build_problem(&cfg.target, problem_seed) {
        Ok(p) => p,
        Err(e @ Error::Protocol(_)) => {
            let mut r = RunRecord::empty(run_seed, cfg.budget);
            r.aborted = Some(e.to_string());
            return Ok(r);
        }
        Err(e) => return Err(e),
    };
    match cfg.algo {
        Algorithm::Eee => run(&mut problem, &cfg.eee, run_seed),
        Algorithm::Random => random_search(&mut problem, cfg.budget, run_seed),
        Algorithm::Pso => pso_run(&mut problem, &PsoConfig::new(cfg.init, cfg.budget), run_seed),
        Algorithm::Ga => ga_run(&mut problem, &GaConfig::new(cfg.init, cfg.budget), run_seed),
    }
}

/// Executes every run of the matrix; results come back in run order.
pub fn run_matrix(cfg: &RunConfig) -> Result<MatrixOutcome> {
    let seeds = run_seeds(cfg.master_seed, cfg.runs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let records: Vec<RunRecord> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&(ps, rs)| one_run(cfg, ps, rs))
            .collect::<Result<Vec<_>>>()
    })?;
    let aborted = records.iter().filter(|r| r.aborted.is_some()).count();
    let aggregate = aggregate(&records)?;
    Ok(MatrixOutcome {
        records,
        aggregate,
        aborted,
    })
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("writing results: {e}"))
}

/// Writes `runs.csv` and `aggregate.csv` into `dir`.
pub fn write_outputs(cfg: &RunConfig, out: &MatrixOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut w = writer(&dir.join("runs.csv"))?;
    w.write_record(RUNS_HEADER).map_err(io_err)?;
    for (i, r) in out.records.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.seed.to_string(),
            r.success.to_string(),
            r.post_init_queries.to_string(),
            r.final_e_o.to_string(),
            r.rounds.to_string(),
            r.gate_fires.to_string(),
            r.explore_queries.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;

    let a = &out.aggregate;
    let kernel = if cfg.algo == Algorithm::Eee {
        cfg.eee.kernel.as_str()
    } else {
        "-"
    };
    let mut w = writer(&dir.join("aggregate.csv"))?;
    w.write_record(AGGREGATE_HEADER).map_err(io_err)?;
    w.write_record([
        cfg.target_name(),
        cfg.algo.as_str().to_string(),
        kernel.to_string(),
        cfg.init.to_string(),
        a.runs.to_string(),
        a.t_median.to_string(),
        a.t_mean.to_string(),
        a.t_sigma.to_string(),
        a.t_max.to_string(),
        a.r_f.to_string(),
    ])
    .map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}
