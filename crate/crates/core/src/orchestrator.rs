//! The outer optimization loop.
//!
//! Each round trains the estimators, descends the search kernel, validates
//! the greedy candidate when the gate lets it through, and spends one query
//! on the most contested point of a fresh random line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorEnsemble, Origin, SampleBuffer};
use crate::explorer::{select_exploration_state, LineGenerator};
use crate::search::{pick_candidate, KernelConfig, KernelKind, SearchKernel, SeedSet};
use crate::validation::{clamp_to_box, population_std, ErrorReport, Problem};

/// `[int(2l/L) + 1] * r_b`.
pub fn r_ram_for(converged: usize, ensemble_size: usize, r_b: usize) -> usize {
    (2 * converged / ensemble_size.max(1) + 1) * r_b
}

/// Whether a candidate with estimate `estimate` is worth a query.
pub fn gate(estimate: f64, threshold: f64, focus: f64) -> bool {
    estimate < focus * threshold
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FocusPolicy {
    /// Fixed coefficient; `None` takes the problem's default.
    Constant(Option<f64>),
    /// `base * L / max(l, 1)`: permissive while the estimators are unsure.
    InverseConverged { base: f64 },
}

impl FocusPolicy {
    pub fn coefficient(&self, problem_default: f64, converged: usize, ensemble_size: usize) -> f64 {
        match *self {
            FocusPolicy::Constant(c) => c.unwrap_or(problem_default),
            FocusPolicy::InverseConverged { base } => base * ensemble_size as f64 / converged.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EeeConfig {
    pub estimator: EstimatorConfig,
    pub kernel: KernelKind,
    /// Hidden width of the mlp kernel; `None` picks 20, or 256 for problems
    /// searched through a codec.
    pub kernel_hidden: Option<usize>,
    pub kernel_step: Option<f64>,
    /// `None` enables the penalty for mlp kernels on codec problems only.
    pub collapse_penalty: Option<bool>,
    pub seeds: usize,
    pub initial_samples: usize,
    /// Post-initialization validation budget.
    pub budget: u64,
    /// Estimator epochs affordable per query; divided by `r_b`.
    pub r_t: usize,
    pub r_max: usize,
    pub focus: FocusPolicy,
    pub candidates: usize,
    /// Keep the per-round trace in the record.
    pub keep_trace: bool,
}

impl Default for EeeConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorConfig {
                hidden: 64,
                ..EstimatorConfig::default()
            },
            kernel: KernelKind::Identity,
            kernel_hidden: None,
            kernel_step: None,
            collapse_penalty: None,
            seeds: 64,
            initial_samples: 64,
            budget: 1000,
            r_t: 5,
            r_max: 400,
            focus: FocusPolicy::Constant(None),
            candidates: 256,
            keep_trace: true,
        }
    }
}

impl EeeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seeds", self.seeds),
            ("initial_samples", self.initial_samples),
            ("r_t", self.r_t),
            ("candidates", self.candidates),
            ("estimator hidden", self.estimator.hidden),
            ("batches per epoch", self.estimator.batches_per_epoch),
            ("max batch", self.estimator.max_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.estimator.ensemble_size < 2 {
            return Err(Error::Config("ensemble size must be at least 2".into()));
        }
        if self.kernel_hidden == Some(0) {
            return Err(Error::Config("kernel hidden width must be positive".into()));
        }
        match self.focus {
            FocusPolicy::Constant(Some(c)) | FocusPolicy::InverseConverged { base: c } if !(c > 1.0) => {
                Err(Error::Config(format!("focus coefficient must exceed 1, got {c}")))
            }
            _ => Ok(()),
        }
    }

    pub fn r_b(&self) -> usize {
        self.kernel.rounds_per_unit()
    }

    pub fn r_ep(&self) -> usize {
        (self.r_t / self.r_b()).max(1)
    }
}

/// What happened in one outer round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub converged: usize,
    /// Mean over members of the last epoch-mean training loss.
    pub estimator_loss: f64,
    pub r_ram: usize,
    pub candidate_estimate: f64,
    pub focus: f64,
    pub gate_fired: bool,
    pub candidate_e_o: Option<f64>,
    pub explore_disagreement: Option<f64>,
    pub explore_e_o: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub success: bool,
    /// Post-initialization queries spent up to and including the accepted one.
    pub queries_to_success: Option<u64>,
    pub budget: u64,
    pub initial_queries: u64,
    pub post_init_queries: u64,
    /// Lowest validated overall error of the run.
    pub final_e_o: f64,
    pub best_state: Vec<f64>,
    pub rounds: usize,
    pub gate_fires: u64,
    pub explore_queries: u64,
    /// Population std of the first entries of the last generated states;
    /// `None` when no search round ran.
    pub first_entry_std: Option<f64>,
    pub aborted: Option<String>,
    pub trace: Vec<RoundTrace>,
}

impl RunRecord {
    /// A failed record with no queries spent.
    pub fn empty(seed: u64, budget: u64) -> Self {
        Self {
            seed,
            success: false,
            queries_to_success: None,
            budget,
            initial_queries: 0,
            post_init_queries: 0,
            final_e_o: f64::INFINITY,
            best_state: Vec::new(),
            rounds: 0,
            gate_fires: 0,
            explore_queries: 0,
            first_entry_std: None,
            aborted: None,
            trace: Vec::new(),
        }
    }

    pub fn total_queries(&self) -> u64 {
        self.initial_queries + self.post_init_queries
    }

    pub(crate) fn observe(&mut self, state: &[f64], report: &ErrorReport) {
        if report.overall < self.final_e_o || self.best_state.is_empty() {
            self.final_e_o = report.overall;
            self.best_state = state.to_vec();
        }
    }
}

fn uniform_state<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// One optimization run. Configuration problems are returned as errors; a
/// validator failure mid-run ends the run as an aborted failure.
pub fn run(problem: &mut Problem, cfg: &EeeConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let spec = problem.spec().clone();
    let dim = spec.state_dim();
    let codec = problem.codec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ens_seed: u64 = rng.random();
    let kernel_seed: u64 = rng.random();
    let mut seed_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut explore_rng = ChaCha8Rng::seed_from_u64(rng.random());

    let mut ens = EstimatorEnsemble::new(
        dim,
        spec.implicit_dim(),
        cfg.estimator.clone(),
        cfg.initial_samples,
        ens_seed,
    )?;
    let seeds = SeedSet::new(cfg.seeds, cfg.kernel.seed_dim(dim), &mut seed_rng)?;
    let kcfg = KernelConfig {
        kind: cfg.kernel,
        hidden: cfg
            .kernel_hidden
            .unwrap_or(if codec.is_some() { 256 } else { 20 }),
        codec,
        collapse_penalty: cfg
            .collapse_penalty
            .unwrap_or(cfg.kernel == KernelKind::Mlp && codec.is_some()),
        step_size: cfg.kernel_step,
    };
    let mut kernel = SearchKernel::new(&kcfg, dim, &seeds, kernel_seed)?;
    let mut line = LineGenerator::random(dim, &mut explore_rng).with_codec(codec);

    let start = problem.queries();
    let mut record = RunRecord::empty(seed, cfg.budget);
    let mut buf = SampleBuffer::new(dim, spec.implicit_dim());

    let outcome = (|| -> Result<()> {
        for _ in 0..cfg.initial_samples {
            let mut x = problem.decode(&uniform_state(dim, &mut rng));
            clamp_to_box(&mut x);
            let report = problem.validate(&x)?;
            record.initial_queries += 1;
            record.observe(&x, &report);
            buf.push(x, report.implicit, report.overall, Origin::Exploration)?;
            if report.accepted {
                record.success = true;
                record.queries_to_success = Some(0);
                return Ok(());
            }
        }
        let r_ep = cfg.r_ep();
        let size = ens.len();
        while record.rounds < cfg.r_max && record.post_init_queries < cfg.budget {
            record.rounds += 1;
            let l = ens.train_epochs(&buf, r_ep)?;
            let r_ram = r_ram_for(l, size, cfg.r_b());
            kernel.search_round(&seeds, &spec, &ens, r_ram)?;
            let states = kernel.generate_states(&seeds)?;
            let (_, mut cand, estimate) = pick_candidate(&spec, &ens, states.view())?;
            let focus = cfg.focus.coefficient(problem.default_focus(), l, size);
            let losses = ens.last_losses();
            let mut step = RoundTrace {
                converged: l,
                estimator_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                r_ram,
                candidate_estimate: estimate,
                focus,
                gate_fired: false,
                candidate_e_o: None,
                explore_disagreement: None,
                explore_e_o: None,
            };
            let finish = |record: &mut RunRecord, step: RoundTrace| {
                if cfg.keep_trace {
                    record.trace.push(step);
                }
            };
            if gate(estimate, spec.threshold(), focus) {
                clamp_to_box(&mut cand);
                let report = problem.validate(&cand)?;
                record.post_init_queries += 1;
                record.gate_fires += 1;
                record.observe(&cand, &report);
                step.gate_fired = true;
                step.candidate_e_o = Some(report.overall);
                let accepted = report.accepted;
                buf.push(cand, report.implicit, report.overall, Origin::History)?;
                if accepted {
                    record.success = true;
                    record.queries_to_success = Some(record.post_init_queries);
                    finish(&mut record, step);
                    return Ok(());
                }
                if record.post_init_queries >= cfg.budget {
                    finish(&mut record, step);
                    break;
                }
            }
            line.reinit(&mut explore_rng);
            let cands = line.sample_candidates(cfg.candidates, &mut explore_rng);
            let (i, spread) = select_exploration_state(&cands, &ens)?;
            let x = cands.row(i).to_vec();
            let report = problem.validate(&x)?;
            record.post_init_queries += 1;
            record.explore_queries += 1;
            record.observe(&x, &report);
            step.explore_disagreement = Some(spread);
            step.explore_e_o = Some(report.overall);
            let accepted = report.accepted;
            buf.push(x, report.implicit, report.overall, Origin::Exploration)?;
            finish(&mut record, step);
            if accepted {
                record.success = true;
                record.queries_to_success = Some(record.post_init_queries);
                return Ok(());
            }
        }
        Ok(())
    })();

    // a run settled by the initial samples never generated states
    if let (true, Ok(states)) = (record.rounds > 0, kernel.generate_states(&seeds)) {
        if states.nrows() >= 2 {
            record.first_entry_std = Some(population_std(&states.column(0).to_vec()));
        }
    }
    match outcome {
        Ok(()) => {}
        Err(e @ (Error::Protocol(_) | Error::ValidationInput(_))) => {
            record.success = false;
            record.queries_to_success = None;
            record.aborted = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    let counted = problem.queries() - start;
    if counted != record.initial_queries + record.gate_fires + record.explore_queries {
        return Err(Error::State(format!(
            "query accounting mismatch: counter {counted}, record {}",
            record.total_queries()
        )));
    }
    Ok(record)
}
