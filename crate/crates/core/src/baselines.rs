//! Reference optimizers under the same query accounting as the main loop.
//!
//! Every fitness evaluation is one validation query, all queries count, and a
//! run stops at the first accepted state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::orchestrator::RunRecord;
use crate::validation::{clamp_to_box, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Eee,
    Random,
    Pso,
    Ga,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eee" => Ok(Self::Eee),
            "random" => Ok(Self::Random),
            "pso" => Ok(Self::Pso),
            "ga" => Ok(Self::Ga),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Eee => "eee",
            Self::Random => "random",
            Self::Pso => "pso",
            Self::Ga => "ga",
        }
    }
}

// Validates a raw search point; returns its overall error, and whether the
// run should stop (accepted or out of budget).
struct Ledger<'a> {
    problem: &'a mut Problem,
    record: RunRecord,
    start: u64,
}

impl<'a> Ledger<'a> {
    fn new(problem: &'a mut Problem, budget: u64, seed: u64) -> Self {
        let start = problem.queries();
        Self {
            problem,
            record: RunRecord::empty(seed, budget),
            start,
        }
    }

    fn exhausted(&self) -> bool {
        self.record.success || self.record.post_init_queries >= self.record.budget
    }

    fn evaluate(&mut self, raw: &[f64]) -> Result<f64> {
        let mut x = self.problem.decode(raw);
        clamp_to_box(&mut x);
        let report = self.problem.validate(&x)?;
        self.record.post_init_queries += 1;
        self.record.observe(&x, &report);
        if report.accepted {
            self.record.success = true;
            self.record.queries_to_success = Some(self.record.post_init_queries);
        }
        Ok(report.overall)
    }

    fn finish(mut self, outcome: Result<()>) -> Result<RunRecord> {
        match outcome {
            Ok(()) => {}
            Err(e @ (Error::Protocol(_) | Error::ValidationInput(_))) => {
                self.record.success = false;
                self.record.queries_to_success = None;
                self.record.aborted = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        let counted = self.problem.queries() - self.start;
        if counted != self.record.post_init_queries {
            return Err(Error::State(format!(
                "query accounting mismatch: counter {counted}, record {}",
                self.record.post_init_queries
            )));
        }
        Ok(self.record)
    }
}

fn uniform<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// Uniform samples in the box, validated one by one.
pub fn random_search(problem: &mut Problem, budget: u64, seed: u64) -> Result<RunRecord> {
    let dim = problem.spec().state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ledger = Ledger::new(problem, budget, seed);
    let outcome = (|| {
        while !ledger.exhausted() {
            let x = uniform(dim, &mut rng);
            ledger.evaluate(&x)?;
        }
        Ok(())
    })();
    ledger.finish(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    pub population: usize,
    pub budget: u64,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit as a fraction of the box width.
    pub velocity_clamp: f64,
}

impl PsoConfig {
    pub fn new(population: usize, budget: u64) -> Self {
        Self {
            population,
            budget,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            velocity_clamp: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        if self.budget < self.population as u64 {
            return Err(Error::Config("budget must cover one population".into()));
        }
        Ok(())
    }
}

/// Global-best particle swarm; every particle move costs one query.
pub fn pso_run(problem: &mut Problem, cfg: &PsoConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let dim = problem.spec().state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ledger = Ledger::new(problem, cfg.budget, seed);
    let vmax = cfg.velocity_clamp;
    let mut pos: Vec<Vec<f64>> = (0..cfg.population).map(|_| uniform(dim, &mut rng)).collect();
    let mut vel: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| (0..dim).map(|_| rng.random_range(-vmax..=vmax)).collect())
        .collect();
    let outcome = (|| {
        let mut best_pos = pos.clone();
        let mut best_val = vec![f64::INFINITY; cfg.population];
        let mut global: Option<(f64, Vec<f64>)> = None;
        for (i, p) in pos.iter().enumerate() {
            if ledger.exhausted() {
                return Ok(());
            }
            let v = ledger.evaluate(p)?;
            best_val[i] = v;
            if global.as_ref().is_none_or(|(g, _)| v < *g) {
                global = Some((v, p.clone()));
            }
        }
        while !ledger.exhausted() {
            for i in 0..cfg.population {
                if ledger.exhausted() {
                    return Ok(());
                }
                let g = &global.as_ref().expect("evaluated").1;
                for d in 0..dim {
                    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                    let v = cfg.inertia * vel[i][d]
                        + cfg.cognitive * r1 * (best_pos[i][d] - pos[i][d])
                        + cfg.social * r2 * (g[d] - pos[i][d]);
                    vel[i][d] = v.clamp(-vmax, vmax);
                    pos[i][d] = (pos[i][d] + vel[i][d]).clamp(0.0, 1.0);
                }
                let v = ledger.evaluate(&pos[i])?;
                if v < best_val[i] {
                    best_val[i] = v;
                    best_pos[i] = pos[i].clone();
                }
                if v < global.as_ref().expect("evaluated").0 {
                    global = Some((v, pos[i].clone()));
                }
            }
        }
        Ok(())
    })();
    ledger.finish(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub budget: u64,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means `1 / D_x`.
    pub mutation_rate: Option<f64>,
    pub mutation_sigma: f64,
    pub blend_alpha: f64,
    pub tournament: usize,
    pub elitism: usize,
}

impl GaConfig {
    pub fn new(population: usize, budget: u64) -> Self {
        Self {
            population,
            budget,
            crossover_rate: 0.9,
            mutation_rate: None,
            mutation_sigma: 0.1,
            blend_alpha: 0.5,
            tournament: 2,
            elitism: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        if self.budget < self.population as u64 {
            return Err(Error::Config("budget must cover one population".into()));
        }
        if self.elitism >= self.population {
            return Err(Error::Config("elitism must leave room for children".into()));
        }
        if self.tournament == 0 {
            return Err(Error::Config("tournament size must be positive".into()));
        }
        Ok(())
    }
}

/// Best overall error of every generation, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GaHistory {
    pub best_per_generation: Vec<f64>,
}

/// Real-coded generational GA; one query per evaluated child.
pub fn ga_run(problem: &mut Problem, cfg: &GaConfig, seed: u64) -> Result<RunRecord> {
    ga_run_with_history(problem, cfg, seed).map(|(r, _)| r)
}

pub fn ga_run_with_history(problem: &mut Problem, cfg: &GaConfig, seed: u64) -> Result<(RunRecord, GaHistory)> {
    cfg.validate()?;
    let dim = problem.spec().state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mutation_rate = cfg.mutation_rate.unwrap_or(1.0 / dim as f64);
    let noise = Normal::new(0.0, cfg.mutation_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut ledger = Ledger::new(problem, cfg.budget, seed);
    let mut history = GaHistory {
        best_per_generation: Vec::new(),
    };
    let outcome = (|| {
        let mut pop: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.population);
        for _ in 0..cfg.population {
            if ledger.exhausted() {
                return Ok(());
            }
            let x = uniform(dim, &mut rng);
            let v = ledger.evaluate(&x)?;
            pop.push((x, v));
        }
        loop {
            pop.sort_by(|a, b| a.1.total_cmp(&b.1));
            history.best_per_generation.push(pop[0].1);
            if ledger.exhausted() {
                return Ok(());
            }
            let mut next: Vec<(Vec<f64>, f64)> = pop[..cfg.elitism].to_vec();
            while next.len() < cfg.population {
                let a = tournament(&pop, cfg.tournament, &mut rng);
                let b = tournament(&pop, cfg.tournament, &mut rng);
                let mut child = if rng.random::<f64>() < cfg.crossover_rate {
                    blend(&pop[a].0, &pop[b].0, cfg.blend_alpha, &mut rng)
                } else {
                    pop[a].0.clone()
                };
                for g in child.iter_mut() {
                    if rng.random::<f64>() < mutation_rate {
                        *g += noise.sample(&mut rng);
                    }
                }
                clamp_to_box(&mut child);
                if ledger.exhausted() {
                    return Ok(());
                }
                let v = ledger.evaluate(&child)?;
                next.push((child, v));
            }
            pop = next;
        }
    })();
    ledger.finish(outcome).map(|r| (r, history))
}

fn tournament<R: Rng>(pop: &[(Vec<f64>, f64)], k: usize, rng: &mut R) -> usize {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..k {
        let c = rng.random_range(0..pop.len());
        if pop[c].1 < pop[best].1 {
            best = c;
        }
    }
    best
}

fn blend<R: Rng>(a: &[f64], b: &[f64], alpha: f64, rng: &mut R) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (lo, hi) = (x.min(y), x.max(y));
            let span = hi - lo;
            let (l, h) = (lo - alpha * span, hi + alpha * span);
            if h > l {
                rng.random_range(l..h)
            } else {
                l
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{ErrorSpec, ImplicitComponent, OracleReply};

    fn stub(dim: usize, threshold: f64, f: fn(&[f64]) -> f64) -> Problem {
        let spec = ErrorSpec::new(dim, vec![ImplicitComponent::mean("e", 1, 1.0)], vec![], threshold).unwrap();
        let oracle = move |x: &[f64]| -> Result<OracleReply> {
            Ok(OracleReply {
                implicit: vec![f(x)],
                overall: None,
            })
        };
        Problem::new("stub", spec, Box::new(oracle))
    }

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum()
    }

    // never reaches a tiny threshold
    fn lifted_sphere(x: &[f64]) -> f64 {
        0.1 + 0.2 * sphere(x)
    }

    #[test]
    fn random_search_geometric() {
        let mut total = 0;
        for s in 0..400 {
            let mut p = stub(1, 0.5, |x| x[0]);
            let r = random_search(&mut p, 1000, s).unwrap();
            assert!(r.success);
            total += r.queries_to_success.unwrap();
        }
        let mean = total as f64 / 400.0;
        assert!(mean <= 2.3, "mean queries {mean}");
    }

    #[test]
    fn random_search_exhausts_budget() {
        let mut p = stub(2, 1e-9, |x| 0.5 + 0.5 * x[0]);
        let r = random_search(&mut p, 3, 1).unwrap();
        assert!(!r.success);
        assert_eq!((r.post_init_queries, p.queries()), (3, 3));
        let mut q = stub(2, 1e-9, |x| 0.5 + 0.5 * x[0]);
        assert_eq!(random_search(&mut q, 3, 1).unwrap(), r);
    }

    #[test]
    fn pso_budget_equal_population() {
        let mut p = stub(3, 1e-9, lifted_sphere);
        let r = pso_run(&mut p, &PsoConfig::new(8, 8), 2).unwrap();
        assert_eq!(p.queries(), 8);
        assert!(!r.success);
        assert!(r.best_state.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn configs_rejected() {
        let mut p = stub(2, 0.1, sphere);
        assert!(pso_run(&mut p, &PsoConfig::new(1, 10), 0).is_err());
        assert!(ga_run(&mut p, &GaConfig::new(8, 4), 0).is_err());
        assert_eq!(p.queries(), 0);
    }

    #[test]
    fn ga_elitism_keeps_best() {
        let mut p = stub(4, 1e-9, lifted_sphere);
        let cfg = GaConfig {
            crossover_rate: 0.0,
            mutation_rate: Some(0.0),
            ..GaConfig::new(10, 200)
        };
        let (_, h) = ga_run_with_history(&mut p, &cfg, 5).unwrap();
        assert!(h.best_per_generation.len() > 5);
        assert!(h.best_per_generation.windows(2).all(|w| w[1] <= w[0]));
    }
}
