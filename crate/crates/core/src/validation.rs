//! The validation module: error taxonomy, overall-error assembly, query
//! accounting and the built-in synthetic benchmark problems.
//!
//! Every error component is either *implicit* (only obtainable by querying
//! the oracle) or *explicit* (closed form in the state, with an analytic
//! gradient). The overall error is the weighted sum of all entries.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::net::logistic;
use crate::search::simplex_transform;

/// Entry-wise boundary violation of a normalized state:
/// `max(x - 1, 0) + max(-x, 0)`.
pub fn boundary_error(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| (v - 1.0).max(0.0) + (-v).max(0.0)).collect()
}

/// Clamps every entry into `[0, 1]`.
pub fn clamp_to_box(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Closed-form error components computed directly from the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplicitKind {
    /// Boundary error, one entry per state coordinate.
    Boundary,
    /// Population standard deviation of the state entries (one entry).
    Spread,
    /// Adjacent ordering violations `max(x_i - x_{i+1}, 0)`, `D_x - 1` entries.
    Ordering,
}

impl ExplicitKind {
    pub fn dim(self, state_dim: usize) -> usize {
        match self {
            ExplicitKind::Boundary => state_dim,
            ExplicitKind::Spread => 1,
            ExplicitKind::Ordering => state_dim.saturating_sub(1),
        }
    }

    fn eval_into(self, x: &[f64], out: &mut Vec<f64>) {
        match self {
            ExplicitKind::Boundary => out.extend(boundary_error(x)),
            ExplicitKind::Spread => out.push(population_std(x)),
            ExplicitKind::Ordering => out.extend(x.windows(2).map(|w| (w[0] - w[1]).max(0.0))),
        }
    }

    /// Adds `sum_k weights[k] * d e_k / d x` into `grad`.
    fn weighted_grad_into(self, x: &[f64], weights: &[f64], grad: &mut [f64]) {
        match self {
            ExplicitKind::Boundary => {
                for ((g, &v), &w) in grad.iter_mut().zip(x).zip(weights) {
                    if v > 1.0 {
                        *g += w;
                    } else if v < 0.0 {
                        *g -= w;
                    }
                }
            }
            ExplicitKind::Spread => {
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let sd = population_std(x);
                if sd > 0.0 {
                    for (g, &v) in grad.iter_mut().zip(x) {
                        *g += weights[0] * (v - mean) / (n * sd);
                    }
                }
            }
            ExplicitKind::Ordering => {
                for (i, &w) in weights.iter().enumerate() {
                    if x[i] > x[i + 1] {
                        grad[i] += w;
                        grad[i + 1] -= w;
                    }
                }
            }
        }
    }
}

pub(crate) fn population_std(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// An implicit error component: `dim` scalar entries sharing one weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitComponent {
    pub name: String,
    pub dim: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitComponent {
    pub name: String,
    pub kind: ExplicitKind,
    pub weight: f64,
}

impl ImplicitComponent {
    /// Component entering the overall error as `coefficient * mean(entries)`.
    pub fn mean(name: &str, dim: usize, coefficient: f64) -> Self {
        Self {
            name: name.to_string(),
            dim,
            weight: coefficient / dim as f64,
        }
    }
}

impl ExplicitComponent {
    pub fn mean(name: &str, kind: ExplicitKind, state_dim: usize, coefficient: f64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            weight: coefficient / kind.dim(state_dim).max(1) as f64,
        }
    }
}

/// Layout and weighting of a validation module's error vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSpec {
    state_dim: usize,
    implicit: Vec<ImplicitComponent>,
    explicit: Vec<ExplicitComponent>,
    threshold: f64,
    implicit_weights: Vec<f64>,
    explicit_weights: Vec<f64>,
}

impl ErrorSpec {
    pub fn new(
        state_dim: usize,
        implicit: Vec<ImplicitComponent>,
        explicit: Vec<ExplicitComponent>,
        threshold: f64,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::Config(format!("acceptance threshold must be positive, got {threshold}")));
        }
        let implicit_weights: Vec<f64> = implicit
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.weight, c.dim))
            .collect();
        let explicit_weights: Vec<f64> = explicit
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.weight, c.kind.dim(state_dim)))
            .collect();
        let all = implicit_weights.iter().chain(&explicit_weights);
        if all.clone().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("component weights must be finite and nonnegative".into()));
        }
        if !all.clone().any(|&w| w > 0.0) {
            return Err(Error::Config("at least one component weight must be positive".into()));
        }
        Ok(Self {
            state_dim,
            implicit,
            explicit,
            threshold,
            implicit_weights,
            explicit_weights,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn implicit_dim(&self) -> usize {
        self.implicit_weights.len()
    }

    pub fn explicit_dim(&self) -> usize {
        self.explicit_weights.len()
    }

    /// Total error dimensionality `D_e`.
    pub fn error_dim(&self) -> usize {
        self.implicit_dim() + self.explicit_dim()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn implicit_components(&self) -> &[ImplicitComponent] {
        &self.implicit
    }

    pub fn explicit_components(&self) -> &[ExplicitComponent] {
        &self.explicit
    }

    pub fn implicit_weights(&self) -> &[f64] {
        &self.implicit_weights
    }

    pub fn explicit_weights(&self) -> &[f64] {
        &self.explicit_weights
    }

    pub fn explicit_errors(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim, x.len())?;
        let mut out = Vec::with_capacity(self.explicit_dim());
        for c in &self.explicit {
            c.kind.eval_into(x, &mut out);
        }
        Ok(out)
    }

    /// Weighted explicit error `w_exp^T e_exp(x)`.
    pub fn explicit_overall(&self, x: &[f64]) -> Result<f64> {
        let e = self.explicit_errors(x)?;
        Ok(dot(&self.explicit_weights, &e))
    }

    /// Gradient of `w_exp^T e_exp(x)` with respect to `x`.
    pub fn explicit_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim, x.len())?;
        let mut grad = vec![0.0; x.len()];
        let mut offset = 0;
        for c in &self.explicit {
            let dim = c.kind.dim(self.state_dim);
            c.kind
                .weighted_grad_into(x, &self.explicit_weights[offset..offset + dim], &mut grad);
            offset += dim;
        }
        Ok(grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted overall error `w_exp^T e_exp + w_imp^T e_imp`.
pub fn assemble_overall(spec: &ErrorSpec, e_imp: &[f64], e_exp: &[f64]) -> Result<f64> {
    check_dim("implicit errors", spec.implicit_dim(), e_imp.len())?;
    check_dim("explicit errors", spec.explicit_dim(), e_exp.len())?;
    Ok(dot(&spec.explicit_weights, e_exp) + dot(&spec.implicit_weights, e_imp))
}

/// Full output of one validation query.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub implicit: Vec<f64>,
    pub explicit: Vec<f64>,
    pub overall: f64,
    pub accepted: bool,
}

impl ErrorReport {
    pub fn assemble(spec: &ErrorSpec, implicit: Vec<f64>, explicit: Vec<f64>) -> Result<Self> {
        let overall = assemble_overall(spec, &implicit, &explicit)?;
        Ok(Self {
            implicit,
            explicit,
            overall,
            accepted: overall < spec.threshold(),
        })
    }
}

/// Inputs of the error-blurriness diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurrinessInput {
    pub explicit_weights: Vec<f64>,
    pub implicit_weights: Vec<f64>,
    pub ensemble_size: usize,
    /// Proxy for the estimator noise variance.
    pub variance: f64,
}

impl BlurrinessInput {
    pub fn from_spec(spec: &ErrorSpec, ensemble_size: usize, variance: f64) -> Self {
        Self {
            explicit_weights: spec.explicit_weights().to_vec(),
            implicit_weights: spec.implicit_weights().to_vec(),
            ensemble_size,
            variance,
        }
    }
}

/// Share of the error signal carried by ensemble-estimated (implicit) terms,
/// scaled by the estimator noise variance. Lies in `[0, variance]`.
pub fn error_blurriness(b: &BlurrinessInput) -> Result<f64> {
    if b.ensemble_size == 0 {
        return Err(Error::Config("ensemble size must be at least 1".into()));
    }
    if !(b.variance >= 0.0) {
        return Err(Error::Config("variance proxy must be nonnegative".into()));
    }
    if b.explicit_weights.is_empty() && b.implicit_weights.is_empty() {
        return Err(Error::Config("at least one error term is required".into()));
    }
    let m = b.explicit_weights.len() as f64;
    let n = b.implicit_weights.len() as f64;
    let imp = n / b.ensemble_size as f64 * b.implicit_weights.iter().sum::<f64>();
    let exp = m * b.explicit_weights.iter().sum::<f64>();
    let denom = exp + imp;
    if denom <= 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(imp / denom * b.variance)
}

/// Output transform applied to candidate states before validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateCodec {
    /// Maps states into the hyper-triangle `x_i in [x_1, 1]`.
    HyperTriangle,
}

impl StateCodec {
    pub fn apply(self, raw: &[f64]) -> Vec<f64> {
        match self {
            StateCodec::HyperTriangle => simplex_transform(raw),
        }
    }
}

/// Reply of an oracle for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReply {
    pub implicit: Vec<f64>,
    /// Authoritative overall error, when the oracle computes one itself.
    pub overall: Option<f64>,
}

/// Source of implicit errors: a simulator, a subprocess, a test stub.
pub trait Oracle: Send {
    fn query(&mut self, state: &[f64]) -> Result<OracleReply>;
}

impl<F> Oracle for F
where
    F: FnMut(&[f64]) -> Result<OracleReply> + Send,
{
    fn query(&mut self, state: &[f64]) -> Result<OracleReply> {
        self(state)
    }
}

/// A validation module instance with its query counter.
pub struct Problem {
    name: String,
    spec: ErrorSpec,
    oracle: Box<dyn Oracle>,
    codec: Option<StateCodec>,
    focus: f64,
    queries: u64,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .field("codec", &self.codec)
            .field("queries", &self.queries)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(name: impl Into<String>, spec: ErrorSpec, oracle: Box<dyn Oracle>) -> Self {
        Self {
            name: name.into(),
            spec,
            oracle,
            codec: None,
            focus: 1.5,
            queries: 0,
        }
    }

    pub fn with_codec(mut self, codec: StateCodec) -> Self {
        self.codec = Some(codec);
        self
    }

    /// Default focus coefficient used by the gate for this problem.
    pub fn with_focus(mut self, focus: f64) -> Self {
        self.focus = focus;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &ErrorSpec {
        &self.spec
    }

    pub fn codec(&self) -> Option<StateCodec> {
        self.codec
    }

    pub fn default_focus(&self) -> f64 {
        self.focus
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// Decodes a raw search-space point into a validation state.
    pub fn decode(&self, raw: &[f64]) -> Vec<f64> {
        match self.codec {
            Some(c) => c.apply(raw),
            None => raw.to_vec(),
        }
    }

    /// Runs one validation query. Rejected inputs are not counted.
    pub fn validate(&mut self, x: &[f64]) -> Result<ErrorReport> {
        check_dim("state", self.spec.state_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::ValidationInput("state contains non-finite entries".into()));
        }
        let reply = self.oracle.query(x)?;
        check_dim("oracle implicit errors", self.spec.implicit_dim(), reply.implicit.len())?;
        if reply.implicit.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Protocol("implicit errors must be finite and nonnegative".into()));
        }
        let explicit = self.spec.explicit_errors(x)?;
        let report = match reply.overall {
            None => ErrorReport::assemble(&self.spec, reply.implicit, explicit)?,
            Some(overall) => {
                if !(overall.is_finite() && overall >= 0.0) {
                    return Err(Error::Protocol(format!("invalid overall error {overall}")));
                }
                ErrorReport {
                    implicit: reply.implicit,
                    explicit,
                    overall,
                    accepted: overall < self.spec.threshold(),
                }
            }
        };
        self.queries += 1;
        Ok(report)
    }
}

/// Identifiers of the built-in benchmark problems.
pub const PROBLEM_IDS: [&str; 4] = ["p1-spectra2", "p2-cycle11", "p3-actuator20", "p4-pwm30"];

/// Synthetic forward models standing in for the engineering simulators.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticModel {
    /// Gaussian absorption line sampled at 50 points; state (center, amplitude).
    Spectra,
    /// Two performance figures from cosine/product mixtures of 11 parameters.
    Cycle,
    /// Two objectives plus seven affine-quadratic inequality constraints.
    Actuator { offsets: [f64; 7] },
    /// Harmonic content of 30 ordered switching positions.
    Pwm,
}

const SPECTRUM_POINTS: usize = 50;
const CONSTRAINT_MARGIN: f64 = 0.02;

// Weighted projection `sum a_i (x_i - 0.5) / sum |a_i|`, in [-0.5, 0.5] on the box.
fn projection(x: &[f64], coef: impl Fn(usize) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let a = coef(i);
        num += a * (v - 0.5);
        den += a.abs();
    }
    num / den
}

fn actuator_constraints(x: &[f64]) -> [f64; 7] {
    let mut g = [0.0; 7];
    for (j, gj) in g.iter_mut().enumerate() {
        let jf = j as f64;
        let lin = projection(x, |i| ((jf + 1.0) * (0.37 * i as f64 + 1.0) + jf).cos());
        let quad = projection(x, |i| ((jf + 2.0) * (0.53 * i as f64 + 0.3)).sin());
        *gj = 6.0 * lin + 12.0 * quad * quad;
    }
    g
}

fn pwm_harmonic(x: &[f64], order: f64) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (order * PI * v / 2.0).cos()
        })
        .sum()
}

// Distortion measure in [0, 1); zero on the front where the 5th and 7th
// harmonics hit their targets.
fn pwm_distortion(x: &[f64]) -> f64 {
    let d = (pwm_harmonic(x, 5.0) - 0.2).powi(2) + (pwm_harmonic(x, 7.0) + 0.1).powi(2);
    (8.0 * d).tanh()
}

impl SyntheticModel {
    /// Forward model `y = f(x)`; every output entry lies in `[0, 1]` on the box.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SyntheticModel::Spectra => {
                let (center, amplitude) = (x[0], x[1]);
                (0..SPECTRUM_POINTS)
                    .map(|k| {
                        let u = k as f64 / (SPECTRUM_POINTS - 1) as f64;
                        amplitude * (-(u - center).powi(2) / 0.02).exp()
                    })
                    .collect()
            }
            SyntheticModel::Cycle => {
                let s1 = projection(x, |i| (1.3 * i as f64 + 0.4).cos());
                let s2 = projection(x, |i| (0.9 * i as f64 + 1.1).sin());
                let s3 = projection(x, |i| (2.1 * i as f64 + 2.0).cos());
                vec![
                    0.5 + 0.5 * (PI * (4.5 * s1 + 0.3)).cos(),
                    (0.5 + 0.5 * (4.5 * PI * s2).sin()) * (0.6 + 0.8 * s3),
                ]
            }
            SyntheticModel::Actuator { .. } => {
                let s1 = projection(x, |i| (0.7 * i as f64 + 0.2).cos());
                let s2 = projection(x, |i| (1.7 * i as f64 + 0.5).sin());
                vec![logistic(12.0 * s1), 0.5 + 0.5 * (PI * (4.0 * s2 + 0.5)).cos()]
            }
            SyntheticModel::Pwm => {
                let u = logistic(3.0 * (pwm_harmonic(x, 1.0) - 0.3));
                let v = pwm_distortion(x);
                vec![u, 1.0 - u + u * v]
            }
        }
    }

    /// Implicit errors of `x` against the target observation.
    pub fn implicit_errors(&self, x: &[f64], target: &[f64]) -> Vec<f64> {
        let y = self.forward(x);
        match self {
            SyntheticModel::Spectra => {
                // Euclidean distance scaled by the two norms so it stays in [0, 1].
                let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let diff: Vec<f64> = y.iter().zip(target).map(|(a, b)| a - b).collect();
                let scale = norm(&y) + norm(target);
                vec![if scale > 0.0 { norm(&diff) / scale } else { 0.0 }]
            }
            SyntheticModel::Cycle | SyntheticModel::Pwm => {
                y.iter().zip(target).map(|(a, b)| (a - b).abs()).collect()
            }
            SyntheticModel::Actuator { offsets } => {
                let mut e: Vec<f64> = y.iter().zip(target).map(|(a, b)| (a - b).abs()).collect();
                let g = actuator_constraints(x);
                e.extend(g.iter().zip(offsets).map(|(gj, off)| (gj - off).max(0.0)));
                e
            }
        }
    }
}

/// Oracle backed by a synthetic forward model and a fixed target observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    pub model: SyntheticModel,
    pub target: Vec<f64>,
    /// The feasible state the target was generated from.
    pub generating_state: Vec<f64>,
}

impl Oracle for SyntheticOracle {
    fn query(&mut self, state: &[f64]) -> Result<OracleReply> {
        Ok(OracleReply {
            implicit: self.model.implicit_errors(state, &self.target),
            overall: None,
        })
    }
}

/// Error layout, threshold and default focus coefficient of a built-in problem.
pub fn problem_spec(name: &str) -> Result<(ErrorSpec, f64, Option<StateCodec>)> {
    use ExplicitKind::*;
    let spec = match name {
        "p1-spectra2" => ErrorSpec::new(
            2,
            vec![ImplicitComponent::mean("e_d", 1, 1.0)],
            vec![ExplicitComponent::mean("e_b", Boundary, 2, 1.0)],
            0.1,
        )?,
        "p2-cycle11" => ErrorSpec::new(
            11,
            vec![ImplicitComponent::mean("e_d", 2, 1.0)],
            vec![
                ExplicitComponent::mean("e_b", Boundary, 11, 0.1),
                ExplicitComponent::mean("e_e", Spread, 11, 0.1),
            ],
            0.05,
        )?,
        "p3-actuator20" => ErrorSpec::new(
            20,
            // mean over the joint nine entries [e_d, e_ie]
            vec![
                ImplicitComponent { name: "e_d".into(), dim: 2, weight: 1.0 / 9.0 },
                ImplicitComponent { name: "e_ie".into(), dim: 7, weight: 1.0 / 9.0 },
            ],
            vec![ExplicitComponent::mean("e_b", Boundary, 20, 0.1)],
            0.05,
        )?,
        "p4-pwm30" => ErrorSpec::new(
            30,
            vec![ImplicitComponent::mean("e_d", 2, 0.5)],
            vec![
                ExplicitComponent::mean("e_b", Boundary, 30, 0.1),
                ExplicitComponent::mean("e_ie", Ordering, 30, 10.0),
            ],
            0.05,
        )?,
        other => return Err(Error::NotFound(other.to_string())),
    };
    let (focus, codec) = match name {
        "p1-spectra2" | "p2-cycle11" => (1.5, None),
        "p3-actuator20" => (2.0, None),
        _ => (5.0, Some(StateCodec::HyperTriangle)),
    };
    Ok((spec, focus, codec))
}

/// Builds the synthetic oracle of a built-in problem; the target is the image
/// of a seeded feasible state, so every instance is solvable.
pub fn synthetic_oracle(name: &str, seed: u64) -> Result<SyntheticOracle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, state) = match name {
        "p1-spectra2" => {
            let state = vec![rng.random_range(0.2..0.8), rng.random_range(0.3..1.0)];
            (SyntheticModel::Spectra, state)
        }
        "p2-cycle11" => {
            let state: Vec<f64> = (0..11).map(|_| rng.random_range(0.2..0.8)).collect();
            (SyntheticModel::Cycle, state)
        }
        "p3-actuator20" => {
            let state: Vec<f64> = (0..20).map(|_| rng.random_range(0.2..0.8)).collect();
            let g = actuator_constraints(&state);
            let offsets = g.map(|v| v + CONSTRAINT_MARGIN);
            (SyntheticModel::Actuator { offsets }, state)
        }
        "p4-pwm30" => {
            // lowest-distortion state of a seeded pool, i.e. a point near the front
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _ in 0..2000 {
                let raw: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
                let x = simplex_transform(&raw);
                let v = pwm_distortion(&x);
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, x));
                }
            }
            (SyntheticModel::Pwm, best.expect("pool is nonempty").1)
        }
        other => return Err(Error::NotFound(other.to_string())),
    };
    let target = model.forward(&state);
    Ok(SyntheticOracle {
        model,
        target,
        generating_state: state,
    })
}

/// Instantiates a built-in benchmark problem.
pub fn make_problem(name: &str, seed: u64) -> Result<Problem> {
    let (spec, focus, codec) = problem_spec(name)?;
    let oracle = synthetic_oracle(name, seed)?;
    let mut problem = Problem::new(name, spec, Box::new(oracle)).with_focus(focus);
    if let Some(c) = codec {
        problem = problem.with_codec(c);
    }
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_error_examples() {
        assert_eq!(boundary_error(&[0.5]), vec![0.0]);
        assert_eq!(boundary_error(&[1.5]), vec![0.5]);
        assert_eq!(boundary_error(&[-0.25, 1.0]), vec![0.25, 0.0]);
    }

    #[test]
    fn cycle_composition_weights() {
        let (spec, _, _) = problem_spec("p2-cycle11").unwrap();
        // E(e_d) = 0.1, e_e = 0.2, E(e_b) = 0.3
        let e_imp = vec![0.1, 0.1];
        let mut e_exp = vec![0.3; 11];
        e_exp.push(0.2);
        let eo = assemble_overall(&spec, &e_imp, &e_exp).unwrap();
        assert!((eo - 0.15).abs() < 1e-12);
        let zeros = assemble_overall(&spec, &[0.0; 2], &[0.0; 12]).unwrap();
        assert_eq!(zeros, 0.0);
    }

    #[test]
    fn single_implicit_identity_composition() {
        let spec = ErrorSpec::new(3, vec![ImplicitComponent::mean("e", 1, 1.0)], vec![], 0.1).unwrap();
        assert_eq!(assemble_overall(&spec, &[0.07], &[]).unwrap(), 0.07);
        assert!(matches!(
            assemble_overall(&spec, &[0.07, 0.1], &[]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn spec_rejects_bad_weights() {
        let zero = ErrorSpec::new(2, vec![ImplicitComponent::mean("e", 1, 0.0)], vec![], 0.1);
        assert!(zero.is_err());
        let neg = ErrorSpec::new(2, vec![ImplicitComponent::mean("e", 1, -1.0)], vec![], 0.1);
        assert!(neg.is_err());
    }

    #[test]
    fn table_dimensions() {
        for (name, dx, de, eps) in [
            ("p1-spectra2", 2, 3, 0.1),
            ("p2-cycle11", 11, 14, 0.05),
            ("p3-actuator20", 20, 29, 0.05),
            ("p4-pwm30", 30, 61, 0.05),
        ] {
            let p = make_problem(name, 0).unwrap();
            assert_eq!(p.spec().state_dim(), dx, "{name}");
            assert_eq!(p.spec().error_dim(), de, "{name}");
            assert_eq!(p.spec().threshold(), eps, "{name}");
        }
        assert!(matches!(make_problem("p5", 0), Err(Error::NotFound(_))));
    }

    #[test]
    fn generating_state_is_accepted() {
        for name in PROBLEM_IDS {
            for seed in 0..5 {
                let oracle = synthetic_oracle(name, seed).unwrap();
                let x = oracle.generating_state.clone();
                let mut p = make_problem(name, seed).unwrap();
                let r = p.validate(&x).unwrap();
                assert!(r.accepted, "{name} seed {seed}: e_o = {}", r.overall);
                assert!(oracle.model.forward(&x).iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn spectra_self_consistency() {
        let oracle = synthetic_oracle("p1-spectra2", 3).unwrap();
        let mut p = make_problem("p1-spectra2", 3).unwrap();
        let r = p.validate(&oracle.generating_state).unwrap();
        assert_eq!(r.implicit, vec![0.0]);
        assert_eq!(r.explicit, vec![0.0, 0.0]);
        assert_eq!(r.overall, 0.0);
        assert!(r.accepted);
    }

    #[test]
    fn ordering_violation_entry() {
        let mut p = make_problem("p4-pwm30", 1).unwrap();
        let mut x: Vec<f64> = (0..30).map(|i| 0.1 + 0.02 * i as f64).collect();
        // x[10] exceeds x[11] by 0.1
        x[10] = x[11] + 0.1;
        let r = p.validate(&x).unwrap();
        let spec = p.spec();
        let ie = &r.explicit[30..];
        assert_eq!(ie.len(), 29);
        assert!((ie[10] - 0.1).abs() < 1e-12);
        assert!((ie[9]).abs() < 1e-12);
        assert_eq!(spec.explicit_dim(), 59);
    }

    #[test]
    fn counter_and_rejected_inputs() {
        let mut p = make_problem("p2-cycle11", 0).unwrap();
        assert_eq!(p.queries(), 0);
        p.validate(&[0.5; 11]).unwrap();
        assert_eq!(p.queries(), 1);
        let mut bad = vec![0.5; 11];
        bad[3] = f64::NAN;
        assert!(matches!(p.validate(&bad), Err(Error::ValidationInput(_))));
        assert!(matches!(p.validate(&[0.5; 10]), Err(Error::Dimension { .. })));
        assert_eq!(p.queries(), 1);
    }

    #[test]
    fn blurriness_examples() {
        let b = |m: usize, n: usize, l: usize, var: f64| BlurrinessInput {
            explicit_weights: vec![1.0; m],
            implicit_weights: vec![1.0; n],
            ensemble_size: l,
            variance: var,
        };
        assert_eq!(error_blurriness(&b(0, 3, 4, 0.04)).unwrap(), 0.04);
        assert_eq!(error_blurriness(&b(2, 0, 4, 0.04)).unwrap(), 0.0);
        assert!((error_blurriness(&b(1, 1, 1, 0.04)).unwrap() - 0.02).abs() < 1e-12);
        assert!((error_blurriness(&b(1, 1, 4, 0.04)).unwrap() - 0.008).abs() < 1e-12);
        let zero = BlurrinessInput {
            explicit_weights: vec![0.0],
            implicit_weights: vec![0.0],
            ensemble_size: 2,
            variance: 0.1,
        };
        assert_eq!(error_blurriness(&zero), Err(Error::UndefinedRatio));
    }

    #[test]
    fn explicit_gradients_match_finite_differences() {
        // Entry-wise Jacobian of every explicit component, so that cancellation
        // in the weighted sum does not swamp the difference quotient.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in PROBLEM_IDS {
            let (spec, _, _) = problem_spec(name).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..spec.state_dim()).map(|_| rng.random_range(-0.3..1.3)).collect();
                for comp in spec.explicit_components() {
                    let m = comp.kind.dim(x.len());
                    for k in 0..m {
                        let mut onehot = vec![0.0; m];
                        onehot[k] = 1.0;
                        let mut grad = vec![0.0; x.len()];
                        comp.kind.weighted_grad_into(&x, &onehot, &mut grad);
                        let entry = |z: &[f64]| {
                            let mut out = Vec::new();
                            comp.kind.eval_into(z, &mut out);
                            out[k]
                        };
                        let h = 1e-6;
                        for i in 0..x.len() {
                            let (mut xp, mut xm) = (x.clone(), x.clone());
                            xp[i] += h;
                            xm[i] -= h;
                            let fd = (entry(&xp) - entry(&xm)) / (2.0 * h);
                            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
                            assert!(
                                (grad[i] - fd).abs() / denom < 1e-5,
                                "{name} {} entry {k} coord {i}: {} vs {fd}",
                                comp.name,
                                grad[i]
                            );
                        }
                    }
                }
                // the assembled gradient is the weighted sum of the parts
                let mut sum = vec![0.0; x.len()];
                let w = spec.explicit_weights();
                let mut offset = 0;
                for comp in spec.explicit_components() {
                    let m = comp.kind.dim(x.len());
                    comp.kind.weighted_grad_into(&x, &w[offset..offset + m], &mut sum);
                    offset += m;
                }
                assert_eq!(spec.explicit_gradient(&x).unwrap(), sum);
            }
        }
    }
}
