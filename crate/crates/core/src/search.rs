//! Ensemble state search.
//!
//! A kernel maps a fixed set of seed vectors to candidate states. The kernel
//! is trained by descending the mean estimated overall error of its outputs,
//! where explicit terms are exact and implicit terms come from the estimator
//! ensemble. The greedy candidate is the state with the lowest estimate.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::estimators::EstimatorEnsemble;
use crate::net::{logistic, Activation, DenseNet, GradTape, MomentOptimizer};
use crate::validation::{population_std, ErrorSpec, StateCodec};

/// Standard deviation of U(0, 1) divided by ten.
pub const COLLAPSE_FLOOR: f64 = 0.288 / 10.0;

/// Maps a state into the hyper-triangle dominated by its first entry:
/// `y_1 = x_1`, `y_i = x_1 + logistic(x_1 + ... + x_i) (1 - x_1)`.
pub fn simplex_transform(x: &[f64]) -> Vec<f64> {
    let first = x[0];
    let mut sum = 0.0;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            sum += v;
            if i == 0 {
                v
            } else {
                first + logistic(sum) * (1.0 - first)
            }
        })
        .collect()
}

/// Vector-Jacobian product of [`simplex_transform`] at `x`.
pub fn simplex_transform_vjp(x: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = x.len();
    let first = x[0];
    let mut grad = vec![0.0; n];
    let mut sum = 0.0;
    // coefficient of d(partial sum i)/d x_j, accumulated as a suffix sum
    let mut through_sum = vec![0.0; n];
    for i in 0..n {
        sum += x[i];
        if i == 0 {
            grad[0] += upstream[0];
            continue;
        }
        let s = logistic(sum);
        grad[0] += upstream[i] * (1.0 - s);
        through_sum[i] = upstream[i] * (1.0 - first) * s * (1.0 - s);
    }
    let mut acc = 0.0;
    for j in (0..n).rev() {
        acc += through_sum[j];
        grad[j] += acc;
    }
    grad
}

/// Generation-collapse penalty `max(0.0288 - std(first entries), 0)`.
pub fn collapse_penalty(first_entries: &[f64]) -> Result<f64> {
    if first_entries.len() < 2 {
        return Err(Error::State("collapse penalty needs at least two states".into()));
    }
    Ok((COLLAPSE_FLOOR - population_std(first_entries)).max(0.0))
}

fn collapse_penalty_grad(first_entries: &[f64]) -> Vec<f64> {
    let n = first_entries.len() as f64;
    let sd = population_std(first_entries);
    if sd >= COLLAPSE_FLOOR || sd == 0.0 {
        return vec![0.0; first_entries.len()];
    }
    let mean = first_entries.iter().sum::<f64>() / n;
    first_entries.iter().map(|v| -(v - mean) / (n * sd)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Identity,
    Perceptron,
    Mlp,
}

impl KernelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "perceptron" => Ok(Self::Perceptron),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Perceptron => "perceptron",
            Self::Mlp => "mlp",
        }
    }

    /// Seed dimensionality for a problem with `state_dim` entries.
    pub fn seed_dim(self, state_dim: usize) -> usize {
        match self {
            Self::Perceptron => 1,
            Self::Identity | Self::Mlp => state_dim,
        }
    }

    /// Epochs per confidence unit: learnable kernels need more steps.
    pub fn rounds_per_unit(self) -> usize {
        match self {
            Self::Identity | Self::Perceptron => 1,
            Self::Mlp => 10,
        }
    }
}

/// Fixed random seed vectors fed to the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    seeds: Array2<f64>,
}

impl SeedSet {
    pub fn new<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("seed count must be at least 1".into()));
        }
        Ok(Self {
            seeds: Array2::from_shape_fn((count, dim), |_| rng.random::<f64>()),
        })
    }

    pub fn from_matrix(seeds: Array2<f64>) -> Result<Self> {
        if seeds.nrows() == 0 {
            return Err(Error::Config("seed count must be at least 1".into()));
        }
        Ok(Self { seeds })
    }

    pub fn len(&self) -> usize {
        self.seeds.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.seeds.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.seeds.view()
    }
}

#[derive(Debug, Clone)]
enum KernelParams {
    /// The candidate states themselves.
    Identity(Array2<f64>),
    Net(DenseNet),
}

/// The search model mapping seeds to candidate states.
#[derive(Debug, Clone)]
pub struct SearchKernel {
    kind: KernelKind,
    state_dim: usize,
    params: KernelParams,
    codec: Option<StateCodec>,
    collapse_penalty: bool,
    opt: MomentOptimizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Hidden width `h` of the MLP kernel.
    pub hidden: usize,
    pub codec: Option<StateCodec>,
    pub collapse_penalty: bool,
    /// Step size; `None` picks 1e-2 for identity kernels and 1e-3 otherwise.
    pub step_size: Option<f64>,
}

impl KernelConfig {
    pub fn new(kind: KernelKind) -> Self {
        Self {
            kind,
            hidden: 20,
            codec: None,
            collapse_penalty: false,
            step_size: None,
        }
    }
}

impl SearchKernel {
    pub fn new(cfg: &KernelConfig, state_dim: usize, seeds: &SeedSet, seed: u64) -> Result<Self> {
        check_dim("seed width", cfg.kind.seed_dim(state_dim), seeds.dim())?;
        let params = match cfg.kind {
            KernelKind::Identity => KernelParams::Identity(seeds.seeds.clone()),
            KernelKind::Perceptron => {
                let net_seed = ChaCha8Rng::seed_from_u64(seed).random();
                KernelParams::Net(DenseNet::new(&[1, state_dim], Activation::Relu, Activation::Identity, net_seed)?)
            }
            KernelKind::Mlp => {
                let h = cfg.hidden;
                let net_seed = ChaCha8Rng::seed_from_u64(seed).random();
                KernelParams::Net(DenseNet::new(
                    &[state_dim, h, 2 * h, h, state_dim],
                    Activation::Relu,
                    Activation::Identity,
                    net_seed,
                )?)
            }
        };
        let step = cfg.step_size.unwrap_or(match cfg.kind {
            KernelKind::Identity => 1e-2,
            _ => 1e-3,
        });
        Ok(Self {
            kind: cfg.kind,
            state_dim,
            params,
            codec: cfg.codec,
            collapse_penalty: cfg.collapse_penalty,
            opt: MomentOptimizer::new(step),
        })
    }

    /// Kernel backed by an explicit network (perceptron or MLP kinds).
    pub fn from_net(kind: KernelKind, net: DenseNet, codec: Option<StateCodec>, step_size: f64) -> Result<Self> {
        if kind == KernelKind::Identity {
            return Err(Error::Config("identity kernels carry no network".into()));
        }
        Ok(Self {
            kind,
            state_dim: net.output_width(),
            params: KernelParams::Net(net),
            codec,
            collapse_penalty: false,
            opt: MomentOptimizer::new(step_size),
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn set_collapse_penalty(&mut self, on: bool) {
        self.collapse_penalty = on;
    }

    /// Raw kernel output before the codec.
    fn raw_output(&self, seeds: &SeedSet, tape: Option<&mut GradTape>) -> Result<Array2<f64>> {
        match &self.params {
            KernelParams::Identity(states) => {
                check_dim("seed count", states.nrows(), seeds.len())?;
                Ok(states.clone())
            }
            KernelParams::Net(net) => {
                check_dim("seed width", net.input_width(), seeds.dim())?;
                match tape {
                    Some(t) => net.forward_recorded(seeds.matrix(), t),
                    None => net.forward(seeds.matrix()),
                }
            }
        }
    }

    fn decode(&self, raw: Array2<f64>) -> Array2<f64> {
        match self.codec {
            None => raw,
            Some(c) => {
                let mut out = raw;
                for mut row in out.rows_mut() {
                    let mapped = c.apply(row.as_slice().expect("rows are contiguous"));
                    row.assign(&ArrayView1::from(&mapped[..]));
                }
                out
            }
        }
    }

    /// Candidate states, one per seed, with the codec applied last.
    pub fn generate_states(&self, seeds: &SeedSet) -> Result<Array2<f64>> {
        let raw = self.raw_output(seeds, None)?;
        Ok(self.decode(raw))
    }

    /// Runs `steps` descent steps on the mean estimated overall error of the
    /// generated states (plus the collapse penalty when enabled). Never
    /// touches the validation module.
    pub fn search_round(
        &mut self,
        seeds: &SeedSet,
        spec: &ErrorSpec,
        ens: &EstimatorEnsemble,
        steps: usize,
    ) -> Result<()> {
        check_dim("kernel state width", spec.state_dim(), self.state_dim)?;
        for _ in 0..steps {
            self.descend_once(seeds, |states| {
                let (_, grad) = estimated_overall_with_gradient(spec, ens, states)?;
                Ok(grad)
            })?;
        }
        Ok(())
    }

    /// One descent step on an arbitrary per-state objective whose gradient
    /// (per state, not yet averaged) is returned by `state_grad`.
    pub fn descend_once<F>(&mut self, seeds: &SeedSet, state_grad: F) -> Result<()>
    where
        F: FnOnce(ArrayView2<f64>) -> Result<Array2<f64>>,
    {
        let mut tape = match &self.params {
            KernelParams::Net(net) => Some(GradTape::new(net)),
            KernelParams::Identity(_) => None,
        };
        let raw = self.raw_output(seeds, tape.as_mut())?;
        let states = self.decode(raw.clone());
        let n = states.nrows() as f64;
        let mut grad = state_grad(states.view())?;
        grad /= n;
        if self.collapse_penalty && states.nrows() >= 2 {
            let first: Vec<f64> = states.column(0).to_vec();
            for (g, pg) in grad.column_mut(0).iter_mut().zip(collapse_penalty_grad(&first)) {
                *g += pg;
            }
        }
        if let Some(StateCodec::HyperTriangle) = self.codec {
            for (mut g, r) in grad.rows_mut().into_iter().zip(raw.rows()) {
                let back = simplex_transform_vjp(
                    r.as_slice().expect("rows are contiguous"),
                    g.as_slice().expect("rows are contiguous"),
                );
                g.assign(&ArrayView1::from(&back[..]));
            }
        }
        match &mut self.params {
            KernelParams::Identity(states) => self.opt.step_matrix(states, &grad),
            KernelParams::Net(net) => {
                let mut tape = tape.expect("network kernels record a tape");
                net.backward(&mut tape, grad.view())?;
                let grads = tape.gradients().clone();
                self.opt.step(net, &grads)
            }
        }
    }
}

/// Estimated overall error per state: exact explicit terms plus weighted
/// ensemble-mean implicit terms.
pub fn estimated_overall(spec: &ErrorSpec, ens: &EstimatorEnsemble, states: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_dim("state width", spec.state_dim(), states.ncols())?;
    let mean = ens.predict_mean(states)?;
    let w = ndarray::Array1::from(spec.implicit_weights().to_vec());
    let implicit = mean.dot(&w);
    states
        .axis_iter(Axis(0))
        .zip(implicit.iter())
        .map(|(row, imp)| {
            let x = row.to_vec();
            Ok(spec.explicit_overall(&x)? + imp)
        })
        .collect()
}

/// [`estimated_overall`] together with its gradient with respect to each state.
pub fn estimated_overall_with_gradient(
    spec: &ErrorSpec,
    ens: &EstimatorEnsemble,
    states: ArrayView2<f64>,
) -> Result<(Vec<f64>, Array2<f64>)> {
    check_dim("state width", spec.state_dim(), states.ncols())?;
    let (implicit, mut grad) = ens.weighted_mean_with_gradient(states, spec.implicit_weights())?;
    let mut values = Vec::with_capacity(states.nrows());
    for (i, row) in states.axis_iter(Axis(0)).enumerate() {
        let x = row.to_vec();
        values.push(spec.explicit_overall(&x)? + implicit[i]);
        let g = spec.explicit_gradient(&x)?;
        for (dst, src) in grad.row_mut(i).iter_mut().zip(g) {
            *dst += src;
        }
    }
    Ok((values, grad))
}

/// Index of the first minimum; `None` for an empty slice.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Greedy candidate: the state with the lowest estimated overall error.
pub fn pick_candidate(
    spec: &ErrorSpec,
    ens: &EstimatorEnsemble,
    states: ArrayView2<f64>,
) -> Result<(usize, Vec<f64>, f64)> {
    if states.nrows() == 0 {
        return Err(Error::State("no candidate states".into()));
    }
    let est = estimated_overall(spec, ens, states)?;
    let i = argmin_first(&est).expect("nonempty");
    Ok((i, states.row(i).to_vec(), est[i]))
}
