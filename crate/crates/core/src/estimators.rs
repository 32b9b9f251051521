//! Ensemble of implicit-error estimators.
//!
//! Each member is an MLP `D_x -> h -> 2h -> h -> D_imp` with sigmoid outputs,
//! trained independently on bootstrapped batches drawn from the union of the
//! exploration and history buffers. The ensemble mean is the implicit-error
//! prediction; the spread across members drives exploration.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::net::{Activation, DenseNet, GradTape, MomentOptimizer};

/// Which step of the outer loop produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Exploration,
    History,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: Vec<f64>,
    pub implicit: Vec<f64>,
    pub overall: f64,
    pub origin: Origin,
}

/// Append-only store of validated states.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    state_dim: usize,
    implicit_dim: usize,
    records: Vec<Sample>,
}

impl SampleBuffer {
    pub fn new(state_dim: usize, implicit_dim: usize) -> Self {
        Self {
            state_dim,
            implicit_dim,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, state: Vec<f64>, implicit: Vec<f64>, overall: f64, origin: Origin) -> Result<()> {
        check_dim("buffered state", self.state_dim, state.len())?;
        check_dim("buffered implicit errors", self.implicit_dim, implicit.len())?;
        if implicit.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::State("implicit errors must be nonnegative".into()));
        }
        self.records.push(Sample {
            state,
            implicit,
            overall,
            origin,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Sample] {
        &self.records
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.records.iter().filter(|r| r.origin == origin).count()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn implicit_dim(&self) -> usize {
        self.implicit_dim
    }

    /// Gathers the rows `indices` into (states, implicit errors) matrices.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let mut x = Array2::zeros((indices.len(), self.state_dim));
        let mut y = Array2::zeros((indices.len(), self.implicit_dim));
        for (row, &i) in indices.iter().enumerate() {
            let r = &self.records[i];
            x.row_mut(row).assign(&ndarray::ArrayView1::from(&r.state[..]));
            y.row_mut(row).assign(&ndarray::ArrayView1::from(&r.implicit[..]));
        }
        (x, y)
    }
}

/// Draws `batches` index batches of `batch_size` rows, uniformly with
/// replacement from the whole buffer.
pub fn bootstrap_batches<R: Rng>(
    buf: &SampleBuffer,
    batch_size: usize,
    batches: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if buf.is_empty() {
        return Err(Error::State("cannot bootstrap from an empty buffer".into()));
    }
    let n = buf.len();
    Ok((0..batches)
        .map(|_| (0..batch_size).map(|_| rng.random_range(0..n)).collect())
        .collect())
}

/// Number of losses strictly below the early-stop threshold.
pub fn convergence_count(losses: &[f64], threshold: f64) -> usize {
    losses.iter().filter(|&&l| l < threshold).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub ensemble_size: usize,
    pub hidden: usize,
    /// Early-stop threshold on the epoch-mean loss.
    pub es_threshold: f64,
    pub step_size: f64,
    pub batches_per_epoch: usize,
    pub max_batch: usize,
    /// Batch-size increment per epoch while ramping up to `max_batch`.
    pub batch_ramp: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 4,
            hidden: 1024,
            es_threshold: 1e-3,
            step_size: 1e-3,
            batches_per_epoch: 40,
            max_batch: 64,
            batch_ramp: 8,
        }
    }
}

#[derive(Debug, Clone)]
struct Member {
    net: DenseNet,
    opt: MomentOptimizer,
    tape: GradTape,
    rng: ChaCha8Rng,
    converged: bool,
    // buffer size when the member last converged
    converged_at: usize,
    last_loss: f64,
    epochs: usize,
}

impl Member {
    fn batch_size(&self, cfg: &EstimatorConfig, initial: usize) -> usize {
        (initial.max(1) + cfg.batch_ramp * self.epochs).min(cfg.max_batch)
    }

    fn train_epoch(&mut self, buf: &SampleBuffer, cfg: &EstimatorConfig, initial: usize) -> Result<f64> {
        let batch = self.batch_size(cfg, initial);
        let plan = bootstrap_batches(buf, batch, cfg.batches_per_epoch, &mut self.rng)?;
        let mut total = 0.0;
        for indices in &plan {
            let (x, y) = buf.gather(indices);
            self.tape.reset();
            let out = self.net.forward_recorded(x.view(), &mut self.tape)?;
            let diff = &out - &y;
            let scale = 1.0 / diff.len() as f64;
            total += diff.iter().map(|d| d.abs()).sum::<f64>() * scale;
            let grad = diff.mapv(|d| if d > 0.0 { scale } else if d < 0.0 { -scale } else { 0.0 });
            self.net.backward(&mut self.tape, grad.view())?;
            let grads = self.tape.gradients().clone();
            self.opt.step(&mut self.net, &grads)?;
        }
        self.epochs += 1;
        Ok(total / plan.len() as f64)
    }
}

/// `L` independently trained implicit-error regressors.
#[derive(Debug, Clone)]
pub struct EstimatorEnsemble {
    config: EstimatorConfig,
    members: Vec<Member>,
    initial_batch: usize,
    state_dim: usize,
    implicit_dim: usize,
}

impl EstimatorEnsemble {
    /// `initial_batch` is the starting batch size of the ramp (usually the
    /// number of initial samples).
    pub fn new(
        state_dim: usize,
        implicit_dim: usize,
        config: EstimatorConfig,
        initial_batch: usize,
        seed: u64,
    ) -> Result<Self> {
        if config.ensemble_size < 2 {
            return Err(Error::Config("estimator ensemble needs at least two members".into()));
        }
        if implicit_dim == 0 {
            return Err(Error::Config("estimators need at least one implicit error entry".into()));
        }
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let widths = [state_dim, h, 2 * h, h, implicit_dim];
        let members = (0..config.ensemble_size)
            .map(|_| {
                let net = DenseNet::new(&widths, Activation::Relu, Activation::Sigmoid, seeder.random())?;
                let tape = GradTape::new(&net);
                Ok(Member {
                    net,
                    opt: MomentOptimizer::new(config.step_size),
                    tape,
                    rng: ChaCha8Rng::seed_from_u64(seeder.random()),
                    converged: false,
                    converged_at: 0,
                    last_loss: f64::INFINITY,
                    epochs: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            members,
            initial_batch,
            state_dim,
            implicit_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn implicit_dim(&self) -> usize {
        self.implicit_dim
    }

    pub fn member_nets(&self) -> impl Iterator<Item = &DenseNet> {
        self.members.iter().map(|m| &m.net)
    }

    pub fn last_losses(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.last_loss).collect()
    }

    pub fn converged_flags(&self) -> Vec<bool> {
        self.members.iter().map(|m| m.converged).collect()
    }

    /// Number of members whose last epoch-mean loss is below the threshold.
    pub fn converged_count(&self) -> usize {
        convergence_count(&self.last_losses(), self.config.es_threshold)
    }

    /// Trains every member for up to `epochs` epochs and returns the number of
    /// converged members. A member stops at the first epoch whose mean loss
    /// falls below the threshold, and stays frozen until the buffer grows.
    pub fn train_epochs(&mut self, buf: &SampleBuffer, epochs: usize) -> Result<usize> {
        if buf.is_empty() {
            return Err(Error::State("cannot train on an empty buffer".into()));
        }
        if epochs == 0 {
            return Err(Error::Config("training epochs must be at least 1".into()));
        }
        check_dim("buffer state width", self.state_dim, buf.state_dim())?;
        check_dim("buffer implicit width", self.implicit_dim, buf.implicit_dim())?;
        let cfg = &self.config;
        let initial = self.initial_batch;
        let n = buf.len();
        self.members.par_iter_mut().try_for_each(|m| -> Result<()> {
            if m.converged && m.converged_at == n {
                return Ok(());
            }
            m.converged = false;
            for _ in 0..epochs {
                let loss = m.train_epoch(buf, cfg, initial)?;
                m.last_loss = loss;
                if loss < cfg.es_threshold {
                    m.converged = true;
                    m.converged_at = n;
                    break;
                }
            }
            Ok(())
        })?;
        Ok(self.converged_count())
    }

    fn member_outputs(&self, states: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        check_dim("estimator input", self.state_dim, states.ncols())?;
        self.members.iter().map(|m| m.net.forward(states)).collect()
    }

    /// Ensemble-mean implicit-error prediction, one row per state.
    pub fn predict_mean(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let outs = self.member_outputs(states)?;
        let mut mean = Array2::zeros((states.nrows(), self.implicit_dim));
        for o in &outs {
            mean += o;
        }
        mean /= outs.len() as f64;
        Ok(mean)
    }

    /// Weighted ensemble-mean prediction `w^T mean(g(x))` per state, with its
    /// gradient with respect to each state.
    pub fn weighted_mean_with_gradient(
        &self,
        states: ArrayView2<f64>,
        weights: &[f64],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        check_dim("estimator input", self.state_dim, states.ncols())?;
        check_dim("implicit weights", self.implicit_dim, weights.len())?;
        let w = Array1::from(weights.to_vec());
        let l = self.members.len() as f64;
        let upstream = Array2::from_shape_fn((states.nrows(), self.implicit_dim), |(_, j)| weights[j] / l);
        let mut values = Array1::zeros(states.nrows());
        let mut grad = Array2::zeros(states.raw_dim());
        for m in &self.members {
            let mut tape = GradTape::new(&m.net);
            let out = m.net.forward_recorded(states, &mut tape)?;
            values += &(out.dot(&w) / l);
            grad += &m.net.input_gradient(&mut tape, upstream.view())?;
        }
        Ok((values, grad))
    }

    /// Per state: population standard deviation across members for each
    /// implicit component, averaged over components.
    pub fn disagreement(&self, states: ArrayView2<f64>) -> Result<Vec<f64>> {
        let outs = self.member_outputs(states)?;
        Ok(disagreement_of(&outs))
    }
}

/// Disagreement scalar per row of a set of member outputs.
pub fn disagreement_of(outputs: &[Array2<f64>]) -> Vec<f64> {
    let Some(first) = outputs.first() else {
        return Vec::new();
    };
    let (rows, cols) = first.dim();
    let l = outputs.len() as f64;
    // deviations from the first member, so identical members give exactly zero
    let mut mean = Array2::<f64>::zeros((rows, cols));
    for o in outputs {
        mean += &(o - first);
    }
    mean /= l;
    let mut var = Array2::<f64>::zeros((rows, cols));
    for o in outputs {
        let d = o - first - &mean;
        var += &(&d * &d);
    }
    var /= l;
    var.mapv_inplace(f64::sqrt);
    var.mean_axis(Axis(1))
        .map(|a| a.to_vec())
        .unwrap_or_else(|| vec![0.0; rows])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_config(size: usize) -> EstimatorConfig {
        EstimatorConfig {
            ensemble_size: size,
            hidden: 8,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn single_record_bootstrap() {
        let mut buf = SampleBuffer::new(2, 1);
        buf.push(vec![0.3, 0.7], vec![0.2], 0.2, Origin::Exploration).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = bootstrap_batches(&buf, 5, 3, &mut rng).unwrap();
        assert!(batches.iter().flatten().all(|&i| i == 0));
        let (x, _) = buf.gather(&batches[0]);
        assert!(x.rows().into_iter().all(|r| r == array![0.3, 0.7]));
    }

    #[test]
    fn bootstrap_is_with_replacement() {
        let mut buf = SampleBuffer::new(1, 1);
        for i in 0..10 {
            buf.push(vec![i as f64 / 10.0], vec![0.1], 0.1, Origin::History).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = bootstrap_batches(&buf, 64, 2, &mut rng).unwrap();
        assert!(batches.iter().all(|b| b.len() == 64));
        assert!(batches.iter().flatten().all(|&i| i < 10));
    }

    #[test]
    fn distinct_streams_draw_distinct_indices() {
        let mut buf = SampleBuffer::new(1, 1);
        for i in 0..50 {
            buf.push(vec![i as f64 / 50.0], vec![0.1], 0.1, Origin::Exploration).unwrap();
        }
        let a = bootstrap_batches(&buf, 16, 1, &mut ChaCha8Rng::seed_from_u64(100)).unwrap();
        let b = bootstrap_batches(&buf, 16, 1, &mut ChaCha8Rng::seed_from_u64(101)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let buf = SampleBuffer::new(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(bootstrap_batches(&buf, 4, 1, &mut rng), Err(Error::State(_))));
        let mut ens = EstimatorEnsemble::new(1, 1, small_config(2), 4, 0).unwrap();
        assert!(ens.train_epochs(&buf, 1).is_err());
    }

    #[test]
    fn negative_implicit_errors_are_rejected() {
        let mut buf = SampleBuffer::new(1, 1);
        assert!(buf.push(vec![0.1], vec![-0.1], 0.0, Origin::History).is_err());
        assert!(buf.is_empty());
    }

    #[test]
    fn threshold_count() {
        assert_eq!(convergence_count(&[1e-4, 5e-3], 1e-3), 1);
        assert_eq!(convergence_count(&[1e-4, 5e-3], 1e-2), 2);
        assert_eq!(convergence_count(&[1e-3], 1e-3), 0);
    }

    #[test]
    fn single_sample_overfit_converges_every_member() {
        let mut buf = SampleBuffer::new(2, 1);
        buf.push(vec![0.25, 0.75], vec![0.3], 0.3, Origin::Exploration).unwrap();
        let mut ens = EstimatorEnsemble::new(2, 1, small_config(3), 64, 7).unwrap();
        let l = ens.train_epochs(&buf, 200).unwrap();
        assert_eq!(l, 3);
        assert!(ens.last_losses().iter().all(|&v| v < 1e-3));
        assert!(ens.converged_flags().iter().all(|&c| c));
    }

    #[test]
    fn converged_members_are_frozen_until_new_data() {
        let mut buf = SampleBuffer::new(2, 1);
        buf.push(vec![0.25, 0.75], vec![0.3], 0.3, Origin::Exploration).unwrap();
        let mut ens = EstimatorEnsemble::new(2, 1, small_config(2), 64, 7).unwrap();
        ens.train_epochs(&buf, 200).unwrap();
        let before: Vec<DenseNet> = ens.member_nets().cloned().collect();
        ens.train_epochs(&buf, 5).unwrap();
        let after: Vec<DenseNet> = ens.member_nets().cloned().collect();
        assert_eq!(before, after);
        buf.push(vec![0.9, 0.1], vec![0.8], 0.8, Origin::History).unwrap();
        ens.train_epochs(&buf, 1).unwrap();
        let retrained: Vec<DenseNet> = ens.member_nets().cloned().collect();
        assert_ne!(after, retrained);
    }

    #[test]
    fn ensemble_needs_two_members() {
        assert!(EstimatorEnsemble::new(2, 1, small_config(1), 8, 0).is_err());
    }

    #[test]
    fn members_differ_but_share_architecture() {
        let ens = EstimatorEnsemble::new(3, 2, small_config(4), 8, 0).unwrap();
        let nets: Vec<&DenseNet> = ens.member_nets().collect();
        for n in &nets[1..] {
            assert_ne!(*n, nets[0]);
            assert_eq!(n.parameter_count(), nets[0].parameter_count());
        }
    }

    #[test]
    fn mean_equals_member_average() {
        let ens = EstimatorEnsemble::new(3, 2, small_config(4), 8, 5).unwrap();
        let states = array![[0.1, 0.5, 0.9], [0.3, 0.3, 0.3]];
        let mean = ens.predict_mean(states.view()).unwrap();
        let outs: Vec<Array2<f64>> = ens.member_nets().map(|n| n.forward(states.view()).unwrap()).collect();
        for ((r, c), v) in mean.indexed_iter() {
            let manual = outs.iter().map(|o| o[[r, c]]).sum::<f64>() / 4.0;
            assert!((v - manual).abs() < 1e-12);
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn disagreement_examples() {
        let d = disagreement_of(&[array![[0.2]], array![[0.4]]]);
        assert!((d[0] - 0.1).abs() < 1e-12);
        let same = disagreement_of(&[array![[0.2, 0.7]], array![[0.2, 0.7]]]);
        assert_eq!(same, vec![0.0]);
        // component stds 0.1 and 0.3
        let two = disagreement_of(&[array![[0.2, 0.1]], array![[0.4, 0.7]]]);
        assert!((two[0] - 0.2).abs() < 1e-12);
        let mean_pair = disagreement_of(&[array![[0.2]], array![[0.4]]]);
        let swapped = disagreement_of(&[array![[0.4]], array![[0.2]]]);
        assert_eq!(mean_pair, swapped);
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let ens = EstimatorEnsemble::new(3, 2, small_config(2), 8, 3).unwrap();
        let w = [0.7, 0.2];
        let states = array![[0.2, 0.4, 0.6]];
        let (v, g) = ens.weighted_mean_with_gradient(states.view(), &w).unwrap();
        let f = |s: &Array2<f64>| {
            let m = ens.predict_mean(s.view()).unwrap();
            m[[0, 0]] * w[0] + m[[0, 1]] * w[1]
        };
        assert!((v[0] - f(&states)).abs() < 1e-12);
        for j in 0..3 {
            let h = 1e-5;
            let (mut p, mut q) = (states.clone(), states.clone());
            p[[0, j]] += h;
            q[[0, j]] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!((fd - g[[0, j]]).abs() < 1e-7, "{fd} vs {}", g[[0, j]]);
        }
    }
}
