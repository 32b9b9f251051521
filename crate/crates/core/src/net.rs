//! Small dense-network engine: forward passes, reverse-mode gradients and an
//! adaptive-moment optimizer.
//!
//! Everything here is sized for the estimator and kernel networks of the
//! optimizer (a few thousand parameters), so the implementation favours
//! clarity over blocking tricks. Batches are row-major: one sample per row.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// Element-wise activation applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Linear output; no transformation.
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(logistic),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the
    /// activation output `out`.
    fn backprop(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(grad).and(out).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Sigmoid => Zip::from(grad)
                .and(out)
                .for_each(|g, &o| *g *= o * (1.0 - o)),
            Activation::Identity => {}
        }
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer. `weight` is `(inputs, outputs)` so a batch multiplies
/// from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Fully connected network with one hidden activation and one output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
    // Bumped on every parameter update; tapes recorded at an older version are stale.
    version: u64,
}

impl DenseNet {
    /// Builds a network with layer widths `widths` (input first, output last),
    /// initialized uniformly in `±sqrt(1/fan_in)` from `seed`.
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::State("a network needs at least an input and an output width".into()));
        }
        if widths.contains(&0) {
            return Err(Error::State("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound));
                Dense { weight, bias }
            })
            .collect();
        Ok(Self {
            layers,
            hidden,
            output,
            version: 0,
        })
    }

    /// Assembles a network from explicit layers, checking width compatibility.
    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::State("a network needs at least one layer".into()));
        }
        for layer in &layers {
            check_dim("layer bias", layer.outputs(), layer.bias.len())?;
        }
        for pair in layers.windows(2) {
            check_dim("consecutive layer widths", pair[0].outputs(), pair[1].inputs())?;
        }
        Ok(Self {
            layers,
            hidden,
            output,
            version: 0,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn affine(layer: &Dense, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&layer.weight);
        z += &layer.bias;
        z
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_width(), batch.ncols())?;
        let mut current = batch.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &current.view());
            self.activation_of(k).apply(&mut z);
            current = z;
        }
        Ok(current)
    }

    /// Forward pass that records per-layer activations on `tape` for a later
    /// [`DenseNet::backward`].
    pub fn forward_recorded(&self, batch: ArrayView2<f64>, tape: &mut GradTape) -> Result<Array2<f64>> {
        check_dim("network input", self.input_width(), batch.ncols())?;
        tape.ensure_shapes(self);
        tape.activations.clear();
        tape.activations.push(batch.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &tape.activations[k].view());
            self.activation_of(k).apply(&mut z);
            tape.activations.push(z);
        }
        tape.recorded_version = Some(self.version);
        Ok(tape.activations[self.layers.len()].clone())
    }

    /// Back-propagates `loss_grad` (dL/d output, one row per sample) through the
    /// recorded pass. Parameter gradients are accumulated on the tape; the
    /// gradient with respect to the input batch is returned.
    pub fn backward(&self, tape: &mut GradTape, loss_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.backprop(tape, loss_grad, true)
    }

    /// Like [`DenseNet::backward`] but skips parameter gradients.
    pub fn input_gradient(&self, tape: &mut GradTape, loss_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.backprop(tape, loss_grad, false)
    }

    fn backprop(&self, tape: &mut GradTape, loss_grad: ArrayView2<f64>, params: bool) -> Result<Array2<f64>> {
        match tape.recorded_version {
            None => return Err(Error::State("no forward pass recorded on tape".into())),
            Some(v) if v != self.version => {
                return Err(Error::State("tape recorded against outdated parameters".into()))
            }
            Some(_) => {}
        }
        if tape.activations.len() != self.layers.len() + 1 || !tape.grads.matches(self) {
            return Err(Error::State("tape does not belong to this network".into()));
        }
        let output = &tape.activations[self.layers.len()];
        check_dim("loss gradient rows", output.nrows(), loss_grad.nrows())?;
        check_dim("loss gradient columns", output.ncols(), loss_grad.ncols())?;

        let mut delta = loss_grad.to_owned();
        for k in (0..self.layers.len()).rev() {
            self.activation_of(k).backprop(&tape.activations[k + 1], &mut delta);
            let input = &tape.activations[k];
            if params {
                let (gw, gb) = &mut tape.grads.layers[k];
                general_mat_mul(1.0, &input.t(), &delta, 1.0, gw);
                *gb += &delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&self.layers[k].weight.t());
        }
        Ok(delta)
    }

    fn bump_version(&mut self) {
        self.version += 1;
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn matches(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|((w, b), l)| w.dim() == l.weight.dim() && b.len() == l.bias.len())
    }

    pub fn fill_zero(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.fill(0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|&v| v == 0.0))
    }

    /// Gradients flattened in parameter order (layer by layer, weights then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

/// Recorded forward values plus gradient accumulators for one network.
#[derive(Debug, Clone, Default)]
pub struct GradTape {
    activations: Vec<Array2<f64>>,
    recorded_version: Option<u64>,
    grads: Gradients,
}


impl GradTape {
    pub fn new(net: &DenseNet) -> Self {
        Self {
            activations: Vec::new(),
            recorded_version: None,
            grads: Gradients::zeros_like(net),
        }
    }

    fn ensure_shapes(&mut self, net: &DenseNet) {
        if !self.grads.matches(net) {
            self.grads = Gradients::zeros_like(net);
        }
    }

    /// Clears the recording and zeroes the accumulators.
    pub fn reset(&mut self) {
        self.activations.clear();
        self.recorded_version = None;
        self.grads.fill_zero();
    }

    pub fn gradients(&self) -> &Gradients {
        &self.grads
    }
}

/// Adaptive-moment optimizer (first/second moment estimates with bias
/// correction).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentOptimizer {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Default for MomentOptimizer {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl MomentOptimizer {
    pub fn new(step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Forgets the moment estimates and the step counter.
    pub fn reset(&mut self) {
        self.first.clear();
        self.second.clear();
        self.steps = 0;
    }

    fn begin(&mut self, len: usize) -> Result<(f64, f64)> {
        if self.first.is_empty() {
            self.first = vec![0.0; len];
            self.second = vec![0.0; len];
        }
        check_dim("optimizer moment buffers", self.first.len(), len)?;
        self.steps += 1;
        let t = self.steps as i32;
        Ok((1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t)))
    }

    fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64], corr: (f64, f64)) {
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.step_size);
        let m = &mut self.first[offset..offset + params.len()];
        let v = &mut self.second[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / corr.0;
            let v_hat = v[i] / corr.1;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// Applies one descent step to `net` using `grads`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.matches(net) {
            return Err(Error::Dimension {
                context: "gradient shapes",
                expected: net.parameter_count(),
                found: grads.layers.iter().map(|(w, b)| w.len() + b.len()).sum(),
            });
        }
        let corr = self.begin(net.parameter_count())?;
        let mut offset = 0;
        for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
            let gw = gw.as_standard_layout();
            let w = layer.weight.as_slice_mut().expect("weights are contiguous");
            self.update(offset, w, gw.as_slice().expect("standard layout"), corr);
            offset += w.len();
            let b = layer.bias.as_slice_mut().expect("bias is contiguous");
            self.update(offset, b, gb.as_slice().expect("bias gradient is contiguous"), corr);
            offset += b.len();
        }
        net.bump_version();
        Ok(())
    }

    /// Applies one descent step to a free parameter matrix.
    pub fn step_matrix(&mut self, params: &mut Array2<f64>, grads: &Array2<f64>) -> Result<()> {
        if params.dim() != grads.dim() {
            return Err(Error::Dimension {
                context: "gradient shapes",
                expected: params.len(),
                found: grads.len(),
            });
        }
        let corr = self.begin(params.len())?;
        let g = grads.as_standard_layout();
        let p = params.as_slice_mut().expect("parameter matrix is contiguous");
        self.update(0, p, g.as_slice().expect("standard layout"), corr);
        Ok(())
    }
}
