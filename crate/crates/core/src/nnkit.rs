//! Multilayer perceptrons with inverted dropout, exact backpropagation and
//! an adaptive-moment optimizer.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Dropout is
//! applied after every hidden activation when a forward pass runs in
//! stochastic mode; the realized mask is kept in the [`Trace`] so the paired
//! backward pass sees exactly the same network.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(z);
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSquash {
    None,
    Sigmoid,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Architecture of a fully connected network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub output_squash: OutputSquash,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            output_squash: OutputSquash::None,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_squash(mut self, squash: OutputSquash) -> Self {
        self.output_squash = squash;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim > 0, Config, "input_dim must be positive");
        ensure!(self.output_dim > 0, Config, "output_dim must be positive");
        ensure!(
            self.hidden_dims.iter().all(|&h| h > 0),
            Config,
            "hidden layer widths must be positive"
        );
        ensure!(
            self.dropout_rate.is_finite() && (0.0..1.0).contains(&self.dropout_rate),
            Config,
            "dropout_rate must lie in [0, 1), got {}",
            self.dropout_rate
        );
        Ok(())
    }

    /// `(in_dim, out_dim)` for every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(core::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer. Also used as the gradient container of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        let nz: Vec<usize> = (0..self.in_dim).filter(|&j| x[j] != 0.0).collect();
        if nz.len() * 2 < self.in_dim {
            // Sparse inputs (one-hot grid observations, dead ReLUs).
            for (i, o) in out.iter_mut().enumerate() {
                let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
                let mut s = 0.0;
                for &j in &nz {
                    s += row[j] * x[j];
                }
                *o += s;
            }
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
                let mut s = 0.0;
                for (w, xj) in row.iter().zip(x) {
                    s += w * xj;
                }
                *o += s;
            }
        }
        out
    }
}

/// Per-hidden-unit dropout scales: `0` for a dropped unit, `1/(1-rate)` for a
/// kept one, and exactly `1` everywhere when dropout is off.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub scales: Vec<Vec<f64>>,
}

impl DropoutMask {
    pub fn ones(spec: &MlpSpec) -> Self {
        Self { scales: spec.hidden_dims.iter().map(|&h| vec![1.0; h]).collect() }
    }

    pub fn sample<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let rate = spec.dropout_rate;
        if rate == 0.0 {
            return Self::ones(spec);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let scales = spec
            .hidden_dims
            .iter()
            .map(|&h| {
                (0..h).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale }).collect()
            })
            .collect();
        Self { scales }
    }

    pub fn is_all_ones(&self) -> bool {
        self.scales.iter().flatten().all(|&s| s == 1.0)
    }

    fn matches(&self, spec: &MlpSpec) -> bool {
        self.scales.len() == spec.hidden_dims.len()
            && self.scales.iter().zip(&spec.hidden_dims).all(|(s, &h)| s.len() == h)
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Input to each affine layer; `inputs[0]` is the network input.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each affine layer.
    pub pre: Vec<Vec<f64>>,
    pub mask: DropoutMask,
    pub output: Vec<f64>,
}

/// Gradient with the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self { layers: spec.layer_dims().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect() }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += factor * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += factor * y);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    /// Flat view in parameter order: per layer, weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }
}

/// A fully connected network: spec plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Uniform fan-in initialization, weights in `±sqrt(1/fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let bound = libm::sqrt(1.0 / i as f64);
                let mut layer = Layer::zeros(i, o);
                for w in &mut layer.weights {
                    *w = rng.gen_range(-bound..bound);
                }
                layer
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        ensure!(
            dims.len() == layers.len(),
            ContractViolation,
            "expected {} layers, got {}",
            dims.len(),
            layers.len()
        );
        for (l, &(i, o)) in layers.iter().zip(&dims) {
            ensure!(
                l.in_dim == i && l.out_dim == o && l.weights.len() == i * o && l.bias.len() == o,
                ContractViolation,
                "layer shape mismatch: expected {}x{}",
                o,
                i
            );
            ensure!(
                l.weights.iter().chain(&l.bias).all(|v| v.is_finite()),
                ContractViolation,
                "parameters must be finite"
            );
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Multiplies the final layer's weights, e.g. for near-uniform initial policies.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.weights.iter_mut().for_each(|w| *w *= factor);
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(
            flat.len() == self.spec.num_params(),
            ContractViolation,
            "expected {} parameters, got {}",
            self.spec.num_params(),
            flat.len()
        );
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], stochastic: bool, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.forward_traced(x, stochastic, rng)?.output)
    }

    /// Deterministic forward pass (dropout off).
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_with_mask(x, &DropoutMask::ones(&self.spec))?.output)
    }

    pub fn forward_traced<R: Rng + ?Sized>(&self, x: &[f64], stochastic: bool, rng: &mut R) -> Result<Trace> {
        let mask = if stochastic && self.spec.dropout_rate > 0.0 {
            DropoutMask::sample(&self.spec, rng)
        } else {
            DropoutMask::ones(&self.spec)
        };
        self.run(x, mask)
    }

    pub fn forward_with_mask(&self, x: &[f64], mask: &DropoutMask) -> Result<Trace> {
        self.run(x, mask.clone())
    }

    fn run(&self, x: &[f64], mask: DropoutMask) -> Result<Trace> {
        ensure!(
            x.len() == self.spec.input_dim,
            ContractViolation,
            "input has length {}, network expects {}",
            x.len(),
            self.spec.input_dim
        );
        ensure!(mask.matches(&self.spec), ContractViolation, "dropout mask does not match network shape");
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current);
            inputs.push(current);
            if l + 1 < n {
                let scales = &mask.scales[l];
                current = z.iter().zip(scales).map(|(&zi, &s)| self.spec.activation.apply(zi) * s).collect();
            } else {
                current = match self.spec.output_squash {
                    OutputSquash::None => z.clone(),
                    OutputSquash::Sigmoid => z.iter().map(|&zi| sigmoid(zi)).collect(),
                };
            }
            pre.push(z);
        }
        Ok(Trace { inputs, pre, mask, output: current })
    }

    /// Accumulates into `grads` the gradient of `<upstream, output>` for the
    /// forward pass recorded in `trace`.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grads: &mut Gradients) -> Result<()> {
        ensure!(
            upstream.len() == self.spec.output_dim,
            ContractViolation,
            "upstream gradient has length {}, network output is {}",
            upstream.len(),
            self.spec.output_dim
        );
        let n = self.layers.len();
        let mut delta: Vec<f64> = match self.spec.output_squash {
            OutputSquash::None => upstream.to_vec(),
            OutputSquash::Sigmoid => {
                upstream.iter().zip(&trace.output).map(|(g, y)| g * y * (1.0 - y)).collect()
            }
        };
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let g = &mut grads.layers[l];
            let nz: Vec<usize> = (0..layer.in_dim).filter(|&j| input[j] != 0.0).collect();
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[i] += d;
                let row = &mut g.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                for &j in &nz {
                    row[j] += d * input[j];
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            let z = &trace.pre[l - 1];
            let scales = &trace.mask.scales[l - 1];
            for ((p, &zj), &s) in prev.iter_mut().zip(z).zip(scales) {
                *p *= s * self.spec.activation.derivative(zj);
            }
            delta = prev;
        }
        Ok(())
    }

    /// Gradient of `<upstream, forward(x)>` for a given dropout realization.
    ///
    /// In stochastic mode the mask of the paired forward pass is mandatory.
    pub fn gradient(
        &self,
        x: &[f64],
        upstream: &[f64],
        mask: Option<&DropoutMask>,
        stochastic: bool,
    ) -> Result<Gradients> {
        let mask = match (mask, stochastic && self.spec.dropout_rate > 0.0) {
            (Some(m), _) => m.clone(),
            (None, false) => DropoutMask::ones(&self.spec),
            (None, true) => {
                return Err(Error::ContractViolation(
                    "stochastic backward pass requires the forward pass's dropout mask".into(),
                ))
            }
        };
        let trace = self.run(x, mask)?;
        let mut grads = Gradients::zeros(&self.spec);
        self.backward(&trace, upstream, &mut grads)?;
        Ok(grads)
    }
}

/// Adaptive-moment optimizer state over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn for_mlp(mlp: &Mlp) -> Self {
        Self::new(mlp.spec.num_params())
    }

    /// One update of `params` in place.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        ensure!(
            params.len() == self.m.len() && grads.len() == self.m.len(),
            ContractViolation,
            "optimizer state has {} entries, got {} params / {} grads",
            self.m.len(),
            params.len(),
            grads.len()
        );
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite { stage: "optimizer step" });
        }
        let (c1, c2) = self.advance();
        self.apply(0, params.iter_mut().zip(grads.iter().copied()), lr, c1, c2);
        Ok(())
    }

    fn advance(&mut self) -> (f64, f64) {
        self.step_count += 1;
        let t = self.step_count as f64;
        (1.0 - libm::pow(self.beta1, t), 1.0 - libm::pow(self.beta2, t))
    }

    fn apply<'a>(
        &mut self,
        offset: usize,
        pairs: impl Iterator<Item = (&'a mut f64, f64)>,
        lr: f64,
        c1: f64,
        c2: f64,
    ) -> usize {
        let mut k = offset;
        for (p, g) in pairs {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            k += 1;
        }
        k
    }
}

/// Adaptive-moment update of a network. Aborts on non-finite gradients.
pub fn sgd_step(mlp: &mut Mlp, grads: &Gradients, state: &mut Adam, learning_rate: f64) -> Result<()> {
    ensure!(
        state.m.len() == mlp.spec.num_params() && grads.layers.len() == mlp.layers.len(),
        ContractViolation,
        "optimizer or gradient shape does not match the network"
    );
    if !grads.is_finite() {
        return Err(Error::NonFinite { stage: "optimizer step" });
    }
    let (c1, c2) = state.advance();
    let mut offset = 0;
    for (layer, g) in mlp.layers.iter_mut().zip(&grads.layers) {
        offset = state.apply(offset, layer.weights.iter_mut().zip(g.weights.iter().copied()), learning_rate, c1, c2);
        offset = state.apply(offset, layer.bias.iter_mut().zip(g.bias.iter().copied()), learning_rate, c1, c2);
    }
    Ok(())
}
