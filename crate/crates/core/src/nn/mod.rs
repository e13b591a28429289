//! Dense networks with branch inputs, reverse-mode gradients and Adam.
//!
//! A [`Network`] takes one batch matrix per input branch. Each branch is a
//! chain of dense layers; the branch outputs are concatenated column-wise and
//! fed through a shared trunk. Batches are row-major: one row per example.
//!
//! [`Network::forward`] returns a [`Tape`] holding every layer input and
//! pre-activation. [`Network::backward`] replays it to produce parameter
//! gradients plus the gradient with respect to each network input, which is
//! how a generator is trained through a frozen discriminator.

mod adam;
mod io;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use io::{read_networks, write_networks, NamedNetwork, MANIFEST_FILE, PARAMS_FILE};
pub use loss::{bce_grad, bce_loss, BCE_CLIP};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and the output `y = f(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            // zero at the kink
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out_dim x in_dim`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            biases: Array1::zeros(out_dim),
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights =
            Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random_range(-limit..limit));
        Self {
            weights,
            biases: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn check(&self) -> Result<()> {
        if self.biases.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "layer has {} output rows but {} biases",
                self.out_dim(),
                self.biases.len()
            )));
        }
        if self
            .weights
            .iter()
            .chain(self.biases.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter("non-finite layer parameter".into()));
        }
        Ok(())
    }

    /// Returns `(pre_activation, output)`.
    fn forward(&self, input: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let mut pre = input.dot(&self.weights.t());
        pre += &self.biases;
        let act = self.activation;
        let out = pre.mapv(|x| act.apply(x));
        (pre, out)
    }

    fn predict(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = input.dot(&self.weights.t());
        out += &self.biases;
        let act = self.activation;
        out.mapv_inplace(|x| act.apply(x));
        out
    }
}

/// Gradient of a scalar loss with respect to one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            biases: Array1::zeros(layer.biases.raw_dim()),
        }
    }
}

/// Parameter gradients in [`Network::layers`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(network: &Network) -> Self {
        Self {
            layers: network.layers().map(LayerGrad::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient sets differ in layer count".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.dim() != b.weights.dim() || a.biases.dim() != b.biases.dim() {
                return Err(Error::Shape("gradient sets differ in layer shapes".into()));
            }
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| {
            g.weights
                .iter()
                .chain(g.biases.iter())
                .all(|v| v.is_finite())
        })
    }
}

pub struct Backprop {
    pub params: Gradients,
    /// Loss gradient with respect to each network input, batch-major.
    pub inputs: Vec<Array2<f64>>,
}

struct LayerCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    output: Array2<f64>,
}

/// Activations recorded by [`Network::forward`].
pub struct Tape {
    version: u64,
    batch: usize,
    branches: Vec<Vec<LayerCache>>,
    trunk: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
pub struct Network {
    input_dims: Vec<usize>,
    branches: Vec<Vec<DenseLayer>>,
    trunk: Vec<DenseLayer>,
    version: u64,
}

/// Structural and parameter equality; the update counter is ignored.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_dims == other.input_dims
            && self.branches == other.branches
            && self.trunk == other.trunk
    }
}

impl Network {
    /// A network over `input_dims.len()` inputs. `branches[i]` may be empty,
    /// in which case input `i` goes to the concatenation untouched.
    pub fn new(
        input_dims: Vec<usize>,
        branches: Vec<Vec<DenseLayer>>,
        trunk: Vec<DenseLayer>,
    ) -> Result<Self> {
        if input_dims.is_empty() || input_dims.len() != branches.len() {
            return Err(Error::Shape(format!(
                "{} input dims for {} branches",
                input_dims.len(),
                branches.len()
            )));
        }
        let mut concat_width = 0;
        for (i, (branch, &dim)) in branches.iter().zip(&input_dims).enumerate() {
            let mut width = dim;
            for layer in branch {
                layer.check()?;
                if layer.in_dim() != width {
                    return Err(Error::Shape(format!(
                        "branch {i}: layer expects {} inputs, receives {width}",
                        layer.in_dim()
                    )));
                }
                width = layer.out_dim();
            }
            concat_width += width;
        }
        let mut width = concat_width;
        for (j, layer) in trunk.iter().enumerate() {
            layer.check()?;
            if layer.in_dim() != width {
                return Err(Error::Shape(format!(
                    "trunk layer {j} expects {} inputs, receives {width}",
                    layer.in_dim()
                )));
            }
            width = layer.out_dim();
        }
        Ok(Self {
            input_dims,
            branches,
            trunk,
            version: 0,
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dim(&self) -> usize {
        match self.trunk.last() {
            Some(layer) => layer.out_dim(),
            None => self
                .branches
                .iter()
                .zip(&self.input_dims)
                .map(|(b, &d)| b.last().map_or(d, DenseLayer::out_dim))
                .sum(),
        }
    }

    pub fn branches(&self) -> &[Vec<DenseLayer>] {
        &self.branches
    }

    pub fn trunk(&self) -> &[DenseLayer] {
        &self.trunk
    }

    /// Parameter version, bumped on every in-place update.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Branch layers in branch order, then trunk layers.
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.branches.iter().flatten().chain(self.trunk.iter())
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.version += 1;
        self.branches
            .iter_mut()
            .flatten()
            .chain(self.trunk.iter_mut())
    }

    pub fn n_params(&self) -> usize {
        self.layers().map(DenseLayer::n_params).sum()
    }

    fn check_inputs(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<usize> {
        if inputs.len() != self.input_dims.len() {
            return Err(Error::Shape(format!(
                "network takes {} inputs, got {}",
                self.input_dims.len(),
                inputs.len()
            )));
        }
        let batch = inputs[0].nrows();
        for (i, (x, &d)) in inputs.iter().zip(&self.input_dims).enumerate() {
            if x.ncols() != d || x.nrows() != batch {
                return Err(Error::Shape(format!(
                    "input {i} is {}x{}, expected {batch}x{d}",
                    x.nrows(),
                    x.ncols()
                )));
            }
        }
        Ok(batch)
    }

    pub fn forward(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<(Array2<f64>, Tape)> {
        let batch = self.check_inputs(inputs)?;
        let mut branch_caches = Vec::with_capacity(self.branches.len());
        let mut branch_outputs = Vec::with_capacity(self.branches.len());
        for (branch, x) in self.branches.iter().zip(inputs) {
            let mut caches = Vec::with_capacity(branch.len());
            let mut current = x.to_owned();
            for layer in branch {
                let (pre, out) = layer.forward(current.view());
                caches.push(LayerCache {
                    input: current,
                    pre,
                    output: out.clone(),
                });
                current = out;
            }
            branch_outputs.push(current);
            branch_caches.push(caches);
        }
        let views: Vec<_> = branch_outputs.iter().map(|a| a.view()).collect();
        let mut current = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let mut trunk_caches = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            let (pre, out) = layer.forward(current.view());
            trunk_caches.push(LayerCache {
                input: current,
                pre,
                output: out.clone(),
            });
            current = out;
        }
        let tape = Tape {
            version: self.version,
            batch,
            branches: branch_caches,
            trunk: trunk_caches,
        };
        Ok((current, tape))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        self.check_inputs(inputs)?;
        let outputs: Vec<Array2<f64>> = self
            .branches
            .iter()
            .zip(inputs)
            .map(|(branch, x)| {
                branch
                    .iter()
                    .fold(x.to_owned(), |acc, layer| layer.predict(acc.view()))
            })
            .collect();
        let views: Vec<_> = outputs.iter().map(|a| a.view()).collect();
        let joined = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self
            .trunk
            .iter()
            .fold(joined, |acc, layer| layer.predict(acc.view())))
    }

    pub fn backward(&self, tape: &Tape, grad_output: ArrayView2<'_, f64>) -> Result<Backprop> {
        if tape.version != self.version {
            return Err(Error::StaleTape {
                tape: tape.version,
                network: self.version,
            });
        }
        if grad_output.dim() != (tape.batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, expected ({}, {})",
                grad_output.dim(),
                tape.batch,
                self.output_dim()
            )));
        }

        let mut trunk_grads = Vec::with_capacity(self.trunk.len());
        let mut delta = grad_output.to_owned();
        for (layer, cache) in self.trunk.iter().zip(&tape.trunk).rev() {
            let (grad, upstream) = layer_backward(layer, cache, delta);
            trunk_grads.push(grad);
            delta = upstream;
        }
        trunk_grads.reverse();

        // split the concatenation gradient back onto the branches
        let mut branch_grads = Vec::with_capacity(self.branches.len());
        let mut input_grads = Vec::with_capacity(self.branches.len());
        let mut offset = 0;
        for ((branch, caches), &dim) in self
            .branches
            .iter()
            .zip(&tape.branches)
            .zip(&self.input_dims)
        {
            let width = branch.last().map_or(dim, DenseLayer::out_dim);
            let mut d = delta.slice(s![.., offset..offset + width]).to_owned();
            offset += width;
            let mut grads = Vec::with_capacity(branch.len());
            for (layer, cache) in branch.iter().zip(caches).rev() {
                let (grad, upstream) = layer_backward(layer, cache, d);
                grads.push(grad);
                d = upstream;
            }
            grads.reverse();
            branch_grads.push(grads);
            input_grads.push(d);
        }

        let layers = branch_grads
            .into_iter()
            .flatten()
            .chain(trunk_grads)
            .collect();
        Ok(Backprop {
            params: Gradients { layers },
            inputs: input_grads,
        })
    }
}

fn layer_backward(
    layer: &DenseLayer,
    cache: &LayerCache,
    grad_out: Array2<f64>,
) -> (LayerGrad, Array2<f64>) {
    let act = layer.activation;
    let mut delta = grad_out;
    ndarray::Zip::from(&mut delta)
        .and(&cache.pre)
        .and(&cache.output)
        .for_each(|d, &x, &y| *d *= act.derivative(x, y));
    let weights = delta.t().dot(&cache.input);
    let biases = delta.sum_axis(Axis(0));
    let upstream = delta.dot(&layer.weights);
    (LayerGrad { weights, biases }, upstream)
}
