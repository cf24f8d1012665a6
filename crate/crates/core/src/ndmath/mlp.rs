use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    /// Bounded odd squashing used for actor outputs.
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// One dense layer `y = act(W x + b)` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
            activation,
        }
    }

    /// Weights and biases uniform in `±1/sqrt(in_dim)`.
    pub fn uniform<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias = (0..out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn weight_at(&self, out: usize, inp: usize) -> f64 {
        self.weight[out * self.in_dim + inp]
    }
}

/// Parameters of a feed-forward network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

impl ParamSet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (idx, l) in layers.iter().enumerate() {
            if l.weight.len() != l.in_dim * l.out_dim {
                return Err(shape_err(
                    &format!("layer {idx} weight length"),
                    l.in_dim * l.out_dim,
                    l.weight.len(),
                ));
            }
            if l.bias.len() != l.out_dim {
                return Err(shape_err(
                    &format!("layer {idx} bias length"),
                    l.out_dim,
                    l.bias.len(),
                ));
            }
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(shape_err(
                    &format!("layer {} input", idx + 1),
                    pair[0].out_dim,
                    pair[1].in_dim,
                ));
            }
        }
        let ps = Self { layers };
        if !ps.values().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(ps)
    }

    /// Randomly initialized MLP with the given layer sizes, `hidden` activation on every
    /// layer but the last, which gets `output`.
    pub fn mlp<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::uniform(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    /// Same architecture with every parameter zero.
    pub fn zeros_like(other: &ParamSet) -> Self {
        Self {
            layers: other
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    /// All parameters in canonical order: per layer, weights row-major then biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Partial derivatives laid out exactly like a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub layers: Vec<LayerGrad>,
}

impl Gradient {
    pub fn zeros_for(params: &ParamSet) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.weight.len() == l.weight.len() && g.bias.len() == l.bias.len())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// `self += other`; shapes must agree.
    pub fn accumulate(&mut self, other: &Gradient) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }
}

/// Evaluates the network on a single input vector.
pub fn mlp_forward(params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_single(params, input)?.pop().expect("at least one layer"))
}

/// Activations of every layer for one input; element 0 is the input itself.
fn forward_single(params: &ParamSet, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    if input.len() != params.in_dim() {
        return Err(shape_err("network input", params.in_dim(), input.len()));
    }
    let mut acts = Vec::with_capacity(params.layers.len() + 1);
    acts.push(input.to_vec());
    for layer in &params.layers {
        let x = acts.last().expect("non-empty");
        let y: Vec<f64> = (0..layer.out_dim)
            .map(|o| {
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                let z = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + layer.bias[o];
                layer.activation.apply(z)
            })
            .collect();
        acts.push(y);
    }
    Ok(acts)
}

/// Vector-Jacobian product of the network at `input` with cotangent `output_grad`.
/// Returns the parameter gradient and the gradient with respect to the input.
pub fn mlp_backward(
    params: &ParamSet,
    input: &[f64],
    output_grad: &[f64],
) -> Result<(Gradient, Vec<f64>)> {
    if output_grad.len() != params.out_dim() {
        return Err(shape_err(
            "output gradient",
            params.out_dim(),
            output_grad.len(),
        ));
    }
    let acts = forward_single(params, input)?;
    let mut grad = Gradient::zeros_for(params);
    let mut upstream = output_grad.to_vec();
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let y = &acts[li + 1];
        let x = &acts[li];
        let dz: Vec<f64> = upstream
            .iter()
            .zip(y)
            .map(|(g, yo)| g * layer.activation.derivative_from_output(*yo))
            .collect();
        let lg = &mut grad.layers[li];
        lg.bias.copy_from_slice(&dz);
        for (row, d) in lg.weight.chunks_exact_mut(layer.in_dim).zip(&dz) {
            for (w, xi) in row.iter_mut().zip(x) {
                *w = d * xi;
            }
        }
        let mut down = vec![0.0; layer.in_dim];
        for (o, d) in dz.iter().enumerate() {
            let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (acc, w) in down.iter_mut().zip(row) {
                *acc += w * d;
            }
        }
        upstream = down;
    }
    Ok((grad, upstream))
}

/// Saved activations of a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    acts: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("trace holds the input at least")
    }

    pub fn into_output(mut self) -> Matrix {
        self.acts.pop().expect("trace holds the input at least")
    }
}

/// Batched forward pass; each row of `input` is one sample.
pub fn forward_batch(params: &ParamSet, input: &Matrix) -> Result<ForwardTrace> {
    if input.cols() != params.in_dim() {
        return Err(shape_err("network input", params.in_dim(), input.cols()));
    }
    let batch = input.rows();
    let mut acts = Vec::with_capacity(params.layers.len() + 1);
    acts.push(input.clone());
    for layer in &params.layers {
        let x = acts.last().expect("non-empty");
        let mut y = Matrix::zeros(batch, layer.out_dim);
        for r in 0..batch {
            y.row_mut(r).copy_from_slice(&layer.bias);
        }
        gemm(
            batch,
            layer.in_dim,
            layer.out_dim,
            x.as_slice(),
            layer.in_dim,
            1,
            &layer.weight,
            1,
            layer.in_dim,
            1.0,
            y.as_mut_slice(),
            layer.out_dim,
        );
        if layer.activation != Activation::Identity {
            y.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = layer.activation.apply(*v));
        }
        acts.push(y);
    }
    Ok(ForwardTrace { acts })
}

/// Batched backward pass. Parameter gradients are summed over the batch rows.
/// The input gradient is computed only when `want_input_grad` is set.
pub fn backward_batch(
    params: &ParamSet,
    trace: &ForwardTrace,
    output_grad: &Matrix,
    want_input_grad: bool,
) -> Result<(Gradient, Option<Matrix>)> {
    let out = trace.output();
    if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
        return Err(Error::Shape(format!(
            "output gradient: expected {}x{}, got {}x{}",
            out.rows(),
            out.cols(),
            output_grad.rows(),
            output_grad.cols()
        )));
    }
    let batch = out.rows();
    let mut grad = Gradient::zeros_for(params);
    let mut upstream = output_grad.clone();
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let y = &trace.acts[li + 1];
        let x = &trace.acts[li];
        if layer.activation != Activation::Identity {
            for (g, yo) in upstream.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *g *= layer.activation.derivative_from_output(*yo);
            }
        }
        let dz = upstream;
        let lg = &mut grad.layers[li];
        for r in 0..batch {
            for (b, d) in lg.bias.iter_mut().zip(dz.row(r)) {
                *b += d;
            }
        }
        // dW = dZ^T X
        gemm(
            layer.out_dim,
            batch,
            layer.in_dim,
            dz.as_slice(),
            1,
            layer.out_dim,
            x.as_slice(),
            layer.in_dim,
            1,
            0.0,
            &mut lg.weight,
            layer.in_dim,
        );
        if li == 0 && !want_input_grad {
            return Ok((grad, None));
        }
        // dX = dZ W
        let mut down = Matrix::zeros(batch, layer.in_dim);
        gemm(
            batch,
            layer.out_dim,
            layer.in_dim,
            dz.as_slice(),
            layer.out_dim,
            1,
            &layer.weight,
            layer.in_dim,
            1,
            0.0,
            down.as_mut_slice(),
            layer.in_dim,
        );
        upstream = down;
    }
    Ok((grad, Some(upstream)))
}

/// Polyak averaging `target <- rho * online + (1 - rho) * target`.
pub fn soft_update(target: &mut ParamSet, online: &ParamSet, rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("soft-update rho must lie in (0, 1], got {rho}")));
    }
    if !target.same_shape(online) {
        return Err(Error::Shape("soft update between different architectures".into()));
    }
    if rho == 1.0 {
        target.clone_from(online);
        return Ok(());
    }
    for (t, o) in target.values_mut().zip(online.values()) {
        *t = rho * o + (1.0 - rho) * *t;
    }
    Ok(())
}
