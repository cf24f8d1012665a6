//! Classifier `q(z | s, a)` over the `N` sub-policies.
//!
//! The network maps the concatenation `s ++ a` to `N` logits that are normalized with
//! a softmax. Training maximizes the mean log-likelihood of the generating
//! sub-policy's label. The actor regularizer is `log clip(q(z_k | s, a), eps, 1 - eps)`
//! and its action gradient is zero wherever the clip is active.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::ndmath::{
    adam_step, backward_batch, forward_batch, mlp_backward, mlp_forward, Activation, AdamConfig,
    Gradient, Matrix, OptimizerState, ParamSet,
};
use crate::replay::Batch;

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub params: ParamSet,
    pub opt: OptimizerState,
    classes: usize,
    state_dim: usize,
    action_dim: usize,
}

pub fn discriminator_sizes(state_dim: usize, action_dim: usize, hidden: usize, classes: usize) -> [usize; 4] {
    [state_dim + action_dim, hidden, hidden, classes]
}

/// In-place numerically stable softmax.
pub fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        classes: usize,
        hidden: usize,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let params = ParamSet::mlp(
            &discriminator_sizes(state_dim, action_dim, hidden, classes),
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        Self::from_params(params, state_dim, action_dim, AdamConfig::with_lr(lr))
            .expect("freshly built network has consistent shapes")
    }

    pub fn from_params(params: ParamSet, state_dim: usize, action_dim: usize, adam: AdamConfig) -> Result<Self> {
        if params.in_dim() != state_dim + action_dim {
            return Err(shape_err("discriminator input", state_dim + action_dim, params.in_dim()));
        }
        let classes = params.out_dim();
        Ok(Self {
            opt: OptimizerState::new(&params, adam),
            params,
            classes,
            state_dim,
            action_dim,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(shape_err("discriminator state", self.state_dim, state.len()));
        }
        if action.len() != self.action_dim {
            return Err(shape_err("discriminator action", self.action_dim, action.len()));
        }
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        Ok(x)
    }

    /// Class probabilities for one `(s, a)`.
    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let mut p = mlp_forward(&self.params, &self.input(state, action)?)?;
        softmax(&mut p);
        Ok(p)
    }

    /// Row-wise class probabilities.
    pub fn predict_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let input = Matrix::hconcat(states, actions)?;
        let mut probs = forward_batch(&self.params, &input)?.into_output();
        for r in 0..probs.rows() {
            softmax(probs.row_mut(r));
        }
        Ok(probs)
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|z| **z >= self.classes) {
            Some(&label) => Err(Error::Label {
                label,
                classes: self.classes,
            }),
            None => Ok(()),
        }
    }

    /// Mean negative log-likelihood of `labels` and its parameter gradient.
    pub fn nll_and_grad(&self, states: &Matrix, actions: &Matrix, labels: &[usize]) -> Result<(f64, Gradient)> {
        if labels.len() != states.rows() {
            return Err(shape_err("discriminator labels", states.rows(), labels.len()));
        }
        self.check_labels(labels)?;
        let input = Matrix::hconcat(states, actions)?;
        let trace = forward_batch(&self.params, &input)?;
        let b = labels.len() as f64;
        let mut cot = trace.output().clone();
        let mut nll = 0.0;
        for (r, &z) in labels.iter().enumerate() {
            let row = cot.row_mut(r);
            softmax(row);
            nll -= row[z].max(f64::MIN_POSITIVE).ln();
            // d(-log q_z)/d logits = q - e_z
            row[z] -= 1.0;
            row.iter_mut().for_each(|v| *v /= b);
        }
        let (grad, _) = backward_batch(&self.params, &trace, &cot, false)?;
        Ok((nll / b, grad))
    }

    /// One Adam step on the cross-entropy of the batch's sub-policy labels.
    /// Returns the pre-update mean negative log-likelihood.
    pub fn update(&mut self, batch: &Batch) -> Result<f64> {
        let (nll, grad) = self.nll_and_grad(&batch.states, &batch.actions, &batch.z)?;
        adam_step(&mut self.params, &grad, &mut self.opt)?;
        Ok(nll)
    }

    /// Fraction of rows whose most probable class equals the label.
    pub fn accuracy(&self, states: &Matrix, actions: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let probs = self.predict_batch(states, actions)?;
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(r, z)| {
                let row = probs.row(*r);
                let arg = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc })
                    .0;
                arg == **z
            })
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// `log clip(q(z_k | s, a), eps, 1 - eps)` and its gradient with respect to `a`.
    pub fn regularizer_value_and_action_grad(
        &self,
        state: &[f64],
        action: &[f64],
        k: usize,
        eps: f64,
    ) -> Result<(f64, Vec<f64>)> {
        check_eps(eps)?;
        self.check_labels(&[k])?;
        let x = self.input(state, action)?;
        let mut q = mlp_forward(&self.params, &x)?;
        softmax(&mut q);
        let qk = q[k];
        let value = qk.clamp(eps, 1.0 - eps).ln();
        if qk < eps || qk > 1.0 - eps {
            return Ok((value, vec![0.0; self.action_dim]));
        }
        let cot: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(j, p)| if j == k { 1.0 - p } else { -p })
            .collect();
        let (_, dx) = mlp_backward(&self.params, &x, &cot)?;
        Ok((value, dx[self.state_dim..].to_vec()))
    }

    /// Batched regularizer for class `k`: values per row and the action gradient rows.
    pub fn regularizer_batch(
        &self,
        states: &Matrix,
        actions: &Matrix,
        k: usize,
        eps: f64,
    ) -> Result<(Vec<f64>, Matrix)> {
        check_eps(eps)?;
        self.check_labels(&[k])?;
        let input = Matrix::hconcat(states, actions)?;
        let trace = forward_batch(&self.params, &input)?;
        let mut cot = trace.output().clone();
        let mut values = Vec::with_capacity(cot.rows());
        for r in 0..cot.rows() {
            let row = cot.row_mut(r);
            softmax(row);
            let qk = row[k];
            values.push(qk.clamp(eps, 1.0 - eps).ln());
            if qk < eps || qk > 1.0 - eps {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v = -*v);
                row[k] += 1.0;
            }
        }
        let (_, dx) = backward_batch(&self.params, &trace, &cot, true)?;
        Ok((values, dx.expect("input gradient requested").columns(self.state_dim, self.action_dim)))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Config(format!("clip epsilon must lie in (0, 0.5), got {eps}")));
    }
    Ok(())
}
