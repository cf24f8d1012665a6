//! Ensemble of `N` deterministic actors, `N` critics, and `N` target critics.
//!
//! The bootstrap target averages each target critic over the (smoothed) actions of
//! all `N` actors at the next state, then takes the minimum of those averages over a
//! random subset of `M` critics. One subset is drawn per minibatch, as the prefix of
//! a uniformly random permutation of `0..N`, so the subsets for different `M` under
//! the same random stream are nested.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::EnvSpec;
use crate::error::{shape_err, Error, Result};
use crate::ndmath::{
    adam_step, backward_batch, forward_batch, mlp_forward, soft_update, Activation, AdamConfig,
    ForwardTrace, Gradient, Matrix, OptimizerState, ParamSet,
};
use crate::replay::Batch;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub ensemble_n: usize,
    pub target_m: usize,
    pub hidden: usize,
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
}

/// How each critic is aggregated over next-state actions inside the target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TargetRule {
    /// Mean over the actions of all `N` actors.
    #[default]
    EnsembleMean,
    /// Critic `i` evaluated at actor `i`'s action only (TD3-style clipped double Q
    /// when `N = M = 2`).
    OwnActor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleAgent {
    pub actors: Vec<ParamSet>,
    pub critics: Vec<ParamSet>,
    pub target_critics: Vec<ParamSet>,
    pub actor_opts: Vec<OptimizerState>,
    pub critic_opts: Vec<OptimizerState>,
    pub target_m: usize,
    pub gamma: f64,
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    action_scale: Vec<f64>,
    action_center: Vec<f64>,
}

pub fn actor_sizes(state_dim: usize, action_dim: usize, hidden: usize) -> [usize; 4] {
    [state_dim, hidden, hidden, action_dim]
}

pub fn critic_sizes(state_dim: usize, action_dim: usize, hidden: usize) -> [usize; 4] {
    [state_dim + action_dim, hidden, hidden, 1]
}

impl EnsembleAgent {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, cfg: &AgentConfig, rng: &mut R) -> Result<Self> {
        if cfg.ensemble_n == 0 {
            return Err(Error::Config("ensemble size N must be at least 1".into()));
        }
        if cfg.target_m == 0 || cfg.target_m > cfg.ensemble_n {
            return Err(Error::Config(format!(
                "target subset size M = {} must lie in [1, N = {}]",
                cfg.target_m, cfg.ensemble_n
            )));
        }
        let (sd, ad, h) = (spec.state_dim, spec.action_dim, cfg.hidden);
        let mut actors = Vec::with_capacity(cfg.ensemble_n);
        let mut critics = Vec::with_capacity(cfg.ensemble_n);
        for _ in 0..cfg.ensemble_n {
            actors.push(ParamSet::mlp(&actor_sizes(sd, ad, h), Activation::Relu, Activation::Tanh, rng));
            critics.push(ParamSet::mlp(
                &critic_sizes(sd, ad, h),
                Activation::Relu,
                Activation::Identity,
                rng,
            ));
        }
        let actor_opts = actors
            .iter()
            .map(|p| OptimizerState::new(p, AdamConfig::with_lr(cfg.lr_actor)))
            .collect();
        let critic_opts = critics
            .iter()
            .map(|p| OptimizerState::new(p, AdamConfig::with_lr(cfg.lr_critic)))
            .collect();
        Ok(Self {
            target_critics: critics.clone(),
            actors,
            critics,
            actor_opts,
            critic_opts,
            target_m: cfg.target_m,
            gamma: cfg.gamma,
            state_dim: sd,
            action_dim: ad,
            action_low: spec.action_low.clone(),
            action_high: spec.action_high.clone(),
            action_scale: spec.action_scale(),
            action_center: spec.action_center(),
        })
    }

    pub fn ensemble_n(&self) -> usize {
        self.actors.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_scale(&self) -> &[f64] {
        &self.action_scale
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.actors.len() {
            return Err(Error::Index {
                index: k,
                len: self.actors.len(),
            });
        }
        Ok(())
    }

    fn clip_row(&self, row: &mut [f64]) {
        for ((a, l), h) in row.iter_mut().zip(&self.action_low).zip(&self.action_high) {
            *a = a.clamp(*l, *h);
        }
    }

    /// Noiseless action of actor `k`.
    pub fn policy_action(&self, k: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.check_index(k)?;
        let squashed = mlp_forward(&self.actors[k], state)?;
        Ok(squashed
            .iter()
            .zip(&self.action_scale)
            .zip(&self.action_center)
            .map(|((u, s), c)| c + s * u)
            .collect())
    }

    /// Behaviour action: policy output plus Gaussian noise with standard deviation
    /// `noise_std * action_scale`, clipped to the action box.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        k: usize,
        state: &[f64],
        noise_std: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if noise_std.is_nan() || noise_std < 0.0 {
            return Err(Error::Config(format!("noise std must be non-negative, got {noise_std}")));
        }
        let mut a = self.policy_action(k, state)?;
        if noise_std > 0.0 {
            for (v, s) in a.iter_mut().zip(&self.action_scale) {
                let eps: f64 = rng.sample(StandardNormal);
                *v += eps * noise_std * s;
            }
        }
        self.clip_row(&mut a);
        Ok(a)
    }

    /// Batched actor forward pass returning the trace and the scaled actions.
    pub fn actor_forward(&self, k: usize, states: &Matrix) -> Result<(ForwardTrace, Matrix)> {
        self.check_index(k)?;
        let trace = forward_batch(&self.actors[k], states)?;
        let mut actions = trace.output().clone();
        for r in 0..actions.rows() {
            for ((v, s), c) in actions
                .row_mut(r)
                .iter_mut()
                .zip(&self.action_scale)
                .zip(&self.action_center)
            {
                *v = c + s * *v;
            }
        }
        Ok((trace, actions))
    }

    /// Q-values of critic `k` (online) for each row.
    pub fn critic_values(&self, k: usize, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        self.check_index(k)?;
        let input = Matrix::hconcat(states, actions)?;
        Ok(forward_batch(&self.critics[k], &input)?.into_output().into_vec())
    }

    /// Mean over the online critics at a single `(s, a)`.
    pub fn ensemble_q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mut input = state.to_vec();
        input.extend_from_slice(action);
        let mut sum = 0.0;
        for c in &self.critics {
            sum += mlp_forward(c, &input)?[0];
        }
        Ok(sum / self.critics.len() as f64)
    }

    /// `dQ_k/da` at each row, via the critic's input gradient.
    pub fn critic_action_grad(&self, k: usize, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        self.check_index(k)?;
        let input = Matrix::hconcat(states, actions)?;
        let trace = forward_batch(&self.critics[k], &input)?;
        let ones = Matrix::from_vec(input.rows(), 1, vec![1.0; input.rows()])?;
        let (_, dx) = backward_batch(&self.critics[k], &trace, &ones, true)?;
        Ok(dx.expect("input gradient requested").columns(self.state_dim, self.action_dim))
    }

    /// Parameter gradient of actor `k` for an action-space cotangent, through the
    /// output squashing and scaling.
    pub fn actor_gradient(&self, k: usize, trace: &ForwardTrace, action_cotangent: &Matrix) -> Result<Gradient> {
        self.check_index(k)?;
        let mut squashed_cot = action_cotangent.clone();
        for r in 0..squashed_cot.rows() {
            for (v, s) in squashed_cot.row_mut(r).iter_mut().zip(&self.action_scale) {
                *v *= s;
            }
        }
        Ok(backward_batch(&self.actors[k], trace, &squashed_cot, false)?.0)
    }

    /// Backpropagates an action-space cotangent through actor `k` and takes one Adam
    /// descent step with the resulting parameter gradient.
    pub fn apply_actor_cotangent(
        &mut self,
        k: usize,
        trace: &ForwardTrace,
        action_cotangent: &Matrix,
    ) -> Result<()> {
        let grad = self.actor_gradient(k, trace, action_cotangent)?;
        adam_step(&mut self.actors[k], &grad, &mut self.actor_opts[k])
    }

    /// Bootstrap targets `y = r + gamma * min_{i in subset} agg_i(s')`, or `y = r` for
    /// terminal transitions. Target actions are smoothed by clipped Gaussian noise.
    pub fn compute_target<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        rng: &mut R,
        target_noise_std: f64,
        noise_clip: f64,
        rule: TargetRule,
    ) -> Result<Vec<f64>> {
        let n = self.ensemble_n();
        if self.target_m == 0 || self.target_m > n {
            return Err(Error::Config(format!(
                "target subset size M = {} exceeds N = {n}",
                self.target_m
            )));
        }
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let subset = &order[..self.target_m];

        if batch.terminals.iter().all(|t| *t) {
            return Ok(batch.rewards.clone());
        }

        let b = batch.len();
        let next = &batch.next_states;
        let mut smoothed = Vec::with_capacity(n);
        for j in 0..n {
            let (_, mut a) = self.actor_forward(j, next)?;
            for r in 0..b {
                let row = a.row_mut(r);
                if target_noise_std > 0.0 {
                    for (v, s) in row.iter_mut().zip(&self.action_scale) {
                        let eps: f64 = rng.sample(StandardNormal);
                        *v += (eps * target_noise_std * s).clamp(-noise_clip * s, noise_clip * s);
                    }
                }
                self.clip_row(row);
            }
            smoothed.push(a);
        }

        let mut best = vec![f64::INFINITY; b];
        for &i in subset {
            let agg = match rule {
                TargetRule::EnsembleMean => {
                    // One forward pass over all N action sets stacked row-wise.
                    let mut stacked = Vec::with_capacity(n * b * (self.state_dim + self.action_dim));
                    for a in &smoothed {
                        for r in 0..b {
                            stacked.extend_from_slice(next.row(r));
                            stacked.extend_from_slice(a.row(r));
                        }
                    }
                    let input = Matrix::from_vec(n * b, self.state_dim + self.action_dim, stacked)?;
                    let q = forward_batch(&self.target_critics[i], &input)?.into_output();
                    let q = q.as_slice();
                    (0..b)
                        .map(|r| (0..n).map(|j| q[j * b + r]).sum::<f64>() / n as f64)
                        .collect::<Vec<_>>()
                }
                TargetRule::OwnActor => {
                    let input = Matrix::hconcat(next, &smoothed[i])?;
                    forward_batch(&self.target_critics[i], &input)?
                        .into_output()
                        .into_vec()
                }
            };
            for (m, v) in best.iter_mut().zip(agg) {
                *m = m.min(v);
            }
        }
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.terminals)
            .zip(best)
            .map(|((r, term), q)| if *term { *r } else { r + self.gamma * q })
            .collect())
    }

    /// Mean squared TD error of critic `k` on `[s, a]` rows and its parameter gradient.
    pub fn critic_loss_and_grad(&self, k: usize, input: &Matrix, targets: &[f64]) -> Result<(f64, Gradient)> {
        self.check_index(k)?;
        if targets.len() != input.rows() {
            return Err(shape_err("targets", input.rows(), targets.len()));
        }
        let b = targets.len() as f64;
        let trace = forward_batch(&self.critics[k], input)?;
        let residual: Vec<f64> = trace
            .output()
            .as_slice()
            .iter()
            .zip(targets)
            .map(|(q, y)| q - y)
            .collect();
        let loss = residual.iter().map(|d| d * d).sum::<f64>() / b;
        let cot = Matrix::from_vec(residual.len(), 1, residual.iter().map(|d| 2.0 * d / b).collect())?;
        let (grad, _) = backward_batch(&self.critics[k], &trace, &cot, false)?;
        Ok((loss, grad))
    }

    /// One Adam step on the mean squared TD error for every critic. Targets are
    /// constants. Returns each critic's loss before its update.
    pub fn critic_update(&mut self, batch: &Batch, targets: &[f64]) -> Result<Vec<f64>> {
        if targets.len() != batch.len() {
            return Err(shape_err("targets", batch.len(), targets.len()));
        }
        if !targets.iter().all(|y| y.is_finite()) {
            return Err(Error::NonFinite("critic targets".into()));
        }
        let input = Matrix::hconcat(&batch.states, &batch.actions)?;
        let mut losses = Vec::with_capacity(self.critics.len());
        for k in 0..self.critics.len() {
            let (loss, grad) = self.critic_loss_and_grad(k, &input, targets)?;
            losses.push(loss);
            adam_step(&mut self.critics[k], &grad, &mut self.critic_opts[k])?;
        }
        Ok(losses)
    }

    pub fn soft_update_targets(&mut self, rho: f64) -> Result<()> {
        for (t, c) in self.target_critics.iter_mut().zip(&self.critics) {
            soft_update(t, c, rho)?;
        }
        Ok(())
    }
}
