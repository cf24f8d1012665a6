//! The training loop.
//!
//! Each episode is driven by one behavior sub-policy `k`, drawn uniformly when the
//! episode starts, and every transition it produces is stored with label `z = k`.
//! After warm-up, each env step is followed by one gradient step: all critics are
//! regressed onto the ensemble target, and every `actor_period` gradient steps the
//! single selected sub-policy `i` ascends its critic plus the clipped
//! discriminator log-probability of its own label. `i` is redrawn every
//! `recurrent_interval` env steps; the other actors stay frozen in between.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{knn_entropy, SampleCloud, DEFAULT_K};
use crate::config::TrainerConfig;
use crate::discriminator::Discriminator;
use crate::ensemble::{AgentConfig, EnsembleAgent, TargetRule};
use crate::envs::{Env, Episode};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRecord, SCHEMA_VERSION};
use crate::ndmath::{ForwardTrace, Matrix};
use crate::replay::{Batch, ReplayBuffer, Transition};

/// Largest number of recent transitions entering the visitation entropy.
pub const VISITATION_WINDOW: usize = 10_000;

/// `G_t = sum_{j >= t} gamma^(j - t) r_j` for every step of one episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Mean of `estimate - truth`; positive means overestimation.
pub fn estimation_bias(estimates: &[f64], truths: &[f64]) -> f64 {
    assert_eq!(estimates.len(), truths.len(), "one truth per estimate");
    if estimates.is_empty() {
        return 0.0;
    }
    estimates.iter().zip(truths).map(|(q, g)| q - g).sum::<f64>() / estimates.len() as f64
}

/// Action-space cotangent of the actor loss
/// `-(1/B) sum [Q_i(s, pi_i(s)) + alpha log clip(q(i | s, pi_i(s)), eps, 1 - eps)]`,
/// together with the actor trace and the objective value (the negated loss).
/// With `alpha = 0` the discriminator is never evaluated.
pub fn actor_cotangent(
    agent: &EnsembleAgent,
    discriminator: &Discriminator,
    i: usize,
    states: &Matrix,
    alpha: f64,
    clip_eps: f64,
) -> Result<(ForwardTrace, Matrix, f64)> {
    let (trace, actions) = agent.actor_forward(i, states)?;
    let b = states.rows() as f64;
    let q = agent.critic_values(i, states, &actions)?;
    let mut objective = q.iter().sum::<f64>() / b;
    let mut cot = agent.critic_action_grad(i, states, &actions)?;
    cot.as_mut_slice().iter_mut().for_each(|g| *g = -*g / b);
    if alpha > 0.0 {
        let (values, reg_grad) = discriminator.regularizer_batch(states, &actions, i, clip_eps)?;
        objective += alpha * values.iter().sum::<f64>() / b;
        for (c, g) in cot.as_mut_slice().iter_mut().zip(reg_grad.as_slice()) {
            *c -= alpha * g / b;
        }
    }
    Ok((trace, cot, objective))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub step: u64,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientStats {
    pub critic_losses: Vec<f64>,
    pub actor_objective: Option<f64>,
    pub discriminator_nll: f64,
}

/// What one env step produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutcome {
    /// Undiscounted return of the episode that ended on this step.
    pub episode_return: Option<f64>,
    pub gradient: Option<GradientStats>,
    pub record: Option<MetricsRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode_return: f64,
    pub behavior_index: usize,
    pub steps: usize,
    /// Evaluation records that fell inside the episode.
    pub records: Vec<MetricsRecord>,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub env: Env,
    pub agent: EnsembleAgent,
    pub discriminator: Discriminator,
    pub replay: ReplayBuffer,
    pub(crate) rng: ChaCha8Rng,
    /// Env steps taken.
    pub step: u64,
    pub gradient_steps: u64,
    /// Behavior sub-policy of the current episode.
    pub behavior_index: usize,
    /// Sub-policy receiving actor updates.
    pub selected_index: usize,
    pub episode: Episode,
    pub episode_return: f64,
    pub episodes_completed: u64,
    /// Episodes started per sub-policy since the last evaluation record.
    pub behavior_histogram: Vec<u64>,
    pub selections: Vec<SelectionEvent>,
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let env = Env::new(config.env);
        let spec = env.spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = EnsembleAgent::new(
            &spec,
            &AgentConfig {
                ensemble_n: config.ensemble_n,
                target_m: config.target_m,
                hidden: config.hidden,
                gamma: config.gamma,
                lr_actor: config.lr,
                lr_critic: config.lr,
            },
            &mut rng,
        )?;
        let discriminator = Discriminator::new(
            spec.state_dim,
            spec.action_dim,
            config.ensemble_n,
            config.hidden,
            config.lr,
            &mut rng,
        );
        let replay = ReplayBuffer::new(config.buffer_capacity, spec.state_dim, spec.action_dim, config.ensemble_n);
        let selected_index = rng.random_range(0..config.ensemble_n);
        let episode = Episode {
            state: env.reset(0),
            steps: 0,
            done: true,
        };
        Ok(Self {
            behavior_histogram: vec![0; config.ensemble_n],
            selections: vec![SelectionEvent {
                step: 0,
                index: selected_index,
            }],
            config,
            env,
            agent,
            discriminator,
            replay,
            rng,
            step: 0,
            gradient_steps: 0,
            behavior_index: 0,
            selected_index,
            episode,
            episode_return: 0.0,
            episodes_completed: 0,
        })
    }

    fn begin_episode(&mut self) {
        self.behavior_index = self.rng.random_range(0..self.config.ensemble_n);
        let seed: u64 = self.rng.random();
        self.episode = Episode::start(&self.env, seed);
        self.episode_return = 0.0;
        self.behavior_histogram[self.behavior_index] += 1;
    }

    fn behavior_action(&mut self) -> Result<Vec<f64>> {
        if self.step < self.config.warmup_steps {
            let spec = self.env.spec();
            Ok(spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(l, h)| self.rng.random_range(*l..=*h))
                .collect())
        } else {
            self.agent.select_action(
                self.behavior_index,
                &self.episode.state,
                self.config.behavior_noise,
                &mut self.rng,
            )
        }
    }

    /// One env step, then (past warm-up) one gradient step, then the periodic
    /// sub-policy selection and evaluation.
    pub fn advance(&mut self) -> Result<StepOutcome> {
        if self.episode.done {
            self.begin_episode();
        }
        let action = self.behavior_action()?;
        let state = self.episode.state.clone();
        let res = self.episode.step(&self.env, &action)?;
        self.replay.push(Transition {
            state,
            action,
            reward: res.reward,
            next_state: res.next_state,
            terminal: res.terminal,
            z: self.behavior_index,
        })?;
        self.episode_return += res.reward;
        self.step += 1;

        let mut out = StepOutcome::default();
        if self.step >= self.config.warmup_steps && self.replay.ready(self.config.batch_size) {
            out.gradient = Some(self.gradient_step()?);
        }
        if self.step.is_multiple_of(self.config.recurrent_interval) {
            self.recurrent_select();
        }
        if self.episode.done {
            self.episodes_completed += 1;
            out.episode_return = Some(self.episode_return);
        }
        if self.step.is_multiple_of(self.config.eval_period) {
            let rec = self.evaluate(self.config.eval_episodes)?;
            self.behavior_histogram.iter_mut().for_each(|c| *c = 0);
            out.record = Some(rec);
        }
        Ok(out)
    }

    /// Steps until the current episode ends (starting one if needed).
    pub fn run_episode(&mut self) -> Result<EpisodeSummary> {
        let mut records = Vec::new();
        loop {
            let out = self.advance()?;
            records.extend(out.record);
            if let Some(ret) = out.episode_return {
                return Ok(EpisodeSummary {
                    episode_return: ret,
                    behavior_index: self.behavior_index,
                    steps: self.episode.steps,
                    records,
                });
            }
        }
    }

    /// Advances to `target` env steps, handing every evaluation record to `on_record`.
    pub fn run_until<F>(&mut self, target: u64, mut on_record: F) -> Result<()>
    where
        F: FnMut(&Self, &MetricsRecord) -> Result<()>,
    {
        while self.step < target {
            if let Some(rec) = self.advance()?.record {
                on_record(self, &rec)?;
            }
        }
        Ok(())
    }

    /// Minibatch, targets, all critics, the selected actor (every `actor_period`
    /// calls), target critics, then the discriminator.
    pub fn gradient_step(&mut self) -> Result<GradientStats> {
        let cfg = &self.config;
        let batch = self.replay.sample_batch(cfg.batch_size, &mut self.rng)?;
        let targets = self.agent.compute_target(
            &batch,
            &mut self.rng,
            cfg.target_noise,
            cfg.noise_clip,
            TargetRule::EnsembleMean,
        )?;
        let critic_losses = self.agent.critic_update(&batch, &targets)?;
        if let Some(l) = critic_losses.iter().find(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("critic loss {l} at step {}", self.step)));
        }
        self.gradient_steps += 1;
        let actor_objective = if self.gradient_steps.is_multiple_of(cfg.actor_period) {
            Some(self.actor_update(&batch)?)
        } else {
            None
        };
        self.agent.soft_update_targets(self.config.tau)?;
        let discriminator_nll = self.discriminator.update(&batch)?;
        if !discriminator_nll.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss at step {}", self.step)));
        }
        Ok(GradientStats {
            critic_losses,
            actor_objective,
            discriminator_nll,
        })
    }

    fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let i = self.selected_index;
        let (trace, cot, objective) = actor_cotangent(
            &self.agent,
            &self.discriminator,
            i,
            &batch.states,
            self.config.alpha,
            self.config.clip_eps,
        )?;
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("actor objective at step {}", self.step)));
        }
        self.agent.apply_actor_cotangent(i, &trace, &cot)?;
        Ok(objective)
    }

    /// Redraws the regularized sub-policy uniformly and logs the event.
    pub fn recurrent_select(&mut self) {
        self.selected_index = self.rng.random_range(0..self.config.ensemble_n);
        self.selections.push(SelectionEvent {
            step: self.step,
            index: self.selected_index,
        });
    }

    /// Noiseless rollouts of every sub-policy give the returns, the estimation bias,
    /// and the discriminator scores; the entropy comes from recent training
    /// visitation. Rollouts use their own random stream (derived from the seed and
    /// the step), so evaluating never perturbs training.
    pub fn evaluate(&self, episodes: usize) -> Result<MetricsRecord> {
        let n = self.config.ensemble_n;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step + 1);

        let mut states: Vec<Vec<f64>> = Vec::new();
        let mut actions: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        let mut mc_returns = Vec::new();
        let mut policy_returns = vec![0.0; n];
        for (k, ret) in policy_returns.iter_mut().enumerate() {
            for _ in 0..episodes {
                let mut ep = Episode::start(&self.env, rng.random());
                let mut rewards = Vec::new();
                while !ep.done {
                    let a = self.agent.policy_action(k, &ep.state)?;
                    states.push(ep.state.clone());
                    let res = ep.step(&self.env, &a)?;
                    actions.push(a);
                    labels.push(k);
                    rewards.push(res.reward);
                }
                *ret += rewards.iter().sum::<f64>() / episodes as f64;
                mc_returns.extend(discounted_returns(&rewards, self.config.gamma));
            }
        }

        let s = Matrix::from_rows(&states)?;
        let a = Matrix::from_rows(&actions)?;
        let mut q_mean = vec![0.0; labels.len()];
        for k in 0..n {
            for (m, q) in q_mean.iter_mut().zip(self.agent.critic_values(k, &s, &a)?) {
                *m += q / n as f64;
            }
        }
        let knn_state_entropy = self.visitation_entropy()?;
        let (discriminator_nll, _) = self.discriminator.nll_and_grad(&s, &a, &labels)?;
        let discriminator_accuracy = self.discriminator.accuracy(&s, &a, &labels)?;

        Ok(MetricsRecord {
            schema_version: SCHEMA_VERSION,
            step: self.step,
            ensemble_mean_return: policy_returns.iter().sum::<f64>() / n as f64,
            policy_returns,
            estimation_bias: estimation_bias(&q_mean, &mc_returns),
            knn_state_entropy,
            discriminator_nll,
            discriminator_accuracy,
            selected_index: self.selected_index,
            behavior_histogram: self.behavior_histogram.clone(),
        })
    }

    /// Nearest-neighbor entropy of the distinct states collected by the behavior
    /// ensemble over the most recent `min(eval_period, VISITATION_WINDOW)` env steps.
    /// `None` until enough distinct states exist.
    pub fn visitation_entropy(&self) -> Result<Option<f64>> {
        let window = (self.config.eval_period as usize).min(VISITATION_WINDOW);
        let recent = self.replay.recent(window);
        let states: Vec<Vec<f64>> = recent.iter().map(|t| t.state.clone()).collect();
        let labels: Vec<usize> = recent.iter().map(|t| t.z).collect();
        let cloud = SampleCloud::labeled(&states, &labels)?.dedup();
        if cloud.len() <= DEFAULT_K {
            return Ok(None);
        }
        knn_entropy(&cloud, DEFAULT_K).map(Some)
    }

    /// States visited by noiseless rollouts of each sub-policy, labeled by sub-policy.
    pub fn rollout_states(&self, episodes: usize) -> Result<SampleCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step + 1);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for k in 0..self.config.ensemble_n {
            for _ in 0..episodes {
                let mut ep = Episode::start(&self.env, rng.random());
                while !ep.done {
                    let a = self.agent.policy_action(k, &ep.state)?;
                    points.push(ep.state.clone());
                    labels.push(k);
                    ep.step(&self.env, &a)?;
                }
            }
        }
        SampleCloud::labeled(&points, &labels)
    }
}
