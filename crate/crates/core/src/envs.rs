//! Deterministic toy continuous-control tasks.
//!
//! * `four-goal-pm`: a point mass in `[-1, 1]^2` with four symmetric goal discs, so
//!   distinct optimal behaviours exist and trajectory diversity is measurable.
//! * `one-step-bandit`: a contextual bandit that terminates after one step, so the
//!   optimal action value equals the immediate reward.
//! * `chain-walk`: a 1-D walk moving up to one unit per step, rewarded by its
//!   position increment. Unit steps keep per-step rewards of order one, the scale
//!   at which the default regularizer weight is meant to operate.
//!
//! Dynamics are exposed as a pure [`Env::transition`]; [`Episode`] adds the time
//! limit and the step-after-terminal check.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub const DISCOUNT: f64 = 0.99;

const PM_STEP: f64 = 0.05;
const PM_GOAL: f64 = 0.9;
const PM_GOAL_RADIUS: f64 = 0.1;
const PM_ACTION_COST: f64 = 0.01;
const PM_HORIZON: usize = 100;

const CHAIN_STEP: f64 = 1.0;
const CHAIN_BOUND: f64 = 200.0;
const CHAIN_HORIZON: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    pub discount: f64,
}

impl EnvSpec {
    /// Half-width of the action box per dimension.
    pub fn action_scale(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    pub fn action_center(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(l, h)| 0.5 * (h + l))
            .collect()
    }

    pub fn clip_action(&self, action: &mut [f64]) {
        for ((a, l), h) in action.iter_mut().zip(&self.action_low).zip(&self.action_high) {
            *a = a.clamp(*l, *h);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "four-goal-pm")]
    FourGoalPointMass,
    #[serde(rename = "one-step-bandit")]
    OneStepBandit,
    #[serde(rename = "chain-walk")]
    ChainWalk,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [
        EnvKind::FourGoalPointMass,
        EnvKind::OneStepBandit,
        EnvKind::ChainWalk,
    ];

    pub fn id(self) -> &'static str {
        match self {
            EnvKind::FourGoalPointMass => "four-goal-pm",
            EnvKind::OneStepBandit => "one-step-bandit",
            EnvKind::ChainWalk => "chain-walk",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| {
                let ids: Vec<_> = Self::ALL.iter().map(|k| k.id()).collect();
                Error::Config(format!("unknown environment `{id}`, expected one of {ids:?}"))
            })
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// A toy environment. Value-like: copies are independent.
#[derive(Clone, Debug, PartialEq)]
pub struct Env {
    kind: EnvKind,
    spec: EnvSpec,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        let (state_dim, action_dim, horizon) = match kind {
            EnvKind::FourGoalPointMass => (2, 2, PM_HORIZON),
            EnvKind::OneStepBandit => (1, 1, 1),
            EnvKind::ChainWalk => (1, 1, CHAIN_HORIZON),
        };
        Self {
            kind,
            spec: EnvSpec {
                state_dim,
                action_dim,
                action_low: vec![-1.0; action_dim],
                action_high: vec![1.0; action_dim],
                max_episode_steps: horizon,
                discount: DISCOUNT,
            },
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn goals() -> [[f64; 2]; 4] {
        [
            [PM_GOAL, PM_GOAL],
            [PM_GOAL, -PM_GOAL],
            [-PM_GOAL, PM_GOAL],
            [-PM_GOAL, -PM_GOAL],
        ]
    }

    /// Start state; identical seeds give identical states.
    pub fn reset(&self, seed: u64) -> Vec<f64> {
        match self.kind {
            EnvKind::FourGoalPointMass => vec![0.0, 0.0],
            EnvKind::ChainWalk => vec![0.0],
            EnvKind::OneStepBandit => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                vec![rng.random_range(-1.0..=1.0)]
            }
        }
    }

    /// Pure dynamics. Out-of-box actions are clipped. `truncated` is always false here;
    /// the time limit is enforced by [`Episode`].
    pub fn transition(&self, state: &[f64], action: &[f64]) -> Result<StepResult> {
        if state.len() != self.spec.state_dim {
            return Err(shape_err("state", self.spec.state_dim, state.len()));
        }
        if action.len() != self.spec.action_dim {
            return Err(shape_err("action", self.spec.action_dim, action.len()));
        }
        let mut a = action.to_vec();
        self.spec.clip_action(&mut a);
        let result = match self.kind {
            EnvKind::FourGoalPointMass => {
                let next: Vec<f64> = state
                    .iter()
                    .zip(&a)
                    .map(|(s, u)| (s + PM_STEP * u).clamp(-1.0, 1.0))
                    .collect();
                let reached = Self::goals().iter().any(|g| {
                    let dx = next[0] - g[0];
                    let dy = next[1] - g[1];
                    (dx * dx + dy * dy).sqrt() < PM_GOAL_RADIUS
                });
                let reward = if reached {
                    1.0
                } else {
                    -PM_ACTION_COST * a.iter().map(|u| u * u).sum::<f64>()
                };
                StepResult {
                    next_state: next,
                    reward,
                    terminal: reached,
                    truncated: false,
                }
            }
            EnvKind::OneStepBandit => StepResult {
                next_state: state.to_vec(),
                reward: bandit_reward(state[0], a[0]),
                terminal: true,
                truncated: false,
            },
            EnvKind::ChainWalk => {
                let next = (state[0] + CHAIN_STEP * a[0]).clamp(-CHAIN_BOUND, CHAIN_BOUND);
                StepResult {
                    next_state: vec![next],
                    reward: next - state[0],
                    terminal: false,
                    truncated: false,
                }
            }
        };
        Ok(result)
    }

    /// Largest achievable undiscounted episode return, where it has a closed form.
    pub fn max_episode_return(&self) -> Option<f64> {
        match self.kind {
            EnvKind::ChainWalk => Some((CHAIN_STEP * CHAIN_HORIZON as f64).min(CHAIN_BOUND)),
            EnvKind::OneStepBandit => Some(0.0),
            EnvKind::FourGoalPointMass => None,
        }
    }

    /// Reward range `(min, max)` over all states and in-box actions.
    pub fn reward_bounds(&self) -> (f64, f64) {
        match self.kind {
            EnvKind::FourGoalPointMass => (-2.0 * PM_ACTION_COST, 1.0),
            EnvKind::OneStepBandit => (-2.25, 0.0),
            EnvKind::ChainWalk => (-CHAIN_STEP, CHAIN_STEP),
        }
    }
}

/// Exact reward of the bandit, which is also its optimal action value.
pub fn bandit_reward(context: f64, action: f64) -> f64 {
    let best = (PI * context).sin() / 2.0;
    -(action - best) * (action - best)
}

/// One running episode: current state, elapsed steps, and whether it has ended.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub state: Vec<f64>,
    pub steps: usize,
    pub done: bool,
}

impl Episode {
    pub fn start(env: &Env, seed: u64) -> Self {
        Self {
            state: env.reset(seed),
            steps: 0,
            done: false,
        }
    }

    pub fn step(&mut self, env: &Env, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called after the episode ended".into()));
        }
        let mut res = env.transition(&self.state, action)?;
        self.steps += 1;
        if !res.terminal && self.steps >= env.spec().max_episode_steps {
            res.truncated = true;
        }
        self.done = res.terminal || res.truncated;
        self.state.clone_from(&res.next_state);
        Ok(res)
    }
}
