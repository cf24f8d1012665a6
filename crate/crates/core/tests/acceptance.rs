//! Acceptance suite. Runs without the libtest harness so every criterion prints one
//! PASS/FAIL line even when output capture is on. Pass substrings as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- c5 c9`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teen::analysis::{gaussian_min_of_two_mean, BaseDistribution};
use teen::bias_probe::{bias_probe, median};
use teen::checkpoint;
use teen::config::TrainerConfig;
use teen::discriminator::Discriminator;
use teen::ensemble::{AgentConfig, EnsembleAgent};
use teen::envs::{Env, EnvKind, EnvSpec};
use teen::metrics::append_record;
use teen::ndmath::{Gradient, Matrix, ParamSet};
use teen::trainer::{actor_cotangent, Trainer};
use teen::verify::{identity_claims, knn_calibration_claim, order_statistic_claims, variational_claims, Claim};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn claims_outcome(claims: &[Claim]) -> Outcome {
    Outcome::new(
        claims.iter().all(|c| c.passed),
        claims
            .iter()
            .map(|c| format!("{}={}", c.id, if c.passed { "ok" } else { "fail" }))
            .collect::<Vec<_>>()
            .join(" "),
    )
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_CONFIGS: usize = 24;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-10)
}

fn grad_vec(g: &Gradient) -> Vec<f64> {
    g.values().copied().collect()
}

/// Central differences of `f` with respect to every entry of `params`.
fn fd_params(params: &ParamSet, f: impl Fn(&ParamSet) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.num_params())
        .map(|idx| {
            let orig = *p.values().nth(idx).unwrap();
            *p.values_mut().nth(idx).unwrap() = orig + FD_STEP;
            let up = f(&p);
            *p.values_mut().nth(idx).unwrap() = orig - FD_STEP;
            let down = f(&p);
            *p.values_mut().nth(idx).unwrap() = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

struct GradCase {
    agent: EnsembleAgent,
    disc: Discriminator,
    states: Matrix,
    actions: Matrix,
    labels: Vec<usize>,
    targets: Vec<f64>,
    k: usize,
    alpha: f64,
    eps: f64,
}

fn grad_case(rng: &mut ChaCha8Rng) -> GradCase {
    let sd = rng.random_range(1..=4);
    let ad = rng.random_range(1..=3);
    let low: Vec<f64> = (0..ad).map(|_| rng.random_range(-2.0..-0.5)).collect();
    let high: Vec<f64> = (0..ad).map(|_| rng.random_range(0.5..2.0)).collect();
    let spec = EnvSpec {
        state_dim: sd,
        action_dim: ad,
        action_low: low.clone(),
        action_high: high.clone(),
        max_episode_steps: 1,
        discount: 0.99,
    };
    let n = rng.random_range(2..=5);
    let hidden = rng.random_range(3..=12);
    let cfg = AgentConfig {
        ensemble_n: n,
        target_m: 1,
        hidden,
        gamma: 0.99,
        lr_actor: 3e-4,
        lr_critic: 3e-4,
    };
    let agent = EnsembleAgent::new(&spec, &cfg, rng).unwrap();
    let disc = Discriminator::new(sd, ad, n, hidden, 3e-4, rng);
    let b = rng.random_range(1..=8);
    let states = random_matrix(b, sd, -1.5, 1.5, rng);
    let mut actions = Matrix::zeros(b, ad);
    for r in 0..b {
        for c in 0..ad {
            actions.set(r, c, rng.random_range(low[c]..high[c]));
        }
    }
    GradCase {
        agent,
        disc,
        states,
        actions,
        labels: (0..b).map(|_| rng.random_range(0..n)).collect(),
        targets: (0..b).map(|_| rng.random_range(-3.0..3.0)).collect(),
        k: rng.random_range(0..n),
        alpha: rng.random_range(0.05..1.0),
        // Below 1/N so most rows sit inside the clip and the regularizer path is live.
        eps: rng.random_range(0.005..0.5 / n as f64),
    }
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_actor, mut worst_critic, mut worst_disc, mut worst_reg) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let mut live_rows = 0;
    for _ in 0..GRAD_CONFIGS {
        let c = grad_case(&mut rng);

        // Critic: mean squared TD error.
        let input = Matrix::hconcat(&c.states, &c.actions).unwrap();
        let k = c.k;
        let (_, g) = c.agent.critic_loss_and_grad(k, &input, &c.targets).unwrap();
        let fd = fd_params(&c.agent.critics[k], |p| {
            let mut a = c.agent.clone();
            a.critics[k] = p.clone();
            a.critic_loss_and_grad(k, &input, &c.targets).unwrap().0
        });
        worst_critic = worst_critic.max(rel_err(&grad_vec(&g), &fd));

        // Discriminator: cross-entropy.
        let (_, g) = c.disc.nll_and_grad(&c.states, &c.actions, &c.labels).unwrap();
        let fd = fd_params(&c.disc.params, |p| {
            let mut d = c.disc.clone();
            d.params = p.clone();
            d.nll_and_grad(&c.states, &c.actions, &c.labels).unwrap().0
        });
        worst_disc = worst_disc.max(rel_err(&grad_vec(&g), &fd));

        // Regularizer action gradient.
        let (values, reg_grad) = c.disc.regularizer_batch(&c.states, &c.actions, k, c.eps).unwrap();
        for (r, value) in values.iter().enumerate() {
            let q = value.exp();
            if q <= c.eps + 1e-6 || q >= 1.0 - c.eps - 1e-6 {
                continue;
            }
            live_rows += 1;
            let mut numeric = Vec::new();
            for col in 0..c.actions.cols() {
                let eval = |delta: f64| {
                    let mut act = c.actions.row(r).to_vec();
                    act[col] += delta;
                    c.disc.regularizer_value_and_action_grad(c.states.row(r), &act, k, c.eps).unwrap().0
                };
                numeric.push((eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
            }
            worst_reg = worst_reg.max(rel_err(reg_grad.row(r), &numeric));
        }

        // Actor: full objective through the critic and the regularizer.
        let (alpha, eps) = (c.alpha, c.eps);
        let (trace, cot, _) = actor_cotangent(&c.agent, &c.disc, k, &c.states, alpha, eps).unwrap();
        let analytic: Vec<f64> = grad_vec(&c.agent.actor_gradient(k, &trace, &cot).unwrap());
        let fd = fd_params(&c.agent.actors[k], |p| {
            let mut a = c.agent.clone();
            a.actors[k] = p.clone();
            -actor_cotangent(&a, &c.disc, k, &c.states, alpha, eps).unwrap().2
        });
        worst_actor = worst_actor.max(rel_err(&analytic, &fd));
    }
    let worst = worst_actor.max(worst_critic).max(worst_disc).max(worst_reg);
    Outcome::new(
        worst < GRAD_REL_TOL && live_rows > 0,
        format!(
            "{GRAD_CONFIGS} configs, max rel err actor {worst_actor:.2e} critic {worst_critic:.2e} \
             discriminator {worst_disc:.2e} regularizer {worst_reg:.2e} ({live_rows} unclipped rows), tol {GRAD_REL_TOL:e}"
        ),
    )
}

// ---------------------------------------------------------------- exact identities

fn criterion_identities() -> Outcome {
    claims_outcome(&identity_claims(&mut ChaCha8Rng::seed_from_u64(2)))
}

fn criterion_variational() -> Outcome {
    claims_outcome(&variational_claims(&mut ChaCha8Rng::seed_from_u64(3)).unwrap())
}

fn criterion_order_statistics() -> Outcome {
    let claims = order_statistic_claims(&mut ChaCha8Rng::seed_from_u64(4), 1_000_000);
    let mut out = claims_outcome(&claims);
    let g2 = &claims[1].detail;
    out.detail += &format!(
        " ({} bases x N in 2,5,10; gaussian N=2 estimate {:.4} vs {:.4})",
        BaseDistribution::ALL.len(),
        g2["estimate"].as_f64().unwrap(),
        gaussian_min_of_two_mean()
    );
    out
}

fn criterion_knn_calibration() -> Outcome {
    let claim = knn_calibration_claim(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    Outcome::new(
        claim.passed,
        format!(
            "unit square {:.4} (truth 0), gaussian 2-D {:.4} (truth {:.4}), tol 0.05",
            claim.detail["unit_square"]["estimate"].as_f64().unwrap(),
            claim.detail["gaussian_2d"]["estimate"].as_f64().unwrap(),
            claim.detail["gaussian_2d"]["truth"].as_f64().unwrap()
        ),
    )
}

// ---------------------------------------------------------------- desk-scale training

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Reduced network and batch sizes so the desk experiments fit the runtime budget
/// on one core. Everything else keeps the default hyperparameters.
fn desk(env: EnvKind, hidden: usize) -> TrainerConfig {
    TrainerConfig {
        env,
        hidden,
        batch_size: 64,
        warmup_steps: 1000,
        buffer_capacity: 100_000,
        ..TrainerConfig::default()
    }
}

fn criterion_bias() -> Outcome {
    let base = TrainerConfig {
        total_steps: 50_000,
        eval_episodes: 100,
        ..desk(EnvKind::OneStepBandit, 32)
    };
    let res = bias_probe(&base, &[(10, 2), (10, 1), (1, 1)], &SEEDS).unwrap();
    let (teen, teen_m1, single) = (res[0].median_bias, res[1].median_bias, res[2].median_bias);
    Outcome::new(
        teen < single && teen_m1 >= teen,
        format!("median bias (N=10,M=2) {teen:.4}, (N=10,M=1) {teen_m1:.4}, (N=1,M=1) {single:.4}"),
    )
}

fn criterion_diversity() -> Outcome {
    let base = TrainerConfig {
        total_steps: 100_000,
        eval_period: 100_000,
        eval_episodes: 2,
        recurrent_interval: 1000,
        ..desk(EnvKind::FourGoalPointMass, 32)
    };
    let mut entropy = [Vec::new(), Vec::new()];
    let mut accuracy = Vec::new();
    for seed in SEEDS {
        for (slot, alpha) in [0.2, 0.0].into_iter().enumerate() {
            let mut t = Trainer::new(TrainerConfig { alpha, seed, ..base.clone() }).unwrap();
            let mut last = None;
            t.run_until(base.total_steps, |_, rec| {
                last = Some(rec.clone());
                Ok(())
            })
            .unwrap();
            let rec = last.expect("one record at the end");
            entropy[slot].push(rec.knn_state_entropy.unwrap_or(f64::NEG_INFINITY));
            if slot == 0 {
                accuracy.push(rec.discriminator_accuracy);
            }
        }
    }
    let (h_alpha, h_zero, acc) = (median(&entropy[0]), median(&entropy[1]), median(&accuracy));
    let chance = 1.0 / base.ensemble_n as f64;
    Outcome::new(
        h_alpha > h_zero && acc >= 2.0 * chance,
        format!(
            "median entropy alpha=0.2 {h_alpha:.3} vs alpha=0 {h_zero:.3}; median discriminator accuracy {acc:.3} (chance {chance})"
        ),
    )
}

fn criterion_learning() -> Outcome {
    let base = TrainerConfig {
        total_steps: 100_000,
        eval_period: 5000,
        eval_episodes: 1,
        recurrent_interval: 1000,
        ..desk(EnvKind::ChainWalk, 64)
    };
    let max_return = Env::new(EnvKind::ChainWalk).max_episode_return().unwrap();
    let goal = 0.9 * max_return;
    let mut best = Vec::new();
    let mut reached_at = Vec::new();
    for seed in SEEDS {
        let mut t = Trainer::new(TrainerConfig { seed, ..base.clone() }).unwrap();
        let mut top = f64::NEG_INFINITY;
        while t.step < base.total_steps && top < goal {
            if let Some(rec) = t.advance().unwrap().record {
                top = top.max(rec.ensemble_mean_return);
            }
        }
        best.push(top);
        reached_at.push(if top >= goal { t.step.to_string() } else { "-".into() });
    }
    let med = median(&best);
    Outcome::new(
        med >= goal,
        format!(
            "median best ensemble-mean return {med:.1} vs 90% of {max_return} = {goal}; steps to reach per seed [{}]",
            reached_at.join(", ")
        ),
    )
}

fn criterion_reproducibility() -> Outcome {
    let cfg = TrainerConfig {
        ensemble_n: 4,
        hidden: 16,
        batch_size: 32,
        warmup_steps: 200,
        recurrent_interval: 300,
        total_steps: 2000,
        eval_period: 500,
        eval_episodes: 2,
        buffer_capacity: 10_000,
        seed: 11,
        ..TrainerConfig::default()
    };
    let run = |t: &mut Trainer, until: u64, out: &mut Vec<u8>| {
        t.run_until(until, |_, rec| append_record(out, rec)).unwrap();
    };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut ta = Trainer::new(cfg.clone()).unwrap();
    run(&mut ta, cfg.total_steps, &mut a);
    let mut tb = Trainer::new(cfg.clone()).unwrap();
    run(&mut tb, cfg.total_steps, &mut b);
    let identical = a == b && checkpoint::encode(&ta) == checkpoint::encode(&tb);

    let mut c = Vec::new();
    let mut tc = Trainer::new(cfg.clone()).unwrap();
    run(&mut tc, 1250, &mut c);
    let mut resumed = checkpoint::decode(&checkpoint::encode(&tc)).unwrap();
    run(&mut resumed, cfg.total_steps, &mut c);
    let resumed_ok = a == c && checkpoint::encode(&ta) == checkpoint::encode(&resumed);
    Outcome::new(
        identical && resumed_ok && !a.is_empty(),
        format!(
            "same seed byte-identical: {identical}; resume at step 1250 matches uninterrupted: {resumed_ok} ({} metric bytes)",
            a.len()
        ),
    )
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    ("c1", "gradient correctness", criterion_gradients),
    ("c2", "entropy and mutual-information identities", criterion_identities),
    ("c3", "variational lower bound", criterion_variational),
    ("c4", "order-statistic bounds", criterion_order_statistics),
    ("c5", "estimation bias control", criterion_bias),
    ("c6", "diversity effect", criterion_diversity),
    ("c7", "learning sanity", criterion_learning),
    ("c8", "reproducibility", criterion_reproducibility),
    ("c9", "knn entropy calibration", criterion_knn_calibration),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let out = check();
        println!(
            "{id} {name}: {} [{:.1}s] {}",
            if out.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            out.detail
        );
        if !out.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
