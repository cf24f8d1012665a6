//! Final estimation bias across ensemble sizes and target subset sizes, over seeds.

use serde::Serialize;

use crate::config::TrainerConfig;
use crate::error::Result;
use crate::trainer::Trainer;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub ensemble_n: usize,
    pub target_m: usize,
    pub seeds: Vec<u64>,
    /// Final estimation bias per seed.
    pub biases: Vec<f64>,
    pub median_bias: f64,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Final estimation bias of one training run, evaluated after `total_steps`.
pub fn final_bias(config: &TrainerConfig) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.eval_period = cfg.total_steps;
    let mut t = Trainer::new(cfg.clone())?;
    t.run_until(cfg.total_steps, |_, _| Ok(()))?;
    Ok(t.evaluate(cfg.eval_episodes)?.estimation_bias)
}

/// Trains `base` with each `(N, M)` variant and seed and reports the final biases.
pub fn bias_probe(base: &TrainerConfig, variants: &[(usize, usize)], seeds: &[u64]) -> Result<Vec<ProbeResult>> {
    let mut out = Vec::with_capacity(variants.len());
    for &(n, m) in variants {
        let mut biases = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainerConfig {
                ensemble_n: n,
                target_m: m,
                seed,
                ..base.clone()
            };
            cfg.validate()?;
            biases.push(final_bias(&cfg)?);
        }
        out.push(ProbeResult {
            ensemble_n: n,
            target_m: m,
            seeds: seeds.to_vec(),
            median_bias: median(&biases),
            biases,
        });
    }
    Ok(out)
}
