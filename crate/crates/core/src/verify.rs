//! Machine-readable pass/fail report over every mathematical claim the analysis
//! module can check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    check_decomposition, check_mi_symmetry, gaussian_min_of_two_mean, knn_entropy, variational_bound,
    verify_order_statistics, BaseDistribution, DiscreteJoint, SampleCloud, DEFAULT_K,
};
use crate::discriminator::softmax;
use crate::error::Result;

pub const IDENTITY_TOL: f64 = 1e-12;
pub const EQUALITY_TOL: f64 = 1e-9;
pub const RANDOM_JOINTS: usize = 100;
pub const ORDER_STAT_NS: [u32; 3] = [2, 5, 10];
pub const GAUSSIAN_MIN_TOL: f64 = 0.01;
pub const KNN_CALIBRATION_TOL: f64 = 0.05;
pub const KNN_CALIBRATION_POINTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Claim {
    pub id: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MathReport {
    pub seed: u64,
    pub samples: usize,
    pub claims: Vec<Claim>,
}

impl MathReport {
    pub fn passed(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }

    pub fn claim(&self, id: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.id == id)
    }
}

pub const CLAIM_IDS: [&str; 7] = [
    "entropy-decomposition",
    "mi-symmetry",
    "variational-bound",
    "variational-equality",
    "order-statistics",
    "gaussian-min-of-two",
    "knn-entropy-calibration",
];

fn random_joint<R: Rng>(rng: &mut R, uniform_z: bool) -> DiscreteJoint {
    let s = rng.random_range(1..=6);
    let a = rng.random_range(1..=4);
    let n = rng.random_range(2..=6);
    if uniform_z {
        DiscreteJoint::random_uniform_z(s, a, n, rng)
    } else {
        DiscreteJoint::random(s, a, n, rng)
    }
}

/// Random discriminator: softmax of Gaussian logits per cell, at a random temperature.
fn random_posterior_model<R: Rng>(cells: usize, classes: usize, rng: &mut R) -> Vec<f64> {
    let temp: f64 = rng.random_range(0.1..5.0);
    let mut q = Vec::with_capacity(cells * classes);
    for _ in 0..cells {
        let mut row: Vec<f64> = (0..classes).map(|_| temp * rng.sample::<f64, _>(StandardNormal)).collect();
        softmax(&mut row);
        q.extend(row);
    }
    q
}

/// Exact identities on random discrete joints.
pub fn identity_claims(rng: &mut ChaCha8Rng) -> Vec<Claim> {
    let mut worst_dec: f64 = 0.0;
    let mut worst_mi: f64 = 0.0;
    for j in 0..RANDOM_JOINTS {
        let joint = random_joint(rng, j % 2 == 0);
        worst_dec = worst_dec.max(check_decomposition(&joint).residual);
        worst_mi = worst_mi.max(check_mi_symmetry(&joint).residual);
    }
    vec![
        Claim {
            id: "entropy-decomposition".into(),
            passed: worst_dec < IDENTITY_TOL,
            detail: json!({ "joints": RANDOM_JOINTS, "max_residual": worst_dec, "tolerance": IDENTITY_TOL }),
        },
        Claim {
            id: "mi-symmetry".into(),
            passed: worst_mi < IDENTITY_TOL,
            detail: json!({ "joints": RANDOM_JOINTS, "max_residual": worst_mi, "tolerance": IDENTITY_TOL }),
        },
    ]
}

/// Discriminator lower bound: holds for random models, tight at the true posterior.
pub fn variational_claims(rng: &mut ChaCha8Rng) -> Result<Vec<Claim>> {
    let mut worst_violation = f64::NEG_INFINITY;
    let mut min_gap = f64::INFINITY;
    let mut worst_equality: f64 = 0.0;
    for _ in 0..RANDOM_JOINTS {
        let joint = random_joint(rng, true);
        let q = random_posterior_model(joint.cells(), joint.classes(), rng);
        let vb = variational_bound(&joint, &q)?;
        worst_violation = worst_violation.max(vb.bound - vb.mutual_information);
        min_gap = min_gap.min(vb.gap);
        let exact = variational_bound(&joint, &joint.posterior())?;
        worst_equality = worst_equality.max(exact.gap.abs());
    }
    Ok(vec![
        Claim {
            id: "variational-bound".into(),
            // Rounding slack only: the bound must never exceed the mutual information.
            passed: worst_violation <= IDENTITY_TOL,
            detail: json!({ "models": RANDOM_JOINTS, "max_bound_minus_mi": worst_violation, "min_gap": min_gap }),
        },
        Claim {
            id: "variational-equality".into(),
            passed: worst_equality < EQUALITY_TOL,
            detail: json!({ "joints": RANDOM_JOINTS, "max_abs_gap": worst_equality, "tolerance": EQUALITY_TOL }),
        },
    ])
}

/// Min-of-N bounds, monotonicity, and the variance law by Monte Carlo.
pub fn order_statistic_claims(rng: &mut ChaCha8Rng, samples: usize) -> Vec<Claim> {
    let mut reports = Vec::new();
    for dist in BaseDistribution::ALL {
        for n in ORDER_STAT_NS {
            reports.push(verify_order_statistics(dist, n, samples, rng));
        }
    }
    let gaussian2 = verify_order_statistics(BaseDistribution::Gaussian, 2, samples, rng);
    let closed = gaussian_min_of_two_mean();
    let ci = 4.0 * gaussian2.min_n.std_err;
    vec![
        Claim {
            id: "order-statistics".into(),
            passed: reports.iter().all(|r| r.passed()),
            detail: serde_json::to_value(&reports).expect("reports serialize"),
        },
        Claim {
            id: "gaussian-min-of-two".into(),
            passed: (gaussian2.min_n.mean - closed).abs() < GAUSSIAN_MIN_TOL,
            detail: json!({
                "estimate": gaussian2.min_n.mean,
                "ci": [gaussian2.min_n.mean - ci, gaussian2.min_n.mean + ci],
                "closed_form": closed,
                "bound": [gaussian2.lower_bound, 0.0],
                "tolerance": GAUSSIAN_MIN_TOL,
            }),
        },
    ]
}

/// Nearest-neighbor entropy against the unit square and the standard 2-D Gaussian.
pub fn knn_calibration_claim(rng: &mut ChaCha8Rng) -> Result<Claim> {
    let n = KNN_CALIBRATION_POINTS;
    let square: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
    let gauss: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    let h_square = knn_entropy(&SampleCloud::from_points(&square)?, DEFAULT_K)?;
    let h_gauss = knn_entropy(&SampleCloud::from_points(&gauss)?, DEFAULT_K)?;
    let truth_gauss = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    Ok(Claim {
        id: "knn-entropy-calibration".into(),
        passed: h_square.abs() < KNN_CALIBRATION_TOL && (h_gauss - truth_gauss).abs() < KNN_CALIBRATION_TOL,
        detail: json!({
            "points": n,
            "unit_square": { "estimate": h_square, "truth": 0.0 },
            "gaussian_2d": { "estimate": h_gauss, "truth": truth_gauss },
            "tolerance": KNN_CALIBRATION_TOL,
        }),
    })
}

/// Runs every check. `samples` is the Monte-Carlo size per order-statistic check.
pub fn verify_math(seed: u64, samples: usize) -> Result<MathReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut claims = identity_claims(&mut rng);
    claims.extend(variational_claims(&mut rng)?);
    claims.extend(order_statistic_claims(&mut rng, samples));
    claims.push(knn_calibration_claim(&mut rng)?);
    Ok(MathReport { seed, samples, claims })
}
