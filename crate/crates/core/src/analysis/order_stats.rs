//! Order statistics of i.i.d. samples and a Monte-Carlo check of the
//! min-of-N / mean-of-N bounds behind the ensemble target.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

/// `F_{1:N}(x) = 1 - (1 - F(x))^N`.
pub fn order_stat_min_cdf(cdf: f64, n: u32) -> f64 {
    1.0 - (1.0 - cdf).powi(n as i32)
}

/// `f_{1:N}(x) = N f(x) (1 - F(x))^(N-1)`.
pub fn order_stat_min_pdf(pdf: f64, cdf: f64, n: u32) -> f64 {
    n as f64 * pdf * (1.0 - cdf).powi(n as i32 - 1)
}

/// `F_{N:N}(x) = F(x)^N`.
pub fn order_stat_max_cdf(cdf: f64, n: u32) -> f64 {
    cdf.powi(n as i32)
}

/// `f_{N:N}(x) = N f(x) F(x)^(N-1)`.
pub fn order_stat_max_pdf(pdf: f64, cdf: f64, n: u32) -> f64 {
    n as f64 * pdf * cdf.powi(n as i32 - 1)
}

/// `E[min(X1, X2)]` for standard normals: `-1/sqrt(pi)`.
pub fn gaussian_min_of_two_mean() -> f64 {
    -1.0 / std::f64::consts::PI.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseDistribution {
    /// Standard normal.
    Gaussian,
    /// Uniform on `[0, 1]`.
    Uniform,
    /// Rate-1 exponential.
    Exponential,
}

impl BaseDistribution {
    pub const ALL: [BaseDistribution; 3] = [Self::Gaussian, Self::Uniform, Self::Exponential];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Uniform => "uniform",
            Self::Exponential => "exponential",
        }
    }

    pub fn mean(self) -> f64 {
        match self {
            Self::Gaussian => 0.0,
            Self::Uniform => 0.5,
            Self::Exponential => 1.0,
        }
    }

    pub fn std_dev(self) -> f64 {
        match self {
            Self::Gaussian => 1.0,
            Self::Uniform => (1.0f64 / 12.0).sqrt(),
            Self::Exponential => 1.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian => rng.sample(StandardNormal),
            Self::Uniform => rng.random(),
            Self::Exponential => rng.sample(Exp1),
        }
    }

    /// `mu - (N-1) sigma / sqrt(2N-1)`.
    pub fn min_lower_bound(self, n: u32) -> f64 {
        self.mean() - (n as f64 - 1.0) * self.std_dev() / (2.0 * n as f64 - 1.0).sqrt()
    }
}

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub claim: String,
    pub estimate: f64,
    pub reference: f64,
    /// Allowed slack (4 standard errors).
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderStatReport {
    pub distribution: BaseDistribution,
    pub n: u32,
    pub samples: usize,
    pub lower_bound: f64,
    pub min_n: McEstimate,
    pub min_n_plus_one: McEstimate,
    pub mean_of_n: McEstimate,
    pub var_of_mean: McEstimate,
    pub checks: Vec<BoundCheck>,
}

impl OrderStatReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const SE_MULTIPLIER: f64 = 4.0;

#[derive(Default)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn estimate(&self) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        McEstimate {
            mean,
            std_err: (var / n).sqrt(),
        }
    }
}

/// Monte-Carlo check of `mu - (N-1) sigma / sqrt(2N-1) <= E[X_{1:N}] <= mu`,
/// `E[X_{1:N+1}] <= E[X_{1:N}]`, `E[mean] = mu` and `Var[mean] = sigma^2 / N`.
pub fn verify_order_statistics<R: Rng + ?Sized>(
    dist: BaseDistribution,
    n: u32,
    samples: usize,
    rng: &mut R,
) -> OrderStatReport {
    assert!(n >= 1 && samples >= 2, "need N >= 1 and at least two samples");
    let mut mins = Moments::default();
    let mut means: Vec<f64> = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut lo = f64::INFINITY;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = dist.sample(rng);
            lo = lo.min(x);
            sum += x;
        }
        mins.push(lo);
        means.push(sum / n as f64);
    }
    // Independent draws for N + 1 so the two estimates have independent errors.
    let mut mins_next = Moments::default();
    for _ in 0..samples {
        mins_next.push((0..=n).map(|_| dist.sample(rng)).fold(f64::INFINITY, f64::min));
    }

    let min_n = mins.estimate();
    let min_n_plus_one = mins_next.estimate();
    let mut mean_m = Moments::default();
    means.iter().for_each(|&x| mean_m.push(x));
    let mean_of_n = mean_m.estimate();

    // Sample variance of the means; its standard error from the fourth central moment.
    let s = samples as f64;
    let mu_hat = mean_of_n.mean;
    let (m2, m4) = means.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d2 = (x - mu_hat) * (x - mu_hat);
        (a + d2, b + d2 * d2)
    });
    let (m2, m4) = (m2 / s, m4 / s);
    let var_of_mean = McEstimate {
        mean: m2 * s / (s - 1.0),
        std_err: ((m4 - m2 * m2).max(0.0) / s).sqrt(),
    };

    let mu = dist.mean();
    let sigma2 = dist.std_dev().powi(2);
    let lower_bound = dist.min_lower_bound(n);
    let tol = |se: f64| SE_MULTIPLIER * se;
    let joint_se = (min_n.std_err.powi(2) + min_n_plus_one.std_err.powi(2)).sqrt();
    let checks = vec![
        BoundCheck {
            claim: "min-lower-bound".into(),
            estimate: min_n.mean,
            reference: lower_bound,
            tolerance: tol(min_n.std_err),
            passed: min_n.mean + tol(min_n.std_err) >= lower_bound,
        },
        BoundCheck {
            claim: "min-upper-bound".into(),
            estimate: min_n.mean,
            reference: mu,
            tolerance: tol(min_n.std_err),
            passed: min_n.mean - tol(min_n.std_err) <= mu,
        },
        BoundCheck {
            claim: "min-monotone-in-n".into(),
            estimate: min_n_plus_one.mean,
            reference: min_n.mean,
            tolerance: tol(joint_se),
            passed: min_n_plus_one.mean <= min_n.mean + tol(joint_se),
        },
        BoundCheck {
            claim: "mean-unbiased".into(),
            estimate: mean_of_n.mean,
            reference: mu,
            tolerance: tol(mean_of_n.std_err),
            passed: (mean_of_n.mean - mu).abs() <= tol(mean_of_n.std_err),
        },
        BoundCheck {
            claim: "mean-variance".into(),
            estimate: var_of_mean.mean,
            reference: sigma2 / n as f64,
            tolerance: tol(var_of_mean.std_err),
            passed: (var_of_mean.mean - sigma2 / n as f64).abs() <= tol(var_of_mean.std_err),
        },
    ];
    OrderStatReport {
        distribution: dist,
        n,
        samples,
        lower_bound,
        min_n,
        min_n_plus_one,
        mean_of_n,
        var_of_mean,
        checks,
    }
}
