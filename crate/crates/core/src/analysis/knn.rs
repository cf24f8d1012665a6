//! Nearest-neighbor estimators on sample clouds: Kozachenko–Leonenko entropy and
//! the Wang–Kulkarni–Verdú divergence.

use serde::Serialize;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 3;
/// Neighbor distances below this are treated as this (duplicate points).
pub const DISTANCE_FLOOR: f64 = 1e-12;
pub const MIN_CLOUD_POINTS: usize = 100;

/// Points of uniform dimension, each tagged with the sub-policy that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleCloud {
    dim: usize,
    coords: Vec<f64>,
    labels: Vec<usize>,
}

impl SampleCloud {
    pub fn new(dim: usize, coords: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("sample cloud dimension must be positive".into()));
        }
        if coords.len() != dim * labels.len() {
            return Err(Error::Validation(format!(
                "{} coordinates do not split into {} points of dimension {dim}",
                coords.len(),
                labels.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("sample cloud coordinate".into()));
        }
        Ok(Self { dim, coords, labels })
    }

    /// Unlabeled cloud (all labels 0).
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        Self::labeled(points, &vec![0; points.len()])
    }

    pub fn labeled(points: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let dim = points.first().map_or(1, Vec::len);
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::Validation(format!(
                "point of dimension {} in a cloud of dimension {dim}",
                p.len()
            )));
        }
        Self::new(dim, points.concat(), labels.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sub-clouds per label `0..classes`; points with larger labels are dropped.
    pub fn split_by_label(&self, classes: usize) -> Vec<SampleCloud> {
        let mut out: Vec<SampleCloud> = (0..classes)
            .map(|_| SampleCloud {
                dim: self.dim,
                coords: Vec::new(),
                labels: Vec::new(),
            })
            .collect();
        for (i, &z) in self.labels.iter().enumerate() {
            if let Some(c) = out.get_mut(z) {
                c.coords.extend_from_slice(self.point(i));
                c.labels.push(z);
            }
        }
        out
    }

    /// Copy with exact duplicate points removed (first occurrence kept).
    pub fn dedup(&self) -> SampleCloud {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(a.cmp(&b))
        });
        let mut keep = vec![false; self.len()];
        for (pos, &i) in order.iter().enumerate() {
            keep[i] = pos == 0 || self.point(order[pos - 1]) != self.point(i);
        }
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for i in (0..self.len()).filter(|&i| keep[i]) {
            coords.extend_from_slice(self.point(i));
            labels.push(self.labels[i]);
        }
        SampleCloud {
            dim: self.dim,
            coords,
            labels,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance from `query` to its k-th nearest point of `cloud`, skipping index `skip`.
fn kth_distance(query: &[f64], cloud: &SampleCloud, k: usize, skip: Option<usize>, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(
        (0..cloud.len())
            .filter(|&j| Some(j) != skip)
            .map(|j| sq_dist(query, cloud.point(j))),
    );
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    kth.sqrt().max(DISTANCE_FLOOR)
}

/// `ln` of the volume of the unit Euclidean ball in `d` dimensions.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

/// Kozachenko–Leonenko differential entropy estimate in nats.
pub fn knn_entropy(cloud: &SampleCloud, k: usize) -> Result<f64> {
    let n = cloud.len();
    if k == 0 || n <= k {
        return Err(Error::NotReady(format!(
            "entropy estimate with k = {k} needs more than {k} points, got {n}"
        )));
    }
    let d = cloud.dim();
    let mut scratch = Vec::with_capacity(n);
    let mean_log_r = (0..n)
        .map(|i| kth_distance(cloud.point(i), cloud, k, Some(i), &mut scratch).ln())
        .sum::<f64>()
        / n as f64;
    Ok(digamma(n as f64) - digamma(k as f64) + d as f64 * mean_log_r + ln_unit_ball_volume(d))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KlEstimate {
    /// Non-negative estimate.
    pub value: f64,
    pub raw: f64,
    /// True when the raw estimate was negative and got floored.
    pub clipped: bool,
}

impl KlEstimate {
    fn from_raw(raw: f64) -> Self {
        Self {
            value: raw.max(0.0),
            raw,
            clipped: raw < 0.0,
        }
    }
}

/// Nearest-neighbor estimate of `KL(P || Q)` from `p ~ P` and `q ~ Q`.
pub fn knn_kl_divergence(p: &SampleCloud, q: &SampleCloud, k: usize) -> Result<KlEstimate> {
    if p.dim() != q.dim() {
        return Err(Error::Validation(format!(
            "clouds of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let (n, m) = (p.len(), q.len());
    if k == 0 || n <= k || m < k {
        return Err(Error::NotReady(format!(
            "divergence estimate with k = {k} got clouds of {n} and {m} points"
        )));
    }
    let d = p.dim() as f64;
    let mut scratch = Vec::with_capacity(n.max(m));
    let sum: f64 = (0..n)
        .map(|i| {
            let x = p.point(i);
            let rho = kth_distance(x, p, k, Some(i), &mut scratch);
            let nu = kth_distance(x, q, k, None, &mut scratch);
            (nu / rho).ln()
        })
        .sum();
    Ok(KlEstimate::from_raw(d * sum / n as f64 + (m as f64 / (n - 1) as f64).ln()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyKlReport {
    /// `pairwise[a][b]` estimates `KL(rho(. | a) || rho(. | b))`; the diagonal is 0.
    pub pairwise: Vec<Vec<KlEstimate>>,
    /// `KL(rho(. | z) || rho)` against the pooled cloud.
    pub to_mixture: Vec<KlEstimate>,
    /// `sum_z p(z) KL(rho(. | z) || rho)` with `p(z)` the cloud-size share.
    pub mean_to_mixture: f64,
    pub any_clipped: bool,
}

/// Pairwise and to-mixture divergences between per-label clouds.
pub fn estimate_policy_kl(clouds: &[SampleCloud], k: usize) -> Result<PolicyKlReport> {
    if clouds.is_empty() {
        return Err(Error::NotReady("no clouds".into()));
    }
    if let Some((z, c)) = clouds.iter().enumerate().find(|(_, c)| c.len() < MIN_CLOUD_POINTS) {
        return Err(Error::NotReady(format!(
            "cloud {z} has {} points, at least {MIN_CLOUD_POINTS} required",
            c.len()
        )));
    }
    let n = clouds.len();
    let zero = KlEstimate::from_raw(0.0);
    let mut pairwise = vec![vec![zero; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                pairwise[a][b] = knn_kl_divergence(&clouds[a], &clouds[b], k)?;
            }
        }
    }

    let dim = clouds[0].dim();
    let total: usize = clouds.iter().map(SampleCloud::len).sum();
    let mut coords = Vec::with_capacity(total * dim);
    let mut offsets = Vec::with_capacity(n);
    for c in clouds {
        if c.dim() != dim {
            return Err(Error::Validation("clouds differ in dimension".into()));
        }
        offsets.push(coords.len() / dim);
        coords.extend_from_slice(&c.coords);
    }
    let pooled = SampleCloud {
        dim,
        coords,
        labels: vec![0; total],
    };

    // Each point is excluded from the pooled sample when it is the query.
    let mut scratch = Vec::with_capacity(total);
    let mut to_mixture = Vec::with_capacity(n);
    for (z, c) in clouds.iter().enumerate() {
        let sum: f64 = (0..c.len())
            .map(|i| {
                let x = c.point(i);
                let rho = kth_distance(x, c, k, Some(i), &mut scratch);
                let nu = kth_distance(x, &pooled, k, Some(offsets[z] + i), &mut scratch);
                (nu / rho).ln()
            })
            .sum();
        let m = (total - 1) as f64;
        let raw = dim as f64 * sum / c.len() as f64 + (m / (c.len() - 1) as f64).ln();
        to_mixture.push(KlEstimate::from_raw(raw));
    }
    let mean_to_mixture = clouds
        .iter()
        .zip(&to_mixture)
        .map(|(c, e)| c.len() as f64 / total as f64 * e.value)
        .sum();
    let any_clipped = to_mixture.iter().chain(pairwise.iter().flatten()).any(|e| e.clipped);
    Ok(PolicyKlReport {
        pairwise,
        to_mixture,
        mean_to_mixture,
        any_clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn uniform_square(n: usize, rng: &mut ChaCha8Rng) -> SampleCloud {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        SampleCloud::from_points(&pts).unwrap()
    }

    fn gaussian(n: usize, d: usize, shift: f64, rng: &mut ChaCha8Rng) -> SampleCloud {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        SampleCloud::from_points(&pts).unwrap()
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((ln_unit_ball_volume(1) - 2f64.ln()).abs() < 1e-12);
        assert!((ln_unit_ball_volume(2) - std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!((ln_unit_ball_volume(3) - (4.0 * std::f64::consts::PI / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_square_entropy_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = knn_entropy(&uniform_square(10_000, &mut rng), DEFAULT_K).unwrap();
        assert!(h.abs() < 0.05, "{h}");
    }

    #[test]
    fn gaussian_entropy_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = knn_entropy(&gaussian(10_000, 2, 0.0, &mut rng), DEFAULT_K).unwrap();
        let truth = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((h - truth).abs() < 0.05, "{h} vs {truth}");
    }

    #[test]
    fn scaling_shifts_entropy_by_d_ln_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cloud = uniform_square(2000, &mut rng);
        let c = 3.5;
        let scaled = SampleCloud::new(2, cloud.coords.iter().map(|x| x * c).collect(), cloud.labels.clone()).unwrap();
        let h0 = knn_entropy(&cloud, 3).unwrap();
        let h1 = knn_entropy(&scaled, 3).unwrap();
        assert!((h1 - h0 - 2.0 * c.ln()).abs() < 1e-9);
    }

    #[test]
    fn duplicates_are_floored_not_infinite() {
        let cloud = SampleCloud::from_points(&vec![vec![0.5, 0.5]; 10]).unwrap();
        let h = knn_entropy(&cloud, 3).unwrap();
        assert!(h.is_finite() && h < -50.0);
        assert_eq!(cloud.dedup().len(), 1);
    }

    #[test]
    fn too_few_points() {
        let cloud = SampleCloud::from_points(&vec![vec![0.0]; 3]).unwrap();
        assert!(matches!(knn_entropy(&cloud, 3), Err(Error::NotReady(_))));
    }

    #[test]
    fn entropy_error_shrinks_with_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut medians = Vec::new();
        for n in [100, 1000, 10_000] {
            let mut errs: Vec<f64> = (0..10)
                .map(|_| knn_entropy(&uniform_square(n, &mut rng), 3).unwrap().abs())
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(0.5 * (errs[4] + errs[5]));
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    #[test]
    fn shifted_gaussians_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = gaussian(10_000, 1, 0.0, &mut rng);
        let q = gaussian(10_000, 1, 2.0, &mut rng);
        let kl = knn_kl_divergence(&p, &q, 3).unwrap();
        assert!((kl.value - 2.0).abs() < 0.3, "{kl:?}");
    }

    #[test]
    fn identical_generators_kl_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let p = gaussian(2000, 2, 0.0, &mut rng);
        let q = gaussian(2000, 2, 0.0, &mut rng);
        let kl = knn_kl_divergence(&p, &q, 3).unwrap();
        assert!(kl.value < 0.1, "{kl:?}");
        assert!(kl.value >= 0.0);
    }

    #[test]
    fn policy_kl_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let clouds: Vec<SampleCloud> = (0..3).map(|z| gaussian(150, 2, z as f64, &mut rng)).collect();
        let rep = estimate_policy_kl(&clouds, 3).unwrap();
        let perm = [2, 0, 1];
        let permuted: Vec<SampleCloud> = perm.iter().map(|&z| clouds[z].clone()).collect();
        let rep2 = estimate_policy_kl(&permuted, 3).unwrap();
        for a in 0..3 {
            assert_eq!(rep2.to_mixture[a], rep.to_mixture[perm[a]]);
            for b in 0..3 {
                assert_eq!(rep2.pairwise[a][b], rep.pairwise[perm[a]][perm[b]]);
            }
        }
        assert!((rep.mean_to_mixture - rep2.mean_to_mixture).abs() < 1e-12);
        assert!(rep.pairwise[0][2].value > rep.pairwise[0][1].value);
    }

    #[test]
    fn policy_kl_needs_enough_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let clouds = vec![gaussian(150, 1, 0.0, &mut rng), gaussian(50, 1, 0.0, &mut rng)];
        assert!(matches!(estimate_policy_kl(&clouds, 3), Err(Error::NotReady(_))));
    }

    #[test]
    fn split_by_label_roundtrip() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let cloud = SampleCloud::labeled(&pts, &[1, 0, 1, 5]).unwrap();
        let parts = cloud.split_by_label(2);
        assert_eq!(parts[0].coords, vec![1.0]);
        assert_eq!(parts[1].coords, vec![0.0, 2.0]);
    }
}
