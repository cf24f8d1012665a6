//! Exact information quantities on finite joints `p(s, a, z)`.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    validate_distribution(dist, NORMALIZATION_TOL)?;
    Ok(entropy_unchecked(dist))
}

fn entropy_unchecked(dist: &[f64]) -> f64 {
    -dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `KL(p || q)` in nats. Infinite when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| if *qi > 0.0 { pi * (pi / qi).ln() } else { f64::INFINITY })
        .sum()
}

fn validate_distribution(dist: &[f64], tol: f64) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::Validation("empty distribution".into()));
    }
    if let Some(p) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Validation(format!("entry {p} is not a probability")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::Validation(format!("entries sum to {total}, not 1")));
    }
    Ok(())
}

/// Probability table over `(s, a, z)`, stored with `z` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    states: usize,
    actions: usize,
    classes: usize,
    p: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(states: usize, actions: usize, classes: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != states * actions * classes {
            return Err(Error::Validation(format!(
                "table has {} entries, dimensions need {}",
                p.len(),
                states * actions * classes
            )));
        }
        validate_distribution(&p, 1e-12)?;
        Ok(Self {
            states,
            actions,
            classes,
            p,
        })
    }

    /// Random joint with a uniform label marginal `p(z) = 1/N` and random
    /// per-label visit distributions `p(s, a | z)`.
    pub fn random_uniform_z<R: Rng + ?Sized>(states: usize, actions: usize, classes: usize, rng: &mut R) -> Self {
        let cells = states * actions;
        let mut p = vec![0.0; cells * classes];
        for z in 0..classes {
            // Occasional exact zeros exercise the 0 log 0 convention.
            let mut w: Vec<f64> = (0..cells)
                .map(|_| if rng.random_bool(0.1) { 0.0 } else { -rng.random_range(1e-12f64..1.0).ln() })
                .collect();
            if w.iter().all(|v| *v == 0.0) {
                w[0] = 1.0;
            }
            let total: f64 = w.iter().sum();
            for (c, wc) in w.iter().enumerate() {
                p[c * classes + z] = wc / total / classes as f64;
            }
        }
        renormalize(&mut p);
        Self {
            states,
            actions,
            classes,
            p,
        }
    }

    /// Fully random joint (non-uniform label marginal).
    pub fn random<R: Rng + ?Sized>(states: usize, actions: usize, classes: usize, rng: &mut R) -> Self {
        let mut p: Vec<f64> = (0..states * actions * classes)
            .map(|_| -rng.random_range(1e-12f64..1.0).ln())
            .collect();
        renormalize(&mut p);
        Self {
            states,
            actions,
            classes,
            p,
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cells(&self) -> usize {
        self.states * self.actions
    }

    pub fn prob(&self, s: usize, a: usize, z: usize) -> f64 {
        self.p[(s * self.actions + a) * self.classes + z]
    }

    /// `rho(s, a)`, indexed by cell `s * |A| + a`.
    pub fn visit_marginal(&self) -> Vec<f64> {
        self.p.chunks(self.classes).map(|row| row.iter().sum()).collect()
    }

    /// `p(z)`.
    pub fn label_marginal(&self) -> Vec<f64> {
        let mut pz = vec![0.0; self.classes];
        for row in self.p.chunks(self.classes) {
            for (acc, v) in pz.iter_mut().zip(row) {
                *acc += v;
            }
        }
        pz
    }

    /// `rho(s, a | z)` over cells.
    pub fn conditional_visits(&self, z: usize) -> Vec<f64> {
        let pz = self.label_marginal()[z];
        self.p
            .chunks(self.classes)
            .map(|row| if pz > 0.0 { row[z] / pz } else { 0.0 })
            .collect()
    }

    /// Posterior `rho(z | s, a)` as a `cells x N` row-major table.
    /// Cells with zero mass get a uniform row.
    pub fn posterior(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.p.len());
        for row in self.p.chunks(self.classes) {
            let m: f64 = row.iter().sum();
            if m > 0.0 {
                out.extend(row.iter().map(|v| v / m));
            } else {
                out.extend(std::iter::repeat_n(1.0 / self.classes as f64, self.classes));
            }
        }
        out
    }

    /// `H(rho | z) = sum_z p(z) H(rho(. | z))`.
    pub fn conditional_visit_entropy(&self) -> f64 {
        self.label_marginal()
            .iter()
            .enumerate()
            .filter(|(_, pz)| **pz > 0.0)
            .map(|(z, pz)| pz * entropy_unchecked(&self.conditional_visits(z)))
            .sum()
    }

    /// `H(z | rho) = sum_{s,a} rho(s, a) H(p(z | s, a))`.
    pub fn conditional_label_entropy(&self) -> f64 {
        self.p
            .chunks(self.classes)
            .map(|row| {
                let m: f64 = row.iter().sum();
                if m > 0.0 {
                    let post: Vec<f64> = row.iter().map(|v| v / m).collect();
                    m * entropy_unchecked(&post)
                } else {
                    0.0
                }
            })
            .sum()
    }
}

fn renormalize(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    /// `H(rho)`.
    pub lhs: f64,
    /// `E_z[KL(rho(. | z) || rho)] + H(rho | z)`.
    pub rhs: f64,
    pub expected_kl: f64,
    pub conditional_entropy: f64,
    pub residual: f64,
}

/// Both sides of the visit-entropy decomposition, by enumeration.
pub fn check_decomposition(joint: &DiscreteJoint) -> Decomposition {
    let rho = joint.visit_marginal();
    let lhs = entropy_unchecked(&rho);
    let expected_kl: f64 = joint
        .label_marginal()
        .iter()
        .enumerate()
        .filter(|(_, pz)| **pz > 0.0)
        .map(|(z, pz)| pz * kl_divergence(&joint.conditional_visits(z), &rho))
        .sum();
    let conditional_entropy = joint.conditional_visit_entropy();
    let rhs = expected_kl + conditional_entropy;
    Decomposition {
        lhs,
        rhs,
        expected_kl,
        conditional_entropy,
        residual: (lhs - rhs).abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MiSymmetry {
    /// `H(rho) - H(rho | z)`.
    pub visit_side: f64,
    /// `H(z) - H(z | rho)`.
    pub label_side: f64,
    pub residual: f64,
}

/// Mutual information computed from both sides.
pub fn check_mi_symmetry(joint: &DiscreteJoint) -> MiSymmetry {
    let visit_side = entropy_unchecked(&joint.visit_marginal()) - joint.conditional_visit_entropy();
    let label_side = entropy_unchecked(&joint.label_marginal()) - joint.conditional_label_entropy();
    MiSymmetry {
        visit_side,
        label_side,
        residual: (visit_side - label_side).abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VariationalBound {
    /// `log N + E[log q(z | s, a)]`.
    pub bound: f64,
    /// `H(z) - H(z | rho)`.
    pub mutual_information: f64,
    /// `mutual_information - bound`, equal to `E_{s,a}[KL(rho(z|s,a) || q(z|s,a))]`
    /// when `p(z)` is uniform.
    pub gap: f64,
}

/// Evaluates the discriminator lower bound for a posterior model `q`, given as a
/// `cells x N` row-major table of class probabilities.
pub fn variational_bound(joint: &DiscreteJoint, q: &[f64]) -> Result<VariationalBound> {
    let n = joint.classes();
    if q.len() != joint.cells() * n {
        return Err(Error::Validation(format!(
            "posterior table has {} entries, expected {}",
            q.len(),
            joint.cells() * n
        )));
    }
    let mut expected_log_q = 0.0;
    for (row_p, row_q) in joint.p.chunks(n).zip(q.chunks(n)) {
        for (p, qz) in row_p.iter().zip(row_q) {
            if *p > 0.0 {
                expected_log_q += p * qz.ln();
            }
        }
    }
    let bound = (n as f64).ln() + expected_log_q;
    let mi = entropy_unchecked(&joint.label_marginal()) - joint.conditional_label_entropy();
    Ok(VariationalBound {
        bound,
        mutual_information: mi,
        gap: mi - bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.1; 10]).unwrap() - std::f64::consts::LN_10).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.5 * 2f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.039721).abs() < 1e-6);
        assert!(matches!(entropy(&[0.5, 0.6]), Err(Error::Validation(_))));
        assert!(matches!(entropy(&[1.5, -0.5]), Err(Error::Validation(_))));
    }

    #[test]
    fn identical_conditionals_have_zero_kl_term() {
        // Every z visits (s, a) with the same distribution.
        let cond = [0.1, 0.2, 0.3, 0.4];
        let p: Vec<f64> = cond.iter().flat_map(|c| [c * 0.5, c * 0.5]).collect();
        let joint = DiscreteJoint::new(2, 2, 2, p).unwrap();
        let d = check_decomposition(&joint);
        assert!(d.expected_kl.abs() < 1e-15);
        assert!((d.lhs - d.conditional_entropy).abs() < 1e-15);
    }

    #[test]
    fn disjoint_support_four_cells() {
        // z = 0 uniform on cells {0, 1}, z = 1 uniform on cells {2, 3}, p(z) = 1/2.
        let p = vec![0.25, 0.0, 0.25, 0.0, 0.0, 0.25, 0.0, 0.25];
        let joint = DiscreteJoint::new(2, 2, 2, p).unwrap();
        let d = check_decomposition(&joint);
        let ln2 = 2f64.ln();
        assert!((d.lhs - 4f64.ln()).abs() < 1e-15);
        assert!((d.conditional_entropy - ln2).abs() < 1e-15);
        assert!((d.expected_kl - ln2).abs() < 1e-15);
        assert!(d.residual < 1e-15);
    }

    #[test]
    fn mi_of_independent_and_deterministic_labels() {
        let cond = [0.3, 0.2, 0.1, 0.4];
        let p: Vec<f64> = cond.iter().flat_map(|c| [c / 3.0, c / 3.0, c / 3.0]).collect();
        let m = check_mi_symmetry(&DiscreteJoint::new(2, 2, 3, p).unwrap());
        assert!(m.visit_side.abs() < 1e-15 && m.label_side.abs() < 1e-15);

        // z is a function of the cell; p(z) uniform over 4 labels.
        let mut p = vec![0.0; 16];
        for c in 0..4 {
            p[c * 4 + c] = 0.25;
        }
        let m = check_mi_symmetry(&DiscreteJoint::new(2, 2, 4, p).unwrap());
        assert!((m.visit_side - 4f64.ln()).abs() < 1e-15);
        assert!((m.label_side - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bound_is_tight_at_the_true_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let joint = DiscreteJoint::random_uniform_z(3, 4, 5, &mut rng);
        let vb = variational_bound(&joint, &joint.posterior()).unwrap();
        assert!(vb.gap.abs() < 1e-12);
        let uniform = vec![0.2; joint.cells() * 5];
        let vb = variational_bound(&joint, &uniform).unwrap();
        assert!(vb.bound.abs() < 1e-12);
        assert!(vb.gap >= 0.0);
    }

    proptest! {
        #[test]
        fn identities_hold_on_random_joints(seed in 0u64..10_000, s in 1usize..5, a in 1usize..5, n in 1usize..6) {
            let joint = DiscreteJoint::random(s, a, n, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(check_decomposition(&joint).residual < 1e-12);
            prop_assert!(check_mi_symmetry(&joint).residual < 1e-12);
        }

        #[test]
        fn bound_never_exceeds_mi(seed in 0u64..10_000, logits in prop::collection::vec(-4.0f64..4.0, 36)) {
            let joint = DiscreteJoint::random_uniform_z(3, 3, 4, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut q = logits;
            for row in q.chunks_mut(4) {
                crate::discriminator::softmax(row);
            }
            let vb = variational_bound(&joint, &q).unwrap();
            prop_assert!(vb.bound <= vb.mutual_information + 1e-12);
        }
    }
}
