//! Exact finite-state machinery: IMH kernels as row-stochastic matrices,
//! Doeblin-constant bounds, and the deterministic-adaptation TV bound.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::flows::Proposal;
use crate::targets::Target;

/// A transition kernel on a finite state set, stored as a row-stochastic
/// matrix together with its target probability vector.
#[derive(Debug, Clone)]
pub struct DiscreteKernel {
    pub matrix: DMatrix<f64>,
    pub target: Vec<f64>,
}

impl DiscreteKernel {
    pub fn n_states(&self) -> usize {
        self.target.len()
    }

    /// Row `x` of the `n`-step transition matrix, i.e. the distribution
    /// of the chain after `n` steps from `x` (computed by matrix powers).
    pub fn n_step_distribution(&self, start: usize, n: usize) -> Vec<f64> {
        let mut dist = vec![0.0; self.n_states()];
        dist[start] = 1.0;
        for _ in 0..n {
            dist = self.propagate(&dist);
        }
        dist
    }

    /// One application of the kernel to a distribution (row vector times matrix).
    pub fn propagate(&self, dist: &[f64]) -> Vec<f64> {
        let k = self.n_states();
        let mut out = vec![0.0; k];
        for (x, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for y in 0..k {
                out[y] += mass * self.matrix[(x, y)];
            }
        }
        out
    }

    /// Checks the row-stochastic invariant to the stated tolerance.
    pub fn validate(&self) -> Result<()> {
        let k = self.n_states();
        if self.matrix.nrows() != k || self.matrix.ncols() != k {
            return Err(Error::dim("discrete kernel matrix", k, self.matrix.nrows()));
        }
        for x in 0..k {
            let mut row_sum = 0.0;
            for y in 0..k {
                let v = self.matrix[(x, y)];
                if v < 0.0 {
                    return Err(Error::invalid(format!("negative entry at ({x}, {y})")));
                }
                row_sum += v;
            }
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "row {x} sums to {row_sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

fn check_simplex(v: &[f64], what: &str, strict: bool) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{what} must be non-empty")));
    }
    if strict && v.iter().any(|&p| p <= 0.0) {
        return Err(Error::ZeroProposalMass(format!("{what} entries")));
    }
    if v.iter().any(|&p| p < 0.0) {
        return Err(Error::invalid(format!("{what} has negative entries")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Exact IMH transition matrix for a finite target and proposal:
/// `K(x, y) = min{1, pi(y) prop(x) / (pi(x) prop(y))} * prop(y)` off the
/// diagonal, with the rejection mass absorbed into `K(x, x)`.
pub fn imh_discrete_kernel(target_probs: &[f64], proposal_probs: &[f64]) -> Result<DiscreteKernel> {
    check_simplex(target_probs, "discrete target", true)?;
    check_simplex(proposal_probs, "discrete proposal", true)?;
    if target_probs.len() != proposal_probs.len() {
        return Err(Error::dim(
            "discrete proposal",
            target_probs.len(),
            proposal_probs.len(),
        ));
    }
    let k = target_probs.len();
    let mut m = DMatrix::zeros(k, k);
    for x in 0..k {
        let mut off_diag = 0.0;
        for y in 0..k {
            if y == x {
                continue;
            }
            let ratio =
                (target_probs[y] * proposal_probs[x]) / (target_probs[x] * proposal_probs[y]);
            let a = ratio.min(1.0) * proposal_probs[y];
            m[(x, y)] = a;
            off_diag += a;
        }
        m[(x, x)] = 1.0 - off_diag;
    }
    let kernel = DiscreteKernel {
        matrix: m,
        target: target_probs.to_vec(),
    };
    kernel.validate()?;
    Ok(kernel)
}

/// Doeblin constant of a finite IMH instance: `max_i pi_i / prop_i`,
/// clamped below at 1. Returns the bound and the arg-max state.
pub fn doeblin_bound_discrete(target_probs: &[f64], proposal_probs: &[f64]) -> Result<(f64, usize)> {
    check_simplex(target_probs, "discrete target", true)?;
    check_simplex(proposal_probs, "discrete proposal", true)?;
    if target_probs.len() != proposal_probs.len() {
        return Err(Error::dim(
            "discrete proposal",
            target_probs.len(),
            proposal_probs.len(),
        ));
    }
    let mut best = (1.0f64, 0usize);
    for (i, (&p, &q)) in target_probs.iter().zip(proposal_probs).enumerate() {
        let r = p / q;
        if r > best.0 {
            best = (r, i);
        }
    }
    Ok(best)
}

/// Doeblin constant `M = sup pi/prop` over a set of probe points, for a
/// normalized continuous target and proposal. Clamped below at 1; also
/// returns the arg-max probe. Unnormalized targets are rejected because
/// the ratio is then meaningless.
pub fn doeblin_bound(
    target: &Target,
    proposal: &dyn Proposal,
    probe_points: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    if !target.is_normalized() {
        return Err(Error::Unnormalized(target.name().to_string()));
    }
    if probe_points.is_empty() {
        return Err(Error::invalid("doeblin_bound needs at least one probe"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = probe_points[0].clone();
    for p in probe_points {
        let log_ratio = target.log_density(p) - proposal.log_prob(p);
        if log_ratio.is_nan() {
            return Err(Error::NonFinite("doeblin probe ratio".into()));
        }
        if log_ratio > best {
            best = log_ratio;
            arg = p.clone();
        }
    }
    Ok((best.exp().max(1.0), arg))
}

/// The deterministic-adaptation TV bound `2 * prod(1 - L_i)` with
/// `L_i = 1/M_i` for finite `M_i >= 1` and `L_i = 0` when `M_i` is
/// infinite (the vacuous case).
pub fn tv_bound_product(ms: &[f64]) -> Result<f64> {
    let mut product = 1.0;
    for &m in ms {
        if m.is_nan() || m < 1.0 {
            return Err(Error::invalid(format!(
                "Doeblin constants must satisfy M >= 1, got {m}"
            )));
        }
        let l = if m.is_infinite() { 0.0 } else { 1.0 / m };
        product *= 1.0 - l;
    }
    Ok(2.0 * product)
}

/// Proposal over the finite states `{0, .., k-1}` embedded as the value
/// of a one-dimensional chain, matching [`crate::targets::discrete_target`].
#[derive(Debug, Clone)]
pub struct DiscreteProposal {
    probs: Vec<f64>,
}

impl DiscreteProposal {
    pub fn new(probs: &[f64]) -> Result<DiscreteProposal> {
        check_simplex(probs, "discrete proposal", true)?;
        Ok(DiscreteProposal {
            probs: probs.to_vec(),
        })
    }
}

impl Proposal for DiscreteProposal {
    fn dim(&self) -> usize {
        1
    }

    fn log_prob(&self, x: &[f64]) -> f64 {
        let i = x[0].round();
        if i < 0.0 || i >= self.probs.len() as f64 {
            f64::NEG_INFINITY
        } else {
            self.probs[i as usize].ln()
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return vec![i as f64];
            }
        }
        vec![(self.probs.len() - 1) as f64]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    #[test]
    fn proposal_equal_to_target_gives_rows_equal_to_target() {
        let p = [0.2, 0.5, 0.3];
        let k = imh_discrete_kernel(&p, &p).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert!((k.matrix[(x, y)] - p[y]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let t = random_simplex(5, &mut rng);
            let q = random_simplex(5, &mut rng);
            let k = imh_discrete_kernel(&t, &q).unwrap();
            k.validate().unwrap();
        }
    }

    #[test]
    fn target_is_stationary_for_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let t = random_simplex(6, &mut rng);
            let q = random_simplex(6, &mut rng);
            let k = imh_discrete_kernel(&t, &q).unwrap();
            let after = k.propagate(&t);
            for (a, b) in after.iter().zip(&t) {
                assert!((a - b).abs() < 1e-12, "piK != pi: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_proposal_mass_is_rejected() {
        assert!(imh_discrete_kernel(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn doeblin_two_state_hand_value() {
        let (m, arg) = doeblin_bound_discrete(&[0.7, 0.3], &[0.5, 0.5]).unwrap();
        assert!((m - 1.4).abs() < 1e-15);
        assert_eq!(arg, 0);
    }

    #[test]
    fn doeblin_equal_densities_is_one() {
        let (m, _) = doeblin_bound_discrete(&[0.25, 0.75], &[0.25, 0.75]).unwrap();
        assert_eq!(m, 1.0);
    }

    #[test]
    fn doeblin_continuous_gaussians_by_grid_search() {
        use crate::flows::Flow;
        use crate::targets::gaussian_1d_target;
        let target = gaussian_1d_target(0.0, 1.0).unwrap();
        // proposal N(0, 4) = affine flow with log-scale ln 2
        let proposal = Flow::affine_with(vec![0.0], vec![2.0f64.ln()]).unwrap();
        let probes: Vec<Vec<f64>> = (0..=2000)
            .map(|i| vec![-10.0 + i as f64 * 0.01])
            .collect();
        let (m, arg) = doeblin_bound(&target, &proposal, &probes).unwrap();
        // sup_x N(x;0,1)/N(x;0,4) is attained at x = 0 with value 2
        assert!((m - 2.0).abs() < 1e-9, "{m}");
        assert!(arg[0].abs() < 1e-12);
        // independent dense grid search oracle
        let brute = probes
            .iter()
            .map(|p| (target.log_density(p) - Flow::log_prob(&proposal, p).unwrap()).exp())
            .fold(f64::MIN, f64::max);
        assert!((m - brute).abs() < 1e-12);
    }

    #[test]
    fn doeblin_rejects_unnormalized_targets() {
        use crate::flows::Flow;
        use crate::targets::{phi4_target, Phi4Config};
        let target = phi4_target(Phi4Config {
            n_sites: 4,
            coupling: 0.1,
            beta: 20.0,
        })
        .unwrap();
        let proposal = Flow::affine(4);
        let err = doeblin_bound(&target, &proposal, &[vec![0.0; 4]]).unwrap_err();
        assert!(matches!(err, Error::Unnormalized(_)));
    }

    #[test]
    fn tv_bound_product_examples() {
        assert_eq!(tv_bound_product(&[1.0]).unwrap(), 0.0);
        assert_eq!(tv_bound_product(&[f64::INFINITY]).unwrap(), 2.0);
        assert!((tv_bound_product(&[2.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(tv_bound_product(&[0.5]).is_err());
    }
}
