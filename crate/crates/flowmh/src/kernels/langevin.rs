//! Metropolis-adjusted Langevin steps, plain and Hessian-preconditioned.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::targets::Target;

use super::{accept_with, ChainState, KernelTag, StepOutcome};

fn finite_grad(target: &Target, x: &[f64]) -> Result<Vec<f64>> {
    let g = target.grad_log_density(x)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target gradient".into()));
    }
    Ok(g)
}

/// One MALA step: propose
/// `x' = x + (step/2) grad log pi(x) + sqrt(step) xi` and apply the
/// Metropolis-Hastings correction with the asymmetric Gaussian proposal
/// densities. Needs the target gradient.
pub fn mala_step<R: Rng + ?Sized>(
    state: &ChainState,
    target: &Target,
    step_size: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    if !(step_size > 0.0) {
        return Err(Error::invalid("MALA step size must be positive"));
    }
    let m = state.x.len();
    let grad = finite_grad(target, &state.x)?;
    let half = 0.5 * step_size;
    let sqrt_step = step_size.sqrt();
    let mut candidate = Vec::with_capacity(m);
    for i in 0..m {
        let noise: f64 = rng.sample(StandardNormal);
        candidate.push(state.x[i] + half * grad[i] + sqrt_step * noise);
    }
    let log_target_cand = target.log_density(&candidate);
    // reverse move needs the gradient at the candidate
    let grad_cand = finite_grad(target, &candidate)?;
    let log_q = |from: &[f64], to: &[f64], g_from: &[f64]| {
        let mut ss = 0.0;
        for i in 0..m {
            let d = to[i] - from[i] - half * g_from[i];
            ss += d * d;
        }
        -ss / (2.0 * step_size)
    };
    let log_ratio = (log_target_cand - state.log_target)
        + (log_q(&candidate, &state.x, &grad_cand) - log_q(&state.x, &candidate, &grad));
    let (accepted, accept_prob) = accept_with(log_ratio, rng);
    let new_state = if accepted {
        ChainState {
            x: candidate.clone(),
            log_target: log_target_cand,
            // local move: any cached independent-proposal density is stale
            log_proposal: f64::NAN,
            step: state.step + 1,
        }
    } else {
        ChainState {
            step: state.step + 1,
            ..state.clone()
        }
    };
    Ok(StepOutcome {
        state: new_state,
        proposal: candidate,
        accept_prob,
        accepted,
        kernel: KernelTag::Mala,
    })
}

/// Factorizes `-H + lambda I`, escalating `lambda` until the matrix is
/// positive definite. Returns the factorization; errors once `lambda`
/// exceeds a generous cap.
fn regularized_precision(hessian: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let m = hessian.nrows();
    let neg_h = -hessian;
    if let Some(ch) = Cholesky::new(neg_h.clone()) {
        return Ok(ch);
    }
    let scale = neg_h
        .diagonal()
        .iter()
        .fold(1.0f64, |acc, d| acc.max(d.abs()));
    let mut lambda = 1e-8 * scale;
    while lambda <= 1e6 * scale {
        let mut reg = neg_h.clone();
        for i in 0..m {
            reg[(i, i)] += lambda;
        }
        if let Some(ch) = Cholesky::new(reg) {
            return Ok(ch);
        }
        lambda *= 10.0;
    }
    Err(Error::NotPositiveDefinite(context.into()))
}

/// Hessian-preconditioned MALA: the drift and noise are shaped by
/// `G(x) = (-H(x) + lambda I)^{-1}`, with the full asymmetric correction
/// (the preconditioner is re-evaluated at the candidate for the reverse
/// density). Needs gradient and Hessian.
pub fn precond_mala_step<R: Rng + ?Sized>(
    state: &ChainState,
    target: &Target,
    step_size: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    if !(step_size > 0.0) {
        return Err(Error::invalid("preconditioned MALA step size must be positive"));
    }
    let m = state.x.len();
    let grad = DVector::from_vec(finite_grad(target, &state.x)?);
    let hess = target.hessian_log_density(&state.x)?;
    let prec = regularized_precision(&hess, "preconditioned MALA at current state")?;
    let half = 0.5 * step_size;
    let sqrt_step = step_size.sqrt();
    // drift = G grad, i.e. solve (-H + lambda I) w = grad
    let drift = prec.solve(&grad);
    // noise ~ N(0, G): solve L^T y = z with P = L L^T
    let z = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let noise = prec.l().tr_solve_lower_triangular(&z).ok_or_else(|| {
        Error::NotPositiveDefinite("preconditioner noise transform".into())
    })?;
    let mut candidate = Vec::with_capacity(m);
    for i in 0..m {
        candidate.push(state.x[i] + half * drift[i] + sqrt_step * noise[i]);
    }
    let log_target_cand = target.log_density(&candidate);
    let grad_cand = DVector::from_vec(finite_grad(target, &candidate)?);
    let hess_cand = target.hessian_log_density(&candidate)?;
    let prec_cand = regularized_precision(&hess_cand, "preconditioned MALA at candidate")?;
    let drift_cand = prec_cand.solve(&grad_cand);

    // log N(to; from + (step/2) G(from) grad(from), step G(from)), dropping
    // terms that cancel in the ratio (dimension and 2 pi factors).
    let log_q = |from: &[f64],
                 to: &[f64],
                 drift_from: &DVector<f64>,
                 prec_from: &Cholesky<f64, nalgebra::Dyn>| {
        let d = DVector::from_iterator(
            m,
            (0..m).map(|i| to[i] - from[i] - half * drift_from[i]),
        );
        let pd = prec_from.l().transpose() * &d;
        let quad: f64 = pd.iter().map(|v| v * v).sum();
        let log_det_prec: f64 = 2.0 * prec_from.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -quad / (2.0 * step_size) + 0.5 * log_det_prec
    };
    let log_ratio = (log_target_cand - state.log_target)
        + (log_q(&candidate, &state.x, &drift_cand, &prec_cand)
            - log_q(&state.x, &candidate, &drift, &prec));
    let (accepted, accept_prob) = accept_with(log_ratio, rng);
    let new_state = if accepted {
        ChainState {
            x: candidate.clone(),
            log_target: log_target_cand,
            log_proposal: f64::NAN,
            step: state.step + 1,
        }
    } else {
        ChainState {
            step: state.step + 1,
            ..state.clone()
        }
    };
    Ok(StepOutcome {
        state: new_state,
        proposal: candidate,
        accept_prob,
        accepted,
        kernel: KernelTag::PrecondMala,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{brownian_bridge_target, discrete_target, gaussian_1d_target};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiny_step_acceptance_approaches_one() {
        let target = gaussian_1d_target(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = ChainState::new(vec![0.4], &target, None);
        let mut acc = 0.0;
        let n = 2000;
        for _ in 0..n {
            let out = mala_step(&state, &target, 1e-8, &mut rng).unwrap();
            acc += out.accept_prob;
            state = out.state;
        }
        assert!(acc / n as f64 > 0.999);
    }

    #[test]
    fn long_chain_is_stationary_for_standard_normal() {
        let target = gaussian_1d_target(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = ChainState::new(vec![2.0], &target, None);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let out = mala_step(&state, &target, 0.5, &mut rng).unwrap();
            state = out.state;
            sum += state.x[0];
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 0.01, "chain mean {mean}");
    }

    #[test]
    fn gradient_free_target_errors() {
        let target = discrete_target(&[0.5, 0.5]).unwrap();
        let state = ChainState::new(vec![0.0], &target, None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = mala_step(&state, &target, 0.1, &mut rng).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(_)));
    }

    #[test]
    fn identity_hessian_reduces_to_plain_mala() {
        // standard normal: H = -1, so the preconditioner is the identity
        let target = gaussian_1d_target(0.0, 1.0).unwrap();
        let state = ChainState::new(vec![0.7], &target, None);
        for seed in 0..20 {
            let a = mala_step(&state, &target, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b =
                precond_mala_step(&state, &target, 0.3, &mut ChaCha8Rng::seed_from_u64(seed))
                    .unwrap();
            assert_eq!(a.proposal, b.proposal);
            assert_eq!(a.accepted, b.accepted);
        }
    }

    #[test]
    fn gaussian_target_accepts_generously_at_unit_step() {
        // G equals the target covariance, so even step 1 mixes well
        let target = gaussian_1d_target(0.0, 7.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = ChainState::new(vec![1.0], &target, None);
        let mut acc = 0.0;
        let n = 4000;
        for _ in 0..n {
            let out = precond_mala_step(&state, &target, 1.0, &mut rng).unwrap();
            acc += out.accept_prob;
            state = out.state;
        }
        assert!(acc / n as f64 > 0.5, "mean acceptance {}", acc / n as f64);
    }

    #[test]
    fn precond_mala_is_stationary_on_brownian_bridge() {
        let target = brownian_bridge_target(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut state = ChainState::new(vec![0.0; 16], &target, None);
        let n = 100_000;
        let burn = 5_000;
        let mut sums = vec![0.0; 16];
        let mut sq = vec![0.0; 16];
        for it in 0..n {
            let out = precond_mala_step(&state, &target, 1.0, &mut rng).unwrap();
            state = out.state;
            if it >= burn {
                for i in 0..16 {
                    sums[i] += state.x[i];
                    sq[i] += state.x[i] * state.x[i];
                }
            }
        }
        let kept = (n - burn) as f64;
        for i in 0..16 {
            let t = (i + 1) as f64 / 17.0;
            let want = (std::f64::consts::PI * t).sin();
            let mean = sums[i] / kept;
            let var = sq[i] / kept - mean * mean;
            // crude effective-sample allowance: the chain mixes in a few
            // steps at unit step size, so 3 sigma with ESS ~ kept/20
            let tol = 3.0 * (var * 20.0 / kept).sqrt();
            assert!(
                (mean - want).abs() < tol,
                "coordinate {i}: mean {mean} vs {want} (tol {tol})"
            );
        }
    }
}
