//! Adaptation rules and schedules.
//!
//! Adaptation is a single-writer event between walker sweeps: an update
//! reads an immutable history snapshot and publishes a new parameter
//! snapshot. Diminishing adaptation is enforced by construction: the
//! step-size and adaptation-probability schedules come from closed-form
//! non-increasing families whose limits are zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flows::AdaptiveProposal;
use crate::targets::Target;

/// Step-size sequence `eps_n`, non-increasing by construction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSizeSchedule {
    /// `eps_0 * 2^{-floor(n / period)}`: halved every `period` updates.
    Halving { initial: f64, period: usize },
    /// `eps_0 / (1 + n / scale)`.
    Harmonic { initial: f64, scale: f64 },
}

impl StepSizeSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSizeSchedule::Halving { initial, period } => initial >= 0.0 && period > 0,
            StepSizeSchedule::Harmonic { initial, scale } => initial >= 0.0 && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("invalid step-size schedule"))
        }
    }

    pub fn at(&self, n: usize) -> f64 {
        match *self {
            StepSizeSchedule::Halving { initial, period } => {
                let k = (n / period).min(1023) as i32;
                initial * 2f64.powi(-k)
            }
            StepSizeSchedule::Harmonic { initial, scale } => initial / (1.0 + n as f64 / scale),
        }
    }
}

/// Adaptation-probability sequence `alpha_n` in [0, 1] with
/// `alpha_n -> 0`, again drawn from closed-form decreasing families.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdaptProbSchedule {
    /// `min(1, c / (1 + n / scale))`.
    Harmonic { c: f64, scale: f64 },
    /// `1 / (n + 1)`.
    OneOverNPlusOne,
}

impl AdaptProbSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AdaptProbSchedule::Harmonic { c, scale } => {
                if c >= 0.0 && scale > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("invalid adaptation-probability schedule"))
                }
            }
            AdaptProbSchedule::OneOverNPlusOne => Ok(()),
        }
    }

    pub fn at(&self, n: usize) -> f64 {
        match *self {
            AdaptProbSchedule::Harmonic { c, scale } => (c / (1.0 + n as f64 / scale)).min(1.0),
            AdaptProbSchedule::OneOverNPlusOne => 1.0 / (n as f64 + 1.0),
        }
    }
}

/// The pair of sequences an adaptive run consumes. `eps` is indexed by the
/// number of gradient updates applied so far; `alpha` by the sweep index.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    pub eps: StepSizeSchedule,
    pub alpha: AdaptProbSchedule,
}

impl Schedule {
    /// Paper-flavored default:学习 rate 1e-3 halved every 5000 updates,
    /// adaptation probability `min(1, 1/(1 + n/10^4))`.
    pub fn default_pseudo_likelihood() -> Schedule {
        Schedule {
            eps: StepSizeSchedule::Halving {
                initial: 1e-3,
                period: 5000,
            },
            alpha: AdaptProbSchedule::Harmonic { c: 1.0, scale: 1e4 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.eps.validate()?;
        self.alpha.validate()
    }
}

/// Ring buffer of past chain states across walkers.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    states: Vec<Vec<f64>>,
    capacity: Option<usize>,
    /// Next slot to overwrite once the buffer is saturated.
    write_head: usize,
    inserted: u64,
}

impl HistoryBuffer {
    /// `capacity = None` keeps the full history.
    pub fn new(capacity: Option<usize>) -> HistoryBuffer {
        HistoryBuffer {
            states: Vec::new(),
            capacity,
            write_head: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn total_inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, state: Vec<f64>) {
        self.inserted += 1;
        match self.capacity {
            Some(cap) if self.states.len() == cap => {
                self.states[self.write_head] = state;
                self.write_head = (self.write_head + 1) % cap;
            }
            _ => self.states.push(state),
        }
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.states[idx]
    }

    /// Draws `batch` distinct indices uniformly (all of them when `batch`
    /// is at least the buffer size), via a partial Fisher-Yates shuffle.
    pub fn sample_indices<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        let n = self.states.len();
        let take = batch.min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..take {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx.truncate(take);
        idx
    }
}

/// Neumaier compensated sum, so the full-batch gradient is independent of
/// summation order to well below 1e-12.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// What an adaptation call did, for the run's event log.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdaptEvent {
    /// Sweep index the event belongs to.
    pub step: usize,
    /// Step size that was (or would have been) used.
    pub eps: f64,
    /// Adaptation probability at this step.
    pub alpha: f64,
    /// Whether the coin fired and the update was applied.
    pub applied: bool,
    /// Euclidean norm of the applied gradient estimate, when applied.
    pub grad_norm: Option<f64>,
    /// Set when a non-finite gradient forced the update to be skipped.
    pub skipped_non_finite: bool,
}

/// Pseudo-likelihood ascent: with probability `alpha_n`, take
/// `theta' = theta + eps * mean over a uniform batch of buffer states of
/// grad_theta log prob_theta(x)`. Otherwise leave the parameters alone.
/// A non-finite gradient estimate skips the update and flags the event.
///
/// `n` is the sweep index (drives `alpha`); `updates_applied` counts
/// previously applied updates (drives `eps`).
#[allow(clippy::too_many_arguments)]
pub fn pseudo_likelihood_update<R: Rng>(
    proposal: &AdaptiveProposal,
    buffer: &HistoryBuffer,
    schedule: &Schedule,
    n: usize,
    updates_applied: usize,
    batch: usize,
    rng: &mut R,
) -> Result<(AdaptiveProposal, AdaptEvent)> {
    if buffer.is_empty() {
        return Err(Error::invalid("pseudo-likelihood update needs a non-empty buffer"));
    }
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let eps = schedule.eps.at(updates_applied);
    let alpha = schedule.alpha.at(n);
    let fire = alpha > 0.0 && rng.random::<f64>() < alpha;
    let mut event = AdaptEvent {
        step: n,
        eps,
        alpha,
        applied: false,
        grad_norm: None,
        skipped_non_finite: false,
    };
    if !fire {
        return Ok((proposal.clone(), event));
    }
    let indices = buffer.sample_indices(batch, rng);
    let k = proposal.adaptive_param_count();
    let mut acc = vec![CompensatedSum::default(); k];
    for &i in &indices {
        let g = proposal.log_prob_adaptive_grad(buffer.get(i))?;
        for (a, v) in acc.iter_mut().zip(&g) {
            a.add(*v);
        }
    }
    let scale = 1.0 / indices.len() as f64;
    let grad: Vec<f64> = acc.iter().map(|a| a.value() * scale).collect();
    if grad.iter().any(|v| !v.is_finite()) {
        event.skipped_non_finite = true;
        return Ok((proposal.clone(), event));
    }
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut updated = proposal.clone();
    updated.apply_step(eps, &grad)?;
    event.applied = true;
    event.grad_norm = Some(norm);
    Ok((updated, event))
}

/// Reverse-KL descent (reparameterized): averages the path gradient of
/// `log[prob_theta(Y)/pi(Y)]` over `n_samples` base draws and takes
/// `theta' = theta - eps * grad`. Needs the target gradient.
pub fn reverse_kl_update<R: Rng>(
    flow: &crate::flows::Flow,
    target: &Target,
    n_samples: usize,
    eps: f64,
    rng: &mut R,
) -> Result<crate::flows::Flow> {
    if n_samples == 0 {
        return Err(Error::invalid("reverse-KL update needs at least one sample"));
    }
    if eps == 0.0 {
        return Ok(flow.clone());
    }
    let k = flow.param_count();
    let mut acc = vec![CompensatedSum::default(); k];
    for _ in 0..n_samples {
        let z = crate::flows::draw_standard_normals(flow.dim(), rng);
        let g = flow.sample_path_grad(target, &z, 1.0)?;
        for (a, v) in acc.iter_mut().zip(&g) {
            a.add(*v);
        }
    }
    let scale = 1.0 / n_samples as f64;
    let grad: Vec<f64> = acc.iter().map(|a| a.value() * scale).collect();
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reverse-KL gradient".into()));
    }
    let mut updated = flow.clone();
    updated.apply_step(-eps, &grad)?;
    Ok(updated)
}

/// One explicit-Euler step of the reverse-KL gradient flow for a 1D
/// Gaussian proposal against a standard normal target:
/// `mu' = mu + dt * (-mu)`, `sigma' = sigma + dt * (1/sigma - sigma)`.
pub fn gaussian_exact_kl_step(mu: f64, sigma: f64, dt: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    Ok((mu - dt * mu, sigma + dt * (1.0 / sigma - sigma)))
}

/// Running maximum-likelihood Gaussian fit of a chain trace: the mean and
/// the population standard deviation, floored at 1e-6.
pub fn mle_gaussian_adapt(trace_states: &[f64]) -> Result<(f64, f64)> {
    if trace_states.is_empty() {
        return Err(Error::invalid("MLE adaptation needs at least one state"));
    }
    let n = trace_states.len() as f64;
    let mean = trace_states.iter().sum::<f64>() / n;
    let var = trace_states.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt().max(1e-6)))
}

/// Coin-flip adaptation: keep `current` with probability `1 - alpha_n`,
/// otherwise switch to `candidate`.
pub fn coin_flip_adapt<T, R: Rng>(current: T, candidate: T, alpha_n: f64, rng: &mut R) -> T {
    debug_assert!((0.0..=1.0).contains(&alpha_n));
    if alpha_n > 0.0 && rng.random::<f64>() < alpha_n {
        candidate
    } else {
        current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::Flow;
    use crate::targets::gaussian_1d_target;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine_proposal(mu: f64, s: f64) -> AdaptiveProposal {
        AdaptiveProposal::Flow(Flow::affine_with(vec![mu], vec![s]).unwrap())
    }

    #[test]
    fn schedules_are_non_increasing() {
        let sched = Schedule::default_pseudo_likelihood();
        sched.validate().unwrap();
        let mut prev_eps = f64::INFINITY;
        let mut prev_alpha = f64::INFINITY;
        let mut n = 0usize;
        while n <= 1_000_000 {
            let e = sched.eps.at(n);
            let a = sched.alpha.at(n);
            assert!(e <= prev_eps, "eps increased at {n}");
            assert!(a <= prev_alpha, "alpha increased at {n}");
            prev_eps = e;
            prev_alpha = a;
            n += 97;
        }
        // limits head to zero
        assert!(sched.eps.at(1_000_000) < 1e-3 * 0.5f64.powi(100));
        assert!(sched.alpha.at(100_000_000) < 1e-3);
    }

    #[test]
    fn one_over_n_plus_one_schedule() {
        let a = AdaptProbSchedule::OneOverNPlusOne;
        assert_eq!(a.at(0), 1.0);
        assert_eq!(a.at(9), 0.1);
    }

    #[test]
    fn zero_step_size_leaves_parameters() {
        let p = affine_proposal(0.3, 0.1);
        let mut buffer = HistoryBuffer::new(None);
        buffer.push(vec![1.0]);
        let sched = Schedule {
            eps: StepSizeSchedule::Halving {
                initial: 0.0,
                period: 10,
            },
            alpha: AdaptProbSchedule::Harmonic { c: 1.0, scale: 1e9 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (updated, ev) = pseudo_likelihood_update(&p, &buffer, &sched, 0, 0, 1, &mut rng).unwrap();
        assert!(ev.applied);
        assert_eq!(updated.adaptive_flow().params_flat(), p.adaptive_flow().params_flat());
    }

    #[test]
    fn zero_alpha_never_adapts() {
        let p = affine_proposal(0.3, 0.1);
        let mut buffer = HistoryBuffer::new(None);
        buffer.push(vec![10.0]);
        let sched = Schedule {
            eps: StepSizeSchedule::Halving {
                initial: 1.0,
                period: 10,
            },
            alpha: AdaptProbSchedule::Harmonic { c: 0.0, scale: 1.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 0..50 {
            let (updated, ev) =
                pseudo_likelihood_update(&p, &buffer, &sched, n, 0, 1, &mut rng).unwrap();
            assert!(!ev.applied);
            assert_eq!(updated.adaptive_flow().params_flat(), p.adaptive_flow().params_flat());
        }
    }

    #[test]
    fn single_state_affine_update_closed_form() {
        // buffer = {x}, batch 1: mu' = mu + eps (x - mu)/sigma^2
        let (mu, s, x, eps) = (0.2, 0.4, 1.7, 0.05);
        let p = affine_proposal(mu, s);
        let mut buffer = HistoryBuffer::new(None);
        buffer.push(vec![x]);
        let sched = Schedule {
            eps: StepSizeSchedule::Halving {
                initial: eps,
                period: 1000,
            },
            alpha: AdaptProbSchedule::Harmonic { c: 1.0, scale: 1e12 },
        };
        // alpha is essentially 1, so the first coin fires
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (updated, ev) = pseudo_likelihood_update(&p, &buffer, &sched, 0, 0, 1, &mut rng).unwrap();
        assert!(ev.applied);
        let params = updated.adaptive_flow().params_flat();
        let sigma2 = (2.0 * s).exp();
        let want_mu = mu + eps * (x - mu) / sigma2;
        assert!((params[0] - want_mu).abs() < 1e-14, "{} vs {want_mu}", params[0]);
    }

    #[test]
    fn full_batch_matches_canonical_order_sum() {
        let p = affine_proposal(-0.4, 0.2);
        let mut buffer = HistoryBuffer::new(None);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..64 {
            buffer.push(vec![rng.random::<f64>() * 6.0 - 3.0]);
        }
        let sched = Schedule {
            eps: StepSizeSchedule::Halving {
                initial: 0.01,
                period: 1000,
            },
            alpha: AdaptProbSchedule::Harmonic { c: 1.0, scale: 1e12 },
        };
        // batch == buffer length: the sampled set is all indices, in a
        // shuffled order; compensated summation keeps the result within
        // 1e-12 of the canonical-order full-batch step.
        let (updated, ev) =
            pseudo_likelihood_update(&p, &buffer, &sched, 0, 0, buffer.len(), &mut rng).unwrap();
        assert!(ev.applied);
        let flow = p.adaptive_flow();
        let k = flow.param_count();
        let mut grad = vec![0.0; k];
        for i in 0..buffer.len() {
            let g = flow.log_prob_param_grad(buffer.get(i)).unwrap();
            for (a, v) in grad.iter_mut().zip(&g) {
                *a += v;
            }
        }
        let mut want = flow.clone();
        let grad: Vec<f64> = grad.iter().map(|g| g / buffer.len() as f64).collect();
        want.apply_step(0.01, &grad).unwrap();
        for (a, b) in updated
            .adaptive_flow()
            .params_flat()
            .iter()
            .zip(want.params_flat().iter())
        {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn ring_buffer_capacity_evicts_oldest() {
        let mut buf = HistoryBuffer::new(Some(3));
        for i in 0..5 {
            buf.push(vec![i as f64]);
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.total_inserted(), 5);
        let mut held: Vec<f64> = (0..3).map(|i| buf.get(i)[0]).collect();
        held.sort_by(f64::total_cmp);
        assert_eq!(held, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn reverse_kl_fixed_draw_hand_value() {
        // mu=1, sigma=1, target N(0,1), z=0: grad wrt mu is exactly 1
        let target = gaussian_1d_target(0.0, 1.0).unwrap();
        let flow = Flow::affine_with(vec![1.0], vec![0.0]).unwrap();
        let g = flow.sample_path_grad(&target, &[0.0], 1.0).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-14);
        // so an eps step moves mu to mu - eps
        let mut moved = flow.clone();
        moved.apply_step(-0.1, &g).unwrap();
        assert!((moved.params_flat()[0] - 0.9).abs() < 1e-14);
    }

    #[test]
    fn reverse_kl_zero_eps_is_identity() {
        let target = gaussian_1d_target(0.0, 1.0).unwrap();
        let flow = Flow::affine_with(vec![0.7], vec![0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let updated = reverse_kl_update(&flow, &target, 4, 0.0, &mut rng).unwrap();
        assert_eq!(updated.params_flat(), flow.params_flat());
    }

    #[test]
    fn reverse_kl_stationary_at_target_parameters() {
        let target = gaussian_1d_target(0.0, 1.0).unwrap();
        let flow = Flow::affine_with(vec![0.0], vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // average displacement of the update over many single-sample trials
        let eps = 0.5;
        let trials = 100_000;
        let mut disp = [0.0f64; 2];
        for _ in 0..trials {
            let updated = reverse_kl_update(&flow, &target, 1, eps, &mut rng).unwrap();
            let p = updated.params_flat();
            disp[0] += p[0];
            disp[1] += p[1];
        }
        let mean_disp =
            ((disp[0] / trials as f64).powi(2) + (disp[1] / trials as f64).powi(2)).sqrt();
        assert!(mean_disp < 0.01 * eps, "mean displacement {mean_disp}");
    }

    #[test]
    fn euler_step_hand_values() {
        assert!(gaussian_exact_kl_step(0.0, 0.0, 0.1).is_err());
        assert!(gaussian_exact_kl_step(0.0, -1.0, 0.1).is_err());
        let (mu, sigma) = gaussian_exact_kl_step(0.0, 1.0, 0.3).unwrap();
        assert_eq!((mu, sigma), (0.0, 1.0));
        let (mu, sigma) = gaussian_exact_kl_step(1.0, 2.0, 0.1).unwrap();
        assert!((mu - 0.9).abs() < 1e-15);
        assert!((sigma - 1.85).abs() < 1e-15);
    }

    #[test]
    fn mle_adapt_hand_values() {
        assert!(mle_gaussian_adapt(&[]).is_err());
        let (m, s) = mle_gaussian_adapt(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((m, s), (1.0, 1e-6));
        let (m, s) = mle_gaussian_adapt(&[0.0, 2.0]).unwrap();
        assert_eq!((m, s), (1.0, 1.0));
        let (m, s) = mle_gaussian_adapt(&[0.37]).unwrap();
        assert_eq!((m, s), (0.37, 1e-6));
    }

    #[test]
    fn coin_flip_edge_and_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        assert_eq!(coin_flip_adapt(1, 2, 0.0, &mut rng), 1);
        assert_eq!(coin_flip_adapt(1, 2, 1.0, &mut rng), 2);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            if coin_flip_adapt(0, 1, 0.3, &mut rng) == 1 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.01, "candidate frequency {freq}");
    }
}
