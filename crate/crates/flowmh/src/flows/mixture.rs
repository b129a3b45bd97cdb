//! Beta-mixture of a fixed full-support component and an adaptive flow:
//! `prob(x) = beta * fixed(x) + (1 - beta) * adaptive(x)`.
//!
//! Keeping `beta` strictly inside (0, 1) bounds the proposal density away
//! from zero wherever the fixed component is positive, which is what keeps
//! the adaptive sampler from painting itself into a corner.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

use super::{Flow, Proposal};

#[derive(Debug, Clone)]
pub struct MixtureProposal {
    beta: f64,
    fixed: Flow,
    adaptive: Flow,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl MixtureProposal {
    pub fn new(beta: f64, fixed: Flow, adaptive: Flow) -> Result<MixtureProposal> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid(format!(
                "mixture weight must lie strictly inside (0, 1), got {beta}"
            )));
        }
        if fixed.dim() != adaptive.dim() {
            return Err(Error::dim("mixture components", fixed.dim(), adaptive.dim()));
        }
        Ok(MixtureProposal {
            beta,
            fixed,
            adaptive,
        })
    }

    pub fn dim(&self) -> usize {
        self.fixed.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn fixed(&self) -> &Flow {
        &self.fixed
    }

    pub fn adaptive(&self) -> &Flow {
        &self.adaptive
    }

    pub fn adaptive_mut(&mut self) -> &mut Flow {
        &mut self.adaptive
    }

    /// Log of the convex combination of the component densities.
    pub fn mixture_log_prob(&self, x: &[f64]) -> Result<f64> {
        let lp_fixed = self.fixed.log_prob(x)?;
        let lp_adaptive = self.adaptive.log_prob(x)?;
        Ok(log_add_exp(
            self.beta.ln() + lp_fixed,
            (1.0 - self.beta).ln() + lp_adaptive,
        ))
    }

    /// Draws the fixed component with probability `beta`, otherwise the
    /// adaptive component.
    pub fn mixture_sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        if u < self.beta {
            Proposal::sample(&self.fixed, rng)
        } else {
            Proposal::sample(&self.adaptive, rng)
        }
    }

    /// Gradient of the mixture log-density with respect to the adaptive
    /// component's parameters: the posterior weight of the adaptive
    /// component at `x` times its own log-density gradient.
    pub fn log_prob_adaptive_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let lp_fixed = self.beta.ln() + self.fixed.log_prob(x)?;
        let lp_adaptive = (1.0 - self.beta).ln() + self.adaptive.log_prob(x)?;
        let total = log_add_exp(lp_fixed, lp_adaptive);
        let weight = (lp_adaptive - total).exp();
        let mut grad = self.adaptive.log_prob_param_grad(x)?;
        for g in grad.iter_mut() {
            *g *= weight;
        }
        Ok(grad)
    }
}

impl Proposal for MixtureProposal {
    fn dim(&self) -> usize {
        MixtureProposal::dim(self)
    }

    fn log_prob(&self, x: &[f64]) -> f64 {
        self.mixture_log_prob(x).unwrap_or(f64::NAN)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.mixture_sample(rng)
    }
}
