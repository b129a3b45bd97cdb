//! Proposal distribution families: affine flows, RealNVP stacks, and
//! mixtures of an adaptive flow with a fixed full-support component.
//!
//! Flows transform a standard normal base through a parameterized
//! bijection; sampling, exact log-densities via the change-of-variables
//! formula, and parameter gradients are all available. Parameter values
//! are immutable snapshots as far as samplers are concerned: adaptation
//! constructs a new snapshot rather than mutating one that walkers hold.

mod affine;
mod mixture;
mod realnvp;

pub use affine::AffineFlow;
pub use mixture::MixtureProposal;
pub use realnvp::{CouplingLayer, RealNvpFlow};

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::targets::Target;

const LN_2PI: f64 = 1.837877066409345483560659472811;

pub(crate) fn std_normal_logpdf(z: &[f64]) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * (z.len() as f64 * LN_2PI + sq)
}

pub(crate) fn draw_standard_normals(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Anything the independent Metropolis-Hastings kernel can propose from:
/// a density with tractable sampling and log-density evaluation.
///
/// `log_prob` returns `-inf` outside the support and `NaN` only when the
/// evaluation itself broke down (callers treat `NaN` as an error).
pub trait Proposal: Send + Sync {
    fn dim(&self) -> usize;
    fn log_prob(&self, x: &[f64]) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// A normalizing flow over R^m with a standard normal base.
#[derive(Debug, Clone, PartialEq)]
pub enum Flow {
    Affine(AffineFlow),
    RealNvp(RealNvpFlow),
}

impl Flow {
    /// Identity affine flow (proposals are standard normal).
    pub fn affine(dim: usize) -> Flow {
        Flow::Affine(AffineFlow::identity(dim))
    }

    /// Affine flow with the given shift and coordinatewise log-scale.
    pub fn affine_with(shift: Vec<f64>, log_scale: Vec<f64>) -> Result<Flow> {
        Ok(Flow::Affine(AffineFlow::new(shift, log_scale)?))
    }

    /// RealNVP stack of `pairs` coupling-layer pairs; each pair updates
    /// both halves of the coordinates. Hidden layers are randomly
    /// initialized, final layers are zeroed so the flow starts at the
    /// identity (proposals start as the base Gaussian).
    pub fn realnvp(
        dim: usize,
        pairs: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut dyn RngCore,
    ) -> Result<Flow> {
        Ok(Flow::RealNvp(RealNvpFlow::new(
            dim, pairs, hidden, activation, rng,
        )?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Flow::Affine(f) => f.dim(),
            Flow::RealNvp(f) => f.dim(),
        }
    }

    /// Maps a base point through the bijection; returns the image and
    /// `log |det J|` of the forward map.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        match self {
            Flow::Affine(f) => f.forward(z),
            Flow::RealNvp(f) => f.forward(z),
        }
    }

    /// Inverse map; `log |det J|` of the inverse (negated forward log-det).
    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        match self {
            Flow::Affine(f) => f.inverse(x),
            Flow::RealNvp(f) => f.inverse(x),
        }
    }

    /// Exact log-density of the pushforward distribution at `x`.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let (z, log_det_inv) = self.inverse(x)?;
        Ok(std_normal_logpdf(&z) + log_det_inv)
    }

    /// Draws one sample by pushing a base draw through the flow.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let z = draw_standard_normals(self.dim(), rng);
        Ok(self.forward(&z)?.0)
    }

    /// Gradient of `log_prob(x)` with respect to the flat parameter vector.
    pub fn log_prob_param_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Flow::Affine(f) => f.log_prob_param_grad(x),
            Flow::RealNvp(f) => f.log_prob_param_grad(x),
        }
    }

    /// Reparameterized gradient of
    /// `loss_cotangent * [log prob_theta(x(theta)) - log pi(x(theta))]`
    /// at the fixed base draw `z`, where `x(theta) = forward(z)`. Both the
    /// proposal density and the target density are differentiated through
    /// the sample path; the target must expose a gradient.
    pub fn sample_path_grad(
        &self,
        target: &Target,
        z: &[f64],
        loss_cotangent: f64,
    ) -> Result<Vec<f64>> {
        match self {
            Flow::Affine(f) => f.sample_path_grad(target, z, loss_cotangent),
            Flow::RealNvp(f) => f.sample_path_grad(target, z, loss_cotangent),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Flow::Affine(f) => f.param_count(),
            Flow::RealNvp(f) => f.param_count(),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match self {
            Flow::Affine(f) => f.write_flat(&mut out),
            Flow::RealNvp(f) => f.write_flat(&mut out),
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(
                "flow parameters",
                self.param_count(),
                params.len(),
            ));
        }
        let mut it = params.iter();
        match self {
            Flow::Affine(f) => f.read_flat(&mut it),
            Flow::RealNvp(f) => f.read_flat(&mut it),
        }
    }

    /// In-place `theta += scale * grad` over the flat parameter vector.
    pub fn apply_step(&mut self, scale: f64, grad: &[f64]) -> Result<()> {
        if grad.len() != self.param_count() {
            return Err(Error::dim("flow gradient", self.param_count(), grad.len()));
        }
        let mut params = self.params_flat();
        for (p, g) in params.iter_mut().zip(grad) {
            *p += scale * g;
        }
        self.set_params_flat(&params)
    }

    pub fn arch(&self) -> FlowArch {
        match self {
            Flow::Affine(f) => FlowArch::Affine { dim: f.dim() },
            Flow::RealNvp(f) => f.arch(),
        }
    }

    /// Rebuilds a flow of the given architecture with all parameters zero.
    pub fn from_arch(arch: &FlowArch) -> Result<Flow> {
        match arch {
            FlowArch::Affine { dim } => Ok(Flow::affine(*dim)),
            FlowArch::RealNvp {
                dim,
                pairs,
                hidden,
                activation,
            } => Ok(Flow::RealNvp(RealNvpFlow::zeros(
                *dim,
                *pairs,
                hidden,
                *activation,
            )?)),
        }
    }
}

impl Proposal for Flow {
    fn dim(&self) -> usize {
        Flow::dim(self)
    }

    fn log_prob(&self, x: &[f64]) -> f64 {
        Flow::log_prob(self, x).unwrap_or(f64::NAN)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        Flow::sample(self, rng).expect("flow sampling failed")
    }
}

/// Architecture descriptor, enough to rebuild a flow from a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FlowArch {
    Affine {
        dim: usize,
    },
    RealNvp {
        dim: usize,
        pairs: usize,
        hidden: Vec<usize>,
        activation: Activation,
    },
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable snapshot of proposal parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    /// Format version tag.
    pub version: u32,
    /// Mixture weight of the fixed component, when the proposal is a mixture.
    pub mixture_beta: Option<f64>,
    /// Architecture of the fixed component, when present.
    pub fixed_arch: Option<FlowArch>,
    /// Parameters of the fixed component, when present.
    pub fixed_params: Option<Vec<f64>>,
    /// Architecture of the adaptive flow.
    pub arch: FlowArch,
    /// Flat parameter vector of the adaptive flow.
    pub params: Vec<f64>,
}

/// The proposal an adaptive run updates: either a bare flow or a
/// beta-mixture whose fixed component never changes.
#[derive(Debug, Clone)]
pub enum AdaptiveProposal {
    Flow(Flow),
    Mixture(MixtureProposal),
}

impl AdaptiveProposal {
    pub fn dim(&self) -> usize {
        match self {
            AdaptiveProposal::Flow(f) => f.dim(),
            AdaptiveProposal::Mixture(m) => m.dim(),
        }
    }

    /// The flow whose parameters adaptation updates.
    pub fn adaptive_flow(&self) -> &Flow {
        match self {
            AdaptiveProposal::Flow(f) => f,
            AdaptiveProposal::Mixture(m) => m.adaptive(),
        }
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        match self {
            AdaptiveProposal::Flow(f) => f.log_prob(x),
            AdaptiveProposal::Mixture(m) => m.mixture_log_prob(x),
        }
    }

    /// Gradient of the proposal's log-density with respect to the
    /// adaptive flow's parameters. For a mixture this is the posterior
    /// weight of the adaptive component times the component gradient;
    /// the mixture weight stays fixed.
    pub fn log_prob_adaptive_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            AdaptiveProposal::Flow(f) => f.log_prob_param_grad(x),
            AdaptiveProposal::Mixture(m) => m.log_prob_adaptive_grad(x),
        }
    }

    /// `theta += scale * grad` on the adaptive flow only.
    pub fn apply_step(&mut self, scale: f64, grad: &[f64]) -> Result<()> {
        match self {
            AdaptiveProposal::Flow(f) => f.apply_step(scale, grad),
            AdaptiveProposal::Mixture(m) => m.adaptive_mut().apply_step(scale, grad),
        }
    }

    pub fn adaptive_param_count(&self) -> usize {
        self.adaptive_flow().param_count()
    }

    pub fn checkpoint(&self) -> FlowCheckpoint {
        match self {
            AdaptiveProposal::Flow(f) => FlowCheckpoint {
                version: CHECKPOINT_VERSION,
                mixture_beta: None,
                fixed_arch: None,
                fixed_params: None,
                arch: f.arch(),
                params: f.params_flat(),
            },
            AdaptiveProposal::Mixture(m) => FlowCheckpoint {
                version: CHECKPOINT_VERSION,
                mixture_beta: Some(m.beta()),
                fixed_arch: Some(m.fixed().arch()),
                fixed_params: Some(m.fixed().params_flat()),
                arch: m.adaptive().arch(),
                params: m.adaptive().params_flat(),
            },
        }
    }

    pub fn from_checkpoint(ck: &FlowCheckpoint) -> Result<AdaptiveProposal> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let mut adaptive = Flow::from_arch(&ck.arch)?;
        adaptive.set_params_flat(&ck.params)?;
        match (&ck.mixture_beta, &ck.fixed_arch, &ck.fixed_params) {
            (None, None, None) => Ok(AdaptiveProposal::Flow(adaptive)),
            (Some(beta), Some(fa), Some(fp)) => {
                let mut fixed = Flow::from_arch(fa)?;
                fixed.set_params_flat(fp)?;
                Ok(AdaptiveProposal::Mixture(MixtureProposal::new(
                    *beta, fixed, adaptive,
                )?))
            }
            _ => Err(Error::invalid("inconsistent mixture checkpoint fields")),
        }
    }
}

impl Proposal for AdaptiveProposal {
    fn dim(&self) -> usize {
        AdaptiveProposal::dim(self)
    }

    fn log_prob(&self, x: &[f64]) -> f64 {
        AdaptiveProposal::log_prob(self, x).unwrap_or(f64::NAN)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match self {
            AdaptiveProposal::Flow(f) => Proposal::sample(f, rng),
            AdaptiveProposal::Mixture(m) => m.mixture_sample(rng),
        }
    }
}
