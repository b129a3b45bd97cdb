//! Built-in target distributions.
//!
//! Every target carries an (optionally unnormalized) log-density plus
//! optional gradient, Hessian, and exact reference sampler. Samplers and
//! evaluations are pure; a constructed [`Target`] is immutable and safe to
//! share across threads. All built-ins are supported on the whole of R^m.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837877066409345483560659472811; // ln(2*pi)

type DensityFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type HessFn = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
type SampleFn = Box<dyn Fn(usize, &mut dyn RngCore) -> Vec<Vec<f64>> + Send + Sync>;

/// Support descriptor. Every built-in target lives on all of R^m.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    FullSpace,
}

/// A target distribution: log-density up to an additive constant, with
/// optional derivatives and an optional exact sampler.
pub struct Target {
    name: String,
    dim: usize,
    normalized: bool,
    support: Support,
    log_density: DensityFn,
    grad: Option<GradFn>,
    hessian: Option<HessFn>,
    sampler: Option<SampleFn>,
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Target")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("normalized", &self.normalized)
            .finish()
    }
}

impl Target {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True when `log_density` is the exact log of a probability density,
    /// with no unknown additive constant.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn support(&self) -> Support {
        self.support
    }

    /// Log-density at `x` (up to an additive constant unless
    /// [`is_normalized`](Self::is_normalized)).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim, "target `{}` input dim", self.name);
        (self.log_density)(x)
    }

    pub fn has_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    pub fn has_sampler(&self) -> bool {
        self.sampler.is_some()
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.grad {
            Some(g) => Ok(g(x)),
            None => Err(Error::MissingGradient(self.name.clone())),
        }
    }

    pub fn hessian_log_density(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.hessian {
            Some(h) => Ok(h(x)),
            None => Err(Error::MissingHessian(self.name.clone())),
        }
    }

    /// Draws `n` exact samples from the target, if a reference sampler exists.
    pub fn sample_reference(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        match &self.sampler {
            Some(s) => Ok(s(n, rng)),
            None => Err(Error::MissingSampler(self.name.clone())),
        }
    }
}

fn standard_normals(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Exact 1D Gaussian target with exact sampler.
pub fn gaussian_1d_target(mean: f64, variance: f64) -> Result<Target> {
    if !(variance > 0.0) {
        return Err(Error::invalid(format!(
            "gaussian_1d variance must be positive, got {variance}"
        )));
    }
    let sd = variance.sqrt();
    let log_norm = -0.5 * (LN_2PI + variance.ln());
    Ok(Target {
        name: format!("gaussian1d(mean={mean}, var={variance})"),
        dim: 1,
        normalized: true,
        support: Support::FullSpace,
        log_density: Box::new(move |x| {
            let d = x[0] - mean;
            log_norm - 0.5 * d * d / variance
        }),
        grad: Some(Box::new(move |x| vec![-(x[0] - mean) / variance])),
        hessian: Some(Box::new(move |_| {
            DMatrix::from_element(1, 1, -1.0 / variance)
        })),
        sampler: Some(Box::new(move |n, rng| {
            (0..n)
                .map(|_| vec![mean + sd * rng.sample::<f64, _>(StandardNormal)])
                .collect()
        })),
    })
}

/// Sinusoidal-mean Brownian bridge observed at `n_times` interior grid
/// points `t_i = i/(n_times+1)`: a Gaussian with mean `sin(pi t)` and
/// covariance `min(t,s) - t s`. Endpoints are excluded because the bridge
/// is pinned there (zero variance).
pub fn brownian_bridge_target(n_times: usize) -> Result<Target> {
    if n_times < 2 {
        return Err(Error::invalid(format!(
            "brownian bridge needs at least 2 grid points, got {n_times}"
        )));
    }
    let m = n_times;
    let grid: Vec<f64> = (1..=m).map(|i| i as f64 / (m + 1) as f64).collect();
    let mean = DVector::from_iterator(m, grid.iter().map(|t| (std::f64::consts::PI * t).sin()));
    let jitter = 1e-10;
    let cov = DMatrix::from_fn(m, m, |i, j| {
        let (t, s) = (grid[i], grid[j]);
        t.min(s) - t * s + if i == j { jitter } else { 0.0 }
    });
    let chol = Cholesky::new(cov).ok_or_else(|| {
        Error::NotPositiveDefinite("brownian bridge covariance (after jitter 1e-10)".into())
    })?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_norm = -0.5 * (m as f64 * LN_2PI + log_det);
    let precision = chol.inverse();
    let l = chol.l();

    let mean_d = mean.clone();
    let prec_d = precision.clone();
    let mean_g = mean.clone();
    let prec_g = precision.clone();
    let neg_prec = -&precision;
    let mean_s = mean;
    Ok(Target {
        name: format!("brownian-bridge(n={m})"),
        dim: m,
        normalized: true,
        support: Support::FullSpace,
        log_density: Box::new(move |x| {
            let d = DVector::from_column_slice(x) - &mean_d;
            log_norm - 0.5 * (&prec_d * &d).dot(&d)
        }),
        grad: Some(Box::new(move |x| {
            let d = DVector::from_column_slice(x) - &mean_g;
            (-(&prec_g * d)).as_slice().to_vec()
        })),
        hessian: Some(Box::new(move |_| neg_prec.clone())),
        sampler: Some(Box::new(move |n, rng| {
            (0..n)
                .map(|_| {
                    let z = DVector::from_vec(standard_normals(m, rng));
                    (&mean_s + &l * z).as_slice().to_vec()
                })
                .collect()
        })),
    })
}

/// Equal-weight mixture of two 2D Gaussians with means `(-2, 2)` and
/// `(2, -2)` and shared covariance `diag(1/100, 1/100)`.
pub fn bimodal_target() -> Target {
    const MEANS: [[f64; 2]; 2] = [[-2.0, 2.0], [2.0, -2.0]];
    const VAR: f64 = 0.01;
    let comp_log_norm = -(LN_2PI + VAR.ln());
    let comp_lp = move |x: &[f64], mu: &[f64; 2]| {
        let d0 = x[0] - mu[0];
        let d1 = x[1] - mu[1];
        comp_log_norm - 0.5 * (d0 * d0 + d1 * d1) / VAR
    };
    Target {
        name: "bimodal-2d".into(),
        dim: 2,
        normalized: true,
        support: Support::FullSpace,
        log_density: Box::new(move |x| {
            let (a, b) = (comp_lp(x, &MEANS[0]), comp_lp(x, &MEANS[1]));
            // log(0.5 e^a + 0.5 e^b) with max subtraction for stability
            let m = a.max(b);
            m + ((a - m).exp() + (b - m).exp()).ln() + 0.5f64.ln()
        }),
        grad: Some(Box::new(move |x| {
            let (a, b) = (comp_lp(x, &MEANS[0]), comp_lp(x, &MEANS[1]));
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let wa = ea / (ea + eb);
            let wb = 1.0 - wa;
            (0..2)
                .map(|i| {
                    wa * (-(x[i] - MEANS[0][i]) / VAR) + wb * (-(x[i] - MEANS[1][i]) / VAR)
                })
                .collect()
        })),
        hessian: None,
        sampler: Some(Box::new(move |n, rng| {
            (0..n)
                .map(|_| {
                    let mu = &MEANS[usize::from(rng.random::<bool>())];
                    vec![
                        mu[0] + VAR.sqrt() * rng.sample::<f64, _>(StandardNormal),
                        mu[1] + VAR.sqrt() * rng.sample::<f64, _>(StandardNormal),
                    ]
                })
                .collect()
        })),
    }
}

/// Neal's funnel in R^2: `v ~ Normal(0, 9)`, `x ~ Normal(0, e^{-v})`.
pub fn funnel_target() -> Target {
    Target {
        name: "neal-funnel".into(),
        dim: 2,
        normalized: true,
        support: Support::FullSpace,
        log_density: Box::new(|p| {
            let (v, x) = (p[0], p[1]);
            let lp_v = -0.5 * v * v / 9.0 - 0.5 * (LN_2PI + 9.0f64.ln());
            // Normal(x; 0, e^{-v}) has log-density -x^2 e^v / 2 - ln(2 pi)/2 + v/2
            let lp_x = -0.5 * x * x * v.exp() - 0.5 * LN_2PI + 0.5 * v;
            lp_v + lp_x
        }),
        grad: Some(Box::new(|p| {
            let (v, x) = (p[0], p[1]);
            vec![-v / 9.0 - 0.5 * x * x * v.exp() + 0.5, -x * v.exp()]
        })),
        hessian: Some(Box::new(|p| {
            let (v, x) = (p[0], p[1]);
            let ev = v.exp();
            DMatrix::from_row_slice(
                2,
                2,
                &[-1.0 / 9.0 - 0.5 * x * x * ev, -x * ev, -x * ev, -ev],
            )
        })),
        sampler: Some(Box::new(|n, rng| {
            (0..n)
                .map(|_| {
                    let v = 3.0 * rng.sample::<f64, _>(StandardNormal);
                    let x = (-v / 2.0).exp() * rng.sample::<f64, _>(StandardNormal);
                    vec![v, x]
                })
                .collect()
        })),
    }
}

/// Configuration of the 1D lattice field target.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Phi4Config {
    /// Number of interior sample locations (boundaries are pinned at 0).
    pub n_sites: usize,
    /// Gradient-coupling strength `a`.
    pub coupling: f64,
    /// Inverse temperature `beta`.
    pub beta: f64,
}

impl Phi4Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::invalid("phi4 grid needs at least 2 interior sites"));
        }
        if !(self.coupling > 0.0) || !(self.beta > 0.0) {
            return Err(Error::invalid("phi4 coupling and beta must be positive"));
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        1.0 / (self.n_sites + 1) as f64
    }
}

/// Discretized field energy with forward differences and pinned
/// boundaries `phi_0 = phi_{N+1} = 0`:
///
/// `U_h(phi) = sum_{i=0..N} (a/2) ((phi_{i+1}-phi_i)/h)^2 h
///           + sum_{i=1..N} (1/4a) (1 - phi_i^2)^2 h`.
pub fn phi4_energy(cfg: &Phi4Config, phi: &[f64]) -> f64 {
    debug_assert_eq!(phi.len(), cfg.n_sites);
    let h = cfg.spacing();
    let a = cfg.coupling;
    let mut coupling = 0.0;
    let mut prev = 0.0;
    for &p in phi {
        let d = (p - prev) / h;
        coupling += 0.5 * a * d * d * h;
        prev = p;
    }
    let d = (0.0 - prev) / h;
    coupling += 0.5 * a * d * d * h;
    let potential: f64 = phi
        .iter()
        .map(|&p| {
            let w = 1.0 - p * p;
            0.25 / a * w * w * h
        })
        .sum();
    coupling + potential
}

/// Gradient of [`phi4_energy`] with respect to each interior site.
pub fn phi4_energy_grad(cfg: &Phi4Config, phi: &[f64]) -> Vec<f64> {
    let h = cfg.spacing();
    let a = cfg.coupling;
    let n = cfg.n_sites;
    (0..n)
        .map(|i| {
            let left = if i == 0 { 0.0 } else { phi[i - 1] };
            let right = if i + 1 == n { 0.0 } else { phi[i + 1] };
            a / h * (2.0 * phi[i] - left - right) + h / a * (phi[i] * phi[i] - 1.0) * phi[i]
        })
        .collect()
}

/// Boltzmann weight `exp(-beta U_h)` of the double-well lattice field,
/// unnormalized, with closed-form gradient and (tridiagonal) Hessian.
pub fn phi4_target(cfg: Phi4Config) -> Result<Target> {
    cfg.validate()?;
    let n = cfg.n_sites;
    let cfg_d = cfg;
    let cfg_g = cfg;
    let cfg_h = cfg;
    Ok(Target {
        name: format!(
            "phi4(n={}, a={}, beta={})",
            cfg.n_sites, cfg.coupling, cfg.beta
        ),
        dim: n,
        normalized: false,
        support: Support::FullSpace,
        log_density: Box::new(move |phi| -cfg_d.beta * phi4_energy(&cfg_d, phi)),
        grad: Some(Box::new(move |phi| {
            phi4_energy_grad(&cfg_g, phi)
                .into_iter()
                .map(|g| -cfg_g.beta * g)
                .collect()
        })),
        hessian: Some(Box::new(move |phi| {
            let h = cfg_h.spacing();
            let a = cfg_h.coupling;
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = -cfg_h.beta * (2.0 * a / h + h / a * (3.0 * phi[i] * phi[i] - 1.0));
                if i + 1 < n {
                    m[(i, i + 1)] = cfg_h.beta * a / h;
                    m[(i + 1, i)] = cfg_h.beta * a / h;
                }
            }
            m
        })),
        sampler: None,
    })
}

/// Finite target over states `{0, 1, ..., k-1}` embedded as the first
/// coordinate of a 1D chain; used to make kernel-level claims exactly
/// checkable on discrete instances.
pub fn discrete_target(probs: &[f64]) -> Result<Target> {
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|&p| p <= 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "discrete target needs strictly positive probabilities summing to 1",
        ));
    }
    let probs = probs.to_vec();
    let probs_s = probs.clone();
    Ok(Target {
        name: format!("discrete(k={})", probs.len()),
        dim: 1,
        normalized: true,
        support: Support::FullSpace,
        log_density: Box::new(move |x| {
            let i = x[0].round();
            if i < 0.0 || i >= probs.len() as f64 {
                f64::NEG_INFINITY
            } else {
                probs[i as usize].ln()
            }
        }),
        grad: None,
        hessian: None,
        sampler: Some(Box::new(move |n, rng| {
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut state = probs_s.len() - 1;
                    for (i, &p) in probs_s.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            state = i;
                            break;
                        }
                    }
                    vec![state as f64]
                })
                .collect()
        })),
    })
}
