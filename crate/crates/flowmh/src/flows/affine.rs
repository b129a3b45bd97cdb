//! Coordinatewise affine flow: `x = shift + exp(log_scale) * z`.
//!
//! The pushforward of the standard normal base is the Gaussian with mean
//! `shift` and standard deviation `exp(log_scale)` per coordinate, so all
//! gradients have closed forms.

use crate::error::{Error, Result};
use crate::targets::Target;

use super::std_normal_logpdf;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineFlow {
    shift: Vec<f64>,
    log_scale: Vec<f64>,
}

impl AffineFlow {
    pub fn identity(dim: usize) -> AffineFlow {
        AffineFlow {
            shift: vec![0.0; dim],
            log_scale: vec![0.0; dim],
        }
    }

    pub fn new(shift: Vec<f64>, log_scale: Vec<f64>) -> Result<AffineFlow> {
        if shift.len() != log_scale.len() {
            return Err(Error::dim("affine log_scale", shift.len(), log_scale.len()));
        }
        if shift
            .iter()
            .chain(log_scale.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("affine flow parameters".into()));
        }
        Ok(AffineFlow { shift, log_scale })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.log_scale
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim()
    }

    fn check_dim(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::dim(format!("affine {what}"), self.dim(), v.len()));
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(z, "forward input")?;
        let mut log_det = 0.0;
        let mut x = Vec::with_capacity(z.len());
        for i in 0..z.len() {
            let v = self.shift[i] + self.log_scale[i].exp() * z[i];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("affine forward, coordinate {i}")));
            }
            x.push(v);
            log_det += self.log_scale[i];
        }
        Ok((x, log_det))
    }

    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x, "inverse input")?;
        let mut log_det = 0.0;
        let mut z = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let v = (x[i] - self.shift[i]) * (-self.log_scale[i]).exp();
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("affine inverse, coordinate {i}")));
            }
            z.push(v);
            log_det -= self.log_scale[i];
        }
        Ok((z, log_det))
    }

    /// Closed-form gradient of the log-density:
    /// `d/d shift_i = z_i e^{-s_i}` and `d/d s_i = z_i^2 - 1`,
    /// with `z = inverse(x)`. Layout matches [`write_flat`](Self::write_flat).
    pub fn log_prob_param_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (z, _) = self.inverse(x)?;
        let mut grad = Vec::with_capacity(2 * z.len());
        for i in 0..z.len() {
            grad.push(z[i] * (-self.log_scale[i]).exp());
        }
        for zi in &z {
            grad.push(zi * zi - 1.0);
        }
        Ok(grad)
    }

    pub fn sample_path_grad(
        &self,
        target: &Target,
        z: &[f64],
        loss_cotangent: f64,
    ) -> Result<Vec<f64>> {
        self.check_dim(z, "path-gradient base draw")?;
        if loss_cotangent == 0.0 {
            return Ok(vec![0.0; self.param_count()]);
        }
        let (x, _) = self.forward(z)?;
        let g = target.grad_log_density(&x)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target gradient in path gradient".into()));
        }
        let mut grad = Vec::with_capacity(2 * z.len());
        // loss = lc * [log N(z) - sum s - log pi(shift + e^s z)]
        for gi in &g {
            grad.push(loss_cotangent * -gi);
        }
        for i in 0..z.len() {
            grad.push(loss_cotangent * (-1.0 - g[i] * z[i] * self.log_scale[i].exp()));
        }
        Ok(grad)
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.shift);
        out.extend_from_slice(&self.log_scale);
    }

    pub fn read_flat<'a, I: Iterator<Item = &'a f64>>(&mut self, src: &mut I) -> Result<()> {
        for slot in self.shift.iter_mut().chain(self.log_scale.iter_mut()) {
            *slot = *src
                .next()
                .ok_or_else(|| Error::invalid("flat parameter vector too short"))?;
        }
        Ok(())
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let (z, log_det_inv) = self.inverse(x)?;
        Ok(std_normal_logpdf(&z) + log_det_inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::Flow;
    use crate::targets::gaussian_1d_target;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LN_2PI: f64 = 1.837877066409345483560659472811;

    #[test]
    fn forward_hand_example() {
        let f = AffineFlow::new(vec![1.0], vec![2.0f64.ln()]).unwrap();
        let (x, ld) = f.forward(&[1.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-15);
        assert!((ld - 2.0f64.ln()).abs() < 1e-15);
        let (z, ld_inv) = f.inverse(&[3.0]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15);
        assert!((ld_inv + 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_prob_hand_example() {
        let f = AffineFlow::new(vec![1.0], vec![2.0f64.ln()]).unwrap();
        // log N(1; 0, 1) - ln 2
        let want = -0.5 * (LN_2PI + 1.0) - 2.0f64.ln();
        assert!((f.log_prob(&[3.0]).unwrap() - want).abs() < 1e-12);
        assert!((want - -2.1121).abs() < 1e-4);
    }

    #[test]
    fn identity_log_prob_is_standard_normal() {
        let f = AffineFlow::identity(1);
        let want = -0.5 * LN_2PI;
        assert!((f.log_prob(&[0.0]).unwrap() - want).abs() < 1e-12);
        assert!((want - -0.9189).abs() < 1e-4);
    }

    #[test]
    fn density_integrates_to_one() {
        let f = AffineFlow::new(vec![1.0], vec![0.4]).unwrap();
        // Simpson's rule over +/- 12 standard deviations
        let sigma = 0.4f64.exp();
        let (a, b) = (1.0 - 12.0 * sigma, 1.0 + 12.0 * sigma);
        let n = 4000;
        let h = (b - a) / n as f64;
        let dens = |x: f64| f.log_prob(&[x]).unwrap().exp();
        let mut total = dens(a) + dens(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            total += w * dens(a + k as f64 * h);
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn param_grad_closed_forms() {
        let f = AffineFlow::new(vec![0.0], vec![0.0]).unwrap();
        let g = f.log_prob_param_grad(&[2.0]).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12); // (x - mu)/sigma^2
        let f = AffineFlow::new(vec![0.7], vec![0.3]).unwrap();
        let g = f.log_prob_param_grad(&[0.7]).unwrap();
        assert!((g[1] + 1.0).abs() < 1e-12); // -1 + ((x-mu)/sigma)^2 at x = mu
    }

    #[test]
    fn path_grad_hand_example() {
        let target = gaussian_1d_target(0.0, 1.0).unwrap();
        let f = AffineFlow::new(vec![1.0], vec![0.0]).unwrap();
        let g = f.sample_path_grad(&target, &[0.0], 1.0).unwrap();
        // d/dmu [-log pi(mu + sigma z)] = mu + sigma z = 1
        assert!((g[0] - 1.0).abs() < 1e-12);
        let zero = f.sample_path_grad(&target, &[0.37], 0.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn path_grad_vanishes_at_target_parameters() {
        // Proposal equal to the target: the reverse KL is stationary, so
        // the averaged path gradient should be near zero.
        let target = gaussian_1d_target(1.5, 4.0).unwrap();
        let f = AffineFlow::new(vec![1.5], vec![4.0f64.ln() / 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut acc = [0.0f64; 2];
        for _ in 0..n {
            let z = super::super::draw_standard_normals(1, &mut rng);
            let g = f.sample_path_grad(&target, &z, 1.0).unwrap();
            acc[0] += g[0];
            acc[1] += g[1];
        }
        let norm = (acc[0].powi(2) + acc[1].powi(2)).sqrt() / n as f64;
        assert!(norm < 0.02, "gradient norm {norm}");
    }

    #[test]
    fn sampling_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let id = Flow::affine(1);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| Flow::sample(&id, &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.02, "identity-flow mean {mean}");

        let shifted = Flow::affine_with(vec![5.0], vec![0.0]).unwrap();
        let mean: f64 = (0..n)
            .map(|_| Flow::sample(&shifted, &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 5.0).abs() < 0.02, "shifted-flow mean {mean}");
    }

    #[test]
    fn fixed_seed_reproduces_sample() {
        let f = Flow::affine_with(vec![1.0, -2.0], vec![0.1, 0.2]).unwrap();
        let a = Flow::sample(&f, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = Flow::sample(&f, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
