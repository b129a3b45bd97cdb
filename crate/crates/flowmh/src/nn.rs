//! Dense multilayer perceptrons with reverse-mode parameter gradients.
//!
//! This is deliberately small: fixed-topology MLPs over `f64` vectors,
//! with explicit shapes, no broadcasting, relu or identity hidden
//! activations, and a per-call [`GradTape`] that records the forward pass
//! so the backward pass can reuse the primal values exactly. Evaluation
//! is pure, so parameter values can be shared across threads freely.

use crate::error::{Error, Result};

/// Hidden-layer activation. The final layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    /// max(0, x), with subgradient 0 at exactly 0.
    Relu,
    /// Pass-through; the whole network is then affine.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer, `pre = weight * input + bias`.
///
/// `weight` is row-major with shape `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenseLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn matvec(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.weight[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

/// Weights and biases of an MLP, plus its hidden activation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenseParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl DenseParams {
    /// Zero-initialized network with the given layer widths
    /// (`widths[0]` inputs, `widths.last()` outputs).
    pub fn zeros(widths: &[usize], activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        DenseParams { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Checks that consecutive layer dimensions agree and all entries are finite.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::invalid(format!(
                    "mlp layer {i}: weight/bias storage does not match declared shape"
                )));
            }
            if i + 1 < self.layers.len() && self.layers[i + 1].in_dim != l.out_dim {
                return Err(Error::dim(
                    format!("mlp layer {} input", i + 1),
                    l.out_dim,
                    self.layers[i + 1].in_dim,
                ));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("mlp layer {i} parameters")));
            }
        }
        Ok(())
    }

    /// Appends all parameters to `out` in layer order (weights row-major, then bias).
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters back in the order produced by [`write_flat`](Self::write_flat).
    pub fn read_flat<'a, I: Iterator<Item = &'a f64>>(&mut self, src: &mut I) -> Result<()> {
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = *src
                    .next()
                    .ok_or_else(|| Error::invalid("flat parameter vector too short"))?;
            }
        }
        Ok(())
    }
}

/// Gradient of a scalar loss with respect to every parameter of an MLP,
/// stored with the same layout as [`DenseParams`].
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrad {
    pub fn zeros_like(params: &DenseParams) -> Self {
        MlpGrad {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

/// Forward-pass record: the input of every layer and its preactivation.
///
/// Replaying the tape through the same parameters reproduces the primal
/// output bit-for-bit; the backward pass reads the recorded values instead
/// of recomputing them. Tapes are per-call and never shared.
#[derive(Debug, Clone)]
pub struct GradTape {
    layer_inputs: Vec<Vec<f64>>,
    preactivations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl GradTape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Recomputes the forward pass from the recorded input.
    pub fn replay(&self, params: &DenseParams) -> Result<Vec<f64>> {
        mlp_forward(params, &self.layer_inputs[0])
    }
}

fn check_input(params: &DenseParams, input: &[f64], context: &str) -> Result<()> {
    if input.len() != params.input_dim() {
        return Err(Error::dim(
            format!("{context} (mlp layer 0 input)"),
            params.input_dim(),
            input.len(),
        ));
    }
    Ok(())
}

/// Evaluates the MLP. Deterministic: identical inputs give bit-identical outputs.
pub fn mlp_forward(params: &DenseParams, input: &[f64]) -> Result<Vec<f64>> {
    check_input(params, input, "mlp_forward")?;
    let n_layers = params.layers.len();
    let mut cur = input.to_vec();
    let mut pre = Vec::new();
    for (i, layer) in params.layers.iter().enumerate() {
        layer.matvec(&cur, &mut pre);
        if i + 1 < n_layers {
            cur.clear();
            cur.extend(pre.iter().map(|&v| params.activation.apply(v)));
        } else {
            std::mem::swap(&mut cur, &mut pre);
        }
    }
    Ok(cur)
}

/// Evaluates the MLP and records a [`GradTape`] for the backward pass.
pub fn mlp_forward_taped(params: &DenseParams, input: &[f64]) -> Result<(Vec<f64>, GradTape)> {
    check_input(params, input, "mlp_forward_taped")?;
    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut preactivations = Vec::with_capacity(n_layers);
    let mut cur = input.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut pre = Vec::new();
        layer.matvec(&cur, &mut pre);
        layer_inputs.push(std::mem::take(&mut cur));
        if i + 1 < n_layers {
            cur = pre.iter().map(|&v| params.activation.apply(v)).collect();
        } else {
            cur = pre.clone();
        }
        preactivations.push(pre);
    }
    let tape = GradTape {
        layer_inputs,
        preactivations,
        output: cur.clone(),
    };
    Ok((cur, tape))
}

/// Backward pass through a recorded forward: returns the parameter
/// gradient of `cotangent . output` and the cotangent on the input.
pub fn mlp_vjp(
    params: &DenseParams,
    tape: &GradTape,
    output_cotangent: &[f64],
) -> Result<(MlpGrad, Vec<f64>)> {
    if output_cotangent.len() != params.output_dim() {
        return Err(Error::dim(
            "mlp_vjp cotangent",
            params.output_dim(),
            output_cotangent.len(),
        ));
    }
    let n_layers = params.layers.len();
    let mut grad = MlpGrad::zeros_like(params);
    let mut g_out = output_cotangent.to_vec();
    for i in (0..n_layers).rev() {
        let layer = &params.layers[i];
        let input = &tape.layer_inputs[i];
        let pre = &tape.preactivations[i];
        // Cotangent on the preactivation; the last layer is linear.
        let g_pre: Vec<f64> = if i + 1 == n_layers {
            g_out
        } else {
            g_out
                .iter()
                .zip(pre)
                .map(|(g, &p)| g * params.activation.derivative(p))
                .collect()
        };
        let (wg, bg) = &mut grad.layers[i];
        for r in 0..layer.out_dim {
            bg[r] += g_pre[r];
            let wrow = &mut wg[r * layer.in_dim..(r + 1) * layer.in_dim];
            for (c, x) in input.iter().enumerate() {
                wrow[c] += g_pre[r] * x;
            }
        }
        let mut g_in = vec![0.0; layer.in_dim];
        for r in 0..layer.out_dim {
            let wrow = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
            for (c, w) in wrow.iter().enumerate() {
                g_in[c] += w * g_pre[r];
            }
        }
        g_out = g_in;
    }
    Ok((grad, g_out))
}

/// Gradient of `cotangent . mlp(params, input)` with respect to every parameter.
pub fn mlp_param_grad(
    params: &DenseParams,
    input: &[f64],
    output_cotangent: &[f64],
) -> Result<MlpGrad> {
    let (_, tape) = mlp_forward_taped(params, input)?;
    let (grad, _) = mlp_vjp(params, &tape, output_cotangent)?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(widths: &[usize], rng: &mut ChaCha8Rng) -> DenseParams {
        let mut p = DenseParams::zeros(widths, Activation::Relu);
        for l in &mut p.layers {
            let scale = 1.0 / (l.in_dim as f64).sqrt();
            for w in l.weight.iter_mut() {
                *w = scale * (rng.random::<f64>() * 2.0 - 1.0);
            }
            for b in l.bias.iter_mut() {
                *b = 0.2 * (rng.random::<f64>() * 2.0 - 1.0);
            }
        }
        p
    }

    /// Independent straight-line evaluation of a 2-3-2 relu net, written
    /// before the module and kept deliberately different in structure
    /// (transposed weight traversal, scalar accumulators).
    fn oracle_2_3_2(p: &DenseParams, x: &[f64]) -> Vec<f64> {
        let w0 = &p.layers[0].weight;
        let b0 = &p.layers[0].bias;
        let mut h = [0.0f64; 3];
        for r in 0..3 {
            let mut s = b0[r];
            s += w0[r * 2] * x[0];
            s += w0[r * 2 + 1] * x[1];
            h[r] = if s > 0.0 { s } else { 0.0 };
        }
        let w1 = &p.layers[1].weight;
        let b1 = &p.layers[1].bias;
        let mut y = vec![b1[0], b1[1]];
        for c in 0..3 {
            y[0] += w1[c] * h[c];
            y[1] += w1[3 + c] * h[c];
        }
        y
    }

    #[test]
    fn zero_net_maps_to_zero() {
        let p = DenseParams::zeros(&[3, 4, 2], Activation::Relu);
        let y = mlp_forward(&p, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut p = DenseParams::zeros(&[3, 3], Activation::Identity);
        for i in 0..3 {
            p.layers[0].weight[i * 3 + i] = 1.0;
        }
        let v = [0.3, -1.7, 2.0];
        assert_eq!(mlp_forward(&p, &v).unwrap(), v.to_vec());
    }

    #[test]
    fn forward_matches_independent_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = random_net(&[2, 3, 2], &mut rng);
        let x = [0.7, -1.1];
        let got = mlp_forward(&p, &x).unwrap();
        let want = oracle_2_3_2(&p, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14, "{g} vs {w}");
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_net(&[4, 8, 8, 3], &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
        let a = mlp_forward(&p, &x).unwrap();
        let b = mlp_forward(&p, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn tape_replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_net(&[3, 5, 2], &mut rng);
        let x = [0.1, 0.2, -0.9];
        let (y, tape) = mlp_forward_taped(&p, &x).unwrap();
        let replayed = tape.replay(&p).unwrap();
        for (u, v) in y.iter().zip(&replayed) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let p = DenseParams::zeros(&[3, 2], Activation::Relu);
        let err = mlp_forward(&p, &[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_net(&[2, 4, 2], &mut rng);
        let g = mlp_param_grad(&p, &[0.5, -0.5], &[0.0, 0.0]).unwrap();
        for (w, b) in &g.layers {
            assert!(w.iter().chain(b.iter()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut p = DenseParams::zeros(&[3, 2], Activation::Identity);
        p.layers[0].weight.copy_from_slice(&[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let x = [0.3, -0.7, 1.1];
        let c = [2.0, -0.5];
        let g = mlp_param_grad(&p, &x, &c).unwrap();
        let (wg, bg) = &g.layers[0];
        for r in 0..2 {
            assert!((bg[r] - c[r]).abs() < 1e-15);
            for col in 0..3 {
                assert!((wg[r * 3 + col] - c[r] * x[col]).abs() < 1e-15);
            }
        }
    }

    /// Central finite differences of `cotangent . mlp(params, input)`.
    fn fd_param_grad(p: &DenseParams, x: &[f64], c: &[f64], h: f64) -> Vec<f64> {
        let mut flat = Vec::new();
        p.write_flat(&mut flat);
        let mut out = Vec::with_capacity(flat.len());
        for k in 0..flat.len() {
            let eval = |v: f64| {
                let mut q = p.clone();
                let mut bumped = flat.clone();
                bumped[k] = v;
                q.read_flat(&mut bumped.iter()).unwrap();
                let y = mlp_forward(&q, x).unwrap();
                y.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
            };
            out.push((eval(flat[k] + h) - eval(flat[k] - h)) / (2.0 * h));
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences_over_100_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let widths = [3, 6, 6, 2];
            let p = random_net(&widths, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let c: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let g = mlp_param_grad(&p, &x, &c).unwrap();
            let mut flat = Vec::new();
            g.write_flat(&mut flat);
            let fd = fd_param_grad(&p, &x, &c, 1e-5);
            for (a, b) in flat.iter().zip(&fd) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
