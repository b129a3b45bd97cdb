//! RealNVP coupling-layer stacks.
//!
//! Each layer passes one contiguous half of the coordinates through and
//! applies an elementwise affine update to the other half, with the raw
//! scale output exponentiated so positivity holds by construction and the
//! log-determinant is the plain sum of raw scale outputs. Layers alternate
//! which half they update, so a pair of layers updates every coordinate.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::{mlp_forward, mlp_forward_taped, mlp_vjp, Activation, DenseParams, GradTape};
use crate::targets::Target;

use super::{std_normal_logpdf, FlowArch};

/// One affine coupling layer. When `transform_upper` is set, coordinates
/// `0..split` pass through and `split..dim` are transformed; otherwise the
/// roles swap. Both networks take the pass-through half as input.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub transform_upper: bool,
    pub scale_net: DenseParams,
    pub translate_net: DenseParams,
}

impl CouplingLayer {
    fn pass_len(&self) -> usize {
        self.scale_net.input_dim()
    }

    fn trans_len(&self) -> usize {
        self.scale_net.output_dim()
    }

    /// Splits a point into (pass-through, transformed) halves.
    fn split<'a>(&self, x: &'a [f64], split: usize) -> (&'a [f64], &'a [f64]) {
        if self.transform_upper {
            (&x[..split], &x[split..])
        } else {
            (&x[split..], &x[..split])
        }
    }

    fn assemble(&self, pass: &[f64], trans: &[f64], split: usize, out: &mut Vec<f64>) {
        out.clear();
        if self.transform_upper {
            debug_assert_eq!(pass.len(), split);
            out.extend_from_slice(pass);
            out.extend_from_slice(trans);
        } else {
            debug_assert_eq!(trans.len(), split);
            out.extend_from_slice(trans);
            out.extend_from_slice(pass);
        }
    }
}

/// A stack of coupling layers over R^m with a standard normal base.
#[derive(Debug, Clone, PartialEq)]
pub struct RealNvpFlow {
    dim: usize,
    split: usize,
    pairs: usize,
    hidden: Vec<usize>,
    activation: Activation,
    pub layers: Vec<CouplingLayer>,
}

/// Per-layer record of a forward or inverse pass, kept for backprop.
struct LayerTrace {
    trans_in: Vec<f64>,
    trans_out: Vec<f64>,
    s_raw: Vec<f64>,
    scale_tape: GradTape,
    translate_tape: GradTape,
}

impl RealNvpFlow {
    fn build(
        dim: usize,
        pairs: usize,
        hidden: &[usize],
        activation: Activation,
        mut init: impl FnMut(&mut DenseParams),
    ) -> Result<RealNvpFlow> {
        if dim < 2 {
            return Err(Error::invalid("RealNVP needs dimension >= 2"));
        }
        if pairs == 0 {
            return Err(Error::invalid("RealNVP needs at least one layer pair"));
        }
        if hidden.is_empty() {
            return Err(Error::invalid("RealNVP coupling nets need hidden layers"));
        }
        let split = dim / 2;
        let mut layers = Vec::with_capacity(2 * pairs);
        for layer_idx in 0..2 * pairs {
            let transform_upper = layer_idx % 2 == 0;
            let (in_dim, out_dim) = if transform_upper {
                (split, dim - split)
            } else {
                (dim - split, split)
            };
            let mut widths = Vec::with_capacity(hidden.len() + 2);
            widths.push(in_dim);
            widths.extend_from_slice(hidden);
            widths.push(out_dim);
            let mut scale_net = DenseParams::zeros(&widths, activation);
            let mut translate_net = DenseParams::zeros(&widths, activation);
            init(&mut scale_net);
            init(&mut translate_net);
            layers.push(CouplingLayer {
                transform_upper,
                scale_net,
                translate_net,
            });
        }
        Ok(RealNvpFlow {
            dim,
            split,
            pairs,
            hidden: hidden.to_vec(),
            activation,
            layers,
        })
    }

    /// All-zero parameters (exactly the identity map, log-det 0).
    pub fn zeros(
        dim: usize,
        pairs: usize,
        hidden: &[usize],
        activation: Activation,
    ) -> Result<RealNvpFlow> {
        Self::build(dim, pairs, hidden, activation, |_| {})
    }

    /// Random hidden layers, zeroed final layers: starts at the identity
    /// but with non-degenerate hidden features ready to train.
    pub fn new(
        dim: usize,
        pairs: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut dyn RngCore,
    ) -> Result<RealNvpFlow> {
        Self::build(dim, pairs, hidden, activation, |net| {
            let n_layers = net.layers.len();
            for (i, l) in net.layers.iter_mut().enumerate() {
                if i + 1 == n_layers {
                    continue; // final layer stays zero
                }
                let scale = 1.0 / (l.in_dim as f64).sqrt();
                for w in l.weight.iter_mut() {
                    *w = scale * (rng.random::<f64>() * 2.0 - 1.0);
                }
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn arch(&self) -> FlowArch {
        FlowArch::RealNvp {
            dim: self.dim,
            pairs: self.pairs,
            hidden: self.hidden.clone(),
            activation: self.activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.scale_net.param_count() + l.translate_net.param_count())
            .sum()
    }

    fn check_dim(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dim(format!("realnvp {what}"), self.dim, v.len()));
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(z, "forward input")?;
        let mut cur = z.to_vec();
        let mut next = Vec::with_capacity(self.dim);
        let mut log_det = 0.0;
        let mut trans = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            let (pass, trans_in) = layer.split(&cur, self.split);
            let s_raw = mlp_forward(&layer.scale_net, pass)?;
            let t = mlp_forward(&layer.translate_net, pass)?;
            trans.clear();
            for i in 0..trans_in.len() {
                let v = trans_in[i] * s_raw[i].exp() + t[i];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("realnvp forward, layer {idx}")));
                }
                trans.push(v);
                log_det += s_raw[i];
            }
            layer.assemble(pass, &trans, self.split, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok((cur, log_det))
    }

    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x, "inverse input")?;
        let mut cur = x.to_vec();
        let mut next = Vec::with_capacity(self.dim);
        let mut log_det = 0.0;
        let mut trans = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (pass, trans_in) = layer.split(&cur, self.split);
            let s_raw = mlp_forward(&layer.scale_net, pass)?;
            let t = mlp_forward(&layer.translate_net, pass)?;
            trans.clear();
            for i in 0..trans_in.len() {
                let v = (trans_in[i] - t[i]) * (-s_raw[i]).exp();
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("realnvp inverse, layer {idx}")));
                }
                trans.push(v);
                log_det -= s_raw[i];
            }
            layer.assemble(pass, &trans, self.split, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok((cur, log_det))
    }

    /// Inverse pass that records everything backprop needs.
    /// Traces are pushed in application order (last layer first).
    fn inverse_traced(&self, x: &[f64]) -> Result<(Vec<f64>, f64, Vec<LayerTrace>)> {
        self.check_dim(x, "inverse input")?;
        let mut cur = x.to_vec();
        let mut log_det = 0.0;
        let mut traces = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (pass, trans_in) = layer.split(&cur, self.split);
            let (pass, trans_in) = (pass.to_vec(), trans_in.to_vec());
            let (s_raw, scale_tape) = mlp_forward_taped(&layer.scale_net, &pass)?;
            let (t, translate_tape) = mlp_forward_taped(&layer.translate_net, &pass)?;
            let mut trans_out = Vec::with_capacity(trans_in.len());
            for i in 0..trans_in.len() {
                let v = (trans_in[i] - t[i]) * (-s_raw[i]).exp();
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("realnvp inverse, layer {idx}")));
                }
                trans_out.push(v);
                log_det -= s_raw[i];
            }
            let mut next = Vec::with_capacity(self.dim);
            layer.assemble(&pass, &trans_out, self.split, &mut next);
            cur = next;
            traces.push(LayerTrace {
                trans_in,
                trans_out,
                s_raw,
                scale_tape,
                translate_tape,
            });
        }
        Ok((cur, log_det, traces))
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let (z, log_det_inv) = self.inverse(x)?;
        Ok(std_normal_logpdf(&z) + log_det_inv)
    }

    /// Splits a cotangent vector the same way the layer splits points.
    fn split_cotangent(&self, layer: &CouplingLayer, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (p, t) = layer.split(g, self.split);
        (p.to_vec(), t.to_vec())
    }

    /// Gradient of `log_prob(x)` with respect to all parameters, computed
    /// by reverse-mode through the inverse pass:
    /// `log_prob = log N(z) - sum over layers of sum(s_raw)`.
    pub fn log_prob_param_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (z, _, traces) = self.inverse_traced(x)?;
        // Cotangent of log N(z) with respect to z.
        let mut g: Vec<f64> = z.iter().map(|v| -v).collect();
        // Parameter gradients per layer, filled in reverse application
        // order (i.e. forward layer order 0, 1, 2, ...).
        let mut per_layer: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; self.layers.len()];
        // traces[k] corresponds to layer index (L-1-k); walk them backwards.
        for (k, trace) in traces.iter().enumerate().rev() {
            let layer_idx = self.layers.len() - 1 - k;
            let layer = &self.layers[layer_idx];
            let (g_pass_out, g_u) = self.split_cotangent(layer, &g);
            let n_t = layer.trans_len();
            let mut g_q = vec![0.0; n_t];
            let mut g_s = vec![0.0; n_t];
            let mut g_t = vec![0.0; n_t];
            for i in 0..n_t {
                let e = (-trace.s_raw[i]).exp();
                g_q[i] = g_u[i] * e;
                // d(log_det_inv)/d s_i = -1, plus the chain through u.
                g_s[i] = -g_u[i] * trace.trans_out[i] - 1.0;
                g_t[i] = -g_u[i] * e;
            }
            let (scale_grad, g_pass_s) = mlp_vjp(&layer.scale_net, &trace.scale_tape, &g_s)?;
            let (trans_grad, g_pass_t) =
                mlp_vjp(&layer.translate_net, &trace.translate_tape, &g_t)?;
            let mut scale_flat = Vec::new();
            scale_grad.write_flat(&mut scale_flat);
            let mut trans_flat = Vec::new();
            trans_grad.write_flat(&mut trans_flat);
            per_layer[layer_idx] = Some((scale_flat, trans_flat));
            let g_pass: Vec<f64> = (0..layer.pass_len())
                .map(|i| g_pass_out[i] + g_pass_s[i] + g_pass_t[i])
                .collect();
            let mut g_next = Vec::with_capacity(self.dim);
            layer.assemble(&g_pass, &g_q, self.split, &mut g_next);
            g = g_next;
        }
        let mut out = Vec::with_capacity(self.param_count());
        for entry in per_layer {
            let (s, t) = entry.expect("every layer visited");
            out.extend_from_slice(&s);
            out.extend_from_slice(&t);
        }
        Ok(out)
    }

    /// Reparameterized gradient through the forward map at base draw `z`:
    /// `loss = lc * [log N(z) - log_det_forward - log pi(forward(z))]`.
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
        // Forward pass with traces, in layer order.
        let mut cur = z.to_vec();
        let mut traces = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let (pass, trans_in) = layer.split(&cur, self.split);
            let (pass, trans_in) = (pass.to_vec(), trans_in.to_vec());
            let (s_raw, scale_tape) = mlp_forward_taped(&layer.scale_net, &pass)?;
            let (t, translate_tape) = mlp_forward_taped(&layer.translate_net, &pass)?;
            let mut trans_out = Vec::with_capacity(trans_in.len());
            for i in 0..trans_in.len() {
                let v = trans_in[i] * s_raw[i].exp() + t[i];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("realnvp forward, layer {idx}")));
                }
                trans_out.push(v);
            }
            let mut next = Vec::with_capacity(self.dim);
            layer.assemble(&pass, &trans_out, self.split, &mut next);
            cur = next;
            traces.push(LayerTrace {
                trans_in,
                trans_out,
                s_raw,
                scale_tape,
                translate_tape,
            });
        }
        let x = cur;
        let target_grad = target.grad_log_density(&x)?;
        if target_grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target gradient in path gradient".into()));
        }
        // Cotangent on x from -lc * log pi(x).
        let mut g: Vec<f64> = target_grad.iter().map(|v| -loss_cotangent * v).collect();
        let mut per_layer: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; self.layers.len()];
        for (layer_idx, trace) in traces.iter().enumerate().rev() {
            let layer = &self.layers[layer_idx];
            let (g_pass_out, g_v) = self.split_cotangent(layer, &g);
            let n_t = layer.trans_len();
            let mut g_q = vec![0.0; n_t];
            let mut g_s = vec![0.0; n_t];
            let mut g_t = vec![0.0; n_t];
            for i in 0..n_t {
                let e = trace.s_raw[i].exp();
                g_q[i] = g_v[i] * e;
                // -lc from the -log_det_forward term, plus the chain through v.
                g_s[i] = g_v[i] * trace.trans_in[i] * e - loss_cotangent;
                g_t[i] = g_v[i];
            }
            let (scale_grad, g_pass_s) = mlp_vjp(&layer.scale_net, &trace.scale_tape, &g_s)?;
            let (trans_grad, g_pass_t) =
                mlp_vjp(&layer.translate_net, &trace.translate_tape, &g_t)?;
            let mut scale_flat = Vec::new();
            scale_grad.write_flat(&mut scale_flat);
            let mut trans_flat = Vec::new();
            trans_grad.write_flat(&mut trans_flat);
            per_layer[layer_idx] = Some((scale_flat, trans_flat));
            let g_pass: Vec<f64> = (0..layer.pass_len())
                .map(|i| g_pass_out[i] + g_pass_s[i] + g_pass_t[i])
                .collect();
            let mut g_next = Vec::with_capacity(self.dim);
            layer.assemble(&g_pass, &g_q, self.split, &mut g_next);
            g = g_next;
        }
        let mut out = Vec::with_capacity(self.param_count());
        for entry in per_layer {
            let (s, t) = entry.expect("every layer visited");
            out.extend_from_slice(&s);
            out.extend_from_slice(&t);
        }
        Ok(out)
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.scale_net.write_flat(out);
            l.translate_net.write_flat(out);
        }
    }

    pub fn read_flat<'a, I: Iterator<Item = &'a f64>>(&mut self, src: &mut I) -> Result<()> {
        for l in &mut self.layers {
            l.scale_net.read_flat(src)?;
            l.translate_net.read_flat(src)?;
        }
        Ok(())
    }
}
