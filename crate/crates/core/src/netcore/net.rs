//! Dense layers with explicit forward/backward and in-struct gradient buffers.

use super::mat::Mat;
use crate::util::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative dA/dz given pre-activation `z` and (unscaled) activation `a`.
    pub fn deriv(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            _ => Err(Error::format("activation", format!("unknown code {c}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Mat, // out×in
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    /// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases.
    pub fn glorot(in_dim: usize, out_dim: usize, act: Activation, rng: &mut SplitMix64) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Mat::from_fn(out_dim, in_dim, |_, _| rng.uniform(-bound, bound));
        Layer {
            w,
            b: vec![0.0; out_dim],
            act,
        }
    }
}

#[derive(Debug, Clone)]
struct LayerGrads {
    w: Mat,
    b: Vec<f64>,
}

/// A stack of dense layers with gradient accumulators of identical shape.
///
/// Consecutive layer dimensions must chain; this is validated on construction
/// and preserved by every operation.
#[derive(Debug, Clone)]
pub struct NetParams {
    layers: Vec<Layer>,
    grads: Vec<LayerGrads>,
}

/// Cached activations from one forward pass, as needed by `backward`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub input: Vec<f64>,
    /// Pre-activations z_k per layer.
    pub pre: Vec<Vec<f64>>,
    /// Activations a_k per layer; at the scaled layer this holds the scaled value.
    pub post: Vec<Vec<f64>>,
    scale: Option<ScaleSite>,
}

#[derive(Debug, Clone)]
struct ScaleSite {
    layer: usize,
    scale: Vec<f64>,
    unscaled: Vec<f64>,
}

impl Forward {
    /// Network output (last layer activation, scaled if applicable).
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("network has at least one layer")
    }

    /// Activation of hidden layer `k` as consumed by layer `k+1`.
    pub fn activation(&self, k: usize) -> &[f64] {
        &self.post[k]
    }

    /// Pre-scaling activation at the scaled layer, if a scale was applied.
    pub fn unscaled_activation(&self) -> Option<&[f64]> {
        self.scale.as_ref().map(|s| s.unscaled.as_slice())
    }
}

/// Gradients flowing out of a backward pass.
pub struct Backward {
    /// dL/d(input).
    pub d_input: Vec<f64>,
    /// dL/d(scale vector) when the forward pass used one.
    pub d_scale: Option<Vec<f64>>,
}

impl NetParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("NetParams requires at least one layer".into()));
        }
        for k in 1..layers.len() {
            if layers[k].in_dim() != layers[k - 1].out_dim() {
                return Err(Error::dim(
                    format!("layer {k} input"),
                    layers[k - 1].out_dim(),
                    layers[k].in_dim(),
                ));
            }
        }
        let grads = layers
            .iter()
            .map(|l| LayerGrads {
                w: Mat::zeros(l.out_dim(), l.in_dim()),
                b: vec![0.0; l.out_dim()],
            })
            .collect();
        Ok(NetParams { layers, grads })
    }

    /// Builds a dense stack `dims[0] -> dims[1] -> ...` with one activation per layer.
    pub fn glorot(dims: &[usize], acts: &[Activation], rng: &mut SplitMix64) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(Error::InvalidArg(format!(
                "glorot: {} dims require {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                acts.len()
            )));
        }
        let layers = (0..acts.len())
            .map(|k| Layer::glorot(dims[k], dims[k + 1], acts[k], rng))
            .collect();
        NetParams::new(layers)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layer(&self, k: usize) -> &Layer {
        &self.layers[k]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut Layer {
        &mut self.layers[k]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Forward pass returning all intermediate activations.
    pub fn forward(&self, input: &[f64]) -> Result<Forward> {
        self.forward_impl(input, None)
    }

    /// Forward pass with an element-wise scale applied to the post-activation
    /// output of layer `scale_at` (the LHUC insertion point).
    pub fn forward_scaled(&self, input: &[f64], scale_at: usize, scale: &[f64]) -> Result<Forward> {
        if scale_at >= self.layers.len() {
            return Err(Error::InvalidArg(format!(
                "scale layer {scale_at} out of range ({} layers)",
                self.layers.len()
            )));
        }
        if scale.len() != self.layers[scale_at].out_dim() {
            return Err(Error::dim(
                format!("scale vector at layer {scale_at}"),
                self.layers[scale_at].out_dim(),
                scale.len(),
            ));
        }
        self.forward_impl(input, Some((scale_at, scale)))
    }

    fn forward_impl(&self, input: &[f64], scaling: Option<(usize, &[f64])>) -> Result<Forward> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("layer 0 input", self.input_dim(), input.len()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut site = None;
        let mut a = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            let mut act: Vec<f64> = z.iter().map(|&zi| layer.act.apply(zi)).collect();
            if let Some((at, s)) = scaling {
                if at == k {
                    let unscaled = act.clone();
                    for (ai, si) in act.iter_mut().zip(s) {
                        *ai *= si;
                    }
                    site = Some(ScaleSite {
                        layer: k,
                        scale: s.to_vec(),
                        unscaled,
                    });
                }
            }
            pre.push(z);
            a = act.clone();
            post.push(act);
        }
        Ok(Forward {
            input: input.to_vec(),
            pre,
            post,
            scale: site,
        })
    }

    /// Backpropagates dL/d(output) through the cached forward pass,
    /// accumulating into this net's gradient buffers.
    pub fn backward(&mut self, fwd: &Forward, d_output: &[f64]) -> Backward {
        assert_eq!(d_output.len(), self.output_dim(), "backward output dim");
        let mut d_post = d_output.to_vec();
        let mut d_scale_out = None;
        for k in (0..self.layers.len()).rev() {
            // Undo the element-wise scale before the activation derivative.
            let mut unscaled_post = &fwd.post[k];
            if let Some(site) = &fwd.scale {
                if site.layer == k {
                    let mut ds = vec![0.0; d_post.len()];
                    for i in 0..d_post.len() {
                        ds[i] = d_post[i] * site.unscaled[i];
                        d_post[i] *= site.scale[i];
                    }
                    d_scale_out = Some(ds);
                    unscaled_post = &site.unscaled;
                }
            }
            let layer = &self.layers[k];
            let d_pre: Vec<f64> = (0..d_post.len())
                .map(|i| d_post[i] * layer.act.deriv(fwd.pre[k][i], unscaled_post[i]))
                .collect();
            let below: &[f64] = if k == 0 { &fwd.input } else { &fwd.post[k - 1] };
            self.grads[k].w.add_outer(&d_pre, below);
            for (gb, dz) in self.grads[k].b.iter_mut().zip(&d_pre) {
                *gb += dz;
            }
            d_post = self.layers[k].w.t_matvec(&d_pre);
        }
        Backward {
            d_input: d_post,
            d_scale: d_scale_out,
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.w.fill(0.0);
            g.b.fill(0.0);
        }
    }

    /// p ← p − lr·g elementwise over all layers; gradients are left untouched.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArg(format!("learning rate {lr} must be > 0")));
        }
        for (layer, g) in self.layers.iter_mut().zip(&self.grads) {
            layer.w.add_scaled(&g.w, -lr);
            for (b, gb) in layer.b.iter_mut().zip(&g.b) {
                *b -= lr * gb;
            }
        }
        Ok(())
    }

    /// All parameters as one flat vector (layer-major, weights then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_from_flat(&mut self, theta: &[f64]) -> Result<()> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| l.w.data().len() + l.b.len())
            .sum();
        if theta.len() != expected {
            return Err(Error::dim("flat parameter vector", expected, theta.len()));
        }
        let mut ofs = 0;
        for l in &mut self.layers {
            let nw = l.w.data().len();
            l.w.data_mut().copy_from_slice(&theta[ofs..ofs + nw]);
            ofs += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&theta[ofs..ofs + nb]);
            ofs += nb;
        }
        Ok(())
    }

    /// Accumulated gradients, flattened in the same order as `flatten`.
    pub fn grads_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.grads {
            out.extend_from_slice(g.w.data());
            out.extend_from_slice(&g.b);
        }
        out
    }

    /// Squared L2 norm of the accumulated gradients.
    pub fn grad_sq_norm(&self) -> f64 {
        let mut n = 0.0;
        for g in &self.grads {
            n += g.w.data().iter().map(|x| x * x).sum::<f64>();
            n += g.b.iter().map(|x| x * x).sum::<f64>();
        }
        n
    }

    /// Scales every accumulated gradient by `c` (for global-norm clipping).
    pub fn scale_grads(&mut self, c: f64) {
        for g in &mut self.grads {
            g.w.data_mut().iter_mut().for_each(|x| *x *= c);
            g.b.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.data().len() + l.b.len())
            .sum()
    }
}

/// Elementwise SGD update for a bare parameter vector: p ← p − lr·g.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArg(format!("learning rate {lr} must be > 0")));
    }
    if params.len() != grads.len() {
        return Err(Error::dim("sgd_step gradient", params.len(), grads.len()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}
