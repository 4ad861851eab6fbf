//! Dense multilayer perceptron with hand-written forward and backward
//! passes. The topology is fixed (a stack of affine layers with one hidden
//! nonlinearity), which keeps backprop small enough to verify against
//! finite differences exhaustively.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::{Error, Result};

pub const MLP_FORMAT_VERSION: u32 = 1;

/// Hidden-layer nonlinearity. The final layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at a pre-activation value.
    #[inline]
    pub fn derivative(self, preact: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = preact.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: a rows x cols weight matrix (row-major) and a bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn new(rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != rows * cols || bias.len() != rows {
            return Err(Error::Shape(format!(
                "layer {rows}x{cols}: got {} weights, {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            weight,
            bias,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// out = W x + b
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// Parameters of an MLP: ordered layers plus the hidden nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub format_version: u32,
    pub activation: Activation,
    pub layers: Vec<LayerParams>,
}

impl MlpParams {
    pub fn new(layers: Vec<LayerParams>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("mlp needs at least one layer".into()));
        }
        for k in 1..layers.len() {
            if layers[k].cols != layers[k - 1].rows {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but layer {} outputs {}",
                    layers[k].cols,
                    k - 1,
                    layers[k - 1].rows
                )));
            }
        }
        let params = Self {
            format_version: MLP_FORMAT_VERSION,
            activation,
            layers,
        };
        if !params.is_finite() {
            return Err(Error::Config("mlp parameters must be finite".into()));
        }
        Ok(params)
    }

    /// All-zero network for the given `[in, hidden.., out]` widths.
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("mlp needs at least [in, out] dims".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| LayerParams::zeros(w[1], w[0]))
            .collect();
        Self::new(layers, activation)
    }

    /// Uniform Xavier-style init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// biases zero. Breaks hidden-unit symmetry for gradient training.
    pub fn init_uniform(dims: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut mlp = Self::zeros(dims, activation)?;
        for layer in &mut mlp.layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for w in &mut layer.weight {
                *w = super::rng::uniform(rng, -bound, bound);
            }
        }
        Ok(mlp)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    /// Width of the activation vector entering the final layer.
    pub fn latent_dim(&self) -> usize {
        self.layers.last().unwrap().cols
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flattens all parameters (per layer: row-major weights, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Rebuilds a network with this network's shapes from a flat vector.
    pub fn with_params(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} params, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut mlp = self.clone();
        let mut off = 0;
        for l in &mut mlp.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(mlp)
    }
}

/// Forward-pass trace: the input seen by every layer, the pre-activations,
/// and the final output. Retained for backprop and for reading the latent.
#[derive(Clone, Debug)]
pub struct MlpForward {
    /// `layer_inputs[k]` is the vector fed to layer k; index 0 is the input.
    pub layer_inputs: Vec<Vec<f64>>,
    pub preacts: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl MlpForward {
    /// Activation vector entering the final layer.
    pub fn latent(&self) -> &[f64] {
        self.layer_inputs.last().unwrap()
    }
}

/// Runs the network on `input`, returning output plus per-layer activations.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<MlpForward> {
    if input.len() != params.in_dim() {
        return Err(Error::Shape(format!(
            "mlp expects input dim {}, got {}",
            params.in_dim(),
            input.len()
        )));
    }
    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut preacts = Vec::with_capacity(n_layers);
    let mut x = input.to_vec();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut pre = Vec::new();
        layer.affine(&x, &mut pre);
        layer_inputs.push(std::mem::take(&mut x));
        if k + 1 < n_layers {
            x = pre.iter().map(|&v| params.activation.apply(v)).collect();
        } else {
            x = pre.clone();
        }
        preacts.push(pre);
    }
    Ok(MlpForward {
        layer_inputs,
        preacts,
        output: x,
    })
}

/// Per-layer parameter gradients, shaped like the network they came from.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<LayerParams>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }
}

/// Backpropagates `upstream` = dL/d(output) through a recorded forward pass,
/// returning the gradient of L w.r.t. every weight and bias.
pub fn mlp_backward(params: &MlpParams, trace: &MlpForward, upstream: &[f64]) -> MlpGrads {
    assert_eq!(
        upstream.len(),
        params.out_dim(),
        "upstream gradient dim must match output dim"
    );
    let n_layers = params.layers.len();
    let mut grads = MlpGrads::zeros_like(params);
    let mut g = upstream.to_vec(); // dL/d(layer output after activation)
    for k in (0..n_layers).rev() {
        let layer = &params.layers[k];
        // dL/d(preact): the final layer has no activation.
        let g_pre: Vec<f64> = if k == n_layers - 1 {
            g.clone()
        } else {
            g.iter()
                .zip(&trace.preacts[k])
                .map(|(gi, &a)| gi * params.activation.derivative(a))
                .collect()
        };
        let input = &trace.layer_inputs[k];
        let gl = &mut grads.layers[k];
        for r in 0..layer.rows {
            gl.bias[r] = g_pre[r];
            let row = &mut gl.weight[r * layer.cols..(r + 1) * layer.cols];
            for (c, w) in row.iter_mut().enumerate() {
                *w = g_pre[r] * input[c];
            }
        }
        if k > 0 {
            // dL/d(input) = W^T g_pre
            let mut gi = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let row = &layer.weight[r * layer.cols..(r + 1) * layer.cols];
                for (c, w) in row.iter().enumerate() {
                    gi[c] += w * g_pre[r];
                }
            }
            g = gi;
        }
    }
    grads
}
