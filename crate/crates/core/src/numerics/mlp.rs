//! Feedforward network: `h(x) = W_d a(W_{d-1} ... a(W_1 x))` with a softmax head.
//!
//! The architecture family is deliberately fixed (dense layers, ReLU or
//! identity hidden activation, optional biases). Backpropagation is written
//! against exactly this family, and the gradient checker in
//! [`crate::numerics::gradcheck`] keeps it honest.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::matrix::argmax;
use crate::numerics::Matrix;

/// Clamp applied inside every `-log` so losses stay finite.
pub const EPS_LOG: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the post-activation value, which is all
    /// the backward pass keeps around.
    #[inline]
    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            other => Err(Error::domain(format!("unknown activation code {other}"))),
        }
    }
}

/// Dense feedforward model. Layer `k` maps dimension `dims[k]` to `dims[k+1]`
/// via a `dims[k+1] x dims[k]` weight matrix; the hidden activation sits
/// between layers, never after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    weights: Vec<Matrix>,
    biases: Option<Vec<Vec<f64>>>,
    activation: Activation,
}

impl MlpModel {
    /// Zero-initialized model over the dimension chain `dims`.
    pub fn new(dims: &[usize], activation: Activation, with_biases: bool) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::domain("model needs at least input and output dims"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::domain("layer dimensions must be positive"));
        }
        let weights = dims
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = with_biases.then(|| dims[1..].iter().map(|&d| vec![0.0; d]).collect());
        Ok(MlpModel {
            weights,
            biases,
            activation,
        })
    }

    /// He-style uniform init, deterministic under `seed`. Biases start at zero.
    pub fn random_init(
        dims: &[usize],
        activation: Activation,
        with_biases: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut model = MlpModel::new(dims, activation, with_biases)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut model.weights {
            let limit = (6.0 / w.cols() as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn from_weights(weights: Vec<Matrix>, biases: Option<Vec<Vec<f64>>>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("model needs at least one layer"));
        }
        for pair in weights.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::shape(format!(
                    "layer dimensions do not chain: {}x{} followed by {}x{}",
                    pair[0].rows(),
                    pair[0].cols(),
                    pair[1].rows(),
                    pair[1].cols()
                )));
            }
        }
        if let Some(bs) = &biases {
            if bs.len() != weights.len() {
                return Err(Error::shape("one bias vector per layer required"));
            }
            for (b, w) in bs.iter().zip(&weights) {
                if b.len() != w.rows() {
                    return Err(Error::shape("bias length must match layer output dim"));
                }
            }
        }
        Ok(MlpModel {
            weights,
            biases,
            activation,
        })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].rows()
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn has_biases(&self) -> bool {
        self.biases.is_some()
    }

    /// Frobenius norm of each weight matrix, in layer order. Biases are not
    /// part of the bound diagnostic and are deliberately excluded here.
    pub fn weight_frobenius_norms(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    fn layer_out(&self, layer: usize, input: &[f64], last: bool) -> Vec<f64> {
        let w = &self.weights[layer];
        let mut out = w.matvec(input).expect("layer dims chain by construction");
        if let Some(bs) = &self.biases {
            for (o, b) in out.iter_mut().zip(&bs[layer]) {
                *o += b;
            }
        }
        if !last {
            for o in &mut out {
                *o = self.activation.apply(*o);
            }
        }
        out
    }

    /// Logits and softmax output for one input.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let softmax = trace.softmax.clone();
        Ok((trace.into_logits(), softmax))
    }

    /// Forward pass keeping every intermediate activation for backprop.
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input of length {} against model input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let d = self.num_layers();
        let mut activations = Vec::with_capacity(d + 1);
        activations.push(x.to_vec());
        for layer in 0..d {
            let out = self.layer_out(layer, &activations[layer], layer + 1 == d);
            activations.push(out);
        }
        let softmax = softmax(activations.last().expect("at least one layer"));
        Ok(ForwardTrace {
            activations,
            softmax,
        })
    }

    /// Predicted class: argmax of the softmax (equivalently of the logits),
    /// ties to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let trace = self.forward_trace(x)?;
        Ok(argmax(&trace.softmax))
    }

    /// Backpropagates an upstream gradient on the logits down to every
    /// parameter. The trace must come from this model.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[f64]) -> Result<ModelGrads> {
        if dlogits.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "upstream gradient of length {} against output dim {}",
                dlogits.len(),
                self.output_dim()
            )));
        }
        if trace.activations.len() != self.num_layers() + 1 {
            return Err(Error::shape("trace does not match model depth"));
        }

        let mut grads = ModelGrads::zeros_like(self);
        let mut delta = dlogits.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let input = &trace.activations[layer];
            let w = &self.weights[layer];
            // dW = delta * input^T, db = delta.
            let gw = &mut grads.weights[layer];
            for (i, &di) in delta.iter().enumerate() {
                let grow = gw.row_mut(i);
                for (g, &xi) in grow.iter_mut().zip(input) {
                    *g = di.mul_add(xi, *g);
                }
            }
            if let Some(gbs) = &mut grads.biases {
                for (g, &di) in gbs[layer].iter_mut().zip(&delta) {
                    *g += di;
                }
            }
            if layer > 0 {
                let mut prev = w.transposed_matvec(&delta).expect("shapes chain");
                for (p, &out) in prev.iter_mut().zip(&trace.activations[layer]) {
                    *p *= self.activation.grad_from_output(out);
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let w: usize = self.weights.iter().map(|m| m.as_slice().len()).sum();
        let b: usize = self
            .biases
            .as_ref()
            .map(|bs| bs.iter().map(Vec::len).sum())
            .unwrap_or(0);
        w + b
    }

    /// Appends all parameters (weights layer by layer, then biases) to `out`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for w in &self.weights {
            out.extend_from_slice(w.as_slice());
        }
        if let Some(bs) = &self.biases {
            for b in bs {
                out.extend_from_slice(b);
            }
        }
    }

    /// Overwrites parameters from a flat slice laid out as by `flatten_into`.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat buffer of {} values against {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for w in &mut self.weights {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        if let Some(bs) = &mut self.biases {
            for b in bs {
                let n = b.len();
                b.copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    /// Writes the binary model format:
    /// all integers little-endian u32, all floats little-endian f64;
    /// header `[num_layers, activation, has_biases, dims[0..=num_layers]]`,
    /// then each weight matrix row-major, then (if present) each bias vector.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_u32::<LittleEndian>(self.num_layers() as u32)?;
        w.write_u32::<LittleEndian>(self.activation.code())?;
        w.write_u32::<LittleEndian>(self.biases.is_some() as u32)?;
        w.write_u32::<LittleEndian>(self.input_dim() as u32)?;
        for layer in &self.weights {
            w.write_u32::<LittleEndian>(layer.rows() as u32)?;
        }
        for layer in &self.weights {
            for v in layer.as_slice() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        if let Some(bs) = &self.biases {
            for b in bs {
                for v in b {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let d = r.read_u32::<LittleEndian>()? as usize;
        if d == 0 || d > 1024 {
            return Err(Error::domain(format!("implausible layer count {d}")));
        }
        let activation = Activation::from_code(r.read_u32::<LittleEndian>()?)?;
        let has_biases = r.read_u32::<LittleEndian>()? != 0;
        let mut dims = Vec::with_capacity(d + 1);
        dims.push(r.read_u32::<LittleEndian>()? as usize);
        for _ in 0..d {
            dims.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let mut model = MlpModel::new(&dims, activation, has_biases)?;
        for w in &mut model.weights {
            for v in w.as_mut_slice() {
                *v = r.read_f64::<LittleEndian>()?;
            }
        }
        if let Some(bs) = &mut model.biases {
            for b in bs {
                for v in b.iter_mut() {
                    *v = r.read_f64::<LittleEndian>()?;
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Intermediate activations of one forward pass.
/// `activations[0]` is the input, `activations[d]` the logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    activations: Vec<Vec<f64>>,
    pub softmax: Vec<f64>,
}

impl ForwardTrace {
    #[inline]
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("non-empty trace")
    }

    fn into_logits(mut self) -> Vec<f64> {
        self.activations.pop().expect("non-empty trace")
    }
}

/// Parameter gradients with the same shapes as the model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub weights: Vec<Matrix>,
    pub biases: Option<Vec<Vec<f64>>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        ModelGrads {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model
                .biases
                .as_ref()
                .map(|bs| bs.iter().map(|b| vec![0.0; b.len()]).collect()),
        }
    }

    /// `self += scale * other`.
    pub fn scaled_add(&mut self, other: &ModelGrads, scale: f64) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::shape("gradient layer counts differ"));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(b, scale)?;
        }
        match (&mut self.biases, &other.biases) {
            (Some(xs), Some(ys)) => {
                for (x, y) in xs.iter_mut().zip(ys) {
                    for (a, b) in x.iter_mut().zip(y) {
                        *a = b.mul_add(scale, *a);
                    }
                }
            }
            (None, None) => {}
            _ => return Err(Error::shape("bias presence differs between gradients")),
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.scale(factor);
        }
        if let Some(bs) = &mut self.biases {
            for b in bs {
                for v in b {
                    *v *= factor;
                }
            }
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for w in &self.weights {
            out.extend_from_slice(w.as_slice());
        }
        if let Some(bs) = &self.biases {
            for b in bs {
                out.extend_from_slice(b);
            }
        }
    }

    pub fn l1_norm(&self) -> f64 {
        let mut acc: f64 = self.weights.iter().map(Matrix::l1_norm).sum();
        if let Some(bs) = &self.biases {
            acc += bs
                .iter()
                .flat_map(|b| b.iter())
                .map(|v| v.abs())
                .sum::<f64>();
        }
        acc
    }
}

/// Numerically stable softmax: subtracts the max logit before exponentiating,
/// so the result is invariant to shifting all logits by a constant.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    out
}

/// `-log(max(g_label, EPS_LOG))`.
pub fn cross_entropy(softmax: &[f64], label: usize) -> Result<f64> {
    if label >= softmax.len() {
        return Err(Error::domain(format!(
            "label {label} out of range for {} classes",
            softmax.len()
        )));
    }
    Ok(-softmax[label].max(EPS_LOG).ln())
}
