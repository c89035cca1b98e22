use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NeuralError;
use crate::integrators::VectorField;
use crate::seeds;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x * sigmoid(x)`.
#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Dot product with four independent accumulators so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// A multilayer perceptron vector field with Swish hidden activations and a
/// linear output layer. Parameters are stored flat, layer by layer, each layer
/// as a row-major `out x in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`MlpField::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Input of every layer, concatenated.
    acts: Vec<f64>,
    /// Pre-activation of every hidden layer, concatenated.
    pre: Vec<f64>,
    /// Sigmoid of each pre-activation.
    sig: Vec<f64>,
}

impl MlpField {
    /// `dims = [d, h_1, ..., h_k, d]`.
    pub fn zeros(dims: Vec<usize>) -> Result<Self, NeuralError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NeuralError::InvalidConfig("layer widths must be positive".into()));
        }
        if dims[0] != dims[dims.len() - 1] {
            return Err(NeuralError::InvalidConfig("input and output dimension differ".into()));
        }
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(MlpField { dims, params: vec![0.0; n] })
    }

    /// Glorot-uniform weights, zero biases. The output layer is scaled down so
    /// the initial field is small.
    pub fn random(dims: Vec<usize>, seed: u64) -> Result<Self, NeuralError> {
        let mut field = Self::zeros(dims)?;
        let mut rng = seeds::stream(seed, "mlp-init");
        let n_layers = field.n_layers();
        for l in 0..n_layers {
            let (n_in, n_out) = (field.dims[l], field.dims[l + 1]);
            let mut bound = (6.0 / (n_in + n_out) as f64).sqrt();
            if l + 1 == n_layers {
                bound *= 0.1;
            }
            let (w, _) = field.layer_range(l);
            for p in &mut field.params[w] {
                *p = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        Ok(field)
    }

    pub fn from_layers(layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self, NeuralError> {
        let first = layers.first().ok_or_else(|| NeuralError::InvalidConfig("no layers".into()))?;
        let mut dims = vec![first.0.first().map_or(0, Vec::len)];
        for (w, b) in &layers {
            if w.len() != b.len() || w.iter().any(|row| row.len() != dims[dims.len() - 1]) {
                return Err(NeuralError::InvalidConfig("inconsistent layer shapes".into()));
            }
            dims.push(b.len());
        }
        let mut field = Self::zeros(dims)?;
        field.params = layers.into_iter().flat_map(|(w, b)| w.into_iter().flatten().chain(b)).collect();
        if field.params.iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::NonFinite);
        }
        Ok(field)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.dims[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Index ranges of layer `l`'s weights and bias in the flat parameter vector.
    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = self.layer_offset(l);
        let nw = self.dims[l] * self.dims[l + 1];
        (start..start + nw, start + nw..start + nw + self.dims[l + 1])
    }

    /// Weights (as rows) and bias of every layer.
    pub fn layers(&self) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
        (0..self.n_layers())
            .map(|l| {
                let (w, b) = self.layer_range(l);
                let rows = self.params[w].chunks(self.dims[l]).map(<[f64]>::to_vec).collect();
                (rows, self.params[b].to_vec())
            })
            .collect()
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>, NeuralError> {
        if z.len() != self.dims[0] {
            return Err(NeuralError::DimensionMismatch { expected: self.dims[0], got: z.len() });
        }
        let mut out = vec![0.0; self.dims[0]];
        self.forward_into(z, &mut out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(NeuralError::NonFinite)
        }
    }

    fn forward_into(&self, z: &[f64], out: &mut [f64]) {
        let mut cur = z.to_vec();
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (wr, br) = self.layer_range(l);
            let w = &self.params[wr];
            let b = &self.params[br];
            let mut next = vec![0.0; n_out];
            for (o, nx) in next.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let s = dot(row, &cur);
                *nx = if l == last { s + b[o] } else { swish(s + b[o]) };
            }
            cur = next;
        }
        out.copy_from_slice(&cur);
    }

    /// Forward pass that records what [`MlpField::backward`] needs.
    pub fn forward_cached(&self, z: &[f64], cache: &mut ForwardCache, out: &mut [f64]) {
        let last = self.n_layers() - 1;
        cache.acts.clear();
        cache.pre.clear();
        cache.sig.clear();
        cache.acts.extend_from_slice(z);
        let mut in_off = 0;
        for l in 0..=last {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (wr, br) = self.layer_range(l);
            let w = &self.params[wr];
            let b = &self.params[br];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let input = &cache.acts[in_off..in_off + n_in];
                let s = dot(row, input) + b[o];
                if l == last {
                    out[o] = s;
                } else {
                    let sg = sigmoid(s);
                    cache.pre.push(s);
                    cache.sig.push(sg);
                    cache.acts.push(s * sg);
                }
            }
            in_off += n_in;
        }
    }

    /// Reverse pass: given `d loss / d output`, accumulates `d loss / d params`
    /// into `grad_params` and writes `d loss / d input` into `grad_input`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grad_params: &mut [f64], grad_input: &mut [f64]) {
        let n_layers = self.n_layers();
        let mut act_offsets = Vec::with_capacity(n_layers);
        let mut pre_offsets = Vec::with_capacity(n_layers);
        let (mut a, mut p) = (0, 0);
        for l in 0..n_layers {
            act_offsets.push(a);
            pre_offsets.push(p);
            a += self.dims[l];
            if l + 1 < n_layers {
                p += self.dims[l + 1];
            }
        }
        let mut g = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (wr, br) = self.layer_range(l);
            let input = &cache.acts[act_offsets[l]..act_offsets[l] + n_in];
            let mut g_in = vec![0.0; n_in];
            let w = &self.params[wr.clone()];
            let gw = &mut grad_params[wr];
            for o in 0..n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (gi, wv) in g_in.iter_mut().zip(row) {
                    *gi += go * wv;
                }
                for (gwv, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *gwv += go * x;
                }
            }
            for (gb, go) in grad_params[br].iter_mut().zip(&g) {
                *gb += go;
            }
            if l > 0 {
                let range = pre_offsets[l - 1]..pre_offsets[l - 1] + n_in;
                let (pre, sig) = (&cache.pre[range.clone()], &cache.sig[range]);
                for ((gi, u), sg) in g_in.iter_mut().zip(pre).zip(sig) {
                    *gi *= sg + u * sg * (1.0 - sg);
                }
                g = g_in;
            } else {
                grad_input.copy_from_slice(&g_in);
            }
        }
    }

    pub fn to_model_file(&self, seed: u64, final_val_mse: f64) -> ModelFile {
        ModelFile {
            arch: Arch { dims: self.dims.clone(), activation: "swish".into() },
            layers: self.layers().into_iter().map(|(w, b)| LayerFile { w, b }).collect(),
            train_meta: TrainMeta { seed, final_val_mse },
        }
    }
}

impl VectorField for MlpField {
    fn dim(&self) -> usize {
        self.dims[0]
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        self.forward_into(z, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub dims: Vec<usize>,
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub final_val_mse: f64,
}

/// On-disk model: `{arch:{dims, activation}, layers:[{w, b}], train_meta:{seed, final_val_mse}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub arch: Arch,
    pub layers: Vec<LayerFile>,
    pub train_meta: TrainMeta,
}

impl ModelFile {
    pub fn into_field(self) -> Result<MlpField, NeuralError> {
        if self.arch.activation != "swish" {
            return Err(NeuralError::InvalidConfig(format!("unsupported activation `{}`", self.arch.activation)));
        }
        let field = MlpField::from_layers(self.layers.into_iter().map(|l| (l.w, l.b)).collect())?;
        if field.dims() != self.arch.dims.as_slice() {
            return Err(NeuralError::InvalidConfig("arch dims disagree with layer shapes".into()));
        }
        Ok(field)
    }
}
