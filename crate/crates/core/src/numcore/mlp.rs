use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Identity => v,
        }
    }

    #[inline]
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: `y = x W + b`, `W` is `in x out`, `b` is `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape(
                "Layer::new",
                format!(
                    "bias {:?} for weight {:?}",
                    bias.shape(),
                    weight.shape()
                ),
            ));
        }
        Ok(Layer { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: Matrix::zeros(1, self.bias.cols()),
        }
    }

    fn num_params(&self) -> usize {
        self.weight.data().len() + self.bias.data().len()
    }
}

/// Multilayer perceptron. `hidden` is applied after every layer but the
/// last, `output` after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    hidden: Activation,
    output: Activation,
}

/// Per-layer values recorded by [`MlpParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl ForwardCache {
    /// Post-activation output of layer `i`.
    pub fn activation(&self, i: usize) -> Option<&Matrix> {
        self.inputs.get(i + 1)
    }
}

/// Gradients with the same structure as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("MlpParams::new", "no layers"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    format!("layer {}", i + 1),
                    format!(
                        "input dim {} does not match previous output dim {}",
                        pair[1].in_dim(),
                        pair[0].out_dim()
                    ),
                ));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.out_dim() {
                return Err(Error::shape(
                    format!("layer {i}"),
                    format!("bias {:?} for weight {:?}", l.bias.shape(), l.weight.shape()),
                ));
            }
        }
        Ok(MlpParams {
            layers,
            hidden,
            output,
        })
    }

    /// Glorot-uniform weights, zero biases. `dims` lists every width from
    /// input to output.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output widths, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: Matrix::zeros(1, fan_out),
                }
            })
            .collect();
        MlpParams::new(layers, hidden, output)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    fn activation_of(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Leading `n` layers as a standalone network whose last layer keeps
    /// the hidden activation.
    pub fn truncated(&self, n: usize) -> Result<MlpParams> {
        if n == 0 || n > self.layers.len() {
            return Err(Error::Config(format!(
                "cannot keep {n} of {} layers",
                self.layers.len()
            )));
        }
        let output = if n == self.layers.len() {
            self.output
        } else {
            self.hidden
        };
        MlpParams::new(self.layers[..n].to_vec(), self.hidden, output)
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.in_dim() {
            return Err(Error::shape(
                "layer 0",
                format!(
                    "batch has {} columns, layer expects {}",
                    batch.cols(),
                    self.in_dim()
                ),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(batch.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = inputs.last().expect("non-empty");
            let mut z = x
                .matmul(&layer.weight)
                .map_err(|e| Error::shape(format!("layer {i}"), e.to_string()))?;
            z.add_row_broadcast(&layer.bias)?;
            let act = self.activation_of(i);
            let a = z.map(|v| act.apply(v));
            pre.push(z);
            inputs.push(a);
        }
        let out = inputs.last().expect("non-empty").clone();
        Ok((out, ForwardCache { inputs, pre }))
    }

    /// Output only.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.0)
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d output`.
    /// Returns parameter gradients and `d loss / d input`.
    pub fn backward(&self, cache: &ForwardCache, dout: &Matrix) -> Result<(Gradients, Matrix)> {
        self.backward_with_taps(cache, dout, &[])
    }

    /// Like [`MlpParams::backward`], with extra upstream gradients
    /// `(i, g)` added at the post-activation output of layer `i`, for
    /// losses that also read intermediate activations.
    pub fn backward_with_taps(
        &self,
        cache: &ForwardCache,
        dout: &Matrix,
        taps: &[(usize, &Matrix)],
    ) -> Result<(Gradients, Matrix)> {
        let n = self.layers.len();
        for &(i, g) in taps {
            if i >= n || cache.inputs.get(i + 1).map(Matrix::shape) != Some(g.shape()) {
                return Err(Error::shape(
                    format!("layer {i}"),
                    format!("tap gradient {:?} does not match activation", g.shape()),
                ));
            }
        }
        if cache.pre.len() != n || cache.inputs.len() != n + 1 {
            return Err(Error::shape(
                "backward",
                format!("cache holds {} layers, network has {n}", cache.pre.len()),
            ));
        }
        let out = &cache.inputs[n];
        if dout.shape() != out.shape() {
            return Err(Error::shape(
                format!("layer {}", n - 1),
                format!(
                    "upstream gradient {:?} for output {:?}",
                    dout.shape(),
                    out.shape()
                ),
            ));
        }
        let mut grads = Vec::with_capacity(n);
        let mut delta = dout.clone();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let z = &cache.pre[i];
            if z.cols() != layer.out_dim() || cache.inputs[i].cols() != layer.in_dim() {
                return Err(Error::shape(
                    format!("layer {i}"),
                    "cache does not match parameters",
                ));
            }
            for &(_, g) in taps.iter().filter(|t| t.0 == i) {
                delta.axpy(1.0, g)?;
            }
            let act = self.activation_of(i);
            for (d, &p) in delta.data_mut().iter_mut().zip(z.data()) {
                *d *= act.grad(p);
            }
            let dw = cache.inputs[i].t_matmul(&delta)?;
            let db = delta.sum_rows();
            let dx = delta.matmul_t(&layer.weight)?;
            grads.push(Layer {
                weight: dw,
                bias: db,
            });
            delta = dx;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Flat parameter view: each layer's weights (row-major) then bias.
    pub fn param(&self, idx: usize) -> f64 {
        let (l, w, off) = locate(&self.layers, idx);
        if w {
            self.layers[l].weight.data()[off]
        } else {
            self.layers[l].bias.data()[off]
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let (l, w, off) = locate(&self.layers, idx);
        if w {
            self.layers[l].weight.data_mut()[off] = v;
        } else {
            self.layers[l].bias.data_mut()[off] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn is_congruent(&self, grads: &Gradients) -> bool {
        self.layers.len() == grads.layers.len()
            && self.layers.iter().zip(&grads.layers).all(|(p, g)| {
                p.weight.shape() == g.weight.shape() && p.bias.shape() == g.bias.shape()
            })
    }
}

fn locate(layers: &[Layer], mut idx: usize) -> (usize, bool, usize) {
    for (l, layer) in layers.iter().enumerate() {
        let nw = layer.weight.data().len();
        if idx < nw {
            return (l, true, idx);
        }
        idx -= nw;
        let nb = layer.bias.data().len();
        if idx < nb {
            return (l, false, idx);
        }
        idx -= nb;
    }
    panic!("parameter index out of range");
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            layers: params.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("Gradients::accumulate", "layer count differs"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.axpy(1.0, &b.weight)?;
            a.bias.axpy(1.0, &b.bias)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Same flat indexing as [`MlpParams::param`].
    pub fn get(&self, idx: usize) -> f64 {
        let (l, w, off) = locate(&self.layers, idx);
        if w {
            self.layers[l].weight.data()[off]
        } else {
            self.layers[l].bias.data()[off]
        }
    }

    pub fn set(&mut self, idx: usize, v: f64) {
        let (l, w, off) = locate(&self.layers, idx);
        if w {
            self.layers[l].weight.data_mut()[off] = v;
        } else {
            self.layers[l].bias.data_mut()[off] = v;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }
}
