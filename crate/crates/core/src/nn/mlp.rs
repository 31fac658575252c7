use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, SeededRng};

/// Fully connected layer computing `x · weight + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `d_in × d_out`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_in, d_out),
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }
}

/// Rectifier MLP with a linear output layer producing logits.
///
/// Also used to hold gradients and optimizer slots, which share the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Gradients share the parameter layout.
pub type Gradients = MlpParams;

/// Activations kept by [`MlpParams::forward_cached`] for the backward pass.
///
/// `activations[0]` is the input; `activations[i]` the rectified output of hidden layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Matrix>,
}

impl ForwardCache {
    /// Output of the last hidden layer (the input itself for a single-layer net).
    pub fn penultimate(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl MlpParams {
    /// Gaussian weights with scale `1/√d_in`, zero biases.
    ///
    /// `dims` lists every width, input first and class count last.
    pub fn init(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be >= 2 entries, all positive; got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let scale = 1.0 / (d_in as f64).sqrt();
                let data = (0..d_in * d_out).map(|_| scale * rng.standard_normal()).collect();
                Dense {
                    weight: Matrix::from_vec(d_in, d_out, data).expect("sized above"),
                    bias: vec![0.0; d_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for l in &layers {
            if l.bias.len() != l.d_out() {
                return Err(Error::shape("Dense bias", l.d_out(), l.bias.len()));
            }
        }
        for w in layers.windows(2) {
            if w[0].d_out() != w[1].d_in() {
                return Err(Error::shape("layer chaining", w[0].d_out(), w[1].d_in()));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero parameters with the same layout as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.d_in(), l.d_out())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::d_out)
    }

    /// Widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::d_out))
            .collect()
    }

    pub fn same_layout(&self, other: &MlpParams) -> bool {
        self.dims() == other.dims()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Every scalar, layer by layer: weights (row-major) then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    /// `self += a · other`.
    pub fn add_scaled(&mut self, other: &MlpParams, a: f64) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::shape(
                "add_scaled",
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        for (p, q) in self.values_mut().zip(other.values()) {
            *p += a * q;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Largest absolute elementwise difference; infinite when layouts differ.
    pub fn max_abs_diff(&self, other: &MlpParams) -> f64 {
        if !self.same_layout(other) {
            return f64::INFINITY;
        }
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// Forward pass that also returns the activations needed by [`Self::backward_cached`].
    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        let last = self.layers.len() - 1;
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.apply(activations.last().expect("non-empty"))?;
            if i < last {
                relu_in_place(&mut h);
                activations.push(h);
            } else {
                logits = Some(h);
            }
        }
        Ok((logits.expect("at least one layer"), ForwardCache { activations }))
    }

    /// Output of the last hidden layer; the raw input when there is no hidden layer.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.1.penultimate().clone())
    }

    /// Reverse-mode gradients of `Σ grad_logits ⊙ f(x)` with respect to every parameter.
    pub fn backward(&self, x: &Matrix, grad_logits: &Matrix) -> Result<Gradients> {
        let (_, cache) = self.forward_cached(x)?;
        self.backward_cached(&cache, grad_logits)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, grad_logits: &Matrix) -> Result<Gradients> {
        let n = cache.activations[0].rows();
        if grad_logits.shape() != (n, self.output_dim()) {
            return Err(Error::shape(
                "backward upstream gradient",
                format!("{}x{}", n, self.output_dim()),
                format!("{}x{}", grad_logits.rows(), grad_logits.cols()),
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[i];
            let weight = input.t_matmul(&delta)?;
            let bias = delta.column_sums();
            if i > 0 {
                let mut upstream = delta.matmul_t(&layer.weight)?;
                // rectifier derivative from the stored post-activation
                for (u, &a) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= 0.0 {
                        *u = 0.0;
                    }
                }
                delta = upstream;
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        Ok(MlpParams { layers: grads })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("forward input", self.input_dim(), x.cols()));
        }
        Ok(())
    }
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
