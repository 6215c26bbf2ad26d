//! Dense feed-forward networks with hand-derived backward passes, Adam, and
//! the reconstruction loss.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Affine map `y = W x + b` followed by an activation. `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Activations retained by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

/// Parameter gradients, one `(dW, db)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl NetGrads {
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases, ReLU on hidden layers and identity on
    /// the output. `shape` lists layer widths from input to output.
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::invalid("network shape needs at least input and output widths"));
        }
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero-width layer in shape {shape:?}")));
        }
        let n = shape.len() - 1;
        let layers = shape
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == n {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::invalid("network needs at least one layer"))?;
        if last.activation != Activation::Identity {
            return Err(Error::invalid("final layer activation must be identity"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimensionMismatch {
                    what: "layer bias",
                    expected: l.out_dim(),
                    found: l.bias.len(),
                });
            }
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::invalid(format!("layer {i} has zero width")));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch {
                    what: "layer chain",
                    expected: pair[0].out_dim(),
                    found: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn shape(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn param_blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input width",
                expected: self.in_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let pre = current.dot(&layer.weights.t()) + &layer.bias;
            let out = match layer.activation {
                Activation::Relu => pre.mapv(|v| v.max(0.0)),
                Activation::Identity => pre.clone(),
            };
            inputs.push(current);
            pre_activations.push(pre);
            current = out;
        }
        Ok((
            current,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut current = x.to_owned();
        for layer in &self.layers {
            let mut pre = current.dot(&layer.weights.t()) + &layer.bias;
            if layer.activation == Activation::Relu {
                pre.mapv_inplace(|v| v.max(0.0));
            }
            current = pre;
        }
        Ok(current)
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> Result<(NetGrads, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                what: "forward cache layers",
                expected: self.layers.len(),
                found: cache.inputs.len(),
            });
        }
        let m = cache.inputs[0].nrows();
        if grad_output.dim() != (m, self.out_dim()) {
            return Err(Error::DimensionMismatch {
                what: "output gradient width",
                expected: self.out_dim(),
                found: grad_output.ncols(),
            });
        }
        for (layer, (input, pre)) in self.layers.iter().zip(cache.inputs.iter().zip(&cache.pre_activations)) {
            if input.ncols() != layer.in_dim() || pre.ncols() != layer.out_dim() || input.nrows() != m {
                return Err(Error::invalid("stale forward cache does not match the network"));
            }
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_output.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                upstream.zip_mut_with(&cache.pre_activations[i], |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let dw = upstream.t().dot(&cache.inputs[i]);
            let db = upstream.sum_axis(Axis(0));
            upstream = upstream.dot(&layer.weights);
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((NetGrads { layers: grads }, upstream))
    }
}

fn check_same_shape(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// `(1/m) Σ_i ‖x_i − x̃_i‖²`: averaged over rows, summed over coordinates.
pub fn mse(x: ArrayView2<f64>, recon: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(&x, &recon)?;
    if x.nrows() == 0 {
        return Err(Error::invalid("mse of an empty batch"));
    }
    let sum: f64 = x.iter().zip(recon.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.nrows() as f64)
}

/// Gradient of [`mse`] with respect to the reconstruction: `2(x̃ − x)/m`.
pub fn mse_grad(x: ArrayView2<f64>, recon: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_same_shape(&x, &recon)?;
    let scale = 2.0 / x.nrows() as f64;
    Ok((&recon - &x) * scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments, one pair per parameter block.
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(learning_rate: f64, block_sizes: &[usize]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: block_sizes
                .iter()
                .map(|&n| (vec![0.0; n], vec![0.0; n]))
                .collect(),
        }
    }

    pub fn for_net(learning_rate: f64, net: &DenseNet) -> Self {
        let sizes: Vec<usize> = net.param_blocks().iter().map(|b| b.len()).collect();
        Self::new(learning_rate, &sizes)
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient is
    /// non-finite; the error names the offending block.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], label: &str) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer parameter blocks",
                expected: self.moments.len(),
                found: params.len().min(grads.len()),
            });
        }
        for (i, ((p, g), (m, _))) in params.iter().zip(grads).zip(&self.moments).enumerate() {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::DimensionMismatch {
                    what: "optimizer block size",
                    expected: m.len(),
                    found: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient in {label} block {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.moments.iter_mut()) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
