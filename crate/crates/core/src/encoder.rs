//! GCN encoder and two-layer projection head with explicit backward passes.
//!
//! Rows are nodes throughout; weights multiply on the right. Neither the
//! encoder nor the head carries bias terms.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{spmm, PropagationOperator};
use crate::numcore::{glorot_init, Matrix, ParamTensor, Parameterized, Rng};

pub const LEAKY_SLOPE: f64 = 0.01;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
    /// no nonlinearity; used to check the linear case in closed form
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at the pre-activation value `x`; the left branch at 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn forward(self, pre: &Matrix) -> Matrix {
        pre.map(|v| self.apply(v))
    }

    /// `upstream ⊙ σ'(pre)`
    fn backward(self, pre: &Matrix, upstream: &Matrix) -> Matrix {
        let mut out = upstream.clone();
        for (g, &p) in out.data_mut().iter_mut().zip(pre.data()) {
            *g *= self.derivative(p);
        }
        out
    }
}

/// GCN layer weights `W⁰..W^{L-1}`.
#[derive(Debug)]
pub struct EncoderParams {
    id: u64,
    version: u64,
    layers: Vec<ParamTensor>,
    pub activation: Activation,
    /// apply the activation after the last layer too
    pub activate_last: bool,
}

impl EncoderParams {
    /// Glorot-initialized encoder with `widths.len() - 1` layers.
    pub fn new(widths: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "encoder needs at least one layer, got widths {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| Ok(ParamTensor::new(format!("encoder.{l}"), glorot_init(w[0], w[1], rng)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_layers(layers, activation))
    }

    pub fn from_weights(weights: Vec<Matrix>, activation: Activation) -> Result<Self> {
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::dim(
                    "EncoderParams::from_weights",
                    format!("layer {l} {}", pair[0].shape_str()),
                    format!("layer {} {}", l + 1, pair[1].shape_str()),
                ));
            }
        }
        if weights.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let layers = weights
            .into_iter()
            .enumerate()
            .map(|(l, w)| ParamTensor::new(format!("encoder.{l}"), w))
            .collect();
        Ok(Self::from_layers(layers, activation))
    }

    fn from_layers(layers: Vec<ParamTensor>, activation: Activation) -> Self {
        EncoderParams {
            id: fresh_id(),
            version: 0,
            layers,
            activation,
            activate_last: true,
        }
    }

    /// Identity of this parameter set. Clones receive a new id.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].value().rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].value().cols()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.value().cols()));
        w
    }

    pub fn weights(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().map(ParamTensor::value)
    }

    fn layer_activation(&self, l: usize) -> Activation {
        if l + 1 == self.layers.len() && !self.activate_last {
            Activation::Identity
        } else {
            self.activation
        }
    }
}

impl Clone for EncoderParams {
    fn clone(&self) -> Self {
        EncoderParams {
            id: fresh_id(),
            version: 0,
            layers: self.layers.clone(),
            activation: self.activation,
            activate_last: self.activate_last,
        }
    }
}

impl Parameterized for EncoderParams {
    fn tensors(&self) -> Vec<&ParamTensor> {
        self.layers.iter().collect()
    }

    /// Mutable access invalidates outstanding forward caches.
    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.version += 1;
        self.layers.iter_mut().collect()
    }

    fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(ParamTensor::zero_grad);
    }
}

/// Activations saved by [`encode`] for [`encode_backward`].
#[derive(Clone, Debug)]
pub struct EncoderCache {
    encoder_id: u64,
    version: u64,
    /// `S·Hˡ` per layer
    propagated: Vec<Matrix>,
    /// `S·Hˡ·Wˡ` per layer
    pre: Vec<Matrix>,
}

impl EncoderCache {
    /// Id of the encoder that produced this cache.
    pub fn encoder_id(&self) -> u64 {
        self.encoder_id
    }
}

/// `Hˡ⁺¹ = σ(S·Hˡ·Wˡ)` for every layer, starting from `H⁰ = X`.
pub fn encode(s: &PropagationOperator, x: &Matrix, params: &EncoderParams) -> Result<(Matrix, EncoderCache)> {
    if x.rows() != s.dim() {
        return Err(Error::dim(
            "encode",
            format!("operator {}x{}", s.dim(), s.dim()),
            format!("features {}", x.shape_str()),
        ));
    }
    if x.cols() != params.input_width() {
        return Err(Error::dim(
            "encode",
            format!("features {}", x.shape_str()),
            format!("encoder input width {}", params.input_width()),
        ));
    }
    let mut propagated = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut h = x.clone();
    for (l, w) in params.layers.iter().enumerate() {
        let sh = spmm(s, &h)?;
        let p = sh.matmul(w.value())?;
        h = params.layer_activation(l).forward(&p);
        propagated.push(sh);
        pre.push(p);
    }
    Ok((
        h,
        EncoderCache {
            encoder_id: params.id,
            version: params.version,
            propagated,
            pre,
        },
    ))
}

/// Accumulates `∂L/∂Wˡ` into `params` and returns `∂L/∂X`.
pub fn encode_backward(
    upstream: &Matrix,
    cache: &EncoderCache,
    s: &PropagationOperator,
    params: &mut EncoderParams,
) -> Result<Matrix> {
    if cache.encoder_id != params.id || cache.version != params.version {
        return Err(Error::State(
            "encoder cache does not belong to the current parameter values".into(),
        ));
    }
    let last = cache.pre.len() - 1;
    if upstream.shape() != cache.pre[last].shape() {
        return Err(Error::dim(
            "encode_backward",
            upstream.shape_str(),
            cache.pre[last].shape_str(),
        ));
    }
    let mut grad_h = upstream.clone();
    for l in (0..cache.pre.len()).rev() {
        let grad_pre = params.layer_activation(l).backward(&cache.pre[l], &grad_h);
        let grad_w = cache.propagated[l].matmul_tn(&grad_pre)?;
        params.layers[l].accumulate(&grad_w)?;
        let grad_sh = grad_pre.matmul_nt(params.layers[l].value())?;
        // S is symmetric, so Sᵀ·G = S·G
        grad_h = spmm(s, &grad_sh)?;
    }
    Ok(grad_h)
}

/// Projection head `g(H) = σ(H·W⁽¹⁾)·W⁽²⁾`.
#[derive(Clone, Debug)]
pub struct ProjectionParams {
    pub w1: ParamTensor,
    pub w2: ParamTensor,
    pub activation: Activation,
}

impl ProjectionParams {
    pub fn new(input: usize, hidden: usize, output: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        Ok(ProjectionParams {
            w1: ParamTensor::new("head.w1", glorot_init(input, hidden, rng)?),
            w2: ParamTensor::new("head.w2", glorot_init(hidden, output, rng)?),
            activation,
        })
    }

    pub fn from_weights(w1: Matrix, w2: Matrix, activation: Activation) -> Result<Self> {
        if w1.cols() != w2.rows() {
            return Err(Error::dim(
                "ProjectionParams::from_weights",
                w1.shape_str(),
                w2.shape_str(),
            ));
        }
        Ok(ProjectionParams {
            w1: ParamTensor::new("head.w1", w1),
            w2: ParamTensor::new("head.w2", w2),
            activation,
        })
    }
}

impl Parameterized for ProjectionParams {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.w1, &self.w2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w1, &mut self.w2]
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionCache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

pub fn project(h: &Matrix, params: &ProjectionParams) -> Result<(Matrix, ProjectionCache)> {
    let pre = h.matmul(params.w1.value())?;
    let hidden = params.activation.forward(&pre);
    let z = hidden.matmul(params.w2.value())?;
    Ok((
        z,
        ProjectionCache {
            input: h.clone(),
            pre,
            hidden,
        },
    ))
}

/// Accumulates head gradients and returns `∂L/∂H`.
pub fn project_backward(upstream: &Matrix, cache: &ProjectionCache, params: &mut ProjectionParams) -> Result<Matrix> {
    let grad_w2 = cache.hidden.matmul_tn(upstream)?;
    let grad_hidden = upstream.matmul_nt(params.w2.value())?;
    let grad_pre = params.activation.backward(&cache.pre, &grad_hidden);
    let grad_w1 = cache.input.matmul_tn(&grad_pre)?;
    params.w2.accumulate(&grad_w2)?;
    params.w1.accumulate(&grad_w1)?;
    grad_pre.matmul_nt(params.w1.value())
}
