//! The row-wise feature transformation `φ(·; W)`: a small MLP with analytic
//! gradients for the mini-batch reconstruction loss.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::io::{read_file, Reader, Writer};
use crate::matrix::{axpy, DenseMatrix, FeatureSource};
use crate::rng;

const WEIGHTS_MAGIC: &[u8; 4] = b"SDW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u64) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }
}

/// One affine layer; `weights` is `in × out` so that `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// MLP parameters. `activation` applies to every hidden layer; the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl TransformParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("transform needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {k}: bias length mismatch")));
            }
            if k > 0 && layers[k - 1].out_dim() != l.in_dim() {
                return Err(Error::Shape(format!("layer {k}: input dim mismatch")));
            }
            l.weights.ensure_finite()?;
            if l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numeric(format!("layer {k}: non-finite bias")));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("layer dims need at least [in, out]".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut r = rng::stream(seed, &[0x5744, k as u64]);
            let weights = DenseMatrix::from_fn(fan_in, fan_out, |_, _| r.random_range(-bound..=bound));
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Self::new(layers, activation)
    }

    /// A single linear layer `x ↦ x W + b`.
    pub fn linear(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        Self::new(vec![Layer { weights, bias }], Activation::Identity)
    }

    pub fn identity(dim: usize) -> Self {
        Self::linear(DenseMatrix::identity(dim), vec![0.0; dim]).unwrap()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// `Σ ‖W_l‖²_F` over weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.frobenius_sq()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Flat parameter view: per layer, weights (row-major) then biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(l.weights.as_slice());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape("flat parameter length mismatch".into()));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&values[k..k + w.len()]);
            k += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    /// Runs the network on a batch of input rows (m × D).
    pub fn forward_matrix(&self, input: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_cached(input)?.output().clone())
    }

    fn forward_cached(&self, input: &DenseMatrix) -> Result<ForwardCache> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input dim {} but transform expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = activations[k].matmul(&layer.weights)?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let act = if k == last {
                Activation::Identity
            } else {
                self.activation
            };
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, pre })
    }

    /// Smallest |pre-activation| over hidden units for the given inputs; used
    /// to keep gradient checks away from ReLU kinks.
    pub fn min_abs_hidden_preactivation(&self, input: &DenseMatrix) -> Result<f64> {
        let cache = self.forward_cached(input)?;
        let hidden = cache.pre.len() - 1;
        Ok(cache.pre[..hidden]
            .iter()
            .flat_map(|z| z.as_slice().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(WEIGHTS_MAGIC);
        self.encode_body(&mut w);
        w.into_bytes()
    }

    pub(crate) fn encode_body(&self, w: &mut Writer) {
        w.usize(self.layers.len());
        for l in &self.layers {
            w.usize(l.weights.rows());
            w.usize(l.weights.cols());
            w.f64s(l.weights.as_slice());
            w.f64s(&l.bias);
        }
        w.u64(self.activation.tag());
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, WEIGHTS_MAGIC)?;
        let p = Self::decode_body(&mut r)?;
        r.finish()?;
        Ok(p)
    }

    pub(crate) fn decode_body(r: &mut Reader<'_>) -> Result<Self> {
        let count = r.usize()?;
        if count == 0 || count > 1024 {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = r.usize()?;
            let cols = r.usize()?;
            if rows.saturating_mul(cols).saturating_mul(8) > r.remaining() {
                return Err(Error::Format("truncated layer".into()));
            }
            let weights = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let bias = (0..cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Layer {
                weights: DenseMatrix::from_vec(rows, cols, weights)?,
                bias,
            });
        }
        let activation = Activation::from_tag(r.u64()?)?;
        Self::new(layers, activation)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

struct ForwardCache {
    /// `activations[0]` is the input; `activations[k+1]` the output of layer k.
    activations: Vec<DenseMatrix>,
    pre: Vec<DenseMatrix>,
}

impl ForwardCache {
    fn output(&self) -> &DenseMatrix {
        self.activations.last().unwrap()
    }
}

/// `φ(x)` for a single row.
pub fn forward(params: &TransformParams, x: &[f64]) -> Result<Vec<f64>> {
    let input = DenseMatrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(params.forward_matrix(&input)?.into_vec())
}

/// `φ` applied to the listed feature rows, in order. Reads each listed row
/// exactly once.
pub fn forward_batch(
    params: &TransformParams,
    features: &(impl FeatureSource + ?Sized),
    rows: &[usize],
) -> Result<DenseMatrix> {
    let input = gather_rows(features, rows)?;
    if rows.is_empty() {
        return Ok(DenseMatrix::zeros(0, params.output_dim()));
    }
    params.forward_matrix(&input)
}

pub(crate) fn gather_rows(
    features: &(impl FeatureSource + ?Sized),
    rows: &[usize],
) -> Result<DenseMatrix> {
    let dim = features.dim();
    let mut input = DenseMatrix::zeros(rows.len(), dim);
    for (k, &i) in rows.iter().enumerate() {
        if i >= features.num_rows() {
            return Err(Error::Shape(format!(
                "row {i} out of range for {} feature rows",
                features.num_rows()
            )));
        }
        features.read_row(i, input.row_mut(k));
    }
    Ok(input)
}

/// Gradient of the mini-batch loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
    pub loss: f64,
}

impl GradientBundle {
    pub fn zeros_like(params: &TransformParams) -> Self {
        Self {
            weights: params
                .layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
            loss: 0.0,
        }
    }

    /// Same ordering as [`TransformParams::flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend_from_slice(w.as_slice());
            v.extend_from_slice(b);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.flat().iter().all(|v| v.is_finite())
    }
}

/// One node's term in the mini-batch loss: its sparse weights over global
/// node ids and its target row.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub weights: &'a [(usize, f64)],
    pub target: &'a [f64],
}

/// Accumulates `½ Σ_z ‖Σ_i w_zi φ(x_i) − ω_z‖²` and its gradient into
/// `grads`. Only rows in the union of supports are read. Returns the data
/// loss.
pub(crate) fn accumulate_data_grad(
    params: &TransformParams,
    features: &(impl FeatureSource + ?Sized),
    batch: &[BatchItem<'_>],
    grads: &mut GradientBundle,
) -> Result<f64> {
    let d = params.output_dim();
    let mut rows: Vec<usize> = batch
        .iter()
        .flat_map(|b| b.weights.iter().map(|e| e.0))
        .collect();
    rows.sort_unstable();
    rows.dedup();

    let mut loss = 0.0;
    if rows.is_empty() {
        for item in batch {
            loss += 0.5 * item.target.iter().map(|t| t * t).sum::<f64>();
        }
        return Ok(loss);
    }

    let input = gather_rows(features, &rows)?;
    let cache = params.forward_cached(&input)?;
    let out = cache.output();
    let slot = |id: usize| rows.binary_search(&id).unwrap();

    let mut upstream = DenseMatrix::zeros(rows.len(), d);
    let mut pred = vec![0.0; d];
    for item in batch {
        if item.target.len() != d {
            return Err(Error::Shape(format!(
                "target dim {} but transform outputs {d}",
                item.target.len()
            )));
        }
        pred.iter_mut().for_each(|v| *v = 0.0);
        for &(i, w) in item.weights {
            axpy(w, out.row(slot(i)), &mut pred);
        }
        for (p, t) in pred.iter_mut().zip(item.target) {
            *p -= t;
        }
        loss += 0.5 * pred.iter().map(|r| r * r).sum::<f64>();
        for &(i, w) in item.weights {
            axpy(w, &pred, upstream.row_mut(slot(i)));
        }
    }

    backprop_cached(params, &cache, upstream, grads)?;
    Ok(loss)
}

/// Adds `∂L/∂W` to `grads` given `upstream = ∂L/∂φ` for each input row.
pub(crate) fn backprop_into(
    params: &TransformParams,
    input: &DenseMatrix,
    upstream: &DenseMatrix,
    grads: &mut GradientBundle,
) -> Result<()> {
    let cache = params.forward_cached(input)?;
    backprop_cached(params, &cache, upstream.clone(), grads)
}

fn backprop_cached(
    params: &TransformParams,
    cache: &ForwardCache,
    upstream: DenseMatrix,
    grads: &mut GradientBundle,
) -> Result<()> {
    let last = params.layers.len() - 1;
    let mut delta = upstream;
    for k in (0..params.layers.len()).rev() {
        if k != last {
            let act = params.activation;
            let z = &cache.pre[k];
            let a = &cache.activations[k + 1];
            for ((dv, &zv), &av) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(a.as_slice())
            {
                *dv *= act.derivative(zv, av);
            }
        }
        let a_prev = &cache.activations[k];
        let gw = &mut grads.weights[k];
        for m in 0..delta.rows() {
            let drow = delta.row(m);
            for (i, &x) in a_prev.row(m).iter().enumerate() {
                if x != 0.0 {
                    axpy(x, drow, gw.row_mut(i));
                }
            }
            axpy(1.0, drow, &mut grads.biases[k]);
        }
        if k > 0 {
            delta = delta.matmul(&params.layers[k].weights.transpose())?;
        }
    }
    Ok(())
}

pub(crate) fn add_weight_decay(params: &TransformParams, lambda2: f64, grads: &mut GradientBundle) {
    if lambda2 == 0.0 {
        return;
    }
    grads.loss += lambda2 * params.weight_norm_sq();
    for (g, l) in grads.weights.iter_mut().zip(&params.layers) {
        axpy(2.0 * lambda2, l.weights.as_slice(), g.as_mut_slice());
    }
}

/// Mini-batch reconstruction loss plus `λ2 ‖W‖²_F`, with analytic gradients.
pub fn phase_phi_loss_grad(
    params: &TransformParams,
    batch: &[BatchItem<'_>],
    features: &(impl FeatureSource + ?Sized),
    lambda2: f64,
) -> Result<GradientBundle> {
    let mut grads = GradientBundle::zeros_like(params);
    grads.loss = accumulate_data_grad(params, features, batch, &mut grads)?;
    add_weight_decay(params, lambda2, &mut grads);
    Ok(grads)
}

/// `params − lr · grads`.
pub fn apply_gradient(params: &TransformParams, grads: &GradientBundle, lr: f64) -> Result<TransformParams> {
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let mut next = params.clone();
    for ((l, gw), gb) in next.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
        axpy(-lr, gw.as_slice(), l.weights.as_mut_slice());
        axpy(-lr, gb, &mut l.bias);
    }
    Ok(next)
}

/// Plain gradient descent: `steps` updates, recomputing the gradient with
/// `grad_fn` before each one. Returns the new parameters and the loss seen
/// at each step (before its update).
///
/// A non-finite gradient aborts with [`Error::Numeric`].
pub fn gd_step(
    params: &TransformParams,
    lr: f64,
    steps: usize,
    mut grad_fn: impl FnMut(&TransformParams) -> Result<GradientBundle>,
) -> Result<(TransformParams, Vec<f64>)> {
    let mut current = params.clone();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let g = grad_fn(&current)?;
        losses.push(g.loss);
        current = apply_gradient(&current, &g, lr)?;
    }
    Ok((current, losses))
}

/// As [`gd_step`], but a step that would raise the loss (or make it
/// non-finite) is retried at half the rate, up to 40 times; if no rate
/// helps, the remaining steps are skipped.
pub fn gd_step_backtracking(
    params: &TransformParams,
    lr: f64,
    steps: usize,
    mut grad_fn: impl FnMut(&TransformParams) -> Result<GradientBundle>,
) -> Result<(TransformParams, Vec<f64>)> {
    let mut current = params.clone();
    let mut losses = Vec::with_capacity(steps);
    if steps == 0 {
        return Ok((current, losses));
    }
    let mut g = grad_fn(&current)?;
    for _ in 0..steps {
        losses.push(g.loss);
        let mut rate = lr;
        let mut accepted = None;
        for _ in 0..40 {
            if let Ok(next) = apply_gradient(&current, &g, rate) {
                match grad_fn(&next) {
                    Ok(gn) if gn.loss <= g.loss => {
                        accepted = Some((next, gn));
                        break;
                    }
                    Ok(_) | Err(Error::Numeric(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            rate *= 0.5;
        }
        match accepted {
            Some((next, gn)) => {
                current = next;
                g = gn;
            }
            None => break,
        }
    }
    Ok((current, losses))
}
