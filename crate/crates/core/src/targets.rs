//! Reference embedding generators and the downstream decoder.
//!
//! [`sage_forward`] is a mean-aggregator message-passing network,
//! [`sgc_target`] computes `Ã^K X W`, and the decoder is a softmax MLP
//! trained on (decomposed) embeddings.

use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, NormalizedAdjacency};
use crate::io::{read_file, Reader, Writer};
use crate::matrix::{axpy, DenseMatrix};
use crate::rng;
use crate::transform::{forward, Activation, GradientBundle, TransformParams};

const DECODER_MAGIC: &[u8; 4] = b"SDD1";

/// One message-passing layer: `h' = act(h W_self + mean(h_N) W_neigh + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    pub w_self: DenseMatrix,
    pub w_neigh: DenseMatrix,
    pub bias: Vec<f64>,
}

/// ReLU on hidden layers, linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SageParams {
    pub layers: Vec<SageLayer>,
    pub activation: Activation,
}

impl SageParams {
    /// Random layers for `dims = [D, h1, …, d]`, Glorot-uniform weights and
    /// small uniform biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("need at least [in, out] dims".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let a = TransformParams::init(w, Activation::Identity, seed ^ (2 * k as u64 + 1))?;
                let b = TransformParams::init(w, Activation::Identity, seed ^ (2 * k as u64 + 2))?;
                let bias = crate::generate::uniform_matrix(1, w[1], -0.1, 0.1, seed ^ (0xb1a5 + k as u64)).into_vec();
                Ok(SageLayer {
                    w_self: a.layers[0].weights.clone(),
                    w_neigh: b.layers[0].weights.clone(),
                    bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            activation: Activation::Relu,
        })
    }
}

/// `h^L` for every node, with `h^0 = X`. Isolated nodes get a zero
/// neighbour term.
pub fn sage_forward(g: &Graph, x: &DenseMatrix, params: &SageParams) -> Result<DenseMatrix> {
    if x.rows() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            x.rows(),
            g.num_nodes()
        )));
    }
    let last = params.layers.len().saturating_sub(1);
    let mut h = x.clone();
    for (k, layer) in params.layers.iter().enumerate() {
        if layer.w_self.rows() != h.cols() || layer.w_neigh.rows() != h.cols() {
            return Err(Error::Shape(format!("layer {k}: input dim mismatch")));
        }
        let mut mean = DenseMatrix::zeros(h.rows(), h.cols());
        for z in 0..g.num_nodes() {
            let nbrs = g.neighbors(z);
            if nbrs.is_empty() {
                continue;
            }
            let m = mean.row_mut(z);
            for &v in nbrs {
                axpy(1.0, h.row(v), m);
            }
            let inv = 1.0 / nbrs.len() as f64;
            m.iter_mut().for_each(|v| *v *= inv);
        }
        let mut next = h.matmul(&layer.w_self)?;
        let neigh = mean.matmul(&layer.w_neigh)?;
        for z in 0..next.rows() {
            let row = next.row_mut(z);
            for ((o, nv), b) in row.iter_mut().zip(neigh.row(z)).zip(&layer.bias) {
                let v = *o + nv + b;
                *o = if k == last {
                    v
                } else {
                    match params.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                        Activation::Identity => v,
                    }
                };
            }
        }
        h = next;
    }
    Ok(h)
}

/// `Ã^K X W_lin` by `K` sparse products.
pub fn sgc_target(na: &NormalizedAdjacency, x: &DenseMatrix, hops: usize, w_lin: &DenseMatrix) -> Result<DenseMatrix> {
    let mut h = x.clone();
    for _ in 0..hops {
        h = na.multiply(&h);
    }
    h.matmul(w_lin)
}

/// Softmax classifier on embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub mlp: TransformParams,
}

impl DecoderParams {
    pub fn num_classes(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(DECODER_MAGIC);
        w.usize(self.num_classes());
        w.bytes(&self.mlp.encode());
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, DECODER_MAGIC)?;
        let classes = r.usize()?;
        if &r.magic()? != b"SDW1" {
            return Err(Error::Format("decoder body is not an SDW1 block".into()));
        }
        let mlp = TransformParams::decode_body(&mut r)?;
        r.finish()?;
        if mlp.output_dim() != classes {
            return Err(Error::Format(format!(
                "header says {classes} classes, network outputs {}",
                mlp.output_dim()
            )));
        }
        Ok(Self { mlp })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub num_classes: usize,
    /// Hidden widths; empty for a linear softmax classifier.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Standard deviation of Gaussian input noise added during training.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            num_classes: 2,
            hidden: Vec::new(),
            epochs: 200,
            lr: 0.5,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Full-batch gradient descent on mean cross-entropy over `train` rows.
pub fn decoder_fit(
    embeddings: &DenseMatrix,
    labels: &[usize],
    train: &[usize],
    cfg: &DecoderConfig,
) -> Result<DecoderParams> {
    if train.is_empty() {
        return Err(Error::Config("decoder needs a nonempty training mask".into()));
    }
    if labels.len() != embeddings.rows() {
        return Err(Error::Shape("one label per embedding row is required".into()));
    }
    if let Some(&bad) = train.iter().find(|&&z| labels[z] >= cfg.num_classes) {
        return Err(Error::Config(format!("label of row {bad} exceeds class count")));
    }
    let mut dims = vec![embeddings.cols()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(cfg.num_classes);
    let mut mlp = TransformParams::init(&dims, Activation::Relu, cfg.seed)?;
    let clean = embeddings.select_rows(train);
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut r = rng::stream(cfg.seed, &[0x4e5a]);
    let scale = 1.0 / train.len() as f64;
    for _ in 0..cfg.epochs {
        let mut input = clean.clone();
        if let Some(n) = &noise {
            input.as_mut_slice().iter_mut().for_each(|v| *v += n.sample(&mut r));
        }
        let mut g = GradientBundle::zeros_like(&mlp);
        let logits = mlp.forward_matrix(&input)?;
        let mut upstream = DenseMatrix::zeros(logits.rows(), logits.cols());
        for (k, &z) in train.iter().enumerate() {
            let p = softmax(logits.row(k));
            g.loss -= scale * p[labels[z]].max(f64::MIN_POSITIVE).ln();
            let u = upstream.row_mut(k);
            for (c, pc) in p.iter().enumerate() {
                u[c] = scale * (pc - if c == labels[z] { 1.0 } else { 0.0 });
            }
        }
        crate::transform::backprop_into(&mlp, &input, &upstream, &mut g)?;
        mlp = crate::transform::apply_gradient(&mlp, &g, cfg.lr)?;
    }
    Ok(DecoderParams { mlp })
}

/// Class scores and argmax for one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Lowest class id among ties.
    pub class: usize,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

pub fn decoder_predict(dec: &DecoderParams, embedding: &[f64]) -> Result<Prediction> {
    let logits = forward(&dec.mlp, embedding)?;
    let class = argmax_lowest(&logits);
    let probabilities = softmax(&logits);
    Ok(Prediction {
        class,
        logits,
        probabilities,
    })
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
