//! Online inference: a node's embedding is `Σ_{(i,w)∈θ_z} w·φ(x_i)`, so a
//! request reads exactly `nnz(θ_z)` feature rows, whatever their current
//! values are.

use std::sync::Arc;
use std::time::Instant;

use parking_lot::RwLock;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{axpy, DenseMatrix, FeatureSource};
use crate::store::SparseWeightStore;
use crate::targets::{decoder_predict, DecoderParams, Prediction};
use crate::transform::{forward_batch, TransformParams};

/// Feature rows that can be replaced while readers are active. Each row
/// sits behind its own lock, so a reader sees either the old or the new
/// row, never a mix.
#[derive(Debug)]
pub struct SharedFeatures {
    dim: usize,
    rows: Vec<RwLock<Vec<f64>>>,
}

impl SharedFeatures {
    pub fn from_matrix(m: &DenseMatrix) -> Self {
        Self {
            dim: m.cols(),
            rows: (0..m.rows()).map(|i| RwLock::new(m.row(i).to_vec())).collect(),
        }
    }

    pub fn update_row(&self, i: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Shape(format!("row has {} values, expected {}", values.len(), self.dim)));
        }
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col });
        }
        let slot = self
            .rows
            .get(i)
            .ok_or_else(|| Error::Shape(format!("row {i} out of range")))?;
        slot.write().copy_from_slice(values);
        Ok(())
    }

    pub fn replace_all(&self, m: &DenseMatrix) -> Result<()> {
        if m.rows() != self.rows.len() || m.cols() != self.dim {
            return Err(Error::Shape("replacement matrix has the wrong shape".into()));
        }
        for i in 0..m.rows() {
            self.update_row(i, m.row(i))?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows.len(), self.dim);
        for i in 0..self.rows.len() {
            self.read_row(i, m.row_mut(i));
        }
        m
    }
}

impl FeatureSource for SharedFeatures {
    fn num_rows(&self) -> usize {
        self.rows.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn read_row(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.rows[i].read());
    }
}

/// Everything needed to answer per-node requests.
#[derive(Debug, Clone)]
pub struct ServingBundle {
    pub params: TransformParams,
    pub store: SparseWeightStore,
    pub decoder: Option<DecoderParams>,
    features: Arc<SharedFeatures>,
}

impl ServingBundle {
    pub fn new(
        params: TransformParams,
        store: SparseWeightStore,
        decoder: Option<DecoderParams>,
        features: &DenseMatrix,
    ) -> Result<Self> {
        Self::with_shared(params, store, decoder, Arc::new(SharedFeatures::from_matrix(features)))
    }

    pub fn with_shared(
        params: TransformParams,
        store: SparseWeightStore,
        decoder: Option<DecoderParams>,
        features: Arc<SharedFeatures>,
    ) -> Result<Self> {
        let n = features.num_rows();
        if features.dim() != params.input_dim() {
            return Err(Error::Shape(format!(
                "features have dim {}, transform expects {}",
                features.dim(),
                params.input_dim()
            )));
        }
        for (z, row) in store.iter() {
            if let Some(&(i, _)) = row.iter().find(|e| e.0 >= n) {
                return Err(Error::Shape(format!("node {z} references row {i} beyond {n} feature rows")));
            }
        }
        if let Some(d) = &decoder {
            if d.mlp.input_dim() != params.output_dim() {
                return Err(Error::Shape("decoder input dim differs from embedding dim".into()));
            }
        }
        Ok(Self {
            params,
            store,
            decoder,
            features,
        })
    }

    /// The live feature handle; updates through it are seen by later requests.
    pub fn features(&self) -> &Arc<SharedFeatures> {
        &self.features
    }

    pub fn embedding_dim(&self) -> usize {
        self.params.output_dim()
    }

    /// Embedding of `z` from the bundle's live features.
    pub fn infer_embedding(&self, z: usize) -> Result<Vec<f64>> {
        infer_embedding(self, z, self.features.as_ref())
    }

    pub fn infer_predict(&self, z: usize) -> Result<Prediction> {
        infer_predict(self, z, self.features.as_ref())
    }
}

/// `Σ w·φ(x_i)` over `θ_z`, reading only the support rows of `features`.
pub fn infer_embedding(
    b: &ServingBundle,
    z: usize,
    features: &(impl FeatureSource + ?Sized),
) -> Result<Vec<f64>> {
    let row = b.store.get(z).ok_or(Error::NotDecomposed(z))?;
    let ids: Vec<usize> = row.iter().map(|e| e.0).collect();
    let phi = forward_batch(&b.params, features, &ids)?;
    let mut out = vec![0.0; b.params.output_dim()];
    for (k, &(_, w)) in row.iter().enumerate() {
        axpy(w, phi.row(k), &mut out);
    }
    Ok(out)
}

/// Decoder applied to [`infer_embedding`].
pub fn infer_predict(
    b: &ServingBundle,
    z: usize,
    features: &(impl FeatureSource + ?Sized),
) -> Result<Prediction> {
    let dec = b.decoder.as_ref().ok_or(Error::NoDecoder)?;
    let emb = infer_embedding(b, z, features)?;
    decoder_predict(dec, &emb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub node: usize,
    pub nnz: usize,
    pub micros: f64,
    /// Hash of the output bits; identical across repetitions.
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub count: usize,
    pub mean_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub mean_nnz: f64,
    /// Whether the timed call included the decoder.
    pub includes_decoder: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub records: Vec<BenchRecord>,
    pub summary: BenchSummary,
}

impl BenchResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,nnz,micros,checksum\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{:.3},{:016x}\n", r.node, r.nnz, r.micros, r.checksum));
        }
        s
    }
}

impl std::fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "calls={} mean_us={:.3} p90_us={:.3} p99_us={:.3} mean_nnz={:.2} mode={}",
            self.count,
            self.mean_us,
            self.p90_us,
            self.p99_us,
            self.mean_nnz,
            if self.includes_decoder {
                "embedding+decoder"
            } else {
                "embedding"
            }
        )
    }
}

fn checksum(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Single-threaded latency measurement, one node per call. `warmup` untimed
/// passes over `nodes` precede `reps` timed passes; records are assembled
/// only after all timing is done.
pub fn bench(b: &ServingBundle, nodes: &[usize], warmup: usize, reps: usize) -> Result<BenchResult> {
    let includes_decoder = b.decoder.is_some();
    let call = |z: usize| -> Result<Vec<f64>> {
        match &b.decoder {
            Some(_) => Ok(b.infer_predict(z)?.logits),
            None => b.infer_embedding(z),
        }
    };
    for _ in 0..warmup {
        for &z in nodes {
            std::hint::black_box(call(z)?);
        }
    }
    let mut raw: Vec<(usize, f64, Vec<f64>)> = Vec::with_capacity(reps * nodes.len());
    for _ in 0..reps {
        for &z in nodes {
            let t = Instant::now();
            let out = std::hint::black_box(call(z)?);
            let dt = t.elapsed().as_secs_f64() * 1e6;
            raw.push((z, dt, out));
        }
    }
    let records: Vec<BenchRecord> = raw
        .into_iter()
        .map(|(node, micros, out)| BenchRecord {
            node,
            nnz: b.store.nnz(node),
            micros,
            checksum: checksum(&out),
        })
        .collect();
    let summary = summarize(&records, includes_decoder);
    Ok(BenchResult { records, summary })
}

fn summarize(records: &[BenchRecord], includes_decoder: bool) -> BenchSummary {
    let count = records.len();
    if count == 0 {
        return BenchSummary {
            count,
            mean_us: 0.0,
            p90_us: 0.0,
            p99_us: 0.0,
            mean_nnz: 0.0,
            includes_decoder,
        };
    }
    let mut times: Vec<f64> = records.iter().map(|r| r.micros).collect();
    times.sort_by(f64::total_cmp);
    let pct = |q: f64| times[((q * count as f64).ceil() as usize).clamp(1, count) - 1];
    BenchSummary {
        count,
        mean_us: times.iter().sum::<f64>() / count as f64,
        p90_us: pct(0.90),
        p99_us: pct(0.99),
        mean_nnz: records.iter().map(|r| r.nnz as f64).sum::<f64>() / count as f64,
        includes_decoder,
    }
}

/// Receptive-field statistics of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveStats {
    pub nodes: usize,
    pub mean_nnz: f64,
    pub std_nnz: f64,
    /// Mean number of support nodes at each hop distance `0..=max_hop`.
    pub per_hop_mean: Vec<f64>,
    /// Mean number of support nodes farther than `max_hop` (or unreachable).
    pub beyond_mean: f64,
    /// Mean size of the closed `max_hop` ball.
    pub mean_ball: f64,
    /// Mean in-ball support size over mean ball size; at most 1.
    pub ratio: f64,
}

impl std::fmt::Display for ReceptiveStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "nodes        {}", self.nodes)?;
        writeln!(f, "mean nnz     {:.3} (std {:.3})", self.mean_nnz, self.std_nnz)?;
        for (h, m) in self.per_hop_mean.iter().enumerate() {
            writeln!(f, "hop {h:<8} {m:.3}")?;
        }
        writeln!(f, "beyond       {:.3}", self.beyond_mean)?;
        writeln!(f, "mean ball    {:.3}", self.mean_ball)?;
        write!(f, "ratio        {:.4}", self.ratio)
    }
}

pub fn receptive_stats(store: &SparseWeightStore, g: &Graph, max_hop: usize) -> Result<ReceptiveStats> {
    if store.num_nodes() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "store has {} nodes, graph has {}",
            store.num_nodes(),
            g.num_nodes()
        )));
    }
    let mut per_hop = vec![0usize; max_hop + 1];
    let mut beyond = 0usize;
    let mut ball_total = 0usize;
    let mut in_ball_total = 0usize;
    let nodes: Vec<usize> = store.iter().map(|(z, _)| z).collect();
    for &z in &nodes {
        let dist = g.hop_distances(z, max_hop);
        ball_total += dist.iter().filter(|d| d.is_some()).count();
        for &(i, _) in store.row_or_empty(z) {
            match dist[i] {
                Some(h) => {
                    per_hop[h] += 1;
                    in_ball_total += 1;
                }
                None => beyond += 1,
            }
        }
    }
    let count = nodes.len().max(1) as f64;
    let counts: Vec<f64> = nodes.iter().map(|&z| store.nnz(z) as f64).collect();
    let mean_nnz = counts.iter().sum::<f64>() / count;
    let std_nnz = (counts.iter().map(|c| (c - mean_nnz).powi(2)).sum::<f64>() / count).sqrt();
    let mean_ball = ball_total as f64 / count;
    Ok(ReceptiveStats {
        nodes: nodes.len(),
        mean_nnz,
        std_nnz,
        per_hop_mean: per_hop.iter().map(|&c| c as f64 / count).collect(),
        beyond_mean: beyond as f64 / count,
        mean_ball,
        ratio: if ball_total == 0 {
            0.0
        } else {
            in_ball_total as f64 / ball_total as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NormalizedAdjacency;
    use crate::sampler::exact_power_row;

    fn features() -> DenseMatrix {
        DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 4.0]]).unwrap()
    }

    #[test]
    fn identity_theta_returns_own_features() {
        let x = features();
        let b = ServingBundle::new(TransformParams::identity(2), SparseWeightStore::identity(3), None, &x).unwrap();
        for z in 0..3 {
            assert_eq!(b.infer_embedding(z).unwrap(), x.row(z));
        }
    }

    #[test]
    fn equal_weights_give_midpoint() {
        let x = features();
        let mut store = SparseWeightStore::new(3);
        store.set(0, vec![(1, 0.5), (2, 0.5)]);
        let b = ServingBundle::new(TransformParams::identity(2), store, None, &x).unwrap();
        assert_eq!(b.infer_embedding(0).unwrap(), vec![1.5, 1.5]);
        assert!(matches!(b.infer_embedding(1), Err(Error::NotDecomposed(1))));
        assert!(matches!(b.infer_predict(0), Err(Error::NoDecoder)));
    }

    #[test]
    fn live_feature_updates_are_visible() {
        let x = features();
        let b = ServingBundle::new(TransformParams::identity(2), SparseWeightStore::identity(3), None, &x).unwrap();
        b.features().update_row(1, &[7.0, 8.0]).unwrap();
        assert_eq!(b.infer_embedding(1).unwrap(), vec![7.0, 8.0]);
        assert_eq!(b.infer_embedding(0).unwrap(), vec![1.0, 2.0]);
        assert!(b.features().update_row(1, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn bench_records_and_checksums() {
        let x = features();
        let b = ServingBundle::new(TransformParams::identity(2), SparseWeightStore::identity(3), None, &x).unwrap();
        assert!(bench(&b, &[0, 1], 1, 0).unwrap().records.is_empty());
        let r = bench(&b, &[0, 1, 2], 2, 5).unwrap();
        assert_eq!(r.records.len(), 15);
        for z in 0..3 {
            let sums: Vec<u64> = r.records.iter().filter(|rec| rec.node == z).map(|rec| rec.checksum).collect();
            assert!(sums.windows(2).all(|w| w[0] == w[1]));
        }
        assert!(r.summary.p99_us >= r.summary.p90_us);
        assert!(!r.summary.includes_decoder);
    }

    #[test]
    fn receptive_stats_identity_and_exact_rows() {
        let g = Graph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (3, 4)]).unwrap();
        let s = receptive_stats(&SparseWeightStore::identity(5), &g, 2).unwrap();
        assert_eq!(s.mean_nnz, 1.0);
        assert_eq!(s.per_hop_mean[0], 1.0);
        assert_eq!(s.per_hop_mean[1], 0.0);
        let na = NormalizedAdjacency::new(&g);
        let rows = (0..5).map(|z| exact_power_row(&na, z, 1)).collect();
        let s = receptive_stats(&SparseWeightStore::from_rows(rows), &g, 2).unwrap();
        let mean_degree = 8.0 / 5.0;
        assert!((s.per_hop_mean[1] - mean_degree).abs() < 1e-12);
        assert!(s.ratio <= 1.0);
    }
}
