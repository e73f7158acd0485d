//! Per-node candidate sets restricting the support of each sparse weight
//! vector: the full `k1`-hop ball plus `k2` extra hops of uniform neighbour
//! sampling started from every node of that ball.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::io::{read_file, Reader, Writer};
use crate::rng;

const CANDIDATE_MAGIC: &[u8; 4] = b"SDC1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateConfig {
    pub k1: usize,
    pub k2: usize,
    /// Per extra hop sample size; length must equal `k2`.
    pub fanouts: Vec<usize>,
    pub include_self: bool,
    pub rng_seed: u64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            k1: 1,
            k2: 0,
            fanouts: Vec::new(),
            include_self: true,
            rng_seed: 0,
        }
    }
}

impl CandidateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fanouts.len() != self.k2 {
            return Err(Error::Config(format!(
                "{} fanouts given for k2 = {}",
                self.fanouts.len(),
                self.k2
            )));
        }
        if self.fanouts.contains(&0) {
            return Err(Error::Config("fanouts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub center: usize,
    /// Sorted, unique.
    pub members: Vec<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }
}

/// Candidate set of node `z`.
pub fn build_candidates(g: &Graph, z: usize, cfg: &CandidateConfig) -> Result<CandidateSet> {
    cfg.validate()?;
    if z >= g.num_nodes() {
        return Err(Error::Shape(format!(
            "node {z} out of range for {} nodes",
            g.num_nodes()
        )));
    }
    let n = g.num_nodes();
    let mut visited = vec![false; n];
    let mut members = vec![z];
    visited[z] = true;

    let mut frontier = vec![z];
    for _ in 0..cfg.k1 {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in g.neighbors(u) {
                if !visited[v] {
                    visited[v] = true;
                    next.push(v);
                }
            }
        }
        members.extend_from_slice(&next);
        frontier = next;
    }

    // sampling starts from every node of the k1-ball
    let mut seeds = members.clone();
    seeds.sort_unstable();
    for (hop, &fanout) in cfg.fanouts.iter().enumerate() {
        let mut sampled = Vec::new();
        let mut taken = vec![false; n];
        for &u in &seeds {
            let nbrs = g.neighbors(u);
            if nbrs.len() <= fanout {
                sampled.extend(nbrs.iter().copied().filter(|&v| !std::mem::replace(&mut taken[v], true)));
            } else {
                let mut r = rng::stream(cfg.rng_seed, &[z as u64, u as u64, hop as u64]);
                let mut picks: Vec<usize> = rand::seq::index::sample(&mut r, nbrs.len(), fanout)
                    .into_iter()
                    .collect();
                picks.sort_unstable();
                for k in picks {
                    let v = nbrs[k];
                    if !taken[v] {
                        taken[v] = true;
                        sampled.push(v);
                    }
                }
            }
        }
        sampled.sort_unstable();
        for &v in &sampled {
            if !visited[v] {
                visited[v] = true;
                members.push(v);
            }
        }
        seeds = sampled;
    }

    if !cfg.include_self {
        members.retain(|&v| v != z);
    }
    if members.is_empty() {
        return Err(Error::EmptyCandidates(z));
    }
    members.sort_unstable();
    Ok(CandidateSet { center: z, members })
}

/// Candidate sets for every node, indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSets {
    sets: Vec<CandidateSet>,
}

impl CandidateSets {
    pub fn new(sets: Vec<CandidateSet>) -> Self {
        Self { sets }
    }

    pub fn get(&self, z: usize) -> &CandidateSet {
        &self.sets[z]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CandidateSet> {
        self.sets.iter()
    }

    pub fn total_members(&self) -> usize {
        self.sets.iter().map(CandidateSet::len).sum()
    }

    /// Heap bytes held by member lists.
    pub fn memory_bytes(&self) -> usize {
        self.sets
            .iter()
            .map(|s| s.members.capacity() * std::mem::size_of::<usize>())
            .sum::<usize>()
            + self.sets.capacity() * std::mem::size_of::<CandidateSet>()
    }

    pub fn mean_size(&self) -> f64 {
        if self.sets.is_empty() {
            return 0.0;
        }
        self.total_members() as f64 / self.sets.len() as f64
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(CANDIDATE_MAGIC);
        w.usize(self.sets.len());
        for s in &self.sets {
            w.usize(s.members.len());
            for &m in &s.members {
                w.usize(m);
            }
        }
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, CANDIDATE_MAGIC)?;
        let n = r.usize()?;
        let mut sets = Vec::with_capacity(n.min(1 << 20));
        for center in 0..n {
            let count = r.usize()?;
            let members = (0..count).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            if members.windows(2).any(|w| w[0] >= w[1]) || members.iter().any(|&m| m >= n) {
                return Err(Error::Format(format!(
                    "candidate set of node {center} is not sorted/in range"
                )));
            }
            sets.push(CandidateSet { center, members });
        }
        r.finish()?;
        Ok(Self { sets })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

/// Builds the candidate set of every node (in parallel; output is independent
/// of scheduling).
pub fn build_all(g: &Graph, cfg: &CandidateConfig) -> Result<CandidateSets> {
    cfg.validate()?;
    let sets = (0..g.num_nodes())
        .into_par_iter()
        .map(|z| build_candidates(g, z, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSets { sets })
}
