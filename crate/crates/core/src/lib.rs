//! Sparse decomposition of graph neural network embeddings.
//!
//! Each node's target embedding is approximated by a sparse, nonnegative
//! combination of transformed features of a few nearby nodes:
//! `ĝ(z) = Σ_i θ_z[i] · φ(x_i; W)`. Training alternates exact per-node
//! nonnegative Lasso solves with gradient steps on the transform; serving a
//! node then reads only the feature rows in its support.

pub mod candidates;
pub mod cli;
pub mod error;
pub mod generate;
pub mod graph;
pub mod io;
pub mod lasso;
pub mod matrix;
pub mod rng;
pub mod sampler;
pub mod serving;
pub mod store;
pub mod targets;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
pub use graph::{load_graph, normalized_adjacency, Graph, NormalizedAdjacency};
pub use matrix::{DenseMatrix, EmbeddingMatrix, FeatureMatrix, FeatureSource};
