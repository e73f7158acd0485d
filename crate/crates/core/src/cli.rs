//! Command-line front end: `train`, `infer`, `bench` and `stats`.
//!
//! Matrices (features, targets) use the `SDM1` binary format from
//! [`crate::io`]. A graph may be an edge-list text file or an `SDG1` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::candidates::CandidateConfig;
use crate::error::Error;
use crate::graph::{load_graph, Graph};
use crate::io::{load_matrix, read_file};
use crate::sampler::{ProbMode, WalkConfig};
use crate::serving::{bench, receptive_stats, ServingBundle};
use crate::store::SparseWeightStore;
use crate::targets::DecoderParams;
use crate::trainer::{equalize, fit, ActiveSchedule, EqualizeRule, TrainConfig, WarmupConfig};
use crate::transform::{Activation, TransformParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sparse-decomp", version, about = "Sparse decomposition of node embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit Θ and φ to a target embedding matrix.
    Train(TrainArgs),
    /// Embedding (or class and logits) of one node.
    Infer(InferArgs),
    /// Single-threaded per-node latency measurement.
    Bench(BenchArgs),
    /// Receptive-field report of a stored Θ.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    out_theta: PathBuf,
    #[arg(long)]
    out_phi: PathBuf,
    #[arg(long)]
    lambda1: f64,
    #[arg(long)]
    lambda2: f64,
    #[arg(long)]
    max_active: usize,
    #[arg(long)]
    k1: usize,
    #[arg(long)]
    k2: usize,
    /// Comma-separated sampling fanouts, one per K2 hop.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    fanout: Vec<usize>,
    #[arg(long)]
    batch: usize,
    #[arg(long)]
    iters: usize,
    #[arg(long)]
    phi_steps: usize,
    #[arg(long)]
    lr: f64,
    #[arg(long, requires = "warmup_steps")]
    warmup_k: Option<usize>,
    #[arg(long, requires = "warmup_k")]
    warmup_steps: Option<usize>,
    /// Walks per hop for the warm start.
    #[arg(long, default_value_t = 64)]
    warmup_budget: usize,
    /// `start,every,by,floor`
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<ActiveSchedule>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rescale each stored row to equal weights after training.
    #[arg(long)]
    equalize: bool,
    /// Hidden widths of φ, comma-separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, default_value = "relu")]
    activation: Activation,
    #[arg(long, default_value_t = 1.0)]
    subset: f64,
    /// Halve the learning rate of any φ step that would raise the loss.
    #[arg(long)]
    backtrack: bool,
    /// Also write the per-iteration report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    phi: PathBuf,
    #[arg(long)]
    decoder: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    node: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    phi: PathBuf,
    #[arg(long)]
    decoder: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    /// A node count to sample, or a file of node ids.
    #[arg(long)]
    nodes: String,
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write per-record CSV here (`-` for stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    max_hop: usize,
}

fn parse_schedule(s: &str) -> Result<ActiveSchedule, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [start, decay_every, decay_by, floor] => Ok(ActiveSchedule {
            start,
            decay_every,
            decay_by,
            floor,
        }),
        _ => Err("expected start,every,by,floor".into()),
    }
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Bench(a) => run_bench(a, out),
        Command::Stats(a) => stats(a, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::Lib(Error::io("<output>", e))
}

/// Reads either an `SDG1` binary or an edge list over `num_nodes` nodes.
fn read_graph(path: &Path, num_nodes: usize) -> Result<Graph, Failure> {
    let bytes = read_file(path)?;
    let g = if bytes.starts_with(b"SDG1") {
        Graph::decode(&bytes)?
    } else {
        load_graph(path, num_nodes)?
    };
    if g.num_nodes() != num_nodes {
        return Err(Error::Shape(format!("graph has {} nodes, expected {num_nodes}", g.num_nodes())).into());
    }
    Ok(g)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let x = load_matrix(&a.features)?;
    let omega = load_matrix(&a.targets)?;
    let g = read_graph(&a.graph, x.rows())?;
    let warmup = match (a.warmup_k, a.warmup_steps) {
        (Some(k), Some(steps)) => Some(WarmupConfig {
            walk: WalkConfig::uniform(k, a.warmup_budget, ProbMode::VarianceOptimal, a.seed),
            steps,
        }),
        _ => None,
    };
    let cfg = TrainConfig {
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        max_active: a.max_active,
        batch_size: a.batch,
        outer_iters: a.iters,
        phi_steps: a.phi_steps,
        lr: a.lr,
        backtracking: a.backtrack,
        candidates: CandidateConfig {
            k1: a.k1,
            k2: a.k2,
            fanouts: a.fanout,
            include_self: true,
            rng_seed: a.seed,
        },
        train_subset_fraction: a.subset,
        schedule: a.schedule,
        seed: a.seed,
        hidden: a.hidden,
        activation: a.activation,
        warmup,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let dec = fit(&g, &x, &omega, &cfg)?;
    let store = if a.equalize {
        equalize(&dec.store, EqualizeRule::PreserveMass)
    } else {
        dec.store
    };
    store.save(&a.out_theta)?;
    dec.params.save(&a.out_phi)?;
    let lines = dec.report.to_lines();
    write!(out, "{lines}").map_err(io_err)?;
    if let Some(p) = &a.report {
        std::fs::write(p, &lines).map_err(|e| Failure::Lib(Error::io(p, e)))?;
    }
    let (mean, std) = store.nnz_stats();
    writeln!(
        out,
        "final_obj={} mean_nnz={mean:.3} std_nnz={std:.3} lars_fallbacks={}",
        dec.report.final_objective, dec.report.lars_fallbacks
    )
    .map_err(io_err)?;
    if let Some(reason) = &dec.report.aborted {
        return Err(Error::Numeric(format!("training stopped early: {reason}")).into());
    }
    Ok(EXIT_OK)
}

fn load_bundle(theta: &Path, phi: &Path, decoder: Option<&Path>, features: &Path) -> Result<ServingBundle, Failure> {
    let store = SparseWeightStore::load(theta)?;
    let params = TransformParams::load(phi)?;
    let decoder = decoder.map(DecoderParams::load).transpose()?;
    let x = load_matrix(features)?;
    Ok(ServingBundle::new(params, store, decoder, &x)?)
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let b = load_bundle(&a.theta, &a.phi, a.decoder.as_deref(), &a.features)?;
    if a.node >= b.store.num_nodes() {
        return Err(Failure::Usage(format!("node {} out of range", a.node)));
    }
    let text = if b.decoder.is_some() {
        let p = b.infer_predict(a.node)?;
        if a.json {
            serde_json::json!({"node": a.node, "class": p.class, "logits": p.logits}).to_string()
        } else {
            format!("class={}\nlogits={}", p.class, join(&p.logits))
        }
    } else {
        let e = b.infer_embedding(a.node)?;
        if a.json {
            serde_json::json!({"node": a.node, "embedding": e}).to_string()
        } else {
            join(&e)
        }
    };
    writeln!(out, "{text}").map_err(io_err)?;
    Ok(EXIT_OK)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

fn bench_nodes(spec: &str, store: &SparseWeightStore, seed: u64) -> Result<Vec<usize>, Failure> {
    if let Ok(count) = spec.parse::<usize>() {
        let pool: Vec<usize> = store.iter().map(|(z, _)| z).collect();
        if pool.is_empty() && count > 0 {
            return Err(Error::Format("no decomposed nodes to sample".into()).into());
        }
        let mut rng = crate::rng::stream(seed, &[0x4245]);
        return Ok((0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect());
    }
    let text = std::fs::read_to_string(spec).map_err(|e| Failure::Lib(Error::io(spec, e)))?;
    let mut nodes = Vec::new();
    for (k, tok) in text.split_whitespace().enumerate() {
        let z: usize = tok.parse().map_err(|_| Error::Parse {
            line: k + 1,
            msg: format!("bad node id {tok:?}"),
        })?;
        if !store.is_decomposed(z) {
            return Err(Error::NotDecomposed(z).into());
        }
        nodes.push(z);
    }
    Ok(nodes)
}

fn run_bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let b = load_bundle(&a.theta, &a.phi, a.decoder.as_deref(), &a.features)?;
    let nodes = bench_nodes(&a.nodes, &b.store, a.seed)?;
    let r = bench(&b, &nodes, a.warmup, a.reps)?;
    writeln!(out, "{}", r.summary).map_err(io_err)?;
    match a.csv.as_deref() {
        Some(p) if p == Path::new("-") => write!(out, "{}", r.to_csv()).map_err(io_err)?,
        Some(p) => std::fs::write(p, r.to_csv()).map_err(|e| Failure::Lib(Error::io(p, e)))?,
        None => {}
    }
    Ok(EXIT_OK)
}

fn stats(a: StatsArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let store = SparseWeightStore::load(&a.theta)?;
    let g = read_graph(&a.graph, store.num_nodes())?;
    let s = receptive_stats(&store, &g, a.max_hop)?;
    writeln!(out, "{s}").map_err(io_err)?;
    Ok(EXIT_OK)
}
