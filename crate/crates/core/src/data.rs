//! Labeled graph datasets on disk, seeded train/val/test splits and a
//! stochastic block model generator for desk-scale fixtures.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::filters::center_columns;
use crate::graph::{is_connected_non_bipartite, read_edges, read_features, write_edges, write_features};
use crate::graph::{Connectivity, Graph};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LabeledDataset<T> {
    pub graph: Graph<T>,
    /// Dense class index `0..C` per node.
    pub labels: Vec<usize>,
    /// Original class id for each dense index.
    pub class_ids: Vec<u64>,
    pub class_names: Option<Vec<String>>,
    pub name: String,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(graph: Graph<T>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        if labels.len() != graph.num_nodes() {
            return Err(Error::Data(format!("{} labels for {} nodes", labels.len(), graph.num_nodes())));
        }
        let c = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; c];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("class ids must be dense; class {gap} has no nodes")));
        }
        Ok(Self { graph, labels, class_ids: (0..c as u64).collect(), class_names: None, name: name.into() })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// `node<TAB>class` lines; returns raw class ids indexed by node.
pub fn read_labels(path: &Path, num_nodes: usize) -> Result<Vec<u64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw: Vec<Option<u64>> = vec![None; num_nodes];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, i + 1, "expected `node<TAB>class`"));
        };
        let node: usize = a.parse().map_err(|_| parse_err(path, i + 1, format!("bad node id `{a}`")))?;
        let class: u64 = b.parse().map_err(|_| parse_err(path, i + 1, format!("bad class id `{b}`")))?;
        let slot = raw
            .get_mut(node)
            .ok_or_else(|| parse_err(path, i + 1, format!("node {node} is outside 0..{num_nodes}")))?;
        if slot.replace(class).is_some() {
            return Err(parse_err(path, i + 1, format!("node {node} is labeled twice")));
        }
    }
    raw.iter()
        .enumerate()
        .map(|(node, c)| c.ok_or_else(|| Error::Data(format!("{}: node {node} has no label", path.display()))))
        .collect()
}

/// Maps raw class ids onto `0..C` in ascending order.
pub fn densify_labels(raw: &[u64]) -> (Vec<usize>, Vec<u64>) {
    let mut ids = raw.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let labels = raw.iter().map(|c| ids.binary_search(c).expect("present")).collect();
    (labels, ids)
}

pub fn load_dataset<T: Scalar>(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<LabeledDataset<T>> {
    let features: Dense<T> = read_features(feature_path)?;
    let edges = read_edges(edge_path)?;
    let graph = Graph::new(&edges, features)
        .map_err(|e| Error::Data(format!("{} with {}: {e}", edge_path.display(), feature_path.display())))?;
    let raw = read_labels(label_path, graph.num_nodes())?;
    let (labels, class_ids) = densify_labels(&raw);
    let name = edge_path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    Ok(LabeledDataset { graph, labels, class_ids, class_names: None, name })
}

pub fn write_labels(path: &Path, labels: &[usize], class_ids: &[u64]) -> Result<()> {
    let mut out = String::new();
    for (node, &l) in labels.iter().enumerate() {
        out.push_str(&format!("{node}\t{}\n", class_ids[l]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_dataset<T: Scalar>(
    dataset: &LabeledDataset<T>,
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
) -> Result<()> {
    write_edges(edge_path, &dataset.graph)?;
    write_features(feature_path, dataset.graph.features())?;
    write_labels(label_path, &dataset.labels, &dataset.class_ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.1, 0.1, 0.8];

/// Seeded uniform permutation of `0..n`, cut into contiguous parts. Each part
/// is returned sorted.
pub fn make_split(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|&r| !r.is_finite() || r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be positive and sum to 1, got {ratios:?}")));
    }
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!("ratios {ratios:?} leave an empty part for {n} nodes")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part = |range: std::ops::Range<usize>| {
        let mut p = perm[range].to_vec();
        p.sort_unstable();
        p
    };
    let train = part(0..n_train);
    let val = part(n_train..n_train + n_val);
    let test = part(n_train + n_val..n);
    Ok(Split { seed, ratios, train, val, test })
}

pub fn write_split(path: &Path, split: &Split) -> Result<()> {
    std::fs::write(path, serde_json::to_string(split)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<Split> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub n_per_block: usize,
    pub num_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of each block-mean coordinate; noise is unit.
    pub mean_scale: f64,
    pub seed: u64,
}

impl SbmParams {
    pub fn new(n_per_block: usize, num_blocks: usize, p_in: f64, p_out: f64, feature_dim: usize, seed: u64) -> Self {
        Self { n_per_block, num_blocks, p_in, p_out, feature_dim, mean_scale: 1.0, seed }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic<T> {
    pub dataset: LabeledDataset<T>,
    pub connectivity: Connectivity,
}

pub fn synth_sbm<T: Scalar>(
    n_per_block: usize,
    num_blocks: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    seed: u64,
) -> Result<Synthetic<T>> {
    synth_sbm_with(&SbmParams::new(n_per_block, num_blocks, p_in, p_out, feature_dim, seed))
}

/// Block `b` holds nodes `b·n .. (b+1)·n`. Features are a Gaussian block
/// mean plus unit noise, with columns centered to zero mean.
pub fn synth_sbm_with<T: Scalar>(p: &SbmParams) -> Result<Synthetic<T>> {
    for (name, v) in [("p_in", p.p_in), ("p_out", p.p_out)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    if p.n_per_block == 0 || p.num_blocks == 0 || p.feature_dim == 0 {
        return Err(Error::Config("block size, block count and feature dimension must be positive".into()));
    }
    if !(p.mean_scale >= 0.0 && p.mean_scale.is_finite()) {
        return Err(Error::Config(format!("mean scale must be nonnegative, got {}", p.mean_scale)));
    }
    let n = p.n_per_block * p.num_blocks;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let block = |u: usize| u / p.n_per_block;

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if block(u) == block(v) { p.p_in } else { p.p_out };
            if rng.random_bool(prob) {
                edges.push((u, v));
            }
        }
    }

    let means: Vec<Vec<f64>> = (0..p.num_blocks)
        .map(|_| (0..p.feature_dim).map(|_| p.mean_scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let raw = Dense::from_fn(n, p.feature_dim, |u, c| means[block(u)][c] + rng.sample::<f64, _>(StandardNormal));
    let features: Dense<T> = center_columns(&raw).cast();

    let graph = Graph::new(&edges, features)?;
    let connectivity = is_connected_non_bipartite(&graph);
    let labels = (0..n).map(block).collect();
    let mut dataset =
        LabeledDataset::new(graph, labels, format!("sbm-{}x{}-seed{}", p.num_blocks, p.n_per_block, p.seed))?;
    dataset.class_names = Some((0..p.num_blocks).map(|b| format!("block{b}")).collect());
    Ok(Synthetic { dataset, connectivity })
}
