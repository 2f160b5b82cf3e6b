//! Linearized graph filters: repeated sparse propagation of the feature
//! matrix, never forming a power of the adjacency.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::graph::{normalize, Digest32, Graph, NormKind, NormalizedAdjacency};
use crate::scalar::Scalar;

/// Identity-mixing weight used for SSGC when none is given.
pub const DEFAULT_TAU: f64 = 0.05;
/// Terminal time used for DGC when none is given.
pub const DEFAULT_TERMINAL_TIME: f64 = 5.27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterKind {
    /// `Â^K X`
    Sgc,
    /// `(1/K) Σ_{k=1..K} ((1-τ) Â^k X + τ X)`
    Ssgc { tau: f64 },
    /// `((1 - T/K) I + (T/K) Â)^K X`
    Dgc { terminal_time: f64 },
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Sgc => "sgc",
            FilterKind::Ssgc { .. } => "ssgc",
            FilterKind::Dgc { .. } => "dgc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(flatten)]
    pub kind: FilterKind,
    pub depth: usize,
    pub norm: NormKind,
}

impl FilterConfig {
    pub fn sgc(depth: usize) -> Self {
        Self { kind: FilterKind::Sgc, depth, norm: NormKind::Symmetric }
    }

    pub fn ssgc(depth: usize, tau: f64) -> Self {
        Self { kind: FilterKind::Ssgc { tau }, depth, norm: NormKind::Symmetric }
    }

    pub fn dgc(depth: usize, terminal_time: f64) -> Self {
        Self { kind: FilterKind::Dgc { terminal_time }, depth, norm: NormKind::Symmetric }
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("filter depth K must be at least 1".into()));
        }
        match self.kind {
            FilterKind::Sgc => {}
            FilterKind::Ssgc { tau } => {
                if !(0.0..=1.0).contains(&tau) {
                    return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
                }
            }
            FilterKind::Dgc { terminal_time } => {
                if !(terminal_time >= 0.0 && terminal_time.is_finite()) {
                    return Err(Error::Config(format!(
                        "terminal time must be a nonnegative finite number, got {terminal_time}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical text used in digests.
    fn canonical(&self) -> String {
        let params = match self.kind {
            FilterKind::Sgc => String::new(),
            FilterKind::Ssgc { tau } => format!(";tau={:016x}", tau.to_bits()),
            FilterKind::Dgc { terminal_time } => format!(";t={:016x}", terminal_time.to_bits()),
        };
        format!("{};k={};norm={}{}", self.kind.name(), self.depth, self.norm, params)
    }
}

impl fmt::Display for FilterConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(K={}, norm={}", self.kind.name(), self.depth, self.norm)?;
        match self.kind {
            FilterKind::Sgc => {}
            FilterKind::Ssgc { tau } => write!(f, ", tau={tau}")?,
            FilterKind::Dgc { terminal_time } => write!(f, ", T={terminal_time}")?,
        }
        write!(f, ")")
    }
}

/// A computed filter `F_G` together with what produced it.
#[derive(Debug, Clone)]
pub struct FilterMatrix<T> {
    pub values: Dense<T>,
    pub config: FilterConfig,
    pub graph_hash: Digest32,
}

fn check_finite<T: Scalar>(m: &Dense<T>, step: usize) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage: "filter propagation", step })
    }
}

/// Propagates `features` through the normalized operator as `config` asks.
/// Cost is `O(K · nnz · F)`.
pub fn compute_filter<T: Scalar>(
    adj: &NormalizedAdjacency<T>,
    features: &Dense<T>,
    config: &FilterConfig,
) -> Result<FilterMatrix<T>> {
    config.validate()?;
    if adj.kind != config.norm {
        return Err(Error::Config(format!(
            "filter asks for {} normalization but the operator is {}",
            config.norm, adj.kind
        )));
    }
    if features.rows() != adj.matrix.n() {
        return Err(Error::Shape(format!("{} feature rows for a {}-node operator", features.rows(), adj.matrix.n())));
    }
    let k_max = config.depth;
    let values = match config.kind {
        FilterKind::Sgc => {
            let mut h = features.clone();
            for k in 1..=k_max {
                h = adj.matrix.spmm(&h)?;
                check_finite(&h, k)?;
            }
            h
        }
        FilterKind::Ssgc { tau } => {
            let mut power = features.clone();
            let mut sum = Dense::zeros(features.rows(), features.cols());
            for k in 1..=k_max {
                power = adj.matrix.spmm(&power)?;
                check_finite(&power, k)?;
                sum = sum.add_scaled(&power, T::one())?;
            }
            let tau = T::of(tau);
            let mix = (T::one() - tau) / T::of_usize(k_max);
            let out = sum.scale(mix).add_scaled(features, tau)?;
            check_finite(&out, k_max)?;
            out
        }
        FilterKind::Dgc { terminal_time } => {
            let step = T::of(terminal_time) / T::of_usize(k_max);
            let keep = T::one() - step;
            let mut h = features.clone();
            for k in 1..=k_max {
                let spread = adj.matrix.spmm(&h)?;
                h = h.scale(keep).add_scaled(&spread, step)?;
                check_finite(&h, k)?;
            }
            h
        }
    };
    Ok(FilterMatrix { values, config: *config, graph_hash: adj.source_graph_hash })
}

/// Normalizes `graph` and computes its filter in one call.
pub fn filter_graph<T: Scalar>(graph: &Graph<T>, config: &FilterConfig) -> Result<FilterMatrix<T>> {
    let adj = normalize(graph, config.norm);
    compute_filter(&adj, graph.features(), config)
}

/// Subtracts the column mean from every row.
pub fn center_columns<T: Scalar>(m: &Dense<T>) -> Dense<T> {
    let means = m.column_means();
    let mut out = m.clone();
    for r in 0..out.rows() {
        for (v, &mu) in out.row_mut(r).iter_mut().zip(&means) {
            *v -= mu;
        }
    }
    out
}

/// Zero-centered filter `F_G − (1/N) 1 1ᵀ F_G`.
pub fn zero_center<T: Scalar>(filter: &FilterMatrix<T>) -> Dense<T> {
    center_columns(&filter.values)
}

const CACHE_MAGIC: &[u8; 8] = b"GFLNFLT1";

/// First 8 bytes of a digest binding a filter to its graph and config.
pub fn cache_key(graph_hash: &Digest32, config: &FilterConfig) -> [u8; 8] {
    let mut h = Sha256::new();
    h.update(graph_hash);
    h.update(config.canonical().as_bytes());
    let full: Digest32 = h.finalize().into();
    full[..8].try_into().unwrap()
}

/// File name for a cache entry under some cache directory.
pub fn cache_file_name(graph_hash: &Digest32, config: &FilterConfig) -> String {
    let key: String = cache_key(graph_hash, config).iter().map(|b| format!("{b:02x}")).collect();
    format!("filter-{key}.bin")
}

/// Writes `magic | N | F | key` (32 bytes) then row-major little-endian f64.
pub fn write_cache<T: Scalar>(path: &Path, filter: &FilterMatrix<T>) -> Result<()> {
    let v = &filter.values;
    let mut buf = Vec::with_capacity(32 + 8 * v.as_slice().len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(v.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(v.cols() as u64).to_le_bytes());
    buf.extend_from_slice(&cache_key(&filter.graph_hash, &filter.config));
    for x in v.as_slice() {
        buf.extend_from_slice(&x.as_f64().to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a cache entry. Returns `Ok(None)` if it was written for a
/// different graph or configuration.
pub fn read_cache<T: Scalar>(
    path: &Path,
    graph_hash: &Digest32,
    config: &FilterConfig,
) -> Result<Option<FilterMatrix<T>>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 32 || &bytes[..8] != CACHE_MAGIC {
        return Err(Error::Data(format!("{} is not a filter cache file", path.display())));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap()) as usize;
    let (n, f) = (word(8), word(16));
    if bytes[24..32] != cache_key(graph_hash, config) {
        return Ok(None);
    }
    let body = &bytes[32..];
    if n.checked_mul(f).and_then(|c| c.checked_mul(8)) != Some(body.len()) {
        return Err(Error::Data(format!("{}: payload does not match {n}x{f} header", path.display())));
    }
    let data = body.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
    Ok(Some(FilterMatrix { values: Dense::from_vec(n, f, data)?, config: *config, graph_hash: *graph_hash }))
}
