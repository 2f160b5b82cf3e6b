//! Undirected unweighted attributed graphs and their normalized adjacency
//! operators.
//!
//! The raw adjacency never stores self-loops; they are introduced by
//! [`normalize`] for the kinds that need them.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 32-byte content digest.
pub type Digest32 = [u8; 32];

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Builds from per-row `(column, value)` lists. Columns within each row
    /// must be strictly increasing.
    fn from_rows(rows: Vec<Vec<(usize, T)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterator over `(column, value)` of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.row(r).find(|&(j, _)| j == c).map_or(T::zero(), |(_, v)| v)
    }

    /// Sparse · dense product. Each output entry sums over the row in
    /// column order, so the result does not depend on scheduling.
    pub fn spmm(&self, x: &Dense<T>) -> Result<Dense<T>> {
        if x.rows() != self.n {
            return Err(Error::Shape(format!(
                "sparse {n}x{n} operator applied to {}x{} matrix",
                x.rows(),
                x.cols(),
                n = self.n
            )));
        }
        let mut out = Dense::zeros(self.n, x.cols());
        for r in 0..self.n {
            let dst = out.row_mut(r);
            for (c, a) in self.row(r) {
                for (d, &v) in dst.iter_mut().zip(x.row(c)) {
                    *d += a * v;
                }
            }
        }
        Ok(out)
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Dense<T> {
        let mut d = Dense::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                d[(r, c)] = v;
            }
        }
        d
    }

    /// Column indices of each row, the sparsity pattern.
    pub fn pattern(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|r| self.row(r).map(|(c, _)| c).collect()).collect()
    }
}

/// Unweighted undirected graph with dense node features.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    indptr: Vec<usize>,
    neighbors: Vec<usize>,
    features: Dense<T>,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph on `features.rows()` nodes. Each pair is treated as an
    /// undirected edge; duplicates in either orientation collapse to one.
    pub fn new(edges: &[(usize, usize)], features: Dense<T>) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::Graph("graph needs at least one node".into()));
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (line, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge {line} ({u}, {v}) references a node outside [0, {n})")));
            }
            if u == v {
                return Err(Error::Graph(format!("edge {line} is a self-loop on node {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(edges.len() * 2);
        indptr.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            indptr.push(neighbors.len());
        }
        Ok(Self { indptr, neighbors, features })
    }

    pub fn num_nodes(&self) -> usize {
        self.indptr.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn features(&self) -> &Dense<T> {
        &self.features
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.indptr[node]..self.indptr[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.indptr[node + 1] - self.indptr[node]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|u| self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    /// Digest over the node count, the edge set and the feature values.
    pub fn content_hash(&self) -> Digest32 {
        let mut h = Sha256::new();
        h.update(b"gflin-graph-v1");
        h.update((self.num_nodes() as u64).to_le_bytes());
        h.update((self.features.cols() as u64).to_le_bytes());
        for (u, v) in self.edges() {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        for &x in self.features.as_slice() {
            h.update(x.as_f64().to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Which normalized operator to derive from the adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// `D̃^{-1/2}(A+I)D̃^{-1/2}`.
    Symmetric,
    /// `D̃^{-1}(A+I)`.
    Row,
    /// `D^{-1}A` without self-loops. Isolated nodes keep a unit diagonal so
    /// the operator stays row-stochastic.
    RandomWalk,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Symmetric => "sym",
            NormKind::Row => "row",
            NormKind::RandomWalk => "rw",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sym" | "symmetric" => Ok(NormKind::Symmetric),
            "row" => Ok(NormKind::Row),
            "rw" | "random-walk" => Ok(NormKind::RandomWalk),
            other => Err(Error::Config(format!("unknown normalization `{other}` (expected sym, row or rw)"))),
        }
    }
}

/// A normalized adjacency operator bound to the graph it came from.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency<T> {
    pub kind: NormKind,
    pub matrix: Csr<T>,
    pub source_graph_hash: Digest32,
}

/// Derives the requested normalized operator.
pub fn normalize<T: Scalar>(graph: &Graph<T>, kind: NormKind) -> NormalizedAdjacency<T> {
    let n = graph.num_nodes();
    let rows = match kind {
        NormKind::Symmetric | NormKind::Row => {
            let tilde_deg = |u: usize| T::of_usize(graph.degree(u) + 1);
            (0..n)
                .map(|u| {
                    let deg = tilde_deg(u);
                    let mut row: Vec<(usize, T)> = Vec::with_capacity(graph.degree(u) + 1);
                    let weight = |v: usize| match kind {
                        NormKind::Symmetric => T::one() / (deg * tilde_deg(v)).sqrt(),
                        _ => T::one() / deg,
                    };
                    let mut diag_done = false;
                    for &v in graph.neighbors(u) {
                        if !diag_done && v > u {
                            row.push((u, weight(u)));
                            diag_done = true;
                        }
                        row.push((v, weight(v)));
                    }
                    if !diag_done {
                        row.push((u, weight(u)));
                    }
                    row
                })
                .collect()
        }
        NormKind::RandomWalk => (0..n)
            .map(|u| {
                let deg = graph.degree(u);
                if deg == 0 {
                    vec![(u, T::one())]
                } else {
                    let w = T::one() / T::of_usize(deg);
                    graph.neighbors(u).iter().map(|&v| (v, w)).collect()
                }
            })
            .collect(),
    };
    NormalizedAdjacency { kind, matrix: Csr::from_rows(rows), source_graph_hash: graph.content_hash() }
}

/// Connectivity and bipartiteness of the raw adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connectivity {
    pub connected: bool,
    pub bipartite: bool,
}

impl Connectivity {
    /// Whether the limit statements about repeated propagation apply.
    pub fn connected_non_bipartite(&self) -> bool {
        self.connected && !self.bipartite
    }
}

/// BFS over every component, two-colouring as it goes.
pub fn is_connected_non_bipartite<T: Scalar>(graph: &Graph<T>) -> Connectivity {
    let n = graph.num_nodes();
    let mut colour: Vec<Option<bool>> = vec![None; n];
    let mut components = 0;
    let mut bipartite = true;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if colour[start].is_some() {
            continue;
        }
        components += 1;
        colour[start] = Some(false);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            let cu = colour[u].unwrap();
            for &v in graph.neighbors(u) {
                match colour[v] {
                    None => {
                        colour[v] = Some(!cu);
                        queue.push_back(v);
                    }
                    Some(cv) if cv == cu => bipartite = false,
                    Some(_) => {}
                }
            }
        }
    }
    Connectivity { connected: components == 1, bipartite }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Reads a `src<TAB>dst` edge list. Blank lines and `#` comments are skipped.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, i + 1, "expected `src<TAB>dst`"));
        };
        let u = a.parse().map_err(|_| parse_err(path, i + 1, format!("bad node index `{a}`")))?;
        let v = b.parse().map_err(|_| parse_err(path, i + 1, format!("bad node index `{b}`")))?;
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn write_edges<T: Scalar>(path: &Path, graph: &Graph<T>) -> Result<()> {
    let mut out = String::new();
    for (u, v) in graph.edges() {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a feature file: header `N F`, then `N` rows of `F` decimals.
pub fn read_features<T: Scalar>(path: &Path) -> Result<Dense<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() || l.trim_start().starts_with('#') => None,
        other => Some((i + 1, other)),
    });
    let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing `N F` header"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, hline, format!("bad header token `{t}`"))))
        .collect::<Result<_>>()?;
    let [n, f] = dims[..] else {
        return Err(parse_err(path, hline, "header must be `N F`"));
    };
    let mut data = Vec::with_capacity(n * f);
    let mut rows = 0;
    for (ln, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| parse_err(path, ln, format!("bad value `{tok}`")))?;
            data.push(T::of(v));
        }
        if data.len() - before != f {
            return Err(parse_err(path, ln, format!("expected {f} values, found {}", data.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Data(format!("{}: header declares N={n} rows but the file has {rows}", path.display())));
    }
    Dense::from_vec(n, f, data)
}

pub fn write_features<T: Scalar>(path: &Path, features: &Dense<T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", features.rows(), features.cols()).map_err(io)?;
    for r in 0..features.rows() {
        let line: Vec<String> = features.row(r).iter().map(|v| format!("{}", v.as_f64())).collect();
        writeln!(w, "{}", line.join(" ")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> Dense<f64> {
        Dense::from_fn(n, 1, |r, _| r as f64)
    }

    #[test]
    fn empty_edge_list() {
        let g = Graph::new(&[], feats(2)).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert!(g.neighbors(0).is_empty());
    }

    #[test]
    fn symmetry_and_dedup() {
        let g = Graph::new(&[(0, 1)], feats(2)).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        let g = Graph::new(&[(0, 1), (1, 0), (0, 1)], feats(2)).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(Graph::new(&[(0, 2)], feats(2)), Err(Error::Graph(_))));
        assert!(matches!(Graph::new(&[(1, 1)], feats(2)), Err(Error::Graph(_))));
        assert!(Graph::new(&[], Dense::<f64>::zeros(0, 1)).is_err());
    }

    #[test]
    fn normalize_edgeless_is_identity() {
        let g = Graph::new(&[], feats(2)).unwrap();
        for kind in [NormKind::Symmetric, NormKind::Row, NormKind::RandomWalk] {
            assert_eq!(normalize(&g, kind).matrix.to_dense(), Dense::identity(2));
        }
    }

    #[test]
    fn normalize_single_edge() {
        let g = Graph::new(&[(0, 1)], feats(2)).unwrap();
        let sym = normalize(&g, NormKind::Symmetric).matrix.to_dense();
        assert_eq!(sym, Dense::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap());
        let rw = normalize(&g, NormKind::RandomWalk).matrix.to_dense();
        assert_eq!(rw, Dense::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
    }

    #[test]
    fn normalize_triangle_row() {
        let g = Graph::new(&[(0, 1), (1, 2), (0, 2)], feats(3)).unwrap();
        let row = normalize(&g, NormKind::Row);
        let d = row.matrix.to_dense();
        for v in d.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        for s in row.matrix.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pattern_includes_self_loops() {
        let g = Graph::new(&[(0, 2), (2, 3)], feats(4)).unwrap();
        let p = normalize(&g, NormKind::Symmetric).matrix.pattern();
        assert_eq!(p, vec![vec![0, 2], vec![1], vec![0, 2, 3], vec![2, 3]]);
    }

    #[test]
    fn connectivity_flags() {
        let tri = Graph::new(&[(0, 1), (1, 2), (0, 2)], feats(3)).unwrap();
        assert_eq!(is_connected_non_bipartite(&tri), Connectivity { connected: true, bipartite: false });
        let edge = Graph::new(&[(0, 1)], feats(2)).unwrap();
        assert_eq!(is_connected_non_bipartite(&edge), Connectivity { connected: true, bipartite: true });
        let iso = Graph::new(&[], feats(2)).unwrap();
        assert_eq!(is_connected_non_bipartite(&iso), Connectivity { connected: false, bipartite: true });
    }

    #[test]
    fn hash_tracks_content() {
        let a = Graph::new(&[(0, 1)], feats(3)).unwrap();
        let b = Graph::new(&[(1, 0), (0, 1)], feats(3)).unwrap();
        let c = Graph::new(&[(1, 2)], feats(3)).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn feature_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, "3 2\n1 2\n3 4\n").unwrap();
        let err = read_features::<f64>(&p).unwrap_err().to_string();
        assert!(err.contains("N=3") && err.contains("2"), "{err}");
        std::fs::write(&p, "2 2\n1 2\n3\n").unwrap();
        assert!(matches!(read_features::<f64>(&p), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&p, "# comment\n0\tx\n").unwrap();
        assert!(matches!(read_edges(&p), Err(Error::Parse { line: 2, .. })));
    }
}
