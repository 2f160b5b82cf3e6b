//! Shrinking scale of deep filters: centered norms across depth and the
//! distance to each filter's analytic large-K limit.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::filters::{center_columns, filter_graph, FilterConfig, FilterKind};
use crate::graph::{is_connected_non_bipartite, normalize, Connectivity, Graph, NormKind};
use crate::linalg::expm;
use crate::scalar::Scalar;

/// Largest graph for which the dense exponential limit is formed.
pub const MAX_DENSE_NODES: usize = 200;
/// `norm(K_max) < ratio · norm(K_min)` counts as vanishing.
pub const DEFAULT_VANISHING_RATIO: f64 = 1e-2;
const EXPM_TOL: f64 = 1e-12;

fn check_depths(k_values: &[usize]) -> Result<()> {
    if k_values.is_empty() {
        return Err(Error::Config("no depths given".into()));
    }
    if k_values[0] == 0 || k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("depths must be positive and strictly increasing, got {k_values:?}")));
    }
    Ok(())
}

/// Frobenius norm of the zero-centered filter at each depth. `config.depth`
/// is ignored; every other field is kept.
pub fn centered_norm_curve<T: Scalar>(
    graph: &Graph<T>,
    config: &FilterConfig,
    k_values: &[usize],
) -> Result<Vec<(usize, T)>> {
    Ok(centered_filters(graph, config, k_values)?.into_iter().map(|(k, c)| (k, c.frobenius_norm())).collect())
}

fn centered_filters<T: Scalar>(
    graph: &Graph<T>,
    config: &FilterConfig,
    k_values: &[usize],
) -> Result<Vec<(usize, Dense<T>)>> {
    check_depths(k_values)?;
    k_values
        .par_iter()
        .map(|&k| {
            let f = filter_graph(graph, &config.with_depth(k))?;
            Ok((k, center_columns(&f.values)))
        })
        .collect()
}

/// Distance from the centered SSGC filter at depth `k` to `τ · (centered X)`.
pub fn ssgc_limit_residual<T: Scalar>(graph: &Graph<T>, tau: f64, k: usize, norm: NormKind) -> Result<T> {
    let f = filter_graph(graph, &FilterConfig::ssgc(k, tau).with_norm(norm))?;
    let target = center_columns(graph.features()).scale(T::of(tau));
    Ok(center_columns(&f.values).sub(&target)?.frobenius_norm())
}

/// `(I − 11ᵀ/N) exp(T (A − I)) X` for the chosen operator `A`.
pub fn dgc_limit_target<T: Scalar>(graph: &Graph<T>, terminal_time: f64, norm: NormKind) -> Result<Dense<T>> {
    let n = graph.num_nodes();
    if n > MAX_DENSE_NODES {
        return Err(Error::TooLarge { n, cap: MAX_DENSE_NODES });
    }
    let a = normalize(graph, norm).matrix.to_dense();
    let t = T::of(terminal_time);
    let generator = a.add_scaled(&Dense::identity(n), -T::one())?.scale(t);
    let heat = expm(&generator, T::of(EXPM_TOL).max(T::epsilon()))?;
    Ok(center_columns(&heat.matmul(graph.features())?))
}

/// Distance from the centered DGC filter at depth `k` to [`dgc_limit_target`].
pub fn dgc_limit_residual<T: Scalar>(graph: &Graph<T>, terminal_time: f64, k: usize, norm: NormKind) -> Result<T> {
    let target = dgc_limit_target(graph, terminal_time, norm)?;
    let f = filter_graph(graph, &FilterConfig::dgc(k, terminal_time).with_norm(norm))?;
    Ok(center_columns(&f.values).sub(&target)?.frobenius_norm())
}

/// Whether the last point of the curve is below `ratio` times the first.
pub fn vanishing_verdict<T: Scalar>(curve: &[(usize, T)], ratio: f64) -> Result<bool> {
    if curve.len() < 2 {
        return Err(Error::Config(format!("a verdict needs at least 2 curve points, got {}", curve.len())));
    }
    let first = curve.iter().min_by_key(|(k, _)| *k).unwrap().1;
    let last = curve.iter().max_by_key(|(k, _)| *k).unwrap().1;
    Ok(last < T::of(ratio) * first)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub filter_kind: FilterKind,
    pub norm: NormKind,
    pub k_values: Vec<usize>,
    pub centered_norms: Vec<f64>,
    /// Row-major `N × F`; absent when the graph is too large for the dense limit.
    pub limit_target: Option<Vec<Vec<f64>>>,
    pub residuals: Option<Vec<f64>>,
    pub graph_preconditions: Connectivity,
    pub vanishing: bool,
    /// Set when the operator is not the one the exact limits are stated for.
    pub qualitative: bool,
}

/// Builds the full report for one filter family over a depth sweep.
pub fn limit_report<T: Scalar>(graph: &Graph<T>, config: &FilterConfig, k_values: &[usize]) -> Result<LimitReport> {
    let centered = centered_filters(graph, config, k_values)?;
    let norms: Vec<(usize, T)> = centered.iter().map(|(k, c)| (*k, c.frobenius_norm())).collect();
    let vanishing = if norms.len() >= 2 { vanishing_verdict(&norms, DEFAULT_VANISHING_RATIO)? } else { false };
    let (n, f) = graph.features().shape();
    let target: Option<Dense<T>> = match config.kind {
        FilterKind::Sgc => Some(Dense::zeros(n, f)),
        FilterKind::Ssgc { tau } => Some(center_columns(graph.features()).scale(T::of(tau))),
        FilterKind::Dgc { terminal_time } if n <= MAX_DENSE_NODES => {
            Some(dgc_limit_target(graph, terminal_time, config.norm)?)
        }
        FilterKind::Dgc { .. } => None,
    };
    let residuals = match &target {
        Some(t) => {
            Some(centered.iter().map(|(_, c)| Ok(c.sub(t)?.frobenius_norm().as_f64())).collect::<Result<Vec<f64>>>()?)
        }
        None => None,
    };
    if let Some(r) = &residuals {
        if let Some(pos) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "limit residual", step: k_values[pos] });
        }
    }
    Ok(LimitReport {
        filter_kind: config.kind,
        norm: config.norm,
        k_values: k_values.to_vec(),
        centered_norms: norms.iter().map(|(_, v)| v.as_f64()).collect(),
        limit_target: target.map(|t| (0..n).map(|r| t.row(r).iter().map(|v| v.as_f64()).collect()).collect()),
        residuals,
        graph_preconditions: is_connected_non_bipartite(graph),
        vanishing,
        qualitative: config.norm != NormKind::RandomWalk,
    })
}

pub fn write_report_json(path: &Path, report: &LimitReport) -> Result<()> {
    let body = serde_json::to_string_pretty(report)?;
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// `K,norm,residual` CSV; the residual column is empty when no target exists.
pub fn write_report_csv(path: &Path, report: &LimitReport) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "K,norm,residual").map_err(io)?;
    for (i, k) in report.k_values.iter().enumerate() {
        let residual = report.residuals.as_ref().map(|r| format!("{:e}", r[i])).unwrap_or_default();
        writeln!(w, "{k},{:e},{residual}", report.centered_norms[i]).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(n: usize, f: usize, seed: u64) -> Dense<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dense::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0))
    }

    fn triangle(x: Dense<f64>) -> Graph<f64> {
        Graph::new(&[(0, 1), (1, 2), (0, 2)], x).unwrap()
    }

    fn doubling(from: usize, to: usize) -> Vec<usize> {
        std::iter::successors(Some(from), |k| Some(k * 2)).take_while(|&k| k <= to).collect()
    }

    #[test]
    fn edgeless_curve_is_flat() {
        let x = random_features(4, 2, 1);
        let g = Graph::new(&[], x.clone()).unwrap();
        let curve = centered_norm_curve(&g, &FilterConfig::sgc(1), &[1, 2, 8, 64]).unwrap();
        let expected = center_columns(&x).frobenius_norm();
        assert!(curve.iter().all(|&(_, v)| v == expected));
        assert!(!vanishing_verdict(&curve, DEFAULT_VANISHING_RATIO).unwrap());
    }

    #[test]
    fn triangle_sgc_decays() {
        let g = triangle(random_features(3, 2, 2));
        let ks = doubling(1, 256);
        let curve = centered_norm_curve(&g, &FilterConfig::sgc(1).with_norm(NormKind::RandomWalk), &ks).unwrap();
        // Decreasing until centering round-off takes over.
        let floor = 64.0 * f64::EPSILON;
        for w in curve.windows(2) {
            assert!(w[1].1 < w[0].1 || w[0].1 < floor, "{curve:?}");
        }
        assert!(curve.last().unwrap().1 < floor);
        assert!(vanishing_verdict(&curve, DEFAULT_VANISHING_RATIO).unwrap());
    }

    #[test]
    fn constant_features_center_to_zero() {
        let g = triangle(Dense::from_fn(3, 2, |_, c| 2.0 + c as f64));
        for cfg in [FilterConfig::sgc(1), FilterConfig::ssgc(1, 0.05), FilterConfig::dgc(1, 5.27)] {
            let curve = centered_norm_curve(&g, &cfg.with_norm(NormKind::RandomWalk), &[1, 4, 16, 64]).unwrap();
            assert!(curve.iter().all(|&(_, v)| v < 1e-13), "{cfg}: {curve:?}");
        }
        let sgc = centered_norm_curve(&g, &FilterConfig::sgc(1).with_norm(NormKind::RandomWalk), &[1, 64]).unwrap();
        assert!(sgc.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn single_edge_does_not_vanish() {
        let g = Graph::new(&[(0, 1)], Dense::from_rows(&[[1.0], [0.0]]).unwrap()).unwrap();
        assert!(g.num_nodes() == 2 && is_connected_non_bipartite(&g).bipartite);
        let curve = centered_norm_curve(&g, &FilterConfig::sgc(1).with_norm(NormKind::RandomWalk), &[1, 255]).unwrap();
        assert!(curve[1].1 > 0.5 * curve[0].1);
        assert!(!vanishing_verdict(&curve, DEFAULT_VANISHING_RATIO).unwrap());
    }

    #[test]
    fn ssgc_limits() {
        let g = triangle(random_features(3, 2, 3));
        let cx = center_columns(g.features()).frobenius_norm();
        let mut prev = f64::INFINITY;
        for k in doubling(4, 512) {
            let r = ssgc_limit_residual(&g, 0.0, k, NormKind::RandomWalk).unwrap();
            assert!(r < prev);
            prev = r;
        }
        let r = ssgc_limit_residual(&g, 0.05, 512, NormKind::RandomWalk).unwrap();
        assert!(r < 1e-3 * cx, "{r} vs {cx}");
        // Closed form on the triangle: the residual is (1−τ)/K · (1/3)(1 − (−1/2)^K) · |cX|.
        let predicted = 0.95 / 512.0 / 3.0 * (1.0 - 0.5f64.powi(512)) * cx;
        assert!((r - predicted).abs() < 1e-12);
        for k in [1, 7, 100] {
            assert_eq!(ssgc_limit_residual(&g, 1.0, k, NormKind::RandomWalk).unwrap(), 0.0);
        }
    }

    #[test]
    fn dgc_target_matches_eigen_oracle() {
        let g = triangle(random_features(3, 2, 4));
        let t = 5.27;
        let target = dgc_limit_target(&g, t, NormKind::RandomWalk).unwrap();
        let a = normalize(&g, NormKind::RandomWalk).matrix.to_dense();
        let eig = SymmetricEigen::new(DMatrix::from_fn(3, 3, |r, c| a[(r, c)]));
        let heat = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (t * (l - 1.0)).exp()))
            * eig.eigenvectors.transpose();
        let x = g.features();
        let hx = Dense::from_fn(3, 2, |r, c| (0..3).map(|j| heat[(r, j)] * x[(j, c)]).sum());
        assert!(target.max_abs_diff(&center_columns(&hx)).unwrap() < 1e-12);
    }

    #[test]
    fn dgc_limits() {
        let g = triangle(random_features(3, 2, 5));
        let zero_time = [1, 3, 50].map(|k| dgc_limit_residual(&g, 0.0, k, NormKind::RandomWalk).unwrap());
        assert_eq!(zero_time, [0.0; 3]);

        let mut prev = f64::INFINITY;
        for k in doubling(4, 1024) {
            let r = dgc_limit_residual(&g, 5.27, k, NormKind::RandomWalk).unwrap();
            assert!(r < prev, "K={k}: {r} !< {prev}");
            prev = r;
        }
        assert!(prev < 1e-3);

        let cx = center_columns(g.features()).frobenius_norm();
        let far = dgc_limit_target(&g, 50.0, NormKind::RandomWalk).unwrap().frobenius_norm();
        assert!(far < 1e-12 * cx);
    }

    #[test]
    fn dgc_shrinks_slower_than_sgc() {
        let g = triangle(random_features(3, 2, 6));
        let sgc = centered_norm_curve(&g, &FilterConfig::sgc(1).with_norm(NormKind::RandomWalk), &[128]).unwrap();
        let dgc = centered_norm_curve(&g, &FilterConfig::dgc(1, 5.27).with_norm(NormKind::RandomWalk), &[128]).unwrap();
        assert!(dgc[0].1 > sgc[0].1);
    }

    #[test]
    fn decay_rate_follows_second_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 5 {
            let n = rng.random_range(6..=20);
            let edges: Vec<(usize, usize)> =
                (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|_| rng.random_bool(0.3)).collect();
            let g = Graph::new(&edges, random_features(n, 2, rng.random())).unwrap();
            if !is_connected_non_bipartite(&g).connected_non_bipartite() {
                continue;
            }
            // D^{-1/2} A D^{-1/2} shares its spectrum with D^{-1} A.
            let d: Vec<f64> = (0..n).map(|u| g.degree(u) as f64).collect();
            let m = DMatrix::from_fn(n, n, |r, c| if g.has_edge(r, c) { 1.0 / (d[r] * d[c]).sqrt() } else { 0.0 });
            let mut mags: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().map(|l| l.abs()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            let lambda2 = mags[1];
            if lambda2 > 0.97 || (mags[1] - mags[2]).abs() < 0.05 {
                continue;
            }
            let k1 = ((1e-3f64).ln() / lambda2.ln()).ceil() as usize;
            let k2 = ((1e-7f64).ln() / lambda2.ln()).ceil() as usize;
            let curve =
                centered_norm_curve(&g, &FilterConfig::sgc(1).with_norm(NormKind::RandomWalk), &[k1, k2]).unwrap();
            let measured = curve[1].1 / curve[0].1;
            let predicted = lambda2.powi((k2 - k1) as i32);
            assert!(measured / predicted > 0.5 && measured / predicted < 2.0, "n={n}: {measured} vs {predicted}");
            checked += 1;
        }
    }

    #[test]
    fn verdict_contract() {
        let geometric: Vec<(usize, f64)> = (0..10).map(|i| (1 << i, 0.5f64.powi(i))).collect();
        assert!(vanishing_verdict(&geometric, DEFAULT_VANISHING_RATIO).unwrap());
        let flat = [(1, 3.0), (2, 3.0), (4, 3.0)];
        assert!(!vanishing_verdict(&flat, DEFAULT_VANISHING_RATIO).unwrap());
        assert!(vanishing_verdict(&[(1, 1.0)], DEFAULT_VANISHING_RATIO).is_err());
    }

    #[test]
    fn report_and_exports() {
        let g = triangle(random_features(3, 2, 8));
        let ks = doubling(1, 256);
        let report = limit_report(&g, &FilterConfig::sgc(1).with_norm(NormKind::RandomWalk), &ks).unwrap();
        assert!(report.vanishing && !report.qualitative);
        assert!(report.graph_preconditions.connected_non_bipartite());
        assert_eq!(report.residuals.as_ref().unwrap(), &report.centered_norms);

        let edgeless = Graph::new(&[], random_features(3, 2, 9)).unwrap();
        let report_e = limit_report(&edgeless, &FilterConfig::sgc(1).with_norm(NormKind::RandomWalk), &ks).unwrap();
        assert!(!report_e.vanishing && !report_e.graph_preconditions.connected);

        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("r.json");
        write_report_json(&json, &report).unwrap();
        let back: LimitReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(back, report);
        let csv = dir.path().join("r.csv");
        write_report_csv(&csv, &report).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("K,norm,residual\n1,"));
        assert_eq!(text.lines().count(), ks.len() + 1);

        assert!(limit_report(&g, &FilterConfig::sgc(1), &[4, 2]).is_err());
    }

    #[test]
    fn dense_limit_guard() {
        let g = Graph::new(&[], Dense::<f64>::zeros(MAX_DENSE_NODES + 1, 1)).unwrap();
        assert!(matches!(dgc_limit_target(&g, 1.0, NormKind::RandomWalk), Err(Error::TooLarge { .. })));
    }
}
