//! Orchestration shared by the command line and the acceptance suite:
//! filter once, then train gradient-free or by gradient descent.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split};
use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::filters::{filter_graph, FilterConfig, FilterKind};
use crate::kernel::{accuracy, fit_with, select_lambda, FitOptions, KernelModel, KernelSpec};
use crate::logreg::{train_with_classes, LogRegModel, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gf,
    Gd,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Gf => "gf",
            Mode::Gd => "gd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    Grid(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum Solver {
    GradientFree { lambda: f64, grid: Option<Vec<f64>>, val_accuracy: Option<f64> },
    GradientDescent(OptimizerConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub fit_wall_time_s: f64,
    pub filter_wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub dataset: String,
    pub filter: FilterConfig,
    #[serde(flatten)]
    pub solver: Solver,
    pub split_seed: u64,
    pub metrics: Metrics,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunRecord {
    /// The record without wall-clock fields, for determinism checks.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.metrics.fit_wall_time_s = 0.0;
        r.metrics.filter_wall_time_s = 0.0;
        r.timestamp = 0;
        r
    }
}

pub fn unix_timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Filter rows grouped by split part.
#[derive(Debug, Clone)]
pub struct SplitFilter {
    pub config: FilterConfig,
    pub train: Dense<f64>,
    pub val: Dense<f64>,
    pub test: Dense<f64>,
    pub wall_time_s: f64,
}

pub fn split_filter(dataset: &LabeledDataset<f64>, split: &Split, config: &FilterConfig) -> Result<SplitFilter> {
    let start = Instant::now();
    let f = filter_graph(&dataset.graph, config)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    Ok(SplitFilter {
        config: *config,
        train: f.values.select_rows(&split.train)?,
        val: f.values.select_rows(&split.val)?,
        test: f.values.select_rows(&split.test)?,
        wall_time_s,
    })
}

fn labels_at(dataset: &LabeledDataset<f64>, idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| dataset.labels[i]).collect()
}

fn all_classes(dataset: &LabeledDataset<f64>) -> Vec<usize> {
    (0..dataset.num_classes()).collect()
}

pub struct GfOutcome {
    pub model: KernelModel<f64>,
    pub solver: Solver,
    pub metrics: Metrics,
}

/// Closed-form fit with a fixed λ or one chosen on the validation rows.
pub fn run_gf(
    dataset: &LabeledDataset<f64>,
    split: &Split,
    sf: &SplitFilter,
    lambda: &LambdaChoice,
) -> Result<GfOutcome> {
    let train_y = labels_at(dataset, &split.train);
    let options = FitOptions { classes: Some(all_classes(dataset)), ..Default::default() };
    let start = Instant::now();
    let (model, solver) = match lambda {
        LambdaChoice::Fixed(l) => {
            let model = fit_with(&sf.train, &train_y, *l, KernelSpec::Linear, &options)?;
            (model, Solver::GradientFree { lambda: *l, grid: None, val_accuracy: None })
        }
        LambdaChoice::Grid(grid) => {
            let val_y = labels_at(dataset, &split.val);
            let sel = select_lambda(&sf.train, &train_y, &sf.val, &val_y, grid, KernelSpec::Linear, &options)?;
            let solver = Solver::GradientFree {
                lambda: sel.lambda,
                grid: Some(grid.clone()),
                val_accuracy: Some(sel.val_accuracy),
            };
            (sel.model, solver)
        }
    };
    let fit_wall_time_s = start.elapsed().as_secs_f64();
    let predicted = model.predict(&sf.test)?.labels;
    let metrics = Metrics {
        accuracy: accuracy(&predicted, &labels_at(dataset, &split.test)),
        fit_wall_time_s,
        filter_wall_time_s: sf.wall_time_s,
    };
    Ok(GfOutcome { model, solver, metrics })
}

pub struct GdOutcome {
    pub model: LogRegModel<f64>,
    pub metrics: Metrics,
}

pub fn run_gd(
    dataset: &LabeledDataset<f64>,
    split: &Split,
    sf: &SplitFilter,
    opt: &OptimizerConfig,
) -> Result<GdOutcome> {
    let train_y = labels_at(dataset, &split.train);
    let start = Instant::now();
    let model = train_with_classes(&sf.train, &train_y, &all_classes(dataset), opt)?;
    let fit_wall_time_s = start.elapsed().as_secs_f64();
    let predicted = model.predict(&sf.test)?;
    let metrics = Metrics {
        accuracy: accuracy(&predicted, &labels_at(dataset, &split.test)),
        fit_wall_time_s,
        filter_wall_time_s: sf.wall_time_s,
    };
    Ok(GdOutcome { model, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: String,
    pub k: usize,
    pub seed: u64,
    pub mode: Mode,
    pub lambda: Option<f64>,
    pub accuracy: f64,
    pub filter_time_s: f64,
    pub fit_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    /// Filter families; each one's depth is replaced by every entry of `depths`.
    pub kinds: Vec<FilterConfig>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub lambda: LambdaChoice,
    pub optimizer: OptimizerConfig,
}

fn kind_order(kind: &FilterKind) -> u8 {
    match kind {
        FilterKind::Sgc => 0,
        FilterKind::Ssgc { .. } => 1,
        FilterKind::Dgc { .. } => 2,
    }
}

/// Every `(kind, K, seed, mode)` cell, each filter computed once. Rows come
/// back sorted by kind, K, mode, seed. Only gradient descent consumes the
/// seed; the closed form has no randomness.
pub fn sweep(dataset: &LabeledDataset<f64>, split: &Split, plan: &SweepPlan) -> Result<Vec<SweepRow>> {
    if plan.kinds.is_empty() || plan.depths.is_empty() || plan.seeds.is_empty() || plan.modes.is_empty() {
        return Err(Error::Config("sweep needs at least one kind, depth, seed and mode".into()));
    }
    let configs: Vec<FilterConfig> =
        plan.kinds.iter().flat_map(|c| plan.depths.iter().map(move |&k| c.with_depth(k))).collect();
    let filters: Vec<SplitFilter> =
        configs.par_iter().map(|c| split_filter(dataset, split, c)).collect::<Result<_>>()?;

    let cells: Vec<(usize, u64, Mode)> = (0..filters.len())
        .flat_map(|f| plan.seeds.iter().flat_map(move |&s| plan.modes.iter().map(move |&m| (f, s, m))))
        .collect();
    let mut rows: Vec<(u8, SweepRow)> = cells
        .par_iter()
        .map(|&(fi, seed, mode)| {
            let sf = &filters[fi];
            let (lambda, metrics) = match mode {
                Mode::Gf => {
                    let out = run_gf(dataset, split, sf, &plan.lambda)?;
                    let Solver::GradientFree { lambda, .. } = out.solver else { unreachable!() };
                    (Some(lambda), out.metrics)
                }
                Mode::Gd => (None, run_gd(dataset, split, sf, &OptimizerConfig { seed, ..plan.optimizer })?.metrics),
            };
            let row = SweepRow {
                kind: sf.config.kind.name().to_string(),
                k: sf.config.depth,
                seed,
                mode,
                lambda,
                accuracy: metrics.accuracy,
                filter_time_s: metrics.filter_wall_time_s,
                fit_time_s: metrics.fit_wall_time_s,
            };
            Ok((kind_order(&sf.config.kind), row))
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|(ka, a), (kb, b)| (ka, a.k, a.mode, a.seed).cmp(&(kb, b.k, b.mode, b.seed)));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub const SWEEP_HEADER: &str = "kind,K,seed,mode,lambda,accuracy,filter_time_s,fit_time_s";

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let lambda = r.lambda.map(|l| format!("{l:e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{lambda},{:.4},{:.6},{:.6}\n",
            r.kind,
            r.k,
            r.seed,
            r.mode.as_str(),
            r.accuracy,
            r.filter_time_s,
            r.fit_time_s
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub kind: String,
    pub k: usize,
    pub mode: Mode,
    pub runs: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation over seeds divided by `√runs`.
    pub std_error: f64,
}

/// Mean and standard error of accuracy per `(kind, K, mode)`.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut groups: BTreeMap<(usize, String, usize, Mode), Vec<f64>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let first = rows.iter().position(|o| o.kind == r.kind).unwrap_or(i);
        groups.entry((first, r.kind.clone(), r.k, r.mode)).or_default().push(r.accuracy);
    }
    groups
        .into_iter()
        .map(|((_, kind, k, mode), acc)| SweepSummary {
            kind,
            k,
            mode,
            runs: acc.len(),
            mean_accuracy: acc.iter().sum::<f64>() / acc.len() as f64,
            std_error: std_error(&acc),
        })
        .collect()
}

pub fn std_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    // Shifted by the first value so identical inputs give exactly zero.
    let d: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

pub const SUMMARY_HEADER: &str = "kind,K,mode,runs,mean_accuracy,std_error";

pub fn write_summary_csv(path: &Path, summary: &[SweepSummary]) -> Result<()> {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in summary {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.4}\n",
            s.kind,
            s.k,
            s.mode.as_str(),
            s.runs,
            s.mean_accuracy,
            s.std_error
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub kind: String,
    pub k: usize,
    pub filter_time_s: f64,
    pub gf_fit_time_s: f64,
    pub gd_fit_time_s: f64,
}

/// Closed-form fit against full gradient-descent training on the same rows.
pub fn time_fits(
    dataset: &LabeledDataset<f64>,
    split: &Split,
    kind: &FilterConfig,
    depths: &[usize],
    lambda: f64,
    optimizer: &OptimizerConfig,
) -> Result<Vec<TimingRow>> {
    depths
        .iter()
        .map(|&k| {
            let sf = split_filter(dataset, split, &kind.with_depth(k))?;
            let gf = run_gf(dataset, split, &sf, &LambdaChoice::Fixed(lambda))?;
            let gd = run_gd(dataset, split, &sf, optimizer)?;
            Ok(TimingRow {
                kind: kind.kind.name().to_string(),
                k,
                filter_time_s: sf.wall_time_s,
                gf_fit_time_s: gf.metrics.fit_wall_time_s,
                gd_fit_time_s: gd.metrics.fit_wall_time_s,
            })
        })
        .collect()
}

pub const TIMING_HEADER: &str = "kind,K,filter_time_s,gf_fit_time_s,gd_fit_time_s";

pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{TIMING_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{:.6},{:.6},{:.6}", r.kind, r.k, r.filter_time_s, r.gf_fit_time_s, r.gd_fit_time_s)
            .map_err(io)?;
    }
    w.flush().map_err(io)
}
