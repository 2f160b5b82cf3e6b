//! Closed-form kernel ridge classifier.
//!
//! Labels are encoded as a target matrix `Y`, the train kernel matrix `M`
//! is formed from the filter rows, and the multiplier matrix solves
//! `(λM + I) Λ = Y` by Cholesky. Predictions are `λ · m(query, train) · Λ`.
//! For the linear kernel this is the same estimator as primal ridge
//! regression with `ξ = 1/λ`, see [`fit_primal_linear`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dense::{dot, Dense};
use crate::error::{Error, Result};
use crate::filters::FilterConfig;
use crate::linalg::Cholesky;
use crate::scalar::Scalar;

/// Cap on training rows before the dense kernel matrix is refused.
pub const DEFAULT_MAX_TRAIN: usize = 20_000;

/// The kernel function `m(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    /// `m(u, v) = uᵀv`
    #[default]
    Linear,
}

impl KernelSpec {
    pub fn eval<T: Scalar>(&self, u: &[T], v: &[T]) -> T {
        match self {
            KernelSpec::Linear => dot(u, v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    /// One column per class, 1 for the node's class and 0 elsewhere.
    #[default]
    OneHot,
    /// Two classes only: a single column of ±1, decided by the score sign.
    SignedBinary,
}

/// `M[u][v] = m(a_u, b_v)`.
pub fn kernel_matrix<T: Scalar>(rows_a: &Dense<T>, rows_b: &Dense<T>, spec: KernelSpec) -> Result<Dense<T>> {
    if rows_a.cols() != rows_b.cols() {
        return Err(Error::Shape(format!(
            "kernel inputs have {} and {} feature columns",
            rows_a.cols(),
            rows_b.cols()
        )));
    }
    Ok(Dense::from_fn(rows_a.rows(), rows_b.rows(), |i, j| spec.eval(rows_a.row(i), rows_b.row(j))))
}

/// Encodes `labels` against the ordered `classes` list.
pub fn encode_labels<T: Scalar>(labels: &[usize], classes: &[usize], encoding: LabelEncoding) -> Result<Dense<T>> {
    let position = |label: usize| {
        classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::Data(format!("label {label} is not one of the model classes {classes:?}")))
    };
    match encoding {
        LabelEncoding::OneHot => {
            let mut y = Dense::zeros(labels.len(), classes.len());
            for (i, &l) in labels.iter().enumerate() {
                y[(i, position(l)?)] = T::one();
            }
            Ok(y)
        }
        LabelEncoding::SignedBinary => {
            if classes.len() != 2 {
                return Err(Error::Config(format!(
                    "signed binary encoding needs exactly 2 classes, got {}",
                    classes.len()
                )));
            }
            let mut y = Dense::zeros(labels.len(), 1);
            for (i, &l) in labels.iter().enumerate() {
                y[(i, 0)] = if position(l)? == 1 { T::one() } else { -T::one() };
            }
            Ok(y)
        }
    }
}

/// Row-wise argmax, ties going to the lowest class index.
pub fn argmax_labels<T: Scalar>(scores: &Dense<T>, classes: &[usize]) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            classes[best]
        })
        .collect()
}

fn sorted_classes(labels: &[usize]) -> Vec<usize> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub encoding: LabelEncoding,
    /// Full class list. Defaults to the sorted distinct training labels.
    pub classes: Option<Vec<usize>>,
    pub max_train: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { encoding: LabelEncoding::OneHot, classes: None, max_train: DEFAULT_MAX_TRAIN }
    }
}

/// A fitted closed-form classifier.
#[derive(Debug, Clone)]
pub struct KernelModel<T> {
    pub lambda: T,
    /// `Λ*`, one row per training node.
    pub multiplier: Dense<T>,
    pub train_filter: Dense<T>,
    train_labels: Vec<usize>,
    pub classes: Vec<usize>,
    pub kernel: KernelSpec,
    pub encoding: LabelEncoding,
}

#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub scores: Dense<T>,
    pub labels: Vec<usize>,
}

/// Relative residual accepted for `(λM + I)Λ = Y`.
pub fn residual_tolerance<T: Scalar>() -> f64 {
    (1e4 * T::epsilon().as_f64()).max(1e-8)
}

/// Fits with one-hot labels and default options.
pub fn fit<T: Scalar>(
    train_filter: &Dense<T>,
    labels: &[usize],
    lambda: T,
    spec: KernelSpec,
) -> Result<KernelModel<T>> {
    fit_with(train_filter, labels, lambda, spec, &FitOptions::default())
}

pub fn fit_with<T: Scalar>(
    train_filter: &Dense<T>,
    labels: &[usize],
    lambda: T,
    spec: KernelSpec,
    options: &FitOptions,
) -> Result<KernelModel<T>> {
    if !lambda.is_finite() || lambda <= T::zero() {
        return Err(Error::Config(format!("lambda must be positive and finite, got {lambda}")));
    }
    let n = train_filter.rows();
    if n == 0 {
        return Err(Error::Data("cannot fit on an empty training set".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} training rows", labels.len())));
    }
    if n > options.max_train {
        return Err(Error::TooLarge { n, cap: options.max_train });
    }
    let classes = options.classes.clone().unwrap_or_else(|| sorted_classes(labels));
    if classes.is_empty() {
        return Err(Error::Data("at least one class is required".into()));
    }
    let y = encode_labels::<T>(labels, &classes, options.encoding)?;
    let system = regularized_kernel(train_filter, lambda, spec)?;
    let chol = Cholesky::new(&system)?;
    let mut multiplier = chol.solve(&y)?;
    // one step of iterative refinement when the first solve is loose
    let tol = residual_tolerance::<T>();
    let residual = y.sub(&system.matmul(&multiplier)?)?;
    if relative(residual.frobenius_norm(), y.frobenius_norm()) > tol * 1e-2 {
        let correction = chol.solve(&residual)?;
        multiplier = multiplier.add_scaled(&correction, T::one())?;
    }
    Ok(KernelModel {
        lambda,
        multiplier,
        train_filter: train_filter.clone(),
        train_labels: labels.to_vec(),
        classes,
        kernel: spec,
        encoding: options.encoding,
    })
}

/// `λM + I` for the train rows.
fn regularized_kernel<T: Scalar>(train_filter: &Dense<T>, lambda: T, spec: KernelSpec) -> Result<Dense<T>> {
    let mut system = kernel_matrix(train_filter, train_filter, spec)?.scale(lambda);
    for i in 0..system.rows() {
        system[(i, i)] += T::one();
    }
    Ok(system)
}

fn relative(num: impl Scalar, den: impl Scalar) -> f64 {
    let den = den.as_f64();
    if den == 0.0 {
        num.as_f64()
    } else {
        num.as_f64() / den
    }
}

impl<T: Scalar> KernelModel<T> {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn train_labels(&self) -> &[usize] {
        &self.train_labels
    }

    pub fn targets(&self) -> Result<Dense<T>> {
        encode_labels(&self.train_labels, &self.classes, self.encoding)
    }

    /// `‖(λM + I)Λ − Y‖_F / ‖Y‖_F`.
    pub fn relative_residual(&self) -> Result<f64> {
        let y = self.targets()?;
        let system = regularized_kernel(&self.train_filter, self.lambda, self.kernel)?;
        let r = system.matmul(&self.multiplier)?.sub(&y)?;
        Ok(relative(r.frobenius_norm(), y.frobenius_norm()))
    }

    /// Raw scores `λ · m(query, train) · Λ`.
    pub fn scores(&self, query_filter: &Dense<T>) -> Result<Dense<T>> {
        if query_filter.cols() != self.train_filter.cols() {
            return Err(Error::Shape(format!(
                "query has {} feature columns, model was fit on {}",
                query_filter.cols(),
                self.train_filter.cols()
            )));
        }
        let cross = kernel_matrix(query_filter, &self.train_filter, self.kernel)?;
        Ok(cross.matmul(&self.multiplier)?.scale(self.lambda))
    }

    pub fn predict(&self, query_filter: &Dense<T>) -> Result<Prediction<T>> {
        let scores = self.scores(query_filter)?;
        let labels = match self.encoding {
            LabelEncoding::OneHot => argmax_labels(&scores, &self.classes),
            LabelEncoding::SignedBinary => (0..scores.rows())
                .map(|r| if scores[(r, 0)] > T::zero() { self.classes[1] } else { self.classes[0] })
                .collect(),
        };
        Ok(Prediction { scores, labels })
    }
}

/// Primal ridge solution `W* = (FᵀF + ξI)^{-1} FᵀY` for the linear kernel.
#[derive(Debug, Clone)]
pub struct PrimalRidge<T> {
    pub weights: Dense<T>,
    pub classes: Vec<usize>,
}

impl<T: Scalar> PrimalRidge<T> {
    pub fn scores(&self, query_filter: &Dense<T>) -> Result<Dense<T>> {
        query_filter.matmul(&self.weights)
    }

    pub fn predict(&self, query_filter: &Dense<T>) -> Result<Vec<usize>> {
        Ok(argmax_labels(&self.scores(query_filter)?, &self.classes))
    }
}

pub fn fit_primal_linear<T: Scalar>(train_filter: &Dense<T>, labels: &[usize], xi: T) -> Result<PrimalRidge<T>> {
    if !xi.is_finite() || xi <= T::zero() {
        return Err(Error::Config(format!("xi must be positive and finite, got {xi}")));
    }
    if labels.len() != train_filter.rows() {
        return Err(Error::Shape(format!("{} labels for {} training rows", labels.len(), train_filter.rows())));
    }
    let classes = sorted_classes(labels);
    let y = encode_labels::<T>(labels, &classes, LabelEncoding::OneHot)?;
    let mut gram = train_filter.t_matmul(train_filter)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += xi;
    }
    let weights = Cholesky::new(&gram)?.solve(&train_filter.t_matmul(&y)?)?;
    Ok(PrimalRidge { weights, classes })
}

/// Largest absolute change in train-set predictions when the filter is
/// scaled by `beta` and `ξ` by `beta²`. Zero up to rounding.
pub fn check_scale_invariance<T: Scalar>(train_filter: &Dense<T>, labels: &[usize], xi: T, beta: T) -> Result<T> {
    if beta == T::zero() {
        return Err(Error::Config("scale factor must be nonzero".into()));
    }
    let base = fit(train_filter, labels, xi.recip(), KernelSpec::Linear)?.scores(train_filter)?;
    let scaled_filter = train_filter.scale(beta);
    let scaled = fit(&scaled_filter, labels, (beta * beta * xi).recip(), KernelSpec::Linear)?.scores(&scaled_filter)?;
    base.max_abs_diff(&scaled)
}

/// `10^-4, 10^-3, …, 10^4`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

#[derive(Debug, Clone)]
pub struct LambdaSelection<T> {
    pub model: KernelModel<T>,
    pub lambda: f64,
    pub val_accuracy: f64,
    /// `(λ, validation accuracy)` for every grid point, in grid order.
    pub trials: Vec<(f64, f64)>,
}

/// Fits one model per grid point and keeps the best by validation accuracy.
/// Ties keep the earlier grid point.
pub fn select_lambda<T: Scalar>(
    train_filter: &Dense<T>,
    train_labels: &[usize],
    val_filter: &Dense<T>,
    val_labels: &[usize],
    grid: &[f64],
    spec: KernelSpec,
    options: &FitOptions,
) -> Result<LambdaSelection<T>> {
    let mut best: Option<(KernelModel<T>, f64, f64)> = None;
    let mut trials = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let model = fit_with(train_filter, train_labels, T::of(lambda), spec, options)?;
        let acc = accuracy(&model.predict(val_filter)?.labels, val_labels);
        trials.push((lambda, acc));
        if best.as_ref().is_none_or(|(_, _, b)| acc > *b) {
            best = Some((model, lambda, acc));
        }
    }
    let (model, lambda, val_accuracy) = best.ok_or_else(|| Error::Config("lambda grid is empty".into()))?;
    Ok(LambdaSelection { model, lambda, val_accuracy, trials })
}

const MODEL_MAGIC: &[u8; 8] = b"GFLNMDL\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    filter: FilterConfig,
    kernel: KernelSpec,
    lambda: f64,
    classes: Vec<usize>,
    encoding: LabelEncoding,
    train_labels: Vec<usize>,
}

/// A model together with the filter that produced its training rows.
#[derive(Debug, Clone)]
pub struct SavedModel<T> {
    pub filter: FilterConfig,
    pub model: KernelModel<T>,
}

fn push_matrix<T: Scalar>(buf: &mut Vec<u8>, m: &Dense<T>) {
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

/// Layout: magic, `u32` version, `u32` header length, JSON header, then
/// `Λ*` and the train filter, each as `u64 rows | u64 cols | f64 LE data`.
pub fn save_model<T: Scalar>(path: &Path, filter: &FilterConfig, model: &KernelModel<T>) -> Result<()> {
    let header = serde_json::to_vec(&ModelHeader {
        filter: *filter,
        kernel: model.kernel,
        lambda: model.lambda.as_f64(),
        classes: model.classes.clone(),
        encoding: model.encoding,
        train_labels: model.train_labels.clone(),
    })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    push_matrix(&mut buf, &model.multiplier);
    push_matrix(&mut buf, &model.train_filter);
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Model("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn matrix<T: Scalar>(&mut self) -> Result<Dense<T>> {
        let (rows, cols) = (self.u64()?, self.u64()?);
        let len = rows.checked_mul(cols).and_then(|c| c.checked_mul(8));
        let raw = self.take(len.ok_or_else(|| Error::Model("matrix shape overflows".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        Dense::from_vec(rows, cols, data)
    }
}

/// Loads a model and checks `(λM + I)Λ = Y` before returning it.
pub fn load_model<T: Scalar>(path: &Path) -> Result<SavedModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MODEL_MAGIC {
        return Err(Error::Model(format!("{} is not a model file", path.display())));
    }
    let version = cur.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported format version {version}")));
    }
    let header_len = cur.u32()? as usize;
    let header: ModelHeader = serde_json::from_slice(cur.take(header_len)?)?;
    let multiplier: Dense<T> = cur.matrix()?;
    let train_filter: Dense<T> = cur.matrix()?;
    if cur.pos != bytes.len() {
        return Err(Error::Model("trailing bytes after the matrices".into()));
    }
    let expected_cols = match header.encoding {
        LabelEncoding::OneHot => header.classes.len(),
        LabelEncoding::SignedBinary => 1,
    };
    if multiplier.rows() != train_filter.rows()
        || multiplier.cols() != expected_cols
        || header.train_labels.len() != train_filter.rows()
    {
        return Err(Error::Model("matrix shapes disagree with the header".into()));
    }
    let model = KernelModel {
        lambda: T::of(header.lambda),
        multiplier,
        train_filter,
        train_labels: header.train_labels,
        classes: header.classes,
        kernel: header.kernel,
        encoding: header.encoding,
    };
    let residual = model.relative_residual()?;
    if residual.is_nan() || residual >= residual_tolerance::<T>() {
        return Err(Error::Model(format!("stored multipliers fail the residual check ({residual:e})")));
    }
    Ok(SavedModel { filter: header.filter, model })
}
