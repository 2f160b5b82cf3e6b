//! Gradient-descent baseline: softmax regression on the filter rows, the way
//! linearized GCNs are usually trained, with the step-0 gradient captured.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::kernel::{argmax_labels, encode_labels, LabelEncoding};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    PlainGd,
}

impl Method {
    pub fn adam() -> Self {
        Method::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(flatten)]
    pub method: Method,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, epochs: 200, method: Method::adam(), weight_decay: 0.0, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay must be nonnegative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad_w: Dense<T>,
    pub grad_b: Vec<T>,
}

/// Mean negative log-likelihood of `softmax(F W + b)` and its gradients.
///
/// `grad_w = Fᵀ (softmax(H) − Y) / N + decay · W`. The decay term adds
/// `decay/2 · ‖W‖²` to the loss.
pub fn nll_loss_and_grad<T: Scalar>(
    weights: &Dense<T>,
    bias: &[T],
    filter_rows: &Dense<T>,
    one_hot: &Dense<T>,
    weight_decay: T,
) -> Result<LossGrad<T>> {
    let (n, c) = one_hot.shape();
    if filter_rows.rows() != n || filter_rows.cols() != weights.rows() || weights.cols() != c || bias.len() != c {
        return Err(Error::Shape(format!(
            "F {}x{}, W {}x{}, b {}, Y {n}x{c}",
            filter_rows.rows(),
            filter_rows.cols(),
            weights.rows(),
            weights.cols(),
            bias.len()
        )));
    }
    let logits = filter_rows.matmul(weights)?;
    let mut delta = Dense::zeros(n, c);
    let mut loss = T::zero();
    for r in 0..n {
        let h = logits.row(r);
        let peak = h.iter().copied().zip(bias).map(|(v, &b)| v + b).fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (&v, &b) in h.iter().zip(bias) {
            z += (v + b - peak).exp();
        }
        let log_z = z.ln() + peak;
        let d = delta.row_mut(r);
        for j in 0..c {
            let hj = h[j] + bias[j];
            d[j] = (hj - log_z).exp() - one_hot[(r, j)];
            loss -= one_hot[(r, j)] * (hj - log_z);
        }
    }
    let inv_n = T::one() / T::of_usize(n.max(1));
    loss *= inv_n;
    if weight_decay > T::zero() {
        loss += weight_decay * T::of(0.5) * weights.as_slice().iter().map(|&w| w * w).sum::<T>();
    }
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, max_logit: logits.max_abs().as_f64() });
    }
    let mut grad_w = filter_rows.t_matmul(&delta)?.scale(inv_n);
    if weight_decay > T::zero() {
        grad_w = grad_w.add_scaled(weights, weight_decay)?;
    }
    let grad_b = delta.column_means();
    Ok(LossGrad { loss, grad_w, grad_b })
}

/// `(epoch, loss)` with the loss evaluated before that epoch's update.
pub type LossTrace<T> = Vec<(usize, T)>;

/// Softmax regression trained by full-batch gradient descent.
#[derive(Debug, Clone)]
pub struct LogRegModel<T> {
    pub weights: Dense<T>,
    pub bias: Vec<T>,
    pub classes: Vec<usize>,
    pub training_trace: LossTrace<T>,
    /// `∂L/∂W` at the initial parameters.
    pub initial_gradient: Dense<T>,
}

impl<T: Scalar> LogRegModel<T> {
    pub fn scores(&self, filter_rows: &Dense<T>) -> Result<Dense<T>> {
        let mut h = filter_rows.matmul(&self.weights)?;
        for r in 0..h.rows() {
            for (v, &b) in h.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(h)
    }

    pub fn predict(&self, filter_rows: &Dense<T>) -> Result<Vec<usize>> {
        Ok(argmax_labels(&self.scores(filter_rows)?, &self.classes))
    }
}

/// Uniform `[-1/√F, 1/√F]` weights from the seeded generator.
pub fn init_weights<T: Scalar>(features: usize, classes: usize, seed: u64) -> Dense<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 / (features.max(1) as f64).sqrt();
    Dense::from_fn(features, classes, |_, _| T::of(rng.random_range(-s..=s)))
}

/// Adam or plain gradient descent state over one flat parameter vector.
struct Stepper<T> {
    method: Method,
    lr: T,
    first: Vec<T>,
    second: Vec<T>,
    t: i32,
}

impl<T: Scalar> Stepper<T> {
    fn new(method: Method, lr: f64, len: usize) -> Self {
        Self { method, lr: T::of(lr), first: vec![T::zero(); len], second: vec![T::zero(); len], t: 0 }
    }

    fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut T>, grads: impl Iterator<Item = T>) {
        self.t += 1;
        match self.method {
            Method::PlainGd => {
                for (p, g) in params.zip(grads) {
                    *p -= self.lr * g;
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                let c1 = T::one() - b1.powi(self.t);
                let c2 = T::one() - b2.powi(self.t);
                for (((p, g), m), v) in params.zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

fn classes_of(labels: &[usize]) -> Vec<usize> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Trains with classes taken from the sorted distinct labels.
pub fn train<T: Scalar>(filter_rows: &Dense<T>, labels: &[usize], config: &OptimizerConfig) -> Result<LogRegModel<T>> {
    train_with_classes(filter_rows, labels, &classes_of(labels), config)
}

pub fn train_with_classes<T: Scalar>(
    filter_rows: &Dense<T>,
    labels: &[usize],
    classes: &[usize],
    config: &OptimizerConfig,
) -> Result<LogRegModel<T>> {
    config.validate()?;
    if filter_rows.rows() == 0 || labels.len() != filter_rows.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), filter_rows.rows())));
    }
    let y: Dense<T> = encode_labels(labels, classes, LabelEncoding::OneHot)?;
    let (f, c) = (filter_rows.cols(), classes.len());
    let mut weights = init_weights::<T>(f, c, config.seed);
    let mut bias = vec![T::zero(); c];
    let decay = T::of(config.weight_decay);
    let mut stepper = Stepper::new(config.method, config.learning_rate, f * c + c);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut initial_gradient = None;
    for epoch in 1..=config.epochs {
        let lg = nll_loss_and_grad(&weights, &bias, filter_rows, &y, decay).map_err(|e| match e {
            Error::Divergence { max_logit, .. } => Error::Divergence { epoch, max_logit },
            other => other,
        })?;
        trace.push((epoch, lg.loss));
        let grads: Vec<T> = lg.grad_w.as_slice().iter().chain(&lg.grad_b).copied().collect();
        initial_gradient.get_or_insert(lg.grad_w);
        stepper.step(weights.as_mut_slice().iter_mut().chain(bias.iter_mut()), grads.into_iter());
    }
    Ok(LogRegModel {
        weights,
        bias,
        classes: classes.to_vec(),
        training_trace: trace,
        initial_gradient: initial_gradient.expect("epochs >= 1"),
    })
}

/// Summary of `|∂L/∂W|` entries at step 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub median_abs: f64,
    pub p05: f64,
    pub p95: f64,
    pub max_abs: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn gradient_stats_of<T: Scalar>(gradient: &Dense<T>) -> GradientStats {
    let mut abs: Vec<f64> = gradient.as_slice().iter().map(|g| g.as_f64().abs()).collect();
    abs.sort_by(f64::total_cmp);
    GradientStats {
        median_abs: quantile(&abs, 0.5),
        p05: quantile(&abs, 0.05),
        p95: quantile(&abs, 0.95),
        max_abs: abs.last().copied().unwrap_or(0.0),
    }
}

pub fn gradient_stats<T: Scalar>(model: &LogRegModel<T>) -> GradientStats {
    gradient_stats_of(&model.initial_gradient)
}

/// Ridge weights fit by gradient descent on
/// `½‖F W − Y‖² + ξ/2 ‖W‖²`, starting from the seeded init.
pub fn train_ridge_gd<T: Scalar>(
    filter_rows: &Dense<T>,
    labels: &[usize],
    xi: T,
    config: &OptimizerConfig,
) -> Result<(Dense<T>, LossTrace<T>)> {
    config.validate()?;
    let classes = classes_of(labels);
    let y: Dense<T> = encode_labels(labels, &classes, LabelEncoding::OneHot)?;
    let mut weights = init_weights::<T>(filter_rows.cols(), classes.len(), config.seed);
    let mut stepper = Stepper::new(config.method, config.learning_rate, weights.as_slice().len());
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let resid = filter_rows.matmul(&weights)?.sub(&y)?;
        let loss = T::of(0.5) * (resid.frobenius_norm().powi(2) + xi * weights.frobenius_norm().powi(2));
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, max_logit: resid.max_abs().as_f64() });
        }
        trace.push((epoch, loss));
        let grad = filter_rows.t_matmul(&resid)?.add_scaled(&weights, xi)?;
        stepper.step(weights.as_mut_slice().iter_mut(), grad.into_vec().into_iter());
    }
    Ok((weights, trace))
}

/// `epoch,loss` CSV.
pub fn write_trace_csv<T: Scalar>(path: &Path, trace: &[(usize, T)]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in trace {
        out.push_str(&format!("{epoch},{:e}\n", loss.as_f64()));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Flattened (row-major) gradient snapshot as `index,value` CSV.
pub fn write_gradient_csv<T: Scalar>(path: &Path, gradient: &Dense<T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "index,value").map_err(io)?;
    for (i, g) in gradient.as_slice().iter().enumerate() {
        writeln!(w, "{i},{:e}", g.as_f64()).map_err(io)?;
    }
    w.flush().map_err(io)
}
