//! Small differentiable models with analytic loss and gradient.
//!
//! The update rules under study are element-wise and model-agnostic, so the
//! models here are deliberately tiny: a linear regressor (MSE), a multinomial
//! logistic classifier, and a one-hidden-layer tanh MLP classifier
//! (cross-entropy via log-sum-exp). Everything is a pure function of
//! immutable inputs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Dense row-major matrix; the only shape the data pipeline needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Supervision targets: real-valued rows for regression, class labels for
/// classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Values(Matrix),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(m) => m.rows,
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One sampled batch: inputs plus matching targets.
#[derive(Clone, Debug)]
pub struct Minibatch {
    pub inputs: Matrix,
    pub targets: Targets,
}

/// Model architecture. The parameter count is a pure function of the spec;
/// every `ParamVector` in a run shares it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// y_hat = W x + b, mean squared error.
    LinearRegression { input_dim: usize, output_dim: usize },
    /// logits = W x + b, softmax cross-entropy; output_dim = number of classes.
    MultinomialLogistic { input_dim: usize, output_dim: usize },
    /// logits = W2 tanh(W1 x + b1) + b2, softmax cross-entropy.
    #[serde(rename = "mlp-1hidden")]
    Mlp1Hidden {
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        #[serde(default)]
        activation: Activation,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
}

impl ModelSpec {
    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::LinearRegression { input_dim, .. }
            | ModelSpec::MultinomialLogistic { input_dim, .. }
            | ModelSpec::Mlp1Hidden { input_dim, .. } => input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            ModelSpec::LinearRegression { output_dim, .. }
            | ModelSpec::MultinomialLogistic { output_dim, .. }
            | ModelSpec::Mlp1Hidden { output_dim, .. } => output_dim,
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelSpec::LinearRegression { .. })
    }

    /// Total number of parameters (weights + biases of every layer).
    pub fn param_count(&self) -> usize {
        match *self {
            ModelSpec::LinearRegression {
                input_dim,
                output_dim,
            }
            | ModelSpec::MultinomialLogistic {
                input_dim,
                output_dim,
            } => output_dim * (input_dim + 1),
            ModelSpec::Mlp1Hidden {
                input_dim,
                hidden_dim,
                output_dim,
                ..
            } => hidden_dim * (input_dim + 1) + output_dim * (hidden_dim + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelSpec::LinearRegression {
                input_dim,
                output_dim,
            } => input_dim >= 1 && output_dim >= 1,
            ModelSpec::MultinomialLogistic {
                input_dim,
                output_dim,
            } => input_dim >= 1 && output_dim >= 2,
            ModelSpec::Mlp1Hidden {
                input_dim,
                hidden_dim,
                output_dim,
                ..
            } => input_dim >= 1 && hidden_dim >= 1 && output_dim >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "model dimensions must be positive (>=2 classes)".into(),
            ))
        }
    }
}

/// Seeded uniform init, each layer scaled by 1/sqrt(fan_in).
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.param_count());
    let layer = |rng: &mut ChaCha8Rng, out: &mut Vec<f64>, fan_in: usize, count: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..count {
            out.push(rng.random_range(-bound..bound));
        }
    };
    match *spec {
        ModelSpec::LinearRegression {
            input_dim,
            output_dim,
        }
        | ModelSpec::MultinomialLogistic {
            input_dim,
            output_dim,
        } => {
            layer(&mut rng, &mut out, input_dim, output_dim * (input_dim + 1));
        }
        ModelSpec::Mlp1Hidden {
            input_dim,
            hidden_dim,
            output_dim,
            ..
        } => {
            layer(&mut rng, &mut out, input_dim, hidden_dim * (input_dim + 1));
            layer(
                &mut rng,
                &mut out,
                hidden_dim,
                output_dim * (hidden_dim + 1),
            );
        }
    }
    ParamVector::new(out).expect("uniform init is finite")
}

fn check_batch(spec: &ModelSpec, params: &ParamVector, batch: &Minibatch) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "params length {} != spec param count {}",
            params.len(),
            spec.param_count()
        )));
    }
    if batch.inputs.rows == 0 {
        return Err(Error::Empty("minibatch"));
    }
    if batch.inputs.cols != spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input dim {} != spec input dim {}",
            batch.inputs.cols,
            spec.input_dim()
        )));
    }
    if batch.targets.len() != batch.inputs.rows {
        return Err(Error::DimensionMismatch(format!(
            "targets {} != batch rows {}",
            batch.targets.len(),
            batch.inputs.rows
        )));
    }
    match (spec.is_classifier(), &batch.targets) {
        (false, Targets::Values(m)) if m.cols == spec.output_dim() => Ok(()),
        (false, Targets::Values(m)) => Err(Error::DimensionMismatch(format!(
            "target dim {} != output dim {}",
            m.cols,
            spec.output_dim()
        ))),
        (true, Targets::Labels(l)) => {
            if l.iter().any(|&c| c >= spec.output_dim()) {
                Err(Error::DimensionMismatch("label out of class range".into()))
            } else {
                Ok(())
            }
        }
        _ => Err(Error::DimensionMismatch(
            "target kind does not match model kind".into(),
        )),
    }
}

/// Mean loss over the batch and its exact analytic gradient.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Minibatch,
) -> Result<(f64, ParamVector)> {
    check_batch(spec, params, batch)?;
    let p = params.as_slice();
    let b = batch.inputs.rows as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;

    match *spec {
        ModelSpec::LinearRegression {
            input_dim,
            output_dim,
        } => {
            let targets = match &batch.targets {
                Targets::Values(m) => m,
                Targets::Labels(_) => unreachable!("checked above"),
            };
            let (w, bias) = p.split_at(output_dim * input_dim);
            for r in 0..batch.inputs.rows {
                let x = batch.inputs.row(r);
                let y = targets.row(r);
                for o in 0..output_dim {
                    let wo = &w[o * input_dim..(o + 1) * input_dim];
                    let pred: f64 =
                        wo.iter().zip(x).map(|(&wi, &xi)| wi * xi).sum::<f64>() + bias[o];
                    let resid = pred - y[o];
                    loss += resid * resid;
                    let coef = 2.0 * resid / b;
                    let gw = &mut grad[o * input_dim..(o + 1) * input_dim];
                    for (g, &xi) in gw.iter_mut().zip(x) {
                        *g += coef * xi;
                    }
                    grad[output_dim * input_dim + o] += coef;
                }
            }
            loss /= b;
        }
        ModelSpec::MultinomialLogistic {
            input_dim,
            output_dim,
        } => {
            let labels = match &batch.targets {
                Targets::Labels(l) => l,
                Targets::Values(_) => unreachable!("checked above"),
            };
            let (w, bias) = p.split_at(output_dim * input_dim);
            let mut logits = vec![0.0; output_dim];
            for r in 0..batch.inputs.rows {
                let x = batch.inputs.row(r);
                for (o, logit) in logits.iter_mut().enumerate() {
                    let wo = &w[o * input_dim..(o + 1) * input_dim];
                    *logit = wo.iter().zip(x).map(|(&wi, &xi)| wi * xi).sum::<f64>() + bias[o];
                }
                let (lse, probs) = log_sum_exp(&logits);
                loss += lse - logits[labels[r]];
                for o in 0..output_dim {
                    let dz = (probs[o] - if o == labels[r] { 1.0 } else { 0.0 }) / b;
                    let gw = &mut grad[o * input_dim..(o + 1) * input_dim];
                    for (g, &xi) in gw.iter_mut().zip(x) {
                        *g += dz * xi;
                    }
                    grad[output_dim * input_dim + o] += dz;
                }
            }
            loss /= b;
        }
        ModelSpec::Mlp1Hidden {
            input_dim,
            hidden_dim,
            output_dim,
            ..
        } => {
            let labels = match &batch.targets {
                Targets::Labels(l) => l,
                Targets::Values(_) => unreachable!("checked above"),
            };
            let w1_len = hidden_dim * input_dim;
            let b1_off = w1_len;
            let w2_off = b1_off + hidden_dim;
            let b2_off = w2_off + output_dim * hidden_dim;
            let mut h = vec![0.0; hidden_dim];
            let mut logits = vec![0.0; output_dim];
            let mut dh = vec![0.0; hidden_dim];
            for r in 0..batch.inputs.rows {
                let x = batch.inputs.row(r);
                for (j, hj) in h.iter_mut().enumerate() {
                    let w1j = &p[j * input_dim..(j + 1) * input_dim];
                    let pre: f64 =
                        w1j.iter().zip(x).map(|(&wi, &xi)| wi * xi).sum::<f64>() + p[b1_off + j];
                    *hj = pre.tanh();
                }
                for (o, logit) in logits.iter_mut().enumerate() {
                    let w2o = &p[w2_off + o * hidden_dim..w2_off + (o + 1) * hidden_dim];
                    *logit =
                        w2o.iter().zip(&h).map(|(&wi, &hi)| wi * hi).sum::<f64>() + p[b2_off + o];
                }
                let (lse, probs) = log_sum_exp(&logits);
                loss += lse - logits[labels[r]];
                dh.fill(0.0);
                for o in 0..output_dim {
                    let dz = (probs[o] - if o == labels[r] { 1.0 } else { 0.0 }) / b;
                    let gw2 = &mut grad[w2_off + o * hidden_dim..w2_off + (o + 1) * hidden_dim];
                    for (g, &hj) in gw2.iter_mut().zip(&h) {
                        *g += dz * hj;
                    }
                    grad[b2_off + o] += dz;
                    // backprop into hidden layer: dh_j += dz_o * W2[o][j]
                    let w2o = &p[w2_off + o * hidden_dim..w2_off + (o + 1) * hidden_dim];
                    for (dhj, &wj) in dh.iter_mut().zip(w2o) {
                        *dhj += dz * wj;
                    }
                }
                for j in 0..hidden_dim {
                    let dpre = dh[j] * (1.0 - h[j] * h[j]);
                    let gw1 = &mut grad[j * input_dim..(j + 1) * input_dim];
                    for (g, &xi) in gw1.iter_mut().zip(x) {
                        *g += dpre * xi;
                    }
                    grad[b1_off + j] += dpre;
                }
            }
            loss /= b;
        }
    }

    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    Ok((
        loss,
        ParamVector::new(grad).map_err(|_| Error::NonFinite { op: "grad" })?,
    ))
}

/// Log-sum-exp with the max subtracted, returning (lse, softmax probs).
fn log_sum_exp(logits: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    (max + sum.ln(), probs)
}

/// Full-dataset mean loss, plus accuracy for classifiers.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: &Matrix,
    targets: &Targets,
) -> Result<(f64, Option<f64>)> {
    if inputs.rows == 0 {
        return Err(Error::Empty("evaluate: dataset"));
    }
    let batch = Minibatch {
        inputs: inputs.clone(),
        targets: targets.clone(),
    };
    let (loss, _) = loss_and_grad(spec, params, &batch)?;
    if !spec.is_classifier() {
        return Ok((loss, None));
    }
    let labels = match targets {
        Targets::Labels(l) => l,
        Targets::Values(_) => unreachable!("classifier targets checked in loss_and_grad"),
    };
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        if predict_class(spec, params, inputs.row(r)) == label {
            correct += 1;
        }
    }
    Ok((loss, Some(correct as f64 / inputs.rows as f64)))
}

/// Argmax class; ties resolve to the lowest index, deterministically.
pub fn predict_class(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> usize {
    let logits = forward_logits(spec, params, x);
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

fn forward_logits(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Vec<f64> {
    let p = params.as_slice();
    match *spec {
        ModelSpec::LinearRegression {
            input_dim,
            output_dim,
        }
        | ModelSpec::MultinomialLogistic {
            input_dim,
            output_dim,
        } => {
            let (w, bias) = p.split_at(output_dim * input_dim);
            (0..output_dim)
                .map(|o| {
                    let wo = &w[o * input_dim..(o + 1) * input_dim];
                    wo.iter().zip(x).map(|(&wi, &xi)| wi * xi).sum::<f64>() + bias[o]
                })
                .collect()
        }
        ModelSpec::Mlp1Hidden {
            input_dim,
            hidden_dim,
            output_dim,
            ..
        } => {
            let b1_off = hidden_dim * input_dim;
            let w2_off = b1_off + hidden_dim;
            let b2_off = w2_off + output_dim * hidden_dim;
            let h: Vec<f64> = (0..hidden_dim)
                .map(|j| {
                    let w1j = &p[j * input_dim..(j + 1) * input_dim];
                    (w1j.iter().zip(x).map(|(&wi, &xi)| wi * xi).sum::<f64>() + p[b1_off + j])
                        .tanh()
                })
                .collect();
            (0..output_dim)
                .map(|o| {
                    let w2o = &p[w2_off + o * hidden_dim..w2_off + (o + 1) * hidden_dim];
                    w2o.iter().zip(&h).map(|(&wi, &hi)| wi * hi).sum::<f64>() + p[b2_off + o]
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of the batch loss; the independent check
    /// for every analytic gradient.
    fn fd_gradient(spec: &ModelSpec, params: &ParamVector, batch: &Minibatch, h: f64) -> Vec<f64> {
        let base: Vec<f64> = params.as_slice().to_vec();
        (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                plus[i] += h;
                let mut minus = base.clone();
                minus[i] -= h;
                let lp = loss_and_grad(spec, &ParamVector::new(plus).unwrap(), batch)
                    .unwrap()
                    .0;
                let lm = loss_and_grad(spec, &ParamVector::new(minus).unwrap(), batch)
                    .unwrap()
                    .0;
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    fn random_batch(spec: &ModelSpec, rows: usize, seed: u64) -> Minibatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.input_dim();
        let inputs = Matrix::new(
            rows,
            d,
            (0..rows * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let targets = if spec.is_classifier() {
            Targets::Labels(
                (0..rows)
                    .map(|_| rng.random_range(0..spec.output_dim()))
                    .collect(),
            )
        } else {
            let o = spec.output_dim();
            Targets::Values(
                Matrix::new(
                    rows,
                    o,
                    (0..rows * o).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap(),
            )
        };
        Minibatch { inputs, targets }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let specs = [
            ModelSpec::LinearRegression {
                input_dim: 3,
                output_dim: 2,
            },
            ModelSpec::MultinomialLogistic {
                input_dim: 4,
                output_dim: 3,
            },
            ModelSpec::Mlp1Hidden {
                input_dim: 3,
                hidden_dim: 5,
                output_dim: 3,
                activation: Activation::Tanh,
            },
        ];
        for spec in &specs {
            for trial in 0..10u64 {
                let params = init_params(spec, 100 + trial);
                let batch = random_batch(spec, 6, 200 + trial);
                let (_, grad) = loss_and_grad(spec, &params, &batch).unwrap();
                let fd = fd_gradient(spec, &params, &batch, 1e-6);
                for (i, (&g, &f)) in grad.as_slice().iter().zip(&fd).enumerate() {
                    assert!(
                        rel_err(g, f) < 1e-5,
                        "{spec:?} trial {trial} coord {i}: analytic {g} vs fd {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        // params realize y = 2x exactly: W=[2], b=0
        let spec = ModelSpec::LinearRegression {
            input_dim: 1,
            output_dim: 1,
        };
        let params = ParamVector::new(vec![2.0, 0.0]).unwrap();
        let inputs = Matrix::new(3, 1, vec![1.0, -0.5, 2.0]).unwrap();
        let targets = Targets::Values(Matrix::new(3, 1, vec![2.0, -1.0, 4.0]).unwrap());
        let (loss, grad) = loss_and_grad(&spec, &params, &Minibatch { inputs, targets }).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_logistic_params_give_ln2_loss() {
        let spec = ModelSpec::MultinomialLogistic {
            input_dim: 2,
            output_dim: 2,
        };
        let params = ParamVector::zeros(spec.param_count());
        let inputs = Matrix::new(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.5, 0.3, -0.2]).unwrap();
        let targets = Targets::Labels(vec![0, 1, 0, 1]);
        let (loss, _) = loss_and_grad(&spec, &params, &Minibatch { inputs, targets }).unwrap();
        assert!((loss - (2.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn evaluate_reports_accuracy_and_ties_break_low() {
        let spec = ModelSpec::MultinomialLogistic {
            input_dim: 1,
            output_dim: 2,
        };
        // perfect classifier: class 1 iff x > 0
        let params = ParamVector::new(vec![-5.0, 5.0, 0.0, 0.0]).unwrap();
        let inputs = Matrix::new(4, 1, vec![-1.0, 1.0, -2.0, 0.5]).unwrap();
        let targets = Targets::Labels(vec![0, 1, 0, 1]);
        let (_, acc) = evaluate(&spec, &params, &inputs, &targets).unwrap();
        assert_eq!(acc, Some(1.0));

        // all-zero params: every logit ties, argmax is class 0
        let zero = ParamVector::zeros(spec.param_count());
        let (loss, acc) = evaluate(&spec, &zero, &inputs, &targets).unwrap();
        assert_eq!(acc, Some(0.5));
        assert!((loss - (2.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn evaluate_on_known_optimum_matches_residual_variance() {
        // y = 3x + noise; at the generating params the mean squared residual
        // is exactly the mean of noise^2, computed here by hand.
        let spec = ModelSpec::LinearRegression {
            input_dim: 1,
            output_dim: 1,
        };
        let params = ParamVector::new(vec![3.0, 0.0]).unwrap();
        let noise = [0.1, -0.2, 0.05, 0.0];
        let xs = [1.0, 2.0, -1.0, 0.5];
        let inputs = Matrix::new(4, 1, xs.to_vec()).unwrap();
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(&x, &n)| 3.0 * x + n).collect();
        let targets = Targets::Values(Matrix::new(4, 1, ys).unwrap());
        let expected: f64 = noise.iter().map(|n| n * n).sum::<f64>() / 4.0;
        let (loss, acc) = evaluate(&spec, &params, &inputs, &targets).unwrap();
        assert!(acc.is_none());
        assert!((loss - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let spec = ModelSpec::LinearRegression {
            input_dim: 1,
            output_dim: 1,
        };
        let params = ParamVector::zeros(2);
        let inputs = Matrix::zeros(0, 1);
        let targets = Targets::Values(Matrix::zeros(0, 1));
        assert!(evaluate(&spec, &params, &inputs, &targets).is_err());
    }

    #[test]
    fn batch_loss_is_size_weighted_average_of_parts() {
        let spec = ModelSpec::MultinomialLogistic {
            input_dim: 3,
            output_dim: 3,
        };
        let params = init_params(&spec, 9);
        let a = random_batch(&spec, 2, 10);
        let c = random_batch(&spec, 4, 11);
        let mut data = a.inputs.data.clone();
        data.extend_from_slice(&c.inputs.data);
        let mut labels = match (&a.targets, &c.targets) {
            (Targets::Labels(la), Targets::Labels(lc)) => {
                let mut l = la.clone();
                l.extend_from_slice(lc);
                l
            }
            _ => unreachable!(),
        };
        let joined = Minibatch {
            inputs: Matrix::new(6, 3, data).unwrap(),
            targets: Targets::Labels(std::mem::take(&mut labels)),
        };
        let (la, ga) = loss_and_grad(&spec, &params, &a).unwrap();
        let (lc, gc) = loss_and_grad(&spec, &params, &c).unwrap();
        let (lj, gj) = loss_and_grad(&spec, &params, &joined).unwrap();
        assert!((lj - (2.0 * la + 4.0 * lc) / 6.0).abs() < 1e-12);
        for ((&j, &x), &y) in gj.as_slice().iter().zip(ga.as_slice()).zip(gc.as_slice()) {
            assert!((j - (2.0 * x + 4.0 * y) / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_is_deterministic() {
        let spec = ModelSpec::Mlp1Hidden {
            input_dim: 4,
            hidden_dim: 6,
            output_dim: 3,
            activation: Activation::Tanh,
        };
        let params = init_params(&spec, 5);
        let batch = random_batch(&spec, 16, 6);
        let (l1, a1) = evaluate(&spec, &params, &batch.inputs, &batch.targets).unwrap();
        let (l2, a2) = evaluate(&spec, &params, &batch.inputs, &batch.targets).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(a1, a2);
    }
}
