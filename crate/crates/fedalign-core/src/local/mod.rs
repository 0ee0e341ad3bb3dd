//! Client-side update rules: the pFLAlign local round and the optimizer
//! baselines (FedAvg, FedProx, SCAFFOLD, FedDyn, FedSAM).
//!
//! Every local round is a pure function of (state, global model, data,
//! config, seed), so clients within a round can run fully in parallel and
//! repeated runs are bit-identical.

mod baselines;
mod pflalign;

pub use baselines::{
    fedavg_local, feddyn_local, fedprox_local, fedsam_local, scaffold_local, ScaffoldOutcome,
};
pub use pflalign::pflalign_local_round;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{loss_and_grad, Minibatch, ModelSpec};
use crate::params::{sign, ParamVector};

/// Persistent per-client state, carried across rounds.
///
/// `delta` is the personalized offset, `v` the second-moment accumulator and
/// `precond` the preconditioner; all start at zero. `control` holds the
/// SCAFFOLD control variate or FedDyn dual when those baselines run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub client_id: usize,
    pub delta: ParamVector,
    pub v: ParamVector,
    pub precond: ParamVector,
    pub control: Option<ParamVector>,
}

impl ClientState {
    pub fn new(client_id: usize, dim: usize) -> Self {
        ClientState {
            client_id,
            delta: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            precond: ParamVector::zeros(dim),
            control: None,
        }
    }
}

/// Per-round, per-step quantities; `m` resets to zero at the start of every
/// round, `alpha` and `gamma` are recomputed each step.
#[derive(Clone, Debug)]
pub struct LocalOptState {
    pub m: ParamVector,
    pub alpha: ParamVector,
    pub gamma: ParamVector,
    pub step: usize,
}

impl LocalOptState {
    pub fn new(dim: usize) -> Self {
        LocalOptState {
            m: ParamVector::zeros(dim),
            alpha: ParamVector::zeros(dim),
            gamma: ParamVector::zeros(dim),
            step: 0,
        }
    }
}

/// Hyperparameters of one local round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalConfig {
    /// Number of local optimization steps T.
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Learning rate eta.
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// EMA rate beta for the first and second moments.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// FedProx proximal strength.
    #[serde(default = "default_prox_mu")]
    pub prox_mu: f64,
    /// FedSAM perturbation radius.
    #[serde(default = "default_sam_rho")]
    pub sam_rho: f64,
    /// FedDyn regularization strength.
    #[serde(default = "default_dyn_alpha")]
    pub dyn_alpha: f64,
}

fn default_local_steps() -> usize {
    5
}
fn default_batch_size() -> usize {
    4
}
fn default_lr() -> f64 {
    4e-2
}
fn default_beta() -> f64 {
    0.9
}
fn default_epsilon() -> f64 {
    1e-12
}
fn default_prox_mu() -> f64 {
    0.1
}
fn default_sam_rho() -> f64 {
    0.05
}
fn default_dyn_alpha() -> f64 {
    0.1
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            local_steps: default_local_steps(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            beta: default_beta(),
            epsilon: default_epsilon(),
            prox_mu: default_prox_mu(),
            sam_rho: default_sam_rho(),
            dyn_alpha: default_dyn_alpha(),
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps < 1 {
            return Err(Error::InvalidConfig(
                "local.local_steps must be >= 1".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("local.batch_size must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig("local.lr must be > 0".into()));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 || self.beta >= 1.0 {
            return Err(Error::InvalidConfig("local.beta must be in (0, 1)".into()));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("local.epsilon must be > 0".into()));
        }
        if self.prox_mu < 0.0 || self.sam_rho < 0.0 || self.dyn_alpha < 0.0 {
            return Err(Error::InvalidConfig(
                "local.prox_mu, local.sam_rho, local.dyn_alpha must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step record of one local round.
///
/// The serialized form carries the documented scalar arrays (loss, gradient
/// norm, mean gamma, mean preconditioner) plus the sampled batch indices;
/// the raw per-step gradient vectors stay in memory for the GSNR window and
/// are not serialized.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StepTrace {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub gamma_means: Vec<f64>,
    pub precond_means: Vec<f64>,
    pub batch_indices: Vec<Vec<usize>>,
    #[serde(skip)]
    pub grads: Vec<ParamVector>,
}

impl StepTrace {
    fn with_capacity(steps: usize) -> Self {
        StepTrace {
            losses: Vec::with_capacity(steps),
            grad_norms: Vec::with_capacity(steps),
            gamma_means: Vec::with_capacity(steps),
            precond_means: Vec::with_capacity(steps),
            batch_indices: Vec::with_capacity(steps),
            grads: Vec::with_capacity(steps),
        }
    }

    fn push_common(&mut self, loss: f64, grad: ParamVector, indices: Vec<usize>) -> Result<()> {
        self.losses.push(loss);
        self.grad_norms.push(grad.norm2()?);
        self.batch_indices.push(indices);
        self.grads.push(grad);
        Ok(())
    }
}

/// Result of one local round: the client's end-of-round parameters and the
/// step trace.
#[derive(Clone, Debug)]
pub struct LocalRound {
    pub params: ParamVector,
    pub trace: StepTrace,
}

/// One step of the personalized preconditioning recurrences:
///
/// ```text
/// m' = beta m + (1-beta) g
/// v' = beta v + (1-beta) g^2
/// alpha = 1 - (1-beta) g^2 / (v' + eps)        (clipped to [0, 1])
/// P' = alpha P + (1-beta) m'^2 / (v' + eps)
/// ```
///
/// `alpha` uses the updated second moment v'. When m and v come from the
/// same gradient stream the raw alpha already lands in (0, 1]; the clip only
/// matters for arbitrary inputs, where a negative decay on the accumulated
/// ratio P would be meaningless.
pub fn precondition_step(
    m: &ParamVector,
    v: &ParamVector,
    precond: &ParamVector,
    grad: &ParamVector,
    beta: f64,
    eps: f64,
) -> Result<PreconditionStep> {
    if !beta.is_finite() || beta <= 0.0 || beta >= 1.0 {
        return Err(Error::InvalidArgument("beta must be in (0, 1)".into()));
    }
    let m_next = m.scale(beta)?.add(&grad.scale(1.0 - beta)?)?;
    let g_sq = grad.square()?;
    let v_next = v.scale(beta)?.add(&g_sq.scale(1.0 - beta)?)?;
    let alpha = g_sq.zip_with(&v_next, "alpha", |g2, vn| {
        (1.0 - (1.0 - beta) * g2 / (vn + eps)).clamp(0.0, 1.0)
    })?;
    let ratio = m_next
        .square()?
        .zip_with(&v_next, "m2_over_v", |m2, vn| m2 / (vn + eps))?;
    let p_next = alpha.mul(precond)?.add(&ratio.scale(1.0 - beta)?)?;
    Ok(PreconditionStep {
        m: m_next,
        v: v_next,
        alpha,
        precond: p_next,
    })
}

/// Output of [`precondition_step`].
#[derive(Clone, Debug)]
pub struct PreconditionStep {
    pub m: ParamVector,
    pub v: ParamVector,
    pub alpha: ParamVector,
    pub precond: ParamVector,
}

/// Per-coordinate gate on the alignment correction:
///
/// ```text
/// gamma = 0.5 - 0.5 erf(|m| / sqrt(2 (v - m^2) + eps)) sign(-m * delta)
/// ```
///
/// equal to 1 - P[sign(-g) = sign(delta)] under g ~ N(m, v - m^2). The
/// variance estimate v - m^2 is clamped at zero before the eps guard, since
/// EMA streams can make it marginally negative. Output is in [0, 1]; zero
/// moment or zero offset gives the neutral 0.5.
pub fn alignment_gamma(
    m: &ParamVector,
    v: &ParamVector,
    delta: &ParamVector,
    eps: f64,
) -> Result<ParamVector> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be > 0".into()));
    }
    if m.len() != delta.len() {
        return Err(Error::LengthMismatch {
            op: "alignment_gamma",
            left: m.len(),
            right: delta.len(),
        });
    }
    if m.len() != v.len() {
        return Err(Error::LengthMismatch {
            op: "alignment_gamma",
            left: m.len(),
            right: v.len(),
        });
    }
    let gamma_vals: Vec<f64> = m
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .zip(delta.as_slice())
        .map(|((&mi, &vi), &di)| {
            let var = (vi - mi * mi).max(0.0);
            let scaled = mi.abs() / (2.0 * var + eps).sqrt();
            0.5 - 0.5 * crate::params::erf(scaled) * sign(-mi * di)
        })
        .collect();
    ParamVector::new(gamma_vals)
}

/// Shared SGD-style loop driver: samples T minibatches from a seeded stream
/// and applies `update` to the running iterate. Every local algorithm draws
/// batches through this path, so the consumed index streams are identical
/// across algorithms under a shared seed.
pub(crate) fn run_local_steps(
    start: &ParamVector,
    data: &crate::data::ClientDataset,
    cfg: &LocalConfig,
    model: &ModelSpec,
    seed: u64,
    mut update: impl FnMut(
        &ParamVector,
        &ParamVector,
        &Minibatch,
        &mut StepTrace,
    ) -> Result<ParamVector>,
) -> Result<LocalRound> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = start.clone();
    let mut trace = StepTrace::with_capacity(cfg.local_steps);
    for _ in 0..cfg.local_steps {
        let (batch, indices) = data.sample_minibatch(cfg.batch_size, &mut rng);
        let (loss, grad) = loss_and_grad(model, &w, &batch)?;
        let next = update(&w, &grad, &batch, &mut trace)?;
        trace.push_common(loss, grad, indices)?;
        w = next;
    }
    Ok(LocalRound { params: w, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    const EPS: f64 = 1e-12;

    #[test]
    fn precondition_step_zero_gradient() {
        // g = 0: m' = beta m, v' = beta v, alpha = 1, P' = P + 0.1 m'^2/(v'+eps)
        let m = pv(&[0.5, -0.2]);
        let v = pv(&[1.0, 0.3]);
        let p = pv(&[0.4, 0.1]);
        let g = ParamVector::zeros(2);
        let out = precondition_step(&m, &v, &p, &g, 0.9, EPS).unwrap();
        for i in 0..2 {
            let (mi, vi, pi) = (m.as_slice()[i], v.as_slice()[i], p.as_slice()[i]);
            assert!((out.m.as_slice()[i] - 0.9 * mi).abs() < 1e-15);
            assert!((out.v.as_slice()[i] - 0.9 * vi).abs() < 1e-15);
            assert_eq!(out.alpha.as_slice()[i], 1.0);
            let m2 = (0.9 * mi) * (0.9 * mi);
            let want = pi + 0.1 * m2 / (0.9 * vi + EPS);
            assert!((out.precond.as_slice()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn precondition_step_cold_start_hand_values() {
        // beta = 0.9, m = v = P = 0, g = 1:
        // m' = 0.1, v' = 0.1, alpha ~ 0, P' ~ 0.01
        let zero = ParamVector::zeros(1);
        let g = pv(&[1.0]);
        let out = precondition_step(&zero, &zero, &zero, &g, 0.9, EPS).unwrap();
        assert!((out.m.as_slice()[0] - 0.1).abs() < 1e-15);
        assert!((out.v.as_slice()[0] - 0.1).abs() < 1e-15);
        assert!(
            out.alpha.as_slice()[0].abs() < 1e-10,
            "alpha ~ 0 at cold start"
        );
        assert!((out.precond.as_slice()[0] - 0.01).abs() < 1e-10);
    }

    #[test]
    fn precondition_step_is_coordinatewise() {
        let m = pv(&[0.3, 0.3, -0.7]);
        let v = pv(&[0.5, 0.5, 0.9]);
        let p = pv(&[0.2, 0.2, 0.6]);
        let g = pv(&[1.1, 1.1, -0.4]);
        let out = precondition_step(&m, &v, &p, &g, 0.9, EPS).unwrap();
        // identical input coordinates produce identical outputs
        assert_eq!(out.m.as_slice()[0], out.m.as_slice()[1]);
        assert_eq!(out.v.as_slice()[0], out.v.as_slice()[1]);
        assert_eq!(out.alpha.as_slice()[0], out.alpha.as_slice()[1]);
        assert_eq!(out.precond.as_slice()[0], out.precond.as_slice()[1]);
    }

    #[test]
    fn gamma_is_neutral_for_zero_moment_or_zero_offset() {
        let v = pv(&[1.0, 1.0]);
        let g = alignment_gamma(&pv(&[0.0, 0.7]), &v, &pv(&[1.0, 0.0]), EPS).unwrap();
        assert_eq!(g.as_slice()[0], 0.5); // m = 0
        assert_eq!(g.as_slice()[1], 0.5); // delta = 0
    }

    #[test]
    fn gamma_matches_the_normal_cdf_value() {
        // m = 1, v = 1.25 (std 0.5), delta > 0: descent -g disagrees with
        // delta with probability Phi(2) = 0.9772498680518208.
        let g = alignment_gamma(&pv(&[1.0]), &pv(&[1.25]), &pv(&[2.0]), EPS).unwrap();
        assert!((g.as_slice()[0] - 0.9772498680518208).abs() < 1e-9);
    }

    #[test]
    fn gamma_stays_in_unit_interval() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let m: f64 = rng.random_range(-5.0..5.0);
            let extra: f64 = rng.random_range(0.0..4.0);
            let v = m * m + extra;
            let d: f64 = rng.random_range(-2.0..2.0);
            let g = alignment_gamma(&pv(&[m]), &pv(&[v]), &pv(&[d]), EPS).unwrap();
            let gi = g.as_slice()[0];
            assert!((0.0..=1.0).contains(&gi), "gamma = {gi}");
        }
    }

    #[test]
    fn gamma_two_closed_forms_agree() {
        // gate form:        0.5 - 0.5 erf(|m|/s) sign(-m delta)
        // probability form: 0.5 + 0.5 erf(m/s) sign(delta)
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let m: f64 = rng.random_range(-3.0..3.0);
            let v = m * m + rng.random_range(0.0..2.0);
            let d: f64 = rng.random_range(-1.0..1.0);
            let gate = alignment_gamma(&pv(&[m]), &pv(&[v]), &pv(&[d]), EPS).unwrap();
            let var = (v - m * m).max(0.0);
            let probability = 0.5
                + 0.5 * crate::params::erf(m / (2.0 * var + EPS).sqrt()) * crate::params::sign(d);
            assert!(
                (gate.as_slice()[0] - probability).abs() <= 1e-12,
                "m={m} v={v} d={d}"
            );
        }
    }

    #[test]
    fn gamma_rejects_mismatched_lengths() {
        assert!(alignment_gamma(&pv(&[1.0]), &pv(&[1.0, 2.0]), &pv(&[1.0]), EPS).is_err());
        assert!(alignment_gamma(&pv(&[1.0]), &pv(&[1.0]), &pv(&[1.0, 2.0]), EPS).is_err());
    }
}
