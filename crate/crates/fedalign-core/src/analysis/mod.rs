//! Diagnostic metrics and the numerical oracles behind the closed-form
//! update rules: the variance-adaptation factor, the variance-reduced
//! estimator, the online PAC-Bayes preconditioner updates, Gaussian KL
//! machinery, the Monte-Carlo alignment-probability oracle, GSNR, and
//! aggregation consistency.

pub mod verify;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Variance-adaptation factor per coordinate: q = E[g]^2 / (E[g^2] + eps).
///
/// Valid moments require E[g^2] >= E[g]^2 coordinate-wise; each output lands
/// in [0, 1].
pub fn svag_factor(eg: &ParamVector, eg2: &ParamVector, eps: f64) -> Result<ParamVector> {
    if eg.len() != eg2.len() {
        return Err(Error::LengthMismatch {
            op: "svag_factor",
            left: eg.len(),
            right: eg2.len(),
        });
    }
    for (&m, &s) in eg.as_slice().iter().zip(eg2.as_slice()) {
        if s < m * m {
            return Err(Error::InvalidArgument(format!(
                "invalid moments: E[g^2] = {s} < E[g]^2 = {}",
                m * m
            )));
        }
    }
    eg.zip_with(eg2, "svag_factor", |m, s| (m * m) / (s + eps))
}

/// Expected squared deviation of the scaled stochastic gradient from the
/// mean gradient: sum_i q_i^2 E[g_i^2] - 2 q_i E[g_i]^2 + E[g_i]^2.
pub fn svag_deviation(q: &ParamVector, eg: &ParamVector, eg2: &ParamVector) -> Result<f64> {
    if q.len() != eg.len() || q.len() != eg2.len() {
        return Err(Error::LengthMismatch {
            op: "svag_deviation",
            left: q.len(),
            right: eg.len(),
        });
    }
    let dev = q
        .as_slice()
        .iter()
        .zip(eg.as_slice())
        .zip(eg2.as_slice())
        .map(|((&qi, &mi), &si)| qi * qi * si - 2.0 * qi * mi * mi + mi * mi)
        .sum::<f64>();
    if !dev.is_finite() {
        return Err(Error::NonFinite {
            op: "svag_deviation",
        });
    }
    Ok(dev)
}

/// Variance-reduced gradient estimator: g(w) - g(ref) + full_grad(ref).
pub fn svrg_estimator(
    g_at_w: &ParamVector,
    g_at_ref: &ParamVector,
    full_grad_ref: &ParamVector,
) -> Result<ParamVector> {
    g_at_w.sub(g_at_ref)?.add(full_grad_ref)
}

/// State of the online PAC-Bayes preconditioner oracle for one step.
///
/// `p` is the posterior mean, `s2` the posterior variance (strictly
/// positive, non-increasing under updates), `beta_pb` the inverse
/// temperature, `n` the client sample count, and `smoothness` the constant
/// L. Everything beyond `p`/`s2` is treated symbolically by the closed
/// forms, so defaults of 1 are fine for verification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PacBayesPreconditionerState {
    pub p: ParamVector,
    pub s2: ParamVector,
    pub beta_pb: f64,
    pub n: usize,
    pub smoothness: f64,
}

impl PacBayesPreconditionerState {
    pub fn new(dim: usize, s2_init: f64, beta_pb: f64, n: usize, smoothness: f64) -> Result<Self> {
        if s2_init <= 0.0 || beta_pb <= 0.0 || smoothness <= 0.0 || n == 0 {
            return Err(Error::InvalidArgument(
                "s2_init, beta_pb, smoothness must be > 0 and n >= 1".into(),
            ));
        }
        Ok(PacBayesPreconditionerState {
            p: ParamVector::zeros(dim),
            s2: ParamVector::new(vec![s2_init; dim])?,
            beta_pb,
            n,
            smoothness,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.s2.as_slice().iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(
                "posterior variance must be > 0".into(),
            ));
        }
        if self.beta_pb <= 0.0 || self.smoothness <= 0.0 || self.n == 0 {
            return Err(Error::InvalidArgument(
                "beta_pb, smoothness must be > 0 and n >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Output of one closed-form preconditioner update.
#[derive(Clone, Debug)]
pub struct PacBayesUpdate {
    pub state: PacBayesPreconditionerState,
    /// Mixing weight toward the instantaneous optimum.
    pub alpha_tilde: ParamVector,
    /// Instantaneous optimum mu^2 / (L G^2).
    pub p_tilde: ParamVector,
}

/// The closed-form optimal preconditioner update:
///
/// ```text
/// p_tilde = mu^2 / (L G^2)
/// alpha   = L G^2 / (L G^2 + 1 / (beta n s2))
/// p'      = alpha p_tilde + (1 - alpha) p
/// s2'     = 1 / (1/s2 + beta n L G^2)
/// ```
pub fn pacbayes_precond_update(
    st: &PacBayesPreconditionerState,
    mu: &ParamVector,
    g2: &ParamVector,
) -> Result<PacBayesUpdate> {
    st.validate()?;
    if mu.len() != st.p.len() || g2.len() != st.p.len() {
        return Err(Error::LengthMismatch {
            op: "pacbayes_precond_update",
            left: mu.len(),
            right: st.p.len(),
        });
    }
    if g2.as_slice().iter().any(|&g| g <= 0.0) {
        return Err(Error::InvalidArgument(
            "G^2 must be > 0 coordinate-wise".into(),
        ));
    }
    let l = st.smoothness;
    let bn = st.beta_pb * st.n as f64;

    let p_tilde = mu.zip_with(g2, "p_tilde", |m, g| (m * m) / (l * g))?;
    let alpha_tilde = g2.zip_with(&st.s2, "alpha_tilde", |g, s2| {
        let lg = l * g;
        lg / (lg + 1.0 / (bn * s2))
    })?;
    let p_next_vals: Vec<f64> = alpha_tilde
        .as_slice()
        .iter()
        .zip(p_tilde.as_slice())
        .zip(st.p.as_slice())
        .map(|((&a, &pt), &pp)| a * pt + (1.0 - a) * pp)
        .collect();
    let s2_next = st
        .s2
        .zip_with(g2, "s2_next", |s2, g| 1.0 / (1.0 / s2 + bn * l * g))?;

    Ok(PacBayesUpdate {
        state: PacBayesPreconditionerState {
            p: ParamVector::new(p_next_vals)?,
            s2: s2_next,
            beta_pb: st.beta_pb,
            n: st.n,
            smoothness: st.smoothness,
        },
        alpha_tilde,
        p_tilde,
    })
}

/// Equivalent precision-weighted fraction form of the mean update:
///
/// ```text
/// p' = (mu^2 + p_prev / (beta n s2_prev)) / (L G^2 + 1 / (beta n s2_prev))
/// ```
///
/// Used as the algebraic cross-check against the convex-combination form.
pub fn pacbayes_mean_fraction_form(
    st: &PacBayesPreconditionerState,
    mu: &ParamVector,
    g2: &ParamVector,
) -> Result<ParamVector> {
    st.validate()?;
    let l = st.smoothness;
    let bn = st.beta_pb * st.n as f64;
    let vals: Vec<f64> = mu
        .as_slice()
        .iter()
        .zip(g2.as_slice())
        .zip(st.p.as_slice().iter().zip(st.s2.as_slice()))
        .map(|((&m, &g), (&pp, &s2))| (m * m + pp / (bn * s2)) / (l * g + 1.0 / (bn * s2)))
        .collect();
    ParamVector::new(vals)
}

/// The scalar coordinate objective the update minimizes:
///
/// ```text
/// J(p, s2) = -p mu2 + (L/2) G2 (p^2 + s2) + KL(N(p, s2) || N(p_prev, s2_prev)) / (beta n)
/// ```
#[allow(clippy::too_many_arguments)]
pub fn pacbayes_objective(
    p: f64,
    s2: f64,
    mu2: f64,
    g2: f64,
    smoothness: f64,
    beta_pb: f64,
    n: usize,
    p_prev: f64,
    s2_prev: f64,
) -> f64 {
    let kl = 0.5 * (((p - p_prev).powi(2) + s2) / s2_prev + (s2_prev / s2).ln() - 1.0);
    -p * mu2 + 0.5 * smoothness * g2 * (p * p + s2) + kl / (beta_pb * n as f64)
}

/// Diagonal Gaussian with strictly positive variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiag {
    pub mean: ParamVector,
    pub var: ParamVector,
}

impl GaussianDiag {
    pub fn new(mean: ParamVector, var: ParamVector) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::LengthMismatch {
                op: "GaussianDiag",
                left: mean.len(),
                right: var.len(),
            });
        }
        if var.as_slice().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument(
                "variance must be > 0 coordinate-wise".into(),
            ));
        }
        Ok(GaussianDiag { mean, var })
    }
}

/// KL divergence between diagonal Gaussians:
/// sum_i 0.5 [ (mq - mp)^2 / vp + vq / vp + ln(vp / vq) - 1 ].
pub fn kl_gaussian_diag(q: &GaussianDiag, p: &GaussianDiag) -> Result<f64> {
    if q.mean.len() != p.mean.len() {
        return Err(Error::LengthMismatch {
            op: "kl_gaussian_diag",
            left: q.mean.len(),
            right: p.mean.len(),
        });
    }
    let kl = q
        .mean
        .as_slice()
        .iter()
        .zip(q.var.as_slice())
        .zip(p.mean.as_slice().iter().zip(p.var.as_slice()))
        .map(|((&mq, &vq), (&mp, &vp))| {
            0.5 * ((mq - mp).powi(2) / vp + vq / vp + (vp / vq).ln() - 1.0)
        })
        .sum::<f64>();
    if !kl.is_finite() {
        return Err(Error::NonFinite {
            op: "kl_gaussian_diag",
        });
    }
    Ok(kl)
}

/// Gradient of the KL between the personalized point mass and the one-step
/// prior with respect to the offset: (delta_i + eta m_i) / (eta^2 rho2_i).
pub fn kl_grad_wrt_delta(
    delta: &ParamVector,
    m_k: &ParamVector,
    rho2: &ParamVector,
    eta: f64,
) -> Result<ParamVector> {
    if eta <= 0.0 {
        return Err(Error::InvalidArgument("eta must be > 0".into()));
    }
    if rho2.as_slice().iter().any(|&r| r <= 0.0) {
        return Err(Error::InvalidArgument(
            "rho2 must be > 0 coordinate-wise".into(),
        ));
    }
    if delta.len() != m_k.len() || delta.len() != rho2.len() {
        return Err(Error::LengthMismatch {
            op: "kl_grad_wrt_delta",
            left: delta.len(),
            right: m_k.len(),
        });
    }
    let vals: Vec<f64> = delta
        .as_slice()
        .iter()
        .zip(m_k.as_slice())
        .zip(rho2.as_slice())
        .map(|((&d, &m), &r2)| (d + eta * m) / (eta * eta * r2))
        .collect();
    ParamVector::new(vals)
}

/// The KL expression whose gradient [`kl_grad_wrt_delta`] evaluates
/// (up to its delta-independent constant): 0.5 sum (d + eta m)^2 / (eta^2 rho2).
pub fn kl_delta_expression(
    delta: &ParamVector,
    m_k: &ParamVector,
    rho2: &ParamVector,
    eta: f64,
) -> Result<f64> {
    if delta.len() != m_k.len() || delta.len() != rho2.len() {
        return Err(Error::LengthMismatch {
            op: "kl_delta_expression",
            left: delta.len(),
            right: m_k.len(),
        });
    }
    Ok(delta
        .as_slice()
        .iter()
        .zip(m_k.as_slice())
        .zip(rho2.as_slice())
        .map(|((&d, &m), &r2)| 0.5 * (d + eta * m).powi(2) / (eta * eta * r2))
        .sum::<f64>())
}

/// Monte-Carlo oracle for the alignment probability: the fraction of
/// g ~ N(m, var) draws with sign(-g) = delta_sign. `delta_sign = 0` returns
/// 0.5 by convention, matching the neutral gate.
pub fn mc_alignment_probability(
    m: f64,
    var: f64,
    delta_sign: i8,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if var <= 0.0 {
        return Err(Error::InvalidArgument("var must be > 0".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    if delta_sign == 0 {
        return Ok(0.5);
    }
    let normal =
        Normal::new(m, var.sqrt()).map_err(|e| Error::InvalidArgument(format!("normal: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let g: f64 = normal.sample(&mut rng);
        let s = crate::params::sign(-g);
        if s == f64::from(delta_sign) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples as f64)
}

/// GSNR cap: zero-variance windows report this sentinel instead of 1/eps.
pub const GSNR_CAP: f64 = 1e12;

/// Gradient signal-to-noise ratio over a within-round window of per-step
/// gradient vectors: per-coordinate mhat^2 / (vhat - mhat^2 + eps) from the
/// window's sample moments, averaged over coordinates, capped at
/// [`GSNR_CAP`] per coordinate and on the reported mean.
pub fn gsnr(grads: &[ParamVector], eps: f64) -> Result<f64> {
    if grads.len() < 2 {
        return Err(Error::InvalidArgument(
            "gsnr window needs >= 2 gradients".into(),
        ));
    }
    let dim = grads[0].len();
    for g in grads {
        if g.len() != dim {
            return Err(Error::LengthMismatch {
                op: "gsnr",
                left: dim,
                right: g.len(),
            });
        }
    }
    let t = grads.len() as f64;
    let mut total = 0.0;
    for i in 0..dim {
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for g in grads {
            let x = g.as_slice()[i];
            mean += x;
            mean_sq += x * x;
        }
        mean /= t;
        mean_sq /= t;
        let var = (mean_sq - mean * mean).max(0.0);
        total += ((mean * mean) / (var + eps)).min(GSNR_CAP);
    }
    Ok((total / dim as f64).min(GSNR_CAP))
}

/// Data-weighted average of per-client parameter norms:
/// sum_k (|D_k| / sum_j |D_j|) ||w_k||.
pub fn aggregation_consistency(client_params: &[ParamVector], sizes: &[usize]) -> Result<f64> {
    if client_params.is_empty() {
        return Err(Error::Empty("aggregation_consistency"));
    }
    if client_params.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            op: "aggregation_consistency",
            left: client_params.len(),
            right: sizes.len(),
        });
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    if total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let mut acc = 0.0;
    for (p, &s) in client_params.iter().zip(sizes) {
        acc += (s as f64 / total) * p.norm2()?;
    }
    Ok(acc)
}
