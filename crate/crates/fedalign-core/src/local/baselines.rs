//! Optimizer-based baseline client updates.
//!
//! All baselines share [`run_local_steps`], so under a common seed they
//! consume identical minibatch index streams — the harness fairness
//! invariant relies on this.

use super::{run_local_steps, ClientState, LocalConfig, LocalRound};
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::models::{loss_and_grad, ModelSpec};
use crate::params::ParamVector;

/// Plain T-step minibatch SGD from the global model.
pub fn fedavg_local(
    global: &ParamVector,
    data: &ClientDataset,
    cfg: &LocalConfig,
    model: &ModelSpec,
    seed: u64,
) -> Result<LocalRound> {
    run_local_steps(global, data, cfg, model, seed, |w, grad, _batch, _trace| {
        w.sub(&grad.scale(cfg.lr)?)
    })
}

/// SGD on `loss + (mu/2) ||w - global||^2`; the proximal term adds
/// `mu (w - global)` to the gradient.
pub fn fedprox_local(
    global: &ParamVector,
    data: &ClientDataset,
    cfg: &LocalConfig,
    model: &ModelSpec,
    seed: u64,
) -> Result<LocalRound> {
    let mu = cfg.prox_mu;
    run_local_steps(global, data, cfg, model, seed, |w, grad, _batch, _trace| {
        let prox = w.sub(global)?.scale(mu)?;
        w.sub(&grad.add(&prox)?.scale(cfg.lr)?)
    })
}

/// SCAFFOLD local round plus its control-variate update.
#[derive(Clone, Debug)]
pub struct ScaffoldOutcome {
    pub round: LocalRound,
    /// c_k' - c_k, aggregated by the server into the global control.
    pub delta_control: ParamVector,
}

/// SCAFFOLD with the option-II (difference quotient) control update:
///
/// ```text
/// w <- w - eta (g - c_k + c_global)
/// c_k' = c_k - c_global + (global - w_T) / (T eta)
/// ```
///
/// Mutates `state.control` to c_k'.
pub fn scaffold_local(
    state: &mut ClientState,
    global: &ParamVector,
    c_global: &ParamVector,
    data: &ClientDataset,
    cfg: &LocalConfig,
    model: &ModelSpec,
    seed: u64,
) -> Result<ScaffoldOutcome> {
    let dim = global.len();
    let c_k = state
        .control
        .clone()
        .unwrap_or_else(|| ParamVector::zeros(dim));
    let round = run_local_steps(global, data, cfg, model, seed, |w, grad, _batch, _trace| {
        let corrected = grad.sub(&c_k)?.add(c_global)?;
        w.sub(&corrected.scale(cfg.lr)?)
    })?;
    let t_eta = cfg.local_steps as f64 * cfg.lr;
    let drift = global.sub(&round.params)?.scale(1.0 / t_eta)?;
    let c_next = c_k.sub(c_global)?.add(&drift)?;
    let delta_control = c_next.sub(&c_k)?;
    state.control = Some(c_next);
    Ok(ScaffoldOutcome {
        round,
        delta_control,
    })
}

/// FedDyn local round: SGD on
/// `loss - <lambda_k, w> + (alpha/2) ||w - global||^2`, then
/// `lambda_k' = lambda_k - alpha (w_T - global)`. Mutates `state.control`.
pub fn feddyn_local(
    state: &mut ClientState,
    global: &ParamVector,
    data: &ClientDataset,
    cfg: &LocalConfig,
    model: &ModelSpec,
    seed: u64,
) -> Result<LocalRound> {
    let dim = global.len();
    let alpha = cfg.dyn_alpha;
    let lambda = state
        .control
        .clone()
        .unwrap_or_else(|| ParamVector::zeros(dim));
    let round = run_local_steps(global, data, cfg, model, seed, |w, grad, _batch, _trace| {
        let reg = w.sub(global)?.scale(alpha)?;
        let full = grad.sub(&lambda)?.add(&reg)?;
        w.sub(&full.scale(cfg.lr)?)
    })?;
    let lambda_next = lambda.sub(&round.params.sub(global)?.scale(alpha)?)?;
    state.control = Some(lambda_next);
    Ok(round)
}

/// FedSAM: each step perturbs to `w + rho g/||g||`, takes the gradient
/// there, and descends with it. A zero gradient (or rho = 0) skips the
/// perturbation, reducing exactly to FedAvg.
pub fn fedsam_local(
    global: &ParamVector,
    data: &ClientDataset,
    cfg: &LocalConfig,
    model: &ModelSpec,
    seed: u64,
) -> Result<LocalRound> {
    let rho = cfg.sam_rho;
    if rho < 0.0 {
        return Err(Error::InvalidArgument("sam_rho must be >= 0".into()));
    }
    run_local_steps(global, data, cfg, model, seed, |w, grad, batch, _trace| {
        let norm = grad.norm2()?;
        let g_sam = if rho > 0.0 && norm > 0.0 {
            let adv = w.add(&grad.scale(rho / norm)?)?;
            loss_and_grad(model, &adv, batch)?.1
        } else {
            grad.clone()
        };
        w.sub(&g_sam.scale(cfg.lr)?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DataConfig, Generator};
    use crate::models::{Matrix, Targets};

    /// A one-sample regression dataset realizing the quadratic
    /// L(w, b) = (w + b - a)^2 in the two model parameters.
    fn quadratic_dataset(a: f64) -> ClientDataset {
        ClientDataset {
            client_id: 0,
            task_id: 0,
            train_inputs: Matrix::new(1, 1, vec![1.0]).unwrap(),
            train_targets: Targets::Values(Matrix::new(1, 1, vec![a]).unwrap()),
            test_inputs: Matrix::new(1, 1, vec![1.0]).unwrap(),
            test_targets: Targets::Values(Matrix::new(1, 1, vec![a]).unwrap()),
        }
    }

    fn model_1d() -> ModelSpec {
        ModelSpec::LinearRegression {
            input_dim: 1,
            output_dim: 1,
        }
    }

    fn small_cfg() -> LocalConfig {
        LocalConfig {
            local_steps: 5,
            batch_size: 2,
            lr: 0.04,
            ..LocalConfig::default()
        }
    }

    fn random_dataset(seed: u64) -> ClientDataset {
        let cfg = DataConfig {
            generator: Generator::DistinctTasks,
            num_clients: 1,
            train_per_client: 32,
            test_per_client: 8,
            input_dim: 3,
            num_classes: None,
            target_dim: 1,
            dirichlet_alpha: None,
            noise_std: 0.2,
            seed: Some(seed),
        };
        crate::data::make_distinct_tasks(&cfg).unwrap().remove(0)
    }

    #[test]
    fn fedavg_follows_the_closed_form_contraction() {
        // On L = (w + b - a)^2 the sum u = w + b contracts as
        // u_T = a + (1 - 4 eta)^T (u_0 - a) and w - b stays fixed.
        let a = 2.0;
        let data = quadratic_dataset(a);
        let model = model_1d();
        let cfg = small_cfg();
        let w0 = ParamVector::new(vec![0.3, -0.1]).unwrap();
        let round = fedavg_local(&w0, &data, &cfg, &model, 5).unwrap();
        let u0 = 0.3 + (-0.1);
        let expected_u = a + (1.0 - 4.0 * cfg.lr).powi(cfg.local_steps as i32) * (u0 - a);
        let got = round.params.as_slice();
        assert!((got[0] + got[1] - expected_u).abs() < 1e-12);
        assert!(
            ((got[0] - got[1]) - 0.4).abs() < 1e-12,
            "orthogonal direction moved"
        );
    }

    #[test]
    fn fedavg_is_fixed_at_an_exact_fit() {
        let data = quadratic_dataset(1.0);
        let model = model_1d();
        let cfg = small_cfg();
        // w + b = 1 realizes the target exactly: gradient is zero
        let w0 = ParamVector::new(vec![0.25, 0.75]).unwrap();
        let round = fedavg_local(&w0, &data, &cfg, &model, 5).unwrap();
        assert_eq!(round.params, w0);
    }

    #[test]
    fn fedprox_zero_mu_is_bitwise_fedavg() {
        let data = random_dataset(8);
        let model = ModelSpec::LinearRegression {
            input_dim: 3,
            output_dim: 1,
        };
        let mut cfg = small_cfg();
        cfg.prox_mu = 0.0;
        let w0 = crate::models::init_params(&model, 17);
        let a = fedavg_local(&w0, &data, &cfg, &model, 23).unwrap();
        let b = fedprox_local(&w0, &data, &cfg, &model, 23).unwrap();
        for (&x, &y) in a.params.as_slice().iter().zip(b.params.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn fedprox_fixed_point_solves_stationarity() {
        // On L = (w + b - a)^2 with proximal pull toward w_g, the long-run
        // iterate satisfies 2(u - a) [1,1] + mu (x - x_g) = 0. Solving with
        // x_g = 0: u* = 2a/(2 + mu) componentwise-symmetric split.
        let a = 3.0;
        let data = quadratic_dataset(a);
        let model = model_1d();
        let mut cfg = small_cfg();
        cfg.prox_mu = 1.0;
        cfg.local_steps = 4000;
        cfg.lr = 0.05;
        let w_g = ParamVector::zeros(2);
        let round = fedprox_local(&w_g, &data, &cfg, &model, 1).unwrap();
        let got = round.params.as_slice();
        // stationarity: grad_w = 2(u-a) + mu w = 0 and same for b, so
        // w* = b* and 4(w*) - 2a... solve: 2(2w - a) + w = 0 => w = 2a/(4+mu)
        let w_star = 2.0 * a / (4.0 + cfg.prox_mu);
        assert!(
            (got[0] - w_star).abs() < 1e-9,
            "got {} want {w_star}",
            got[0]
        );
        assert!((got[1] - w_star).abs() < 1e-9);
    }

    #[test]
    fn fedprox_with_zero_data_gradient_stays_at_global() {
        let data = quadratic_dataset(1.0);
        let model = model_1d();
        let mut cfg = small_cfg();
        cfg.prox_mu = 0.7;
        // global realizes the target exactly: data gradient is zero there,
        // and the proximal term is zero at w = global.
        let w_g = ParamVector::new(vec![0.5, 0.5]).unwrap();
        let round = fedprox_local(&w_g, &data, &cfg, &model, 2).unwrap();
        assert_eq!(round.params, w_g);
    }

    #[test]
    fn scaffold_reduces_to_sgd_when_controls_cancel() {
        let data = random_dataset(9);
        let model = ModelSpec::LinearRegression {
            input_dim: 3,
            output_dim: 1,
        };
        let mut cfg = small_cfg();
        cfg.local_steps = 1;
        let w0 = crate::models::init_params(&model, 3);
        let dim = w0.len();
        let mut state = ClientState::new(0, dim);
        let c_global = ParamVector::zeros(dim);
        let out = scaffold_local(&mut state, &w0, &c_global, &data, &cfg, &model, 4).unwrap();
        let sgd = fedavg_local(&w0, &data, &cfg, &model, 4).unwrap();
        assert_eq!(out.round.params, sgd.params);
    }

    #[test]
    fn scaffold_zero_gradient_yields_zero_drift() {
        let data = quadratic_dataset(1.0);
        let model = model_1d();
        let cfg = small_cfg();
        let w0 = ParamVector::new(vec![0.5, 0.5]).unwrap(); // exact fit
        let mut state = ClientState::new(0, 2);
        state.control = Some(ParamVector::zeros(2));
        let c_global = ParamVector::zeros(2);
        let out = scaffold_local(&mut state, &w0, &c_global, &data, &cfg, &model, 4).unwrap();
        assert_eq!(out.round.params, w0);
        for &d in out.delta_control.as_slice() {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn scaffold_single_client_converges_to_local_optimum() {
        // One client, repeated rounds: the control correction drives the
        // fixed point to the stationary point of the local loss, u = a.
        let a = 1.5;
        let data = quadratic_dataset(a);
        let model = model_1d();
        let mut cfg = small_cfg();
        cfg.local_steps = 10;
        cfg.lr = 0.05;
        let mut global = ParamVector::zeros(2);
        let mut c_global = ParamVector::zeros(2);
        let mut state = ClientState::new(0, 2);
        for r in 0..400u64 {
            let out =
                scaffold_local(&mut state, &global, &c_global, &data, &cfg, &model, r).unwrap();
            global = out.round.params; // single client: aggregate = its output
            c_global = c_global.add(&out.delta_control).unwrap();
        }
        let u = global.as_slice()[0] + global.as_slice()[1];
        assert!((u - a).abs() < 1e-6, "u = {u}, want {a}");
    }

    #[test]
    fn feddyn_zero_alpha_zero_lambda_is_fedavg() {
        let data = random_dataset(10);
        let model = ModelSpec::LinearRegression {
            input_dim: 3,
            output_dim: 1,
        };
        let mut cfg = small_cfg();
        cfg.dyn_alpha = 0.0;
        let w0 = crate::models::init_params(&model, 21);
        let mut state = ClientState::new(0, w0.len());
        let a = feddyn_local(&mut state, &w0, &data, &cfg, &model, 6).unwrap();
        let b = fedavg_local(&w0, &data, &cfg, &model, 6).unwrap();
        assert_eq!(a.params, b.params);
        // lambda' stays zero
        for &l in state.control.as_ref().unwrap().as_slice() {
            assert_eq!(l, 0.0);
        }
    }

    #[test]
    fn feddyn_fixed_point_is_stationary_for_the_regularized_objective() {
        let a = 2.0;
        let data = quadratic_dataset(a);
        let model = model_1d();
        let mut cfg = small_cfg();
        cfg.dyn_alpha = 0.5;
        cfg.local_steps = 6000;
        cfg.lr = 0.05;
        let global = ParamVector::zeros(2);
        let mut state = ClientState::new(0, 2);
        state.control = Some(ParamVector::new(vec![0.1, -0.2]).unwrap());
        let lambda = state.control.clone().unwrap();
        let round = feddyn_local(&mut state, &global, &data, &cfg, &model, 3).unwrap();
        // stationarity of loss - <lambda, w> + (alpha/2)||w - global||^2
        let w = round.params.as_slice();
        let u = w[0] + w[1];
        let grad_w = 2.0 * (u - a) - lambda.as_slice()[0] + cfg.dyn_alpha * w[0];
        let grad_b = 2.0 * (u - a) - lambda.as_slice()[1] + cfg.dyn_alpha * w[1];
        assert!(grad_w.abs() < 1e-6, "grad_w = {grad_w}");
        assert!(grad_b.abs() < 1e-6, "grad_b = {grad_b}");
    }

    #[test]
    fn fedsam_zero_rho_is_bitwise_fedavg() {
        let data = random_dataset(11);
        let model = ModelSpec::LinearRegression {
            input_dim: 3,
            output_dim: 1,
        };
        let mut cfg = small_cfg();
        cfg.sam_rho = 0.0;
        let w0 = crate::models::init_params(&model, 12);
        let a = fedavg_local(&w0, &data, &cfg, &model, 13).unwrap();
        let b = fedsam_local(&w0, &data, &cfg, &model, 13).unwrap();
        for (&x, &y) in a.params.as_slice().iter().zip(b.params.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn fedsam_step_matches_hand_perturbation() {
        // L = (w + b - a)^2; at x0 the gradient is g = 2(u0 - a) [1, 1],
        // the perturbed point is x0 + rho g/||g||, and the SAM gradient is
        // the gradient there.
        let a = 1.0;
        let data = quadratic_dataset(a);
        let model = model_1d();
        let mut cfg = small_cfg();
        cfg.local_steps = 1;
        cfg.sam_rho = 0.3;
        let w0 = ParamVector::new(vec![1.0, 0.5]).unwrap();
        let round = fedsam_local(&w0, &data, &cfg, &model, 5).unwrap();

        let u0: f64 = 1.5;
        let g = 2.0 * (u0 - a); // per coordinate
        let norm = (2.0 * g * g).sqrt();
        let shift = cfg.sam_rho * g / norm;
        let u_adv = u0 + 2.0 * shift;
        let g_sam = 2.0 * (u_adv - a);
        let expect = [1.0 - cfg.lr * g_sam, 0.5 - cfg.lr * g_sam];
        for (&got, &want) in round.params.as_slice().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        }
    }

    #[test]
    fn fedsam_does_not_move_at_a_stationary_point() {
        let data = quadratic_dataset(1.0);
        let model = model_1d();
        let mut cfg = small_cfg();
        cfg.sam_rho = 0.2;
        let w0 = ParamVector::new(vec![0.5, 0.5]).unwrap();
        let round = fedsam_local(&w0, &data, &cfg, &model, 5).unwrap();
        assert_eq!(round.params, w0);
    }

    #[test]
    fn all_locals_are_deterministic_under_shared_seed() {
        let data = random_dataset(14);
        let model = ModelSpec::LinearRegression {
            input_dim: 3,
            output_dim: 1,
        };
        let cfg = small_cfg();
        let w0 = crate::models::init_params(&model, 15);
        let dim = w0.len();

        let runs = |seed: u64| -> Vec<ParamVector> {
            let mut out = Vec::new();
            out.push(fedavg_local(&w0, &data, &cfg, &model, seed).unwrap().params);
            out.push(
                fedprox_local(&w0, &data, &cfg, &model, seed)
                    .unwrap()
                    .params,
            );
            out.push(fedsam_local(&w0, &data, &cfg, &model, seed).unwrap().params);
            let mut st = ClientState::new(0, dim);
            out.push(
                scaffold_local(
                    &mut st,
                    &w0,
                    &ParamVector::zeros(dim),
                    &data,
                    &cfg,
                    &model,
                    seed,
                )
                .unwrap()
                .round
                .params,
            );
            let mut st = ClientState::new(0, dim);
            out.push(
                feddyn_local(&mut st, &w0, &data, &cfg, &model, seed)
                    .unwrap()
                    .params,
            );
            let mut st = ClientState::new(0, dim);
            out.push(
                super::super::pflalign_local_round(&mut st, &w0, &data, &cfg, &model, seed)
                    .unwrap()
                    .params,
            );
            out
        };
        let a = runs(77);
        let b = runs(77);
        assert_eq!(a, b);

        // identical batch streams across algorithms under one seed
        let t1 = fedavg_local(&w0, &data, &cfg, &model, 42)
            .unwrap()
            .trace
            .batch_indices;
        let t2 = fedsam_local(&w0, &data, &cfg, &model, 42)
            .unwrap()
            .trace
            .batch_indices;
        let mut st = ClientState::new(0, dim);
        let t3 = super::super::pflalign_local_round(&mut st, &w0, &data, &cfg, &model, 42)
            .unwrap()
            .trace
            .batch_indices;
        assert_eq!(t1, t2);
        assert_eq!(t1, t3);
    }
}
