//! Synchronous FL orchestration: the round loop, client sampling, weighted
//! aggregation, the FedYogi server rule, and the experiment driver.
//!
//! Client rounds within a round run in parallel; results are always reduced
//! in client-id order, so parallel and serial execution are bit-identical.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{aggregation_consistency, gsnr};
use crate::data::{datasets_digest, generate, ClientDataset};
use crate::error::{Error, Result};
use crate::local::{
    fedavg_local, feddyn_local, fedprox_local, fedsam_local, pflalign_local_round, scaffold_local,
    ClientState, LocalConfig, LocalRound,
};
use crate::models::{evaluate, init_params, ModelSpec};
use crate::params::{weighted_average, ParamVector};
use crate::seeding::{batch_seed, derive_seed, domain};

/// Federated algorithms the harness can drive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pflalign,
    Fedavg,
    Fedprox,
    Scaffold,
    Feddyn,
    Fedsam,
    Fedyogi,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Pflalign,
        Algorithm::Fedavg,
        Algorithm::Fedprox,
        Algorithm::Scaffold,
        Algorithm::Feddyn,
        Algorithm::Fedsam,
        Algorithm::Fedyogi,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Pflalign => "pflalign",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Fedprox => "fedprox",
            Algorithm::Scaffold => "scaffold",
            Algorithm::Feddyn => "feddyn",
            Algorithm::Fedsam => "fedsam",
            Algorithm::Fedyogi => "fedyogi",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .find(|a| a.name() == name)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm '{name}'")))
    }
}

/// FedYogi server-rule hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YogiConfig {
    #[serde(default = "default_yogi_beta1")]
    pub beta1: f64,
    #[serde(default = "default_yogi_beta2")]
    pub beta2: f64,
    #[serde(default = "default_yogi_server_lr")]
    pub server_lr: f64,
    #[serde(default = "default_yogi_tau")]
    pub tau: f64,
}

fn default_yogi_beta1() -> f64 {
    0.9
}
fn default_yogi_beta2() -> f64 {
    0.99
}
fn default_yogi_server_lr() -> f64 {
    0.1
}
fn default_yogi_tau() -> f64 {
    1e-3
}

impl Default for YogiConfig {
    fn default() -> Self {
        YogiConfig {
            beta1: default_yogi_beta1(),
            beta2: default_yogi_beta2(),
            server_lr: default_yogi_server_lr(),
            tau: default_yogi_tau(),
        }
    }
}

/// Which parameter set per-client evaluation uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalPoint {
    /// The client model at the end of its local round, w_{k,T}.
    #[default]
    LocalEnd,
    /// The new global model plus the client's refreshed offset (only
    /// distinct from `LocalEnd` for algorithms that keep an offset).
    GlobalPlusDelta,
}

/// Full FL protocol configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FLConfig {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_num_clients")]
    pub num_clients: usize,
    /// Fraction of clients sampled per round, in (0, 1].
    #[serde(default = "default_participation")]
    pub participation: f64,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub local: LocalConfig,
    #[serde(default)]
    pub yogi: YogiConfig,
    pub master_seed: u64,
    #[serde(default)]
    pub eval_point: EvalPoint,
}

fn default_rounds() -> usize {
    50
}
fn default_num_clients() -> usize {
    4
}
fn default_participation() -> f64 {
    1.0
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 1 {
            return Err(Error::InvalidConfig("fl.num_clients must be >= 1".into()));
        }
        if !self.participation.is_finite() || self.participation <= 0.0 || self.participation > 1.0
        {
            return Err(Error::InvalidConfig(
                "fl.participation must be in (0, 1]".into(),
            ));
        }
        self.local.validate()?;
        let beta_ok = |b: f64| b.is_finite() && (0.0..1.0).contains(&b);
        if !beta_ok(self.yogi.beta1) || !beta_ok(self.yogi.beta2) {
            return Err(Error::InvalidConfig(
                "fl.yogi betas must be in [0, 1)".into(),
            ));
        }
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.yogi.server_lr) || !pos(self.yogi.tau) {
            return Err(Error::InvalidConfig(
                "fl.yogi.server_lr and fl.yogi.tau must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Server-side state across rounds.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub global: ParamVector,
    pub round: usize,
    pub yogi_m: Option<ParamVector>,
    pub yogi_v: Option<ParamVector>,
    pub scaffold_c: Option<ParamVector>,
}

impl ServerState {
    pub fn new(global: ParamVector, algorithm: Algorithm) -> Self {
        let dim = global.len();
        let (yogi_m, yogi_v) = if algorithm == Algorithm::Fedyogi {
            (Some(ParamVector::zeros(dim)), Some(ParamVector::zeros(dim)))
        } else {
            (None, None)
        };
        let scaffold_c = if algorithm == Algorithm::Scaffold {
            Some(ParamVector::zeros(dim))
        } else {
            None
        };
        ServerState {
            global,
            round: 0,
            yogi_m,
            yogi_v,
            scaffold_c,
        }
    }
}

/// One client slot owned by the server loop.
#[derive(Clone, Debug)]
pub struct Client {
    pub state: ClientState,
    pub data: ClientDataset,
}

/// Per-client metrics for one round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClientRoundMetrics {
    pub client_id: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
    pub gsnr: f64,
    /// ||w_{k,T} - w^r||: the client's update norm, which equals the new
    /// personalized offset norm for pFLAlign.
    pub delta_norm: f64,
}

/// Metrics record of one communication round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub sampled_clients: Vec<usize>,
    pub clients: Vec<ClientRoundMetrics>,
    pub aggregation_consistency: f64,
    pub global_norm: f64,
}

/// FedYogi server update:
///
/// ```text
/// m' = beta1 m + (1-beta1) mean_delta
/// v' = v - (1-beta2) mean_delta^2 sign(v - mean_delta^2)
/// step = server_lr * m' / (sqrt(v') + tau)
/// ```
///
/// applied as `global <- global + step`.
pub fn fedyogi_server_update(
    yogi_m: &ParamVector,
    yogi_v: &ParamVector,
    mean_delta: &ParamVector,
    cfg: &YogiConfig,
) -> Result<(ParamVector, ParamVector, ParamVector)> {
    let m_next = yogi_m
        .scale(cfg.beta1)?
        .add(&mean_delta.scale(1.0 - cfg.beta1)?)?;
    let d_sq = mean_delta.square()?;
    let v_next = yogi_v.zip_with(&d_sq, "yogi_v", |v, d2| {
        v - (1.0 - cfg.beta2) * d2 * crate::params::sign(v - d2)
    })?;
    // v' stays nonnegative: the subtracted term is at most (1-beta2) v.
    let step = m_next.zip_with(&v_next, "yogi_step", |m, v| {
        cfg.server_lr * m / (v.sqrt() + cfg.tau)
    })?;
    Ok((m_next, v_next, step))
}

/// Output of each dispatched local algorithm, normalized for aggregation.
struct LocalOutcome {
    client_id: usize,
    round: LocalRound,
    state: ClientState,
    delta_control: Option<ParamVector>,
}

/// Runs one communication round: sample clients, dispatch the configured
/// local algorithm in parallel, aggregate in client-id order, evaluate.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [Client],
    model: &ModelSpec,
    cfg: &FLConfig,
    hasher: &mut Sha256,
) -> Result<RoundLog> {
    let round = server.round;
    let k = clients.len();
    if k == 0 {
        return Err(Error::Empty("run_round: no clients"));
    }

    // Sample ceil(participation * K) clients uniformly without replacement.
    let sample_count = ((cfg.participation * k as f64).ceil() as usize).clamp(1, k);
    let mut ids: Vec<usize> = (0..k).collect();
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.master_seed,
        domain::ROUND_SAMPLING,
        &[round as u64],
    ));
    ids.shuffle(&mut sample_rng);
    let mut sampled: Vec<usize> = ids.into_iter().take(sample_count).collect();
    sampled.sort_unstable();

    let global = server.global.clone();
    let c_global = server.scaffold_c.clone();
    let algorithm = cfg.algorithm;
    let local_cfg = &cfg.local;

    // Local rounds are pure per client; run them in parallel and collect in
    // sampled order so reduction is deterministic.
    let clients_ro: &[Client] = clients;
    let outcomes: Result<Vec<LocalOutcome>> = sampled
        .par_iter()
        .map(|&cid| {
            let client = &clients_ro[cid];
            let mut state = client.state.clone();
            let seed = batch_seed(cfg.master_seed, cid as u64, round as u64);
            let (round_out, delta_control) = match algorithm {
                Algorithm::Pflalign => (
                    pflalign_local_round(
                        &mut state,
                        &global,
                        &client.data,
                        local_cfg,
                        model,
                        seed,
                    )?,
                    None,
                ),
                Algorithm::Fedavg | Algorithm::Fedyogi => (
                    fedavg_local(&global, &client.data, local_cfg, model, seed)?,
                    None,
                ),
                Algorithm::Fedprox => (
                    fedprox_local(&global, &client.data, local_cfg, model, seed)?,
                    None,
                ),
                Algorithm::Scaffold => {
                    let c = c_global.as_ref().expect("scaffold state initialized");
                    let out = scaffold_local(
                        &mut state,
                        &global,
                        c,
                        &client.data,
                        local_cfg,
                        model,
                        seed,
                    )?;
                    (out.round, Some(out.delta_control))
                }
                Algorithm::Feddyn => (
                    feddyn_local(&mut state, &global, &client.data, local_cfg, model, seed)?,
                    None,
                ),
                Algorithm::Fedsam => (
                    fedsam_local(&global, &client.data, local_cfg, model, seed)?,
                    None,
                ),
            };
            Ok(LocalOutcome {
                client_id: cid,
                round: round_out,
                state,
                delta_control,
            })
        })
        .collect();
    let outcomes = outcomes?;

    // Fold the consumed minibatch streams into the run hash, in client order.
    for out in &outcomes {
        hasher.update((round as u64).to_le_bytes());
        hasher.update((out.client_id as u64).to_le_bytes());
        for step in &out.round.trace.batch_indices {
            for &ix in step {
                hasher.update((ix as u64).to_le_bytes());
            }
        }
    }

    // Aggregate.
    let params: Vec<ParamVector> = outcomes.iter().map(|o| o.round.params.clone()).collect();
    let sizes: Vec<usize> = outcomes
        .iter()
        .map(|o| clients[o.client_id].data.size())
        .collect();
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();

    let new_global = match algorithm {
        Algorithm::Fedyogi => {
            let mean_params = weighted_average(&params, &weights)?;
            let mean_delta = mean_params.sub(&global)?;
            let m = server.yogi_m.as_ref().expect("yogi state initialized");
            let v = server.yogi_v.as_ref().expect("yogi state initialized");
            let (m_next, v_next, step) = fedyogi_server_update(m, v, &mean_delta, &cfg.yogi)?;
            server.yogi_m = Some(m_next);
            server.yogi_v = Some(v_next);
            global.add(&step)?
        }
        _ => weighted_average(&params, &weights)?,
    };

    if algorithm == Algorithm::Scaffold {
        // c <- c + (1/K) sum of sampled clients' control deltas
        let mut c = server
            .scaffold_c
            .clone()
            .expect("scaffold state initialized");
        for out in &outcomes {
            let dc = out.delta_control.as_ref().expect("scaffold outcome");
            c = c.add(&dc.scale(1.0 / k as f64)?)?;
        }
        server.scaffold_c = Some(c);
    }

    // Evaluate and commit client state.
    let agg = aggregation_consistency(&params, &sizes)?;
    let mut metrics = Vec::with_capacity(outcomes.len());
    for out in outcomes {
        let cid = out.client_id;
        let eval_params = match cfg.eval_point {
            EvalPoint::LocalEnd => out.round.params.clone(),
            EvalPoint::GlobalPlusDelta => match algorithm {
                Algorithm::Pflalign => new_global.add(&out.state.delta)?,
                _ => out.round.params.clone(),
            },
        };
        let data = &clients[cid].data;
        let (train_loss, _) =
            evaluate(model, &eval_params, &data.train_inputs, &data.train_targets)?;
        let (test_loss, test_acc) =
            evaluate(model, &eval_params, &data.test_inputs, &data.test_targets)?;
        let delta_norm = out.round.params.sub(&global)?.norm2()?;
        let window_gsnr = gsnr(&out.round.trace.grads, cfg.local.epsilon)?;
        metrics.push(ClientRoundMetrics {
            client_id: cid,
            train_loss,
            test_loss,
            test_acc,
            gsnr: window_gsnr,
            delta_norm,
        });
        clients[cid].state = out.state;
    }

    server.global = new_global;
    server.round += 1;

    Ok(RoundLog {
        round,
        sampled_clients: sampled,
        clients: metrics,
        aggregation_consistency: agg,
        global_norm: server.global.norm2()?,
    })
}

/// Initial (pre-training) per-client evaluation of the global model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitialEval {
    pub client_id: usize,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
}

/// Complete record of one experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub algorithm: Algorithm,
    pub master_seed: u64,
    pub initial: Vec<InitialEval>,
    pub rounds: Vec<RoundLog>,
    /// SHA-256 over the data digest and every consumed minibatch index
    /// stream; equal hashes mean two runs saw identical data and batches.
    pub stream_hash: String,
}

impl RunLog {
    /// Per-client metrics of the final round, in client-id order.
    pub fn final_client_metrics(&self) -> &[ClientRoundMetrics] {
        &self.rounds.last().expect("at least one round").clients
    }

    /// Mean per-client test loss at the final round.
    pub fn final_mean_test_loss(&self) -> f64 {
        let m = self.final_client_metrics();
        m.iter().map(|c| c.test_loss).sum::<f64>() / m.len() as f64
    }

    /// Mean per-client GSNR at round `r`.
    pub fn mean_gsnr_at(&self, r: usize) -> f64 {
        let m = &self.rounds[r].clients;
        m.iter().map(|c| c.gsnr).sum::<f64>() / m.len() as f64
    }
}

/// Builds data, initializes all state, runs R rounds, and evaluates each
/// client's personalized model every round.
pub fn run_experiment(
    model: &ModelSpec,
    data_cfg: &crate::data::DataConfig,
    fl: &FLConfig,
) -> Result<RunLog> {
    model.validate()?;
    fl.validate()?;
    let mut data_cfg = data_cfg.clone();
    if data_cfg.seed.is_none() {
        data_cfg.seed = Some(derive_seed(fl.master_seed, domain::DATA, &[]));
    }
    data_cfg.validate()?;
    if data_cfg.num_clients != fl.num_clients {
        return Err(Error::InvalidConfig(format!(
            "data.num_clients ({}) != fl.num_clients ({})",
            data_cfg.num_clients, fl.num_clients
        )));
    }
    check_model_data_compat(model, &data_cfg)?;

    let datasets = generate(&data_cfg)?;
    let mut hasher = Sha256::new();
    hasher.update(datasets_digest(&datasets));

    let global = init_params(model, derive_seed(fl.master_seed, domain::INIT, &[]));
    let dim = global.len();
    let mut server = ServerState::new(global, fl.algorithm);
    let mut clients: Vec<Client> = datasets
        .into_iter()
        .enumerate()
        .map(|(cid, data)| Client {
            state: ClientState::new(cid, dim),
            data,
        })
        .collect();

    let initial = clients
        .iter()
        .map(|c| {
            let (test_loss, test_acc) = evaluate(
                model,
                &server.global,
                &c.data.test_inputs,
                &c.data.test_targets,
            )?;
            Ok(InitialEval {
                client_id: c.state.client_id,
                test_loss,
                test_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rounds = Vec::with_capacity(fl.rounds);
    for _ in 0..fl.rounds {
        rounds.push(run_round(
            &mut server,
            &mut clients,
            model,
            fl,
            &mut hasher,
        )?);
    }

    let stream_hash = hex_digest(hasher);
    Ok(RunLog {
        algorithm: fl.algorithm,
        master_seed: fl.master_seed,
        initial,
        rounds,
        stream_hash,
    })
}

fn hex_digest(hasher: Sha256) -> String {
    let bytes = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn check_model_data_compat(model: &ModelSpec, data: &crate::data::DataConfig) -> Result<()> {
    if model.input_dim() != data.input_dim {
        return Err(Error::InvalidConfig(format!(
            "model.input_dim ({}) != data.input_dim ({})",
            model.input_dim(),
            data.input_dim
        )));
    }
    match data.num_classes {
        Some(c) => {
            if !model.is_classifier() {
                return Err(Error::InvalidConfig(
                    "data.num_classes set but model.kind is a regressor".into(),
                ));
            }
            if model.output_dim() != c {
                return Err(Error::InvalidConfig(format!(
                    "model.output_dim ({}) != data.num_classes ({c})",
                    model.output_dim()
                )));
            }
        }
        None => {
            if model.is_classifier() {
                return Err(Error::InvalidConfig(
                    "model.kind is a classifier but data.num_classes is unset".into(),
                ));
            }
            if model.output_dim() != data.target_dim {
                return Err(Error::InvalidConfig(format!(
                    "model.output_dim ({}) != data.target_dim ({})",
                    model.output_dim(),
                    data.target_dim
                )));
            }
        }
    }
    Ok(())
}

/// Writes the per-(round, client) metrics CSV. Column order is part of the
/// file contract; float formatting uses Rust's shortest round-trip form so
/// repeated runs are byte-identical.
pub fn write_metrics_csv<W: std::io::Write>(log: &RunLog, mut w: W) -> Result<()> {
    writeln!(
        w,
        "round,client_id,train_loss,test_loss,test_acc,gsnr,delta_norm"
    )?;
    for round in &log.rounds {
        for c in &round.clients {
            let acc = c.test_acc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                round.round, c.client_id, c.train_loss, c.test_loss, acc, c.gsnr, c.delta_norm
            )?;
        }
    }
    Ok(())
}

/// JSON summary of one run: config echo, stream hash, per-round aggregation
/// consistency, initial and final per-client metrics.
#[derive(Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub master_seed: u64,
    pub rounds: usize,
    pub stream_hash: String,
    pub initial: Vec<InitialEval>,
    pub final_clients: Vec<ClientRoundMetrics>,
    pub aggregation_consistency: Vec<f64>,
    /// Absent for evaluation-only runs (rounds = 0).
    pub mean_final_test_loss: Option<f64>,
}

pub fn summarize(log: &RunLog) -> RunSummary {
    RunSummary {
        algorithm: log.algorithm.name().to_string(),
        master_seed: log.master_seed,
        rounds: log.rounds.len(),
        stream_hash: log.stream_hash.clone(),
        initial: log.initial.clone(),
        final_clients: log
            .rounds
            .last()
            .map(|r| r.clients.clone())
            .unwrap_or_default(),
        aggregation_consistency: log
            .rounds
            .iter()
            .map(|r| r.aggregation_consistency)
            .collect(),
        mean_final_test_loss: if log.rounds.is_empty() {
            None
        } else {
            Some(log.final_mean_test_loss())
        },
    }
}
