//! Desk-scale federated learning simulator built around pFLAlign — a
//! personalized FL algorithm combining per-coordinate gradient
//! preconditioning with an erf-gated alignment correction — plus the
//! standard optimizer baselines (FedAvg, FedProx, SCAFFOLD, FedDyn, FedSAM,
//! FedYogi), synthetic non-IID data generators, and a numerical oracle
//! suite that verifies the closed-form update rules the algorithm is
//! derived from.
//!
//! Determinism is a hard contract: every source of randomness derives from
//! one master seed, clients run in parallel but reduce in client-id order,
//! and repeated runs are bit-identical.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod local;
pub mod models;
pub mod params;
pub mod seeding;
pub mod server;

pub use config::ExperimentConfig;
pub use data::{ClientDataset, DataConfig, Generator};
pub use error::{Error, Result};
pub use local::{ClientState, LocalConfig, StepTrace};
pub use models::{Minibatch, ModelSpec};
pub use params::ParamVector;
pub use server::{Algorithm, FLConfig, RoundLog, RunLog, ServerState};
