//! Generalisation benchmark for continuous-control policies.
//!
//! Policies are trained with PPO on analytic pendulum and cart-pole tasks and
//! tested under four channels of uncertainty: observation noise, actuation
//! noise, per-step dynamics noise and per-episode domain shift. The numeric
//! core is generic over [`Scalar`] (`f32`/`f64`); the aliases below fix it to
//! `f64`, which is what the harness uses.

pub mod envsim;
pub mod error;
pub mod eval;
pub mod harness;
pub mod perturb;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{BenchError, Result};
pub use scalar::Scalar;

pub type EnvContext = envsim::EnvContext<f64>;
pub type EnvSpec = envsim::EnvSpec<f64>;
pub type PerturbationPlan = perturb::PerturbationPlan<f64>;
pub type Trajectory = perturb::Trajectory<f64>;
pub type GaussianMlpPolicy = policy::GaussianPolicy<f64>;
pub type ValueNet = policy::ValueNet<f64>;
pub type RunningNormalizer = policy::RunningNormalizer<f64>;
pub type Agent = policy::Agent<f64>;
pub type PpoConfig = train::PpoConfig<f64>;
pub type TrainRecord = train::TrainRecord<f64>;
pub type SweepResult = eval::SweepResult<f64>;
pub type HeatmapResult = eval::HeatmapResult<f64>;

/// Single-precision variants.
pub type Agent32 = policy::Agent<f32>;
pub type GaussianMlpPolicy32 = policy::GaussianPolicy<f32>;
pub type EnvSpec32 = envsim::EnvSpec<f32>;
