//! Gaussian policies, value network, observation filter and checkpoints.
//!
//! Policies have a state-independent log-std vector and one of two mean
//! paths:
//!
//! * [`PolicyKind::Mlp`]: `mean = MLP(obs)`,
//! * [`PolicyKind::Scn`]: `mean = K·obs + b + MLP(obs)` (linear module plus
//!   nonlinear residual).
//!
//! All gradients are computed by hand over the fixed topology.

mod checkpoint;
mod mlp;
mod normalizer;

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use mlp::{orthogonal, MlpBatchCache, MlpCache, MlpShape};
pub use normalizer::RunningNormalizer;

use crate::error::{check_len, BenchError, Result};
use crate::rng::standard_normal;
use crate::scalar::{all_finite, norm, MatMut, MatRef, Scalar};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
const MEAN_HEAD_GAIN: f64 = 0.01;
const VALUE_HEAD_GAIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Mlp,
    Scn,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Mlp => "mlp",
            PolicyKind::Scn => "scn",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(PolicyKind::Mlp),
            "scn" => Ok(PolicyKind::Scn),
            other => Err(BenchError::InvalidArgument(format!("unknown policy kind `{other}`"))),
        }
    }
}

/// Topology descriptor: everything needed to rebuild an empty network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: PolicyKind,
    pub width: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl Topology {
    fn mean_shape(&self) -> MlpShape {
        MlpShape::new(vec![self.obs_dim, self.width, self.width, self.act_dim])
    }
}

/// Diagonal-Gaussian policy with a state-independent log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy<T> {
    topology: Topology,
    mean_net: MlpShape,
    params: Vec<T>,
}

/// Scratch buffers for policy forward/backward passes.
#[derive(Debug, Clone)]
pub struct PolicyCache<T> {
    mlp: MlpCache<T>,
    mean: Vec<T>,
    input: Vec<T>,
    d_input: Vec<T>,
}

impl<T: Scalar> PolicyCache<T> {
    /// Mean computed by the last forward pass.
    pub fn mean(&self) -> &[T] {
        &self.mean
    }
}

/// Scratch buffers for batched policy passes.
#[derive(Debug, Clone, Default)]
pub struct PolicyBatchCache<T> {
    mlp: MlpBatchCache<T>,
    mean: Vec<T>,
    inputs: Vec<T>,
}

impl<T: Scalar> PolicyBatchCache<T> {
    /// Row-major `batch × act_dim` means of the last forward pass.
    pub fn mean(&self) -> &[T] {
        &self.mean
    }
}

impl<T: Scalar> GaussianPolicy<T> {
    /// Orthogonal initialisation: gain √2 on hidden layers, 0.01 on the mean
    /// head (and on the SCN linear module), zero biases, zero log-std.
    pub fn new<R: Rng + ?Sized>(
        kind: PolicyKind,
        width: usize,
        obs_dim: usize,
        act_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut policy = Self::zeros(Topology {
            kind,
            width,
            obs_dim,
            act_dim,
        });
        let n_mlp = policy.mean_net.n_params();
        policy
            .mean_net
            .init_params(HIDDEN_GAIN, MEAN_HEAD_GAIN, rng, &mut policy.params[..n_mlp]);
        if kind == PolicyKind::Scn {
            let k = orthogonal(act_dim, obs_dim, MEAN_HEAD_GAIN, rng);
            let off = n_mlp;
            for j in 0..obs_dim {
                for i in 0..act_dim {
                    policy.params[off + j * act_dim + i] = T::lit(k[i * obs_dim + j]);
                }
            }
        }
        policy
    }

    /// All parameters zero (log-std 0).
    pub fn zeros(topology: Topology) -> Self {
        assert!(topology.obs_dim >= 1 && topology.act_dim >= 1 && topology.width >= 1);
        let mean_net = topology.mean_shape();
        let n = mean_net.n_params()
            + match topology.kind {
                PolicyKind::Mlp => 0,
                PolicyKind::Scn => topology.obs_dim * topology.act_dim + topology.act_dim,
            }
            + topology.act_dim;
        GaussianPolicy {
            topology,
            mean_net,
            params: vec![T::zero(); n],
        }
    }

    pub fn from_params(topology: Topology, params: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(topology);
        check_len("policy parameters", p.params.len(), params.len())?;
        p.params = params;
        p.clamp_log_std();
        Ok(p)
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn kind(&self) -> PolicyKind {
        self.topology.kind
    }

    pub fn obs_dim(&self) -> usize {
        self.topology.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.topology.act_dim
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable flat parameters. Call [`Self::clamp_log_std`] after editing.
    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn linear_offset(&self) -> usize {
        self.mean_net.n_params()
    }

    fn log_std_offset(&self) -> usize {
        self.params.len() - self.topology.act_dim
    }

    pub fn log_std(&self) -> &[T] {
        &self.params[self.log_std_offset()..]
    }

    pub fn std(&self) -> Vec<T> {
        self.log_std().iter().map(|l| l.exp()).collect()
    }

    pub fn set_log_std(&mut self, value: T) {
        let off = self.log_std_offset();
        self.params[off..].iter_mut().for_each(|l| *l = value);
        self.clamp_log_std();
    }

    /// Restores the log-std invariant `[−5, 2]`.
    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        let off = self.log_std_offset();
        for l in &mut self.params[off..] {
            *l = l.max(lo).min(hi);
        }
    }

    /// Zeroes the residual MLP's output layer (weights and bias).
    pub fn zero_residual_output(&mut self) {
        let range = self.mean_net.output_weight_range();
        let end = range.end + self.topology.act_dim;
        self.params[range.start..end].iter_mut().for_each(|p| *p = T::zero());
    }

    pub fn new_cache(&self) -> PolicyCache<T> {
        PolicyCache {
            mlp: self.mean_net.new_cache(),
            mean: vec![T::zero(); self.topology.act_dim],
            input: vec![T::zero(); self.topology.obs_dim],
            d_input: vec![T::zero(); self.topology.obs_dim],
        }
    }

    /// Forward pass of the mean path into `cache`.
    pub fn forward(&self, obs: &[T], cache: &mut PolicyCache<T>) {
        let act = self.topology.act_dim;
        let n_mlp = self.mean_net.n_params();
        cache.input.copy_from_slice(obs);
        self.mean_net.forward(&self.params[..n_mlp], obs, &mut cache.mlp);
        cache.mean.copy_from_slice(cache.mlp.output());
        if self.topology.kind == PolicyKind::Scn {
            let off = self.linear_offset();
            let k = &self.params[off..off + self.topology.obs_dim * act];
            let b = &self.params[off + self.topology.obs_dim * act..off + self.topology.obs_dim * act + act];
            for i in 0..act {
                cache.mean[i] += b[i];
            }
            for (j, &x) in obs.iter().enumerate() {
                for i in 0..act {
                    cache.mean[i] += k[j * act + i] * x;
                }
            }
        }
    }

    /// Backward pass for the forward pass stored in `cache`.
    ///
    /// Accumulates parameter gradients for upstream `∂L/∂mean` and
    /// `∂L/∂log_std` into `grads`; writes `∂L/∂obs` into `d_obs` if given.
    pub fn backward(
        &self,
        cache: &mut PolicyCache<T>,
        d_mean: &[T],
        d_log_std: &[T],
        grads: &mut [T],
        d_obs: Option<&mut [T]>,
    ) {
        let act = self.topology.act_dim;
        let obs_dim = self.topology.obs_dim;
        let n_mlp = self.mean_net.n_params();
        let want_dx = d_obs.is_some();
        self.mean_net.backward(
            &self.params[..n_mlp],
            &mut cache.mlp,
            d_mean,
            &mut grads[..n_mlp],
            if want_dx { Some(&mut cache.d_input[..]) } else { None },
        );
        if self.topology.kind == PolicyKind::Scn {
            let off = self.linear_offset();
            for (j, &x) in cache.input.iter().enumerate() {
                for i in 0..act {
                    grads[off + j * act + i] += x * d_mean[i];
                }
            }
            for i in 0..act {
                grads[off + obs_dim * act + i] += d_mean[i];
            }
            if want_dx {
                let k = &self.params[off..off + obs_dim * act];
                for j in 0..obs_dim {
                    for i in 0..act {
                        cache.d_input[j] += k[j * act + i] * d_mean[i];
                    }
                }
            }
        }
        let ls = self.log_std_offset();
        for (g, &d) in grads[ls..].iter_mut().zip(d_log_std) {
            *g += d;
        }
        if let Some(dx) = d_obs {
            dx.copy_from_slice(&cache.d_input);
        }
    }

    /// Means for `batch` observations stored row-major in `inputs`.
    pub fn forward_batch(&self, inputs: &[T], batch: usize, cache: &mut PolicyBatchCache<T>) {
        let (obs_dim, act) = (self.topology.obs_dim, self.topology.act_dim);
        let n_mlp = self.mean_net.n_params();
        self.mean_net.forward_batch(&self.params[..n_mlp], inputs, batch, &mut cache.mlp);
        cache.mean.clear();
        cache.mean.extend_from_slice(cache.mlp.output());
        if self.topology.kind == PolicyKind::Scn {
            cache.inputs.clear();
            cache.inputs.extend_from_slice(inputs);
            let off = self.linear_offset();
            let k = &self.params[off..off + obs_dim * act];
            let b = &self.params[off + obs_dim * act..off + obs_dim * act + act];
            for row in cache.mean.chunks_exact_mut(act) {
                for (m, &bi) in row.iter_mut().zip(b) {
                    *m += bi;
                }
            }
            T::gemm(
                MatRef::new(inputs, batch, obs_dim),
                MatRef::new(k, obs_dim, act),
                T::one(),
                MatMut::new(&mut cache.mean, batch, act),
            );
        }
    }

    /// Batched [`Self::backward`]: `d_mean` is row-major `batch × act_dim`,
    /// `d_log_std` is already summed over the batch.
    pub fn backward_batch(&self, cache: &mut PolicyBatchCache<T>, d_mean: &[T], d_log_std: &[T], grads: &mut [T]) {
        let (obs_dim, act) = (self.topology.obs_dim, self.topology.act_dim);
        let n_mlp = self.mean_net.n_params();
        let batch = cache.mlp.batch();
        self.mean_net
            .backward_batch(&self.params[..n_mlp], &mut cache.mlp, d_mean, &mut grads[..n_mlp], None);
        if self.topology.kind == PolicyKind::Scn {
            let off = self.linear_offset();
            let (gk, rest) = grads[off..].split_at_mut(obs_dim * act);
            T::gemm(
                MatRef::new(&cache.inputs, batch, obs_dim).t(),
                MatRef::new(d_mean, batch, act),
                T::one(),
                MatMut::new(gk, obs_dim, act),
            );
            for row in d_mean.chunks_exact(act) {
                for (g, &d) in rest[..act].iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let ls = self.log_std_offset();
        for (g, &d) in grads[ls..].iter_mut().zip(d_log_std) {
            *g += d;
        }
    }

    /// Exact parameter gradients of `d_mean·mean(obs) + d_log_std·log_std`.
    pub fn backprop(&self, obs: &[T], d_mean: &[T], d_log_std: &[T]) -> Result<Vec<T>> {
        check_len("observation", self.obs_dim(), obs.len())?;
        check_len("mean gradient", self.act_dim(), d_mean.len())?;
        check_len("log-std gradient", self.act_dim(), d_log_std.len())?;
        let mut cache = self.new_cache();
        let mut grads = vec![T::zero(); self.n_params()];
        self.forward(obs, &mut cache);
        self.backward(&mut cache, d_mean, d_log_std, &mut grads, None);
        Ok(grads)
    }

    /// Deterministic action: the Gaussian mean.
    pub fn mean_action(&self, obs: &[T]) -> Result<Vec<T>> {
        check_len("observation", self.obs_dim(), obs.len())?;
        if !all_finite(obs) {
            return Err(BenchError::NonFinite("policy input"));
        }
        let mut cache = self.new_cache();
        self.forward(obs, &mut cache);
        Ok(cache.mean)
    }

    /// `mean + std ⊙ z` with its diagonal-Gaussian log density.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[T], rng: &mut R) -> (Vec<T>, T) {
        let mut cache = self.new_cache();
        self.forward(obs, &mut cache);
        self.sample_from_mean(&cache.mean, rng)
    }

    /// Samples around an already computed mean.
    pub fn sample_from_mean<R: Rng + ?Sized>(&self, mean: &[T], rng: &mut R) -> (Vec<T>, T) {
        let action: Vec<T> = mean
            .iter()
            .zip(self.log_std())
            .map(|(&m, &ls)| m + ls.exp() * standard_normal::<T, _>(rng))
            .collect();
        let lp = gaussian_log_prob(mean, self.log_std(), &action);
        (action, lp)
    }

    pub fn log_prob(&self, obs: &[T], action: &[T]) -> T {
        let mut cache = self.new_cache();
        self.forward(obs, &mut cache);
        gaussian_log_prob(&cache.mean, self.log_std(), action)
    }

    /// `(log π(action | obs), H[π(· | obs)])`.
    pub fn log_prob_and_entropy(&self, obs: &[T], action: &[T]) -> (T, T) {
        (self.log_prob(obs, action), self.entropy())
    }

    /// `Σᵢ (log σᵢ + ½·log 2πe)`; independent of the observation.
    pub fn entropy(&self) -> T {
        gaussian_entropy(self.log_std())
    }

    /// `∇_obs ‖mean(obs)‖`; the zero vector where the mean is exactly zero.
    pub fn grad_obs_action_norm(&self, obs: &[T]) -> Vec<T> {
        let mut cache = self.new_cache();
        let mut out = vec![T::zero(); self.obs_dim()];
        self.grad_obs_action_norm_into(obs, &mut cache, &mut out);
        out
    }

    pub fn grad_obs_action_norm_into(&self, obs: &[T], cache: &mut PolicyCache<T>, out: &mut [T]) {
        self.forward(obs, cache);
        let n = norm(&cache.mean);
        if n == T::zero() {
            out.iter_mut().for_each(|o| *o = T::zero());
            return;
        }
        let d_mean: Vec<T> = cache.mean.iter().map(|&m| m / n).collect();
        let zeros = vec![T::zero(); self.act_dim()];
        // parameter gradients are discarded
        let mut scratch = vec![T::zero(); self.n_params()];
        self.backward(cache, &d_mean, &zeros, &mut scratch, Some(out));
    }
}

/// Diagonal-Gaussian log density.
pub fn gaussian_log_prob<T: Scalar>(mean: &[T], log_std: &[T], x: &[T]) -> T {
    let half_log_2pi = T::lit(0.5 * (2.0 * PI).ln());
    let mut lp = T::zero();
    for ((&m, &ls), &a) in mean.iter().zip(log_std).zip(x) {
        let z = (a - m) / ls.exp();
        lp -= T::lit(0.5) * z * z + ls + half_log_2pi;
    }
    lp
}

/// Diagonal-Gaussian differential entropy.
pub fn gaussian_entropy<T: Scalar>(log_std: &[T]) -> T {
    let c = T::lit(0.5 * (2.0 * PI * E).ln());
    log_std.iter().map(|&ls| ls + c).sum()
}

/// Two-hidden-layer tanh MLP with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet<T> {
    shape: MlpShape,
    params: Vec<T>,
}

impl<T: Scalar> ValueNet<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, obs_dim: usize, rng: &mut R) -> Self {
        let shape = MlpShape::new(vec![obs_dim, width, width, 1]);
        let mut params = vec![T::zero(); shape.n_params()];
        shape.init_params(HIDDEN_GAIN, VALUE_HEAD_GAIN, rng, &mut params);
        ValueNet { shape, params }
    }

    pub fn from_params(width: usize, obs_dim: usize, params: Vec<T>) -> Result<Self> {
        let shape = MlpShape::new(vec![obs_dim, width, width, 1]);
        check_len("value parameters", shape.n_params(), params.len())?;
        Ok(ValueNet { shape, params })
    }

    pub fn obs_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn new_cache(&self) -> MlpCache<T> {
        self.shape.new_cache()
    }

    pub fn forward(&self, obs: &[T], cache: &mut MlpCache<T>) -> T {
        self.shape.forward(&self.params, obs, cache);
        cache.output()[0]
    }

    pub fn value(&self, obs: &[T]) -> T {
        let mut cache = self.new_cache();
        self.forward(obs, &mut cache)
    }

    /// Values for `batch` observations stored row-major in `inputs`.
    pub fn forward_batch<'c>(&self, inputs: &[T], batch: usize, cache: &'c mut MlpBatchCache<T>) -> &'c [T] {
        self.shape.forward_batch(&self.params, inputs, batch, cache);
        cache.output()
    }

    /// Accumulates `Σᵢ d_values[i] · ∂V(xᵢ)/∂params` for the batched pass in `cache`.
    pub fn backward_batch(&self, cache: &mut MlpBatchCache<T>, d_values: &[T], grads: &mut [T]) {
        self.shape.backward_batch(&self.params, cache, d_values, grads, None);
    }

    /// Accumulates `d_value · ∂V/∂params` for the pass stored in `cache`.
    pub fn backward(&self, cache: &mut MlpCache<T>, d_value: T, grads: &mut [T]) {
        self.shape.backward(&self.params, cache, &[d_value], grads, None);
    }

    pub fn backprop(&self, obs: &[T], d_value: T) -> Result<Vec<T>> {
        check_len("observation", self.obs_dim(), obs.len())?;
        let mut cache = self.new_cache();
        let mut grads = vec![T::zero(); self.n_params()];
        self.forward(obs, &mut cache);
        self.backward(&mut cache, d_value, &mut grads);
        Ok(grads)
    }
}

/// Policy, value function and observation filter trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent<T> {
    pub policy: GaussianPolicy<T>,
    pub value: ValueNet<T>,
    pub normalizer: RunningNormalizer<T>,
}

impl<T: Scalar> Agent<T> {
    /// Freshly initialised agent; the value net uses the policy's width.
    pub fn new<R: Rng + ?Sized>(
        kind: PolicyKind,
        width: usize,
        obs_dim: usize,
        act_dim: usize,
        rng: &mut R,
    ) -> Self {
        let policy = GaussianPolicy::new(kind, width, obs_dim, act_dim, rng);
        let value = ValueNet::new(width, obs_dim, rng);
        Agent {
            policy,
            value,
            normalizer: RunningNormalizer::new(obs_dim),
        }
    }

    pub fn topology(&self) -> Topology {
        self.policy.topology()
    }
}
