//! PPO with GAE and the training-side robustness variants.
//!
//! Variants are expressed through [`PpoConfig`]: a positive `entropy_coef`
//! gives the entropy-regularised learner, a positive `arpl_epsilon` enables
//! adversarial observation shifts, a `dom` training plan gives multi-domain
//! learning, and `obs`/`act`/`env` plans train under noise.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{EnvContext, EnvSpec};
use crate::error::{check_len, BenchError, Result};
use crate::perturb::{rollout_with, ActionMode, PerturbationPlan, RolloutOptions, Trajectory};
use crate::policy::{gaussian_log_prob, Agent, RunningNormalizer, GaussianPolicy, MlpBatchCache, PolicyBatchCache, PolicyKind, ValueNet};
use crate::rng::derive_stream;
use crate::scalar::Scalar;

/// PPO hyperparameters plus the variant switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig<T> {
    pub steps_per_batch: usize,
    pub epochs_per_iter: usize,
    pub minibatch_size: usize,
    pub learning_rate: T,
    pub gae_lambda: T,
    pub discount: T,
    pub clip_range: T,
    pub total_steps: usize,
    pub entropy_coef: T,
    pub arpl_epsilon: T,
    pub value_coef: T,
    /// Linearly decay the learning rate to zero over training.
    pub lr_anneal: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<T>,
    /// Divide rewards by the running std of the discounted return before
    /// computing advantages (reported returns stay raw).
    pub reward_scaling: bool,
    pub policy_kind: PolicyKind,
    pub hidden_width: usize,
    pub train_plan: PerturbationPlan<T>,
}

/// Entropy coefficient of the entropy-regularised variant.
pub const DEFAULT_ENTROPY_COEF: f64 = 0.001;
/// Adversarial step size on normalised observations.
pub const DEFAULT_ARPL_EPSILON: f64 = 0.05;

impl<T: Scalar> Default for PpoConfig<T> {
    fn default() -> Self {
        PpoConfig {
            steps_per_batch: 2048,
            epochs_per_iter: 10,
            minibatch_size: 64,
            learning_rate: T::lit(3e-4),
            gae_lambda: T::lit(0.98),
            discount: T::lit(0.99),
            clip_range: T::lit(0.2),
            total_steps: 200_000,
            entropy_coef: T::zero(),
            arpl_epsilon: T::zero(),
            value_coef: T::lit(0.5),
            lr_anneal: false,
            max_grad_norm: None,
            reward_scaling: true,
            policy_kind: PolicyKind::Mlp,
            hidden_width: 64,
            train_plan: PerturbationPlan::none(),
        }
    }
}

impl<T: Scalar> PpoConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::InvalidArgument(msg));
        if self.steps_per_batch == 0
            || self.epochs_per_iter == 0
            || self.minibatch_size == 0
            || self.total_steps == 0
            || self.hidden_width == 0
        {
            return bad("batch, epoch, minibatch, width and step counts must be positive".into());
        }
        if self.steps_per_batch % self.minibatch_size != 0 {
            return bad(format!(
                "minibatch_size {} does not divide steps_per_batch {}",
                self.minibatch_size, self.steps_per_batch
            ));
        }
        if self.total_steps < self.steps_per_batch {
            return bad(format!(
                "total_steps {} is smaller than one batch ({})",
                self.total_steps, self.steps_per_batch
            ));
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("gae_lambda", self.gae_lambda),
            ("discount", self.discount),
            ("clip_range", self.clip_range),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.gae_lambda > T::one() || self.discount > T::one() {
            return bad("gae_lambda and discount must not exceed 1".into());
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("arpl_epsilon", self.arpl_epsilon),
            ("value_coef", self.value_coef),
        ] {
            if v < T::zero() || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > T::zero()) {
                return bad("max_grad_norm must be positive".into());
            }
        }
        self.train_plan.validate()
    }

    pub fn iterations(&self) -> usize {
        self.total_steps / self.steps_per_batch
    }
}

/// Generalised advantage estimates and value targets for one trajectory.
///
/// `values` holds `V(s_0..s_T)`: one entry per reward plus the bootstrap
/// value, which is ignored (treated as 0) when `terminal` is set.
pub fn compute_gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    terminal: bool,
    discount: T,
    lambda: T,
) -> Result<(Vec<T>, Vec<T>)> {
    check_len("values (rewards + 1)", rewards.len() + 1, values.len())?;
    let n = rewards.len();
    let mut adv = vec![T::zero(); n];
    let mut next_adv = T::zero();
    for t in (0..n).rev() {
        let next_value = if t + 1 == n && terminal { T::zero() } else { values[t + 1] };
        let delta = rewards[t] + discount * next_value - values[t];
        next_adv = delta + discount * lambda * next_adv;
        adv[t] = next_adv;
    }
    let targets = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    Ok((adv, targets))
}

/// Adam optimiser state (β₁ = 0.9, β₂ = 0.999, ε = 1e-8, bias-corrected).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) -> Result<()> {
        check_len("adam parameters", self.m.len(), params.len())?;
        check_len("adam gradients", self.m.len(), grads.len())?;
        self.t += 1;
        let (b1, b2) = (T::lit(Self::BETA1), T::lit(Self::BETA2));
        let eps = T::lit(Self::EPS);
        let bc1 = T::one() - b1.powi(self.t as i32);
        let bc2 = T::one() - b2.powi(self.t as i32);
        let step = lr / bc1;
        let one = T::one();
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            params[i] -= step * self.m[i] / ((self.v[i] / bc2).sqrt() + eps);
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::step`].
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut Adam<T>, lr: T) -> Result<()> {
    state.step(params, grads, lr)
}

/// `obs + ε·∇_obs ‖mean(obs)‖`.
pub fn apply_arpl<T: Scalar>(obs: &[T], policy: &GaussianPolicy<T>, epsilon: T) -> Vec<T> {
    if epsilon == T::zero() {
        return obs.to_vec();
    }
    let g = policy.grad_obs_action_norm(obs);
    obs.iter().zip(&g).map(|(&x, &gi)| x + epsilon * gi).collect()
}

/// Flattened on-policy samples for one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch<T> {
    /// Policy inputs (normalised observations).
    pub obs: Vec<Vec<T>>,
    pub actions: Vec<Vec<T>>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub value_targets: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Concatenates trajectories, computing GAE per trajectory.
    pub fn from_trajectories(trajs: &[Trajectory<T>], discount: T, lambda: T) -> Result<Self> {
        Self::from_scaled_trajectories(trajs, discount, lambda, T::one())
    }

    /// As [`Self::from_trajectories`] with every reward multiplied by `reward_scale`.
    pub fn from_scaled_trajectories(trajs: &[Trajectory<T>], discount: T, lambda: T, reward_scale: T) -> Result<Self> {
        let mut b = Batch::default();
        for t in trajs {
            let mut values = t.values.clone();
            values.push(t.bootstrap_value);
            let rewards: Vec<T> = t.rewards.iter().map(|&r| r * reward_scale).collect();
            let (adv, targets) = compute_gae(&rewards, &values, t.terminated, discount, lambda)?;
            b.obs.extend(t.policy_inputs.iter().cloned());
            b.actions.extend(t.actions.iter().cloned());
            b.old_log_probs.extend_from_slice(&t.log_probs);
            b.advantages.extend(adv);
            b.value_targets.extend(targets);
        }
        Ok(b)
    }

    /// Shifts and scales advantages to zero mean and unit (population) std.
    pub fn normalize_advantages(&mut self) {
        let n = T::from_usize_lossy(self.advantages.len());
        if self.advantages.len() < 2 {
            return;
        }
        let mean = self.advantages.iter().copied().sum::<T>() / n;
        let var = self.advantages.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
        let std = var.sqrt() + T::lit(1e-8);
        for a in &mut self.advantages {
            *a = (*a - mean) / std;
        }
    }
}

/// Loss components averaged over a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms<T> {
    /// `−E[min(ρA, clip(ρ, 1 ± ε)A)]`
    pub surrogate: T,
    /// `E[(V − target)²]`
    pub value_loss: T,
    pub entropy: T,
    /// `surrogate + value_coef·value_loss − entropy_coef·entropy`
    pub total: T,
    pub clip_fraction: T,
    pub approx_kl: T,
}

/// Loss and exact gradients over the samples `idx` of `batch`.
///
/// Gradients are accumulated into `policy_grads` / `value_grads`, which the
/// caller zeroes.
pub fn ppo_loss_and_grads<T: Scalar>(
    policy: &GaussianPolicy<T>,
    value: &ValueNet<T>,
    batch: &Batch<T>,
    idx: &[usize],
    config: &PpoConfig<T>,
    policy_grads: &mut [T],
    value_grads: &mut [T],
) -> LossTerms<T> {
    let act = policy.act_dim();
    let obs_dim = policy.obs_dim();
    let m = idx.len();
    let inv_n = T::one() / T::from_usize_lossy(m);
    let log_std = policy.log_std().to_vec();
    let inv_var: Vec<T> = log_std.iter().map(|&l| (-(l + l)).exp()).collect();
    let lo = T::one() - config.clip_range;
    let hi = T::one() + config.clip_range;

    let mut inputs = Vec::with_capacity(m * obs_dim);
    for &i in idx {
        inputs.extend_from_slice(&batch.obs[i]);
    }
    let mut pcache = PolicyBatchCache::default();
    policy.forward_batch(&inputs, m, &mut pcache);

    let mut d_mean = vec![T::zero(); m * act];
    let mut d_log_std = vec![T::zero(); act];
    let mut surrogate = T::zero();
    let mut clipped = 0usize;
    let mut approx_kl = T::zero();
    for (r, &i) in idx.iter().enumerate() {
        let action = &batch.actions[i];
        let adv = batch.advantages[i];
        let mean = &pcache.mean()[r * act..(r + 1) * act];
        let log_prob = gaussian_log_prob(mean, &log_std, action);
        let log_ratio = log_prob - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let unclipped = ratio * adv;
        let clipped_ratio = ratio.max(lo).min(hi);
        let clipped_obj = clipped_ratio * adv;
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        approx_kl += (ratio - T::one()) - log_ratio;
        // d(min(ρA, clip(ρ)A))/d log π: ρA on the active unclipped branch, 0 on
        // a saturated clip.
        let d_obj_d_logp = if unclipped <= clipped_obj || (ratio >= lo && ratio <= hi) {
            surrogate -= unclipped;
            unclipped
        } else {
            surrogate -= clipped_obj;
            T::zero()
        };
        let upstream = -d_obj_d_logp * inv_n;
        for j in 0..act {
            let diff = action[j] - mean[j];
            d_mean[r * act + j] = upstream * diff * inv_var[j];
            d_log_std[j] += upstream * (diff * diff * inv_var[j] - T::one());
        }
    }
    policy.backward_batch(&mut pcache, &d_mean, &d_log_std, policy_grads);

    let mut vcache = MlpBatchCache::default();
    let values = value.forward_batch(&inputs, m, &mut vcache).to_vec();
    let mut value_loss = T::zero();
    let two = T::lit(2.0);
    let d_values: Vec<T> = values
        .iter()
        .zip(idx)
        .map(|(&v, &i)| {
            let err = v - batch.value_targets[i];
            value_loss += err * err;
            config.value_coef * two * err * inv_n
        })
        .collect();
    value.backward_batch(&mut vcache, &d_values, value_grads);

    // entropy term is state independent: −c·Σ(log σ + const)
    let entropy = crate::policy::gaussian_entropy(&log_std);
    let ls_off = policy.n_params() - act;
    for g in &mut policy_grads[ls_off..] {
        *g -= config.entropy_coef;
    }

    let surrogate = surrogate * inv_n;
    let value_loss = value_loss * inv_n;
    LossTerms {
        surrogate,
        value_loss,
        entropy,
        total: surrogate + config.value_coef * value_loss - config.entropy_coef * entropy,
        clip_fraction: T::from_usize_lossy(clipped) * inv_n,
        approx_kl: approx_kl * inv_n,
    }
}

/// Optimiser state carried across updates.
#[derive(Debug, Clone)]
pub struct PpoOptimizer<T> {
    pub policy: Adam<T>,
    pub value: Adam<T>,
}

impl<T: Scalar> PpoOptimizer<T> {
    pub fn new(policy: &GaussianPolicy<T>, value: &ValueNet<T>) -> Self {
        PpoOptimizer {
            policy: Adam::new(policy.n_params()),
            value: Adam::new(value.n_params()),
        }
    }
}

/// Averages of [`LossTerms`] over every minibatch of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats<T> {
    pub policy_loss: T,
    pub value_loss: T,
    pub entropy: T,
    pub clip_fraction: T,
    pub approx_kl: T,
    pub minibatches: usize,
}

/// Clipped-surrogate update: `epochs_per_iter` passes of shuffled
/// minibatches, one Adam step each.
///
/// Advantages are expected to be normalised already.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<T: Scalar, R: Rng + ?Sized>(
    batch: &Batch<T>,
    policy: &mut GaussianPolicy<T>,
    value: &mut ValueNet<T>,
    optimizer: &mut PpoOptimizer<T>,
    config: &PpoConfig<T>,
    learning_rate: T,
    rng: &mut R,
) -> Result<UpdateStats<T>> {
    if batch.is_empty() {
        return Err(BenchError::InvalidArgument("empty batch".into()));
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut pg = vec![T::zero(); policy.n_params()];
    let mut vg = vec![T::zero(); value.n_params()];
    let mut acc = UpdateStats::default();
    for _ in 0..config.epochs_per_iter {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch_size) {
            pg.iter_mut().for_each(|g| *g = T::zero());
            vg.iter_mut().for_each(|g| *g = T::zero());
            let terms = ppo_loss_and_grads(policy, value, batch, idx, config, &mut pg, &mut vg);
            if !terms.total.is_finite() {
                return Err(BenchError::NonFinite("ppo loss"));
            }
            if let Some(max) = config.max_grad_norm {
                let sq: T = pg.iter().chain(vg.iter()).map(|&g| g * g).sum();
                let n = sq.sqrt();
                if n > max {
                    let s = max / n;
                    pg.iter_mut().chain(vg.iter_mut()).for_each(|g| *g *= s);
                }
            }
            optimizer.policy.step(policy.params_mut(), &pg, learning_rate)?;
            policy.clamp_log_std();
            optimizer.value.step(value.params_mut(), &vg, learning_rate)?;
            acc.policy_loss += terms.surrogate;
            acc.value_loss += terms.value_loss;
            acc.entropy += terms.entropy;
            acc.clip_fraction += terms.clip_fraction;
            acc.approx_kl += terms.approx_kl;
            acc.minibatches += 1;
        }
    }
    let k = T::from_usize_lossy(acc.minibatches);
    acc.policy_loss /= k;
    acc.value_loss /= k;
    acc.entropy /= k;
    acc.clip_fraction /= k;
    acc.approx_kl /= k;
    Ok(acc)
}

/// Collects at least `config.steps_per_batch` steps with the stochastic
/// policy; the last episode is cut at the budget and bootstrapped.
pub fn collect_batch<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    config: &PpoConfig<T>,
    rng: &mut R,
) -> Result<Vec<Trajectory<T>>> {
    let mut trajs = Vec::new();
    let mut steps = 0;
    while steps < config.steps_per_batch {
        let opts = RolloutOptions {
            mode: ActionMode::Stochastic,
            arpl_epsilon: config.arpl_epsilon,
            max_steps: Some(config.steps_per_batch - steps),
        };
        let t = rollout_with(agent, spec, &spec.nominal, &config.train_plan, rng, &opts)?;
        steps += t.len();
        trajs.push(t);
    }
    Ok(trajs)
}

/// Per-iteration training curves plus the final agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord<T> {
    pub seed: u64,
    pub mean_returns: Vec<T>,
    pub mean_episode_lengths: Vec<T>,
    pub policy_loss: Vec<T>,
    pub value_loss: Vec<T>,
    pub entropy: Vec<T>,
    pub clip_fraction: Vec<T>,
    /// Context of the first step of every collected episode, in order.
    pub episode_contexts: Vec<EnvContext<T>>,
    pub agent: Agent<T>,
}

impl<T: Scalar> TrainRecord<T> {
    pub fn iterations(&self) -> usize {
        self.mean_returns.len()
    }

    /// Mean training return over the final 10% of iterations (at least one).
    pub fn training_return(&self) -> T {
        trailing_mean(&self.mean_returns, 0.1)
    }
}

/// Mean of the last `fraction` of `xs` (at least one element).
pub fn trailing_mean<T: Scalar>(xs: &[T], fraction: f64) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    let k = ((xs.len() as f64 * fraction).ceil() as usize).clamp(1, xs.len());
    xs[xs.len() - k..].iter().copied().sum::<T>() / T::from_usize_lossy(k)
}

/// Mean of the first `fraction` of `xs` (at least one element).
pub fn leading_mean<T: Scalar>(xs: &[T], fraction: f64) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    let k = ((xs.len() as f64 * fraction).ceil() as usize).clamp(1, xs.len());
    xs[..k].iter().copied().sum::<T>() / T::from_usize_lossy(k)
}

/// Stream indices derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_COLLECT: u64 = 1;
const STREAM_UPDATE: u64 = 2;

/// Full PPO run; the result is a pure function of `(spec, config, seed)`.
pub fn train<T: Scalar>(spec: &EnvSpec<T>, config: &PpoConfig<T>, seed: u64) -> Result<TrainRecord<T>> {
    config.validate()?;
    spec.nominal.validate()?;
    let mut init_rng = derive_stream(seed, STREAM_INIT);
    let mut collect_rng = derive_stream(seed, STREAM_COLLECT);
    let mut update_rng = derive_stream(seed, STREAM_UPDATE);

    let mut agent = Agent::new(
        config.policy_kind,
        config.hidden_width,
        spec.obs_dim,
        spec.action_dim,
        &mut init_rng,
    );
    let mut optimizer = PpoOptimizer::new(&agent.policy, &agent.value);
    let iterations = config.iterations();
    let mut return_stats = RunningNormalizer::new(1);
    let mut rec = TrainRecord {
        seed,
        mean_returns: Vec::with_capacity(iterations),
        mean_episode_lengths: Vec::with_capacity(iterations),
        policy_loss: Vec::with_capacity(iterations),
        value_loss: Vec::with_capacity(iterations),
        entropy: Vec::with_capacity(iterations),
        clip_fraction: Vec::with_capacity(iterations),
        episode_contexts: Vec::new(),
        agent: agent.clone(),
    };

    for it in 0..iterations {
        let diverged = |reason: String| BenchError::TrainingDiverged { iteration: it, reason };
        let trajs = collect_batch(&agent, spec, config, &mut collect_rng).map_err(|e| diverged(e.to_string()))?;

        let complete: Vec<&Trajectory<T>> = trajs.iter().filter(|t| !t.truncated).collect();
        let counted: Vec<&Trajectory<T>> = if complete.is_empty() {
            trajs.iter().collect()
        } else {
            complete
        };
        let k = T::from_usize_lossy(counted.len());
        rec.mean_returns.push(counted.iter().map(|t| t.total_return).sum::<T>() / k);
        rec.mean_episode_lengths
            .push(counted.iter().map(|t| T::from_usize_lossy(t.len())).sum::<T>() / k);
        rec.episode_contexts.extend(trajs.iter().map(|t| t.contexts[0]));

        let reward_scale = if config.reward_scaling {
            for t in &trajs {
                let mut ret = T::zero();
                for &r in &t.rewards {
                    ret = config.discount * ret + r;
                    return_stats.observe(&[ret]);
                }
            }
            T::one() / (return_stats.variance()[0] + T::lit(1e-8)).sqrt()
        } else {
            T::one()
        };
        let mut batch = Batch::from_scaled_trajectories(&trajs, config.discount, config.gae_lambda, reward_scale)?;
        batch.normalize_advantages();
        agent
            .normalizer
            .update(trajs.iter().flat_map(|t| t.observations.iter().map(|o| &o[..])));

        let lr = if config.lr_anneal {
            config.learning_rate * (T::one() - T::from_usize_lossy(it) / T::from_usize_lossy(iterations))
        } else {
            config.learning_rate
        };
        let stats = ppo_update(
            &batch,
            &mut agent.policy,
            &mut agent.value,
            &mut optimizer,
            config,
            lr,
            &mut update_rng,
        )
        .map_err(|e| diverged(e.to_string()))?;
        rec.policy_loss.push(stats.policy_loss);
        rec.value_loss.push(stats.value_loss);
        rec.entropy.push(stats.entropy);
        rec.clip_fraction.push(stats.clip_fraction);
    }
    rec.agent = agent;
    Ok(rec)
}
