//! The four uncertainty channels and the rollout loop.
//!
//! * `obs`: Gaussian noise added to observations in raw units,
//! * `act`: Gaussian noise on actions, scaled by the action bound, then clamped,
//! * `env`: dynamics parameters resampled multiplicatively at every step,
//! * `dom`: dynamics parameters resampled once per episode.
//!
//! Process noise on the next state is driven by `EnvContext::noise_proc`.
//! Every injection draws no random numbers when its scale is zero, so a
//! zero-scale plan reproduces the unperturbed trajectory bit for bit.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{self, ContextParam, EnvContext, EnvKind, EnvSpec};
use crate::error::{BenchError, Result};
use crate::policy::{Agent, PolicyCache};
use crate::rng::standard_normal;
use crate::scalar::{all_finite, Scalar};

/// Lower bound on the multiplicative factor applied to a varied parameter.
pub const MIN_MULTIPLIER: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    None,
    Obs,
    Act,
    Env,
    Dom,
}

impl Channel {
    pub const TEST_CHANNELS: [Channel; 4] = [Channel::Obs, Channel::Act, Channel::Env, Channel::Dom];

    pub fn name(self) -> &'static str {
        match self {
            Channel::None => "none",
            Channel::Obs => "obs",
            Channel::Act => "act",
            Channel::Env => "env",
            Channel::Dom => "dom",
        }
    }

    pub fn varies_dynamics(self) -> bool {
        matches!(self, Channel::Env | Channel::Dom)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Channel::None),
            "obs" => Ok(Channel::Obs),
            "act" => Ok(Channel::Act),
            "env" => Ok(Channel::Env),
            "dom" => Ok(Channel::Dom),
            other => Err(BenchError::InvalidArgument(format!("unknown channel `{other}`"))),
        }
    }
}

/// When a context is being sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleWhen {
    TrialStart,
    EachStep,
}

/// Which channel is perturbed, how strongly, and which parameters vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan<T> {
    pub channel: Channel,
    pub scale: T,
    pub varied_params: Vec<ContextParam>,
}

/// Dynamics parameters varied by default for a task. Wind is excluded
/// because its nominal value is zero and perturbations are multiplicative.
pub fn default_varied_params(kind: EnvKind) -> Vec<ContextParam> {
    match kind {
        EnvKind::Pendulum => vec![
            ContextParam::MassPrimary,
            ContextParam::Length,
            ContextParam::Gravity,
            ContextParam::Friction,
        ],
        EnvKind::CartPole => vec![
            ContextParam::MassPrimary,
            ContextParam::MassSecondary,
            ContextParam::Length,
            ContextParam::Gravity,
            ContextParam::Friction,
        ],
    }
}

impl<T: Scalar> PerturbationPlan<T> {
    pub fn none() -> Self {
        PerturbationPlan {
            channel: Channel::None,
            scale: T::zero(),
            varied_params: Vec::new(),
        }
    }

    pub fn obs(scale: T) -> Self {
        PerturbationPlan {
            channel: Channel::Obs,
            scale,
            varied_params: Vec::new(),
        }
    }

    pub fn act(scale: T) -> Self {
        PerturbationPlan {
            channel: Channel::Act,
            scale,
            varied_params: Vec::new(),
        }
    }

    pub fn env(scale: T, varied_params: Vec<ContextParam>) -> Self {
        PerturbationPlan {
            channel: Channel::Env,
            scale,
            varied_params,
        }
    }

    pub fn dom(scale: T, varied_params: Vec<ContextParam>) -> Self {
        PerturbationPlan {
            channel: Channel::Dom,
            scale,
            varied_params,
        }
    }

    /// Plan for `channel` at `scale`, varying the task's default parameters
    /// when the channel touches dynamics.
    pub fn for_channel(channel: Channel, scale: T, kind: EnvKind) -> Self {
        let varied = if channel.varies_dynamics() {
            default_varied_params(kind)
        } else {
            Vec::new()
        };
        PerturbationPlan {
            channel,
            scale,
            varied_params: varied,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || self.scale < T::zero() {
            return Err(BenchError::InvalidArgument(format!(
                "perturbation scale must be finite and non-negative, got {}",
                self.scale
            )));
        }
        if self.channel.varies_dynamics() && self.varied_params.is_empty() {
            return Err(BenchError::InvalidArgument(format!(
                "channel `{}` needs at least one varied parameter",
                self.channel
            )));
        }
        Ok(())
    }

    /// Copy of `ctx` with the plan's observation/actuation noise scale set.
    pub fn noise_context(&self, ctx: &EnvContext<T>) -> EnvContext<T> {
        let mut out = *ctx;
        match self.channel {
            Channel::Obs => out.noise_obs = self.scale,
            Channel::Act => out.noise_act = self.scale,
            _ => {}
        }
        out
    }
}

/// Resamples the plan's varied parameters as `p·max(1 + ε, 0.05)`,
/// `ε ~ N(0, scale)`, when `when` matches the channel's schedule
/// (`dom` at trial start, `env` at every step). Otherwise returns `nominal`.
pub fn sample_context<T: Scalar, R: Rng + ?Sized>(
    nominal: &EnvContext<T>,
    plan: &PerturbationPlan<T>,
    rng: &mut R,
    when: SampleWhen,
) -> EnvContext<T> {
    let scheduled = matches!(
        (plan.channel, when),
        (Channel::Dom, SampleWhen::TrialStart) | (Channel::Env, SampleWhen::EachStep)
    );
    if !scheduled || plan.scale == T::zero() {
        return *nominal;
    }
    let mut ctx = *nominal;
    let floor = T::lit(MIN_MULTIPLIER);
    for &p in &plan.varied_params {
        let eps = plan.scale * standard_normal::<T, _>(rng);
        let factor = (T::one() + eps).max(floor);
        ctx.set(p, nominal.get(p) * factor);
    }
    ctx
}

/// `obs + N(0, σ_o)` per coordinate.
pub fn perturb_observation<T: Scalar, R: Rng + ?Sized>(obs: &mut [T], sigma: T, rng: &mut R) {
    if sigma > T::zero() {
        for o in obs {
            *o += sigma * standard_normal::<T, _>(rng);
        }
    }
}

/// Action plus `N(0, σ_u·bound)` per coordinate, before clamping.
pub fn noisy_action<T: Scalar, R: Rng + ?Sized>(action: &[T], sigma: T, rng: &mut R, bound: T) -> Vec<T> {
    let std = sigma * bound;
    action
        .iter()
        .map(|&a| if sigma > T::zero() { a + std * standard_normal::<T, _>(rng) } else { a })
        .collect()
}

/// `clamp(action + N(0, σ_u·bound), ±bound)`.
pub fn perturb_action<T: Scalar, R: Rng + ?Sized>(action: &[T], sigma: T, rng: &mut R, bound: T) -> Vec<T> {
    noisy_action(action, sigma, rng, bound)
        .into_iter()
        .map(|a| clamp(a, bound))
        .collect()
}

#[inline]
pub fn clamp<T: Scalar>(x: T, bound: T) -> T {
    x.max(-bound).min(bound)
}

/// `next_state + N(0, σ_s)` per coordinate.
pub fn perturb_state<T: Scalar, R: Rng + ?Sized>(state: &mut [T], sigma: T, rng: &mut R) {
    perturb_observation(state, sigma, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    /// Sample from the policy distribution (training).
    Stochastic,
    /// Use the Gaussian mean (evaluation).
    Deterministic,
}

/// Knobs of the rollout loop beyond the plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions<T> {
    pub mode: ActionMode,
    /// Step size of the adversarial observation perturbation; zero disables it.
    pub arpl_epsilon: T,
    /// Stop after this many steps even if the episode has not ended.
    pub max_steps: Option<usize>,
}

impl<T: Scalar> RolloutOptions<T> {
    pub fn new(mode: ActionMode) -> Self {
        RolloutOptions {
            mode,
            arpl_epsilon: T::zero(),
            max_steps: None,
        }
    }
}

/// One episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// Observations after observation noise, before normalisation.
    pub observations: Vec<Vec<T>>,
    /// What the policy saw: normalised and, in training, adversarially shifted.
    pub policy_inputs: Vec<Vec<T>>,
    pub actions: Vec<Vec<T>>,
    /// Commands executed by the simulator (noisy, clamped).
    pub commands: Vec<Vec<T>>,
    pub rewards: Vec<T>,
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    /// Dynamics context in force at each step.
    pub contexts: Vec<EnvContext<T>>,
    /// Ended by a failure condition (not by the time limit or step budget).
    pub terminated: bool,
    /// Cut short by `RolloutOptions::max_steps`.
    pub truncated: bool,
    /// Value of the final state when the episode did not terminate, else 0.
    pub bootstrap_value: T,
    pub total_return: T,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Rolls `agent` through one episode of `spec` under `plan`.
pub fn rollout<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    nominal: &EnvContext<T>,
    plan: &PerturbationPlan<T>,
    rng: &mut R,
    mode: ActionMode,
) -> Result<Trajectory<T>> {
    rollout_with(agent, spec, nominal, plan, rng, &RolloutOptions::new(mode))
}

/// [`rollout`] with explicit options.
///
/// Per step: observe, observation noise, normalise, optional adversarial
/// shift, act, actuation noise and clamp, dynamics under the step's context,
/// process noise, reward, termination check.
pub fn rollout_with<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    nominal: &EnvContext<T>,
    plan: &PerturbationPlan<T>,
    rng: &mut R,
    opts: &RolloutOptions<T>,
) -> Result<Trajectory<T>> {
    let policy = &agent.policy;
    crate::error::check_len("policy observation dimension", spec.obs_dim, policy.obs_dim())?;
    crate::error::check_len("policy action dimension", spec.action_dim, policy.act_dim())?;
    plan.validate()?;

    let base = plan.noise_context(nominal);
    let trial_ctx = sample_context(&base, plan, rng, SampleWhen::TrialStart);
    let mut state = envsim::reset(spec, &trial_ctx, rng);

    let limit = opts.max_steps.unwrap_or(usize::MAX).min(spec.horizon);
    let mut traj = Trajectory {
        observations: Vec::with_capacity(limit),
        policy_inputs: Vec::with_capacity(limit),
        actions: Vec::with_capacity(limit),
        commands: Vec::with_capacity(limit),
        rewards: Vec::with_capacity(limit),
        log_probs: Vec::with_capacity(limit),
        values: Vec::with_capacity(limit),
        contexts: Vec::with_capacity(limit),
        terminated: false,
        truncated: false,
        bootstrap_value: T::zero(),
        total_return: T::zero(),
    };

    let mut pcache: PolicyCache<T> = policy.new_cache();
    let mut vcache = agent.value.new_cache();
    let mut arpl_cache = policy.new_cache();
    let mut input = vec![T::zero(); spec.obs_dim];
    let mut grad = vec![T::zero(); spec.obs_dim];
    let use_arpl = opts.arpl_epsilon > T::zero();

    let mut step = 0;
    loop {
        let ctx = sample_context(&trial_ctx, plan, rng, SampleWhen::EachStep);

        let mut obs = envsim::observe(spec, &state);
        perturb_observation(&mut obs, ctx.noise_obs, rng);
        agent.normalizer.apply_into(&obs, &mut input);
        if use_arpl {
            policy.grad_obs_action_norm_into(&input, &mut arpl_cache, &mut grad);
            for (x, g) in input.iter_mut().zip(&grad) {
                *x += opts.arpl_epsilon * *g;
            }
        }
        if !all_finite(&input) {
            return Err(BenchError::NonFinite("observation"));
        }

        policy.forward(&input, &mut pcache);
        let (action, log_prob) = match opts.mode {
            ActionMode::Stochastic => policy.sample_from_mean(pcache.mean(), rng),
            ActionMode::Deterministic => {
                let mean = pcache.mean().to_vec();
                let lp = crate::policy::gaussian_log_prob(&mean, policy.log_std(), &mean);
                (mean, lp)
            }
        };
        if !all_finite(&action) {
            return Err(BenchError::NonFinite("action"));
        }
        let value = agent.value.forward(&input, &mut vcache);

        let command = perturb_action(&action, ctx.noise_act, rng, spec.action_bound);
        let mut next = envsim::step_dynamics(spec, &ctx, &state, &command)?;
        perturb_state(&mut next, ctx.noise_proc, rng);
        if !all_finite(&next) {
            return Err(BenchError::NonFinite("state"));
        }
        let r = envsim::reward(spec, &ctx, &state, &command, &next);
        if !r.is_finite() {
            return Err(BenchError::NonFinite("reward"));
        }
        step += 1;

        traj.observations.push(obs);
        traj.policy_inputs.push(input.clone());
        traj.actions.push(action);
        traj.commands.push(command);
        traj.rewards.push(r);
        traj.log_probs.push(log_prob);
        traj.values.push(value);
        traj.contexts.push(ctx);
        state = next;

        if envsim::is_failure(spec, &state) {
            traj.terminated = true;
            break;
        }
        if step >= spec.horizon {
            break;
        }
        if step >= limit {
            traj.truncated = true;
            break;
        }
    }

    if !traj.terminated {
        let obs = envsim::observe(spec, &state);
        agent.normalizer.apply_into(&obs, &mut input);
        traj.bootstrap_value = agent.value.forward(&input, &mut vcache);
    }
    traj.total_return = traj.rewards.iter().copied().sum();
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::nominal_spec;
    use crate::policy::PolicyKind;
    use crate::rng::seeded;

    fn agent(spec: &EnvSpec<f64>, seed: u64) -> Agent<f64> {
        Agent::new(PolicyKind::Mlp, 16, spec.obs_dim, spec.action_dim, &mut seeded(seed))
    }

    #[test]
    fn zero_scale_and_none_return_nominal() {
        let spec: EnvSpec<f64> = nominal_spec("pendulum").unwrap();
        let mut rng = seeded(0);
        let none = PerturbationPlan::none();
        let zero = PerturbationPlan::dom(0.0, vec![ContextParam::MassPrimary]);
        for when in [SampleWhen::TrialStart, SampleWhen::EachStep] {
            assert_eq!(sample_context(&spec.nominal, &none, &mut rng, when), spec.nominal);
            assert_eq!(sample_context(&spec.nominal, &zero, &mut rng, when), spec.nominal);
        }
    }

    #[test]
    fn schedule_gates_sampling() {
        let spec: EnvSpec<f64> = nominal_spec("pendulum").unwrap();
        let mut rng = seeded(0);
        let dom = PerturbationPlan::dom(0.3, vec![ContextParam::MassPrimary]);
        let env = PerturbationPlan::env(0.3, vec![ContextParam::MassPrimary]);
        assert_eq!(sample_context(&spec.nominal, &dom, &mut rng, SampleWhen::EachStep), spec.nominal);
        assert_eq!(sample_context(&spec.nominal, &env, &mut rng, SampleWhen::TrialStart), spec.nominal);
        assert_ne!(sample_context(&spec.nominal, &dom, &mut rng, SampleWhen::TrialStart), spec.nominal);
        assert_ne!(sample_context(&spec.nominal, &env, &mut rng, SampleWhen::EachStep), spec.nominal);
    }

    #[test]
    fn multiplier_floor() {
        let spec: EnvSpec<f64> = nominal_spec("pendulum").unwrap();
        let plan = PerturbationPlan::dom(50.0, vec![ContextParam::MassPrimary]);
        let mut rng = seeded(4);
        for _ in 0..1000 {
            let c = sample_context(&spec.nominal, &plan, &mut rng, SampleWhen::TrialStart);
            assert!(c.mass_primary >= MIN_MULTIPLIER * spec.nominal.mass_primary);
        }
    }

    #[test]
    fn action_noise_respects_bound() {
        let mut rng = seeded(1);
        assert_eq!(perturb_action(&[5.0, -0.5], 0.0, &mut rng, 2.0), vec![2.0, -0.5]);
        for _ in 0..1000 {
            let c = perturb_action(&[2.0], 0.7, &mut rng, 2.0);
            assert!(c[0] <= 2.0 && c[0] >= -2.0);
        }
    }

    #[test]
    fn plan_validation() {
        assert!(PerturbationPlan::<f64>::dom(0.1, vec![]).validate().is_err());
        assert!(PerturbationPlan::<f64>::obs(-0.1).validate().is_err());
        assert!(PerturbationPlan::<f64>::obs(0.1).validate().is_ok());
    }

    #[test]
    fn deterministic_rollouts_repeat() {
        let spec: EnvSpec<f64> = nominal_spec("pendulum").unwrap();
        let a = agent(&spec, 3);
        let plan = PerturbationPlan::none();
        let t1 = rollout(&a, &spec, &spec.nominal, &plan, &mut seeded(5), ActionMode::Deterministic).unwrap();
        let t2 = rollout(&a, &spec, &spec.nominal, &plan, &mut seeded(5), ActionMode::Deterministic).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.len(), spec.horizon);
        assert_eq!(t1.total_return, t1.rewards.iter().sum::<f64>());
    }

    #[test]
    fn dom_context_constant_within_episode() {
        let spec: EnvSpec<f64> = nominal_spec("pendulum").unwrap();
        let a = agent(&spec, 3);
        let plan = PerturbationPlan::for_channel(Channel::Dom, 0.3, spec.kind);
        let t = rollout(&a, &spec, &spec.nominal, &plan, &mut seeded(8), ActionMode::Stochastic).unwrap();
        assert!(t.contexts.iter().all(|c| *c == t.contexts[0]));
        assert_ne!(t.contexts[0], spec.nominal);
    }

    #[test]
    fn env_context_varies_between_steps() {
        let spec: EnvSpec<f64> = nominal_spec("pendulum").unwrap();
        let a = agent(&spec, 3);
        let plan = PerturbationPlan::for_channel(Channel::Env, 0.1, spec.kind);
        let mut rng = seeded(2);
        for _ in 0..100 {
            let t = rollout(&a, &spec, &spec.nominal, &plan, &mut rng, ActionMode::Deterministic).unwrap();
            assert!(t.contexts.windows(2).any(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn cartpole_terminates_on_failure() {
        let spec: EnvSpec<f64> = nominal_spec("cartpole").unwrap();
        let mut a = agent(&spec, 3);
        // push hard in one direction
        let n = a.policy.n_params();
        a.policy.params_mut()[n - 2] = 50.0;
        let t = rollout(&a, &spec, &spec.nominal, &PerturbationPlan::none(), &mut seeded(1), ActionMode::Deterministic)
            .unwrap();
        assert!(t.terminated);
        assert!(t.len() < spec.horizon);
        assert_eq!(t.bootstrap_value, 0.0);
        assert_eq!(*t.rewards.last().unwrap(), 0.0);
    }

    #[test]
    fn max_steps_truncates() {
        let spec: EnvSpec<f64> = nominal_spec("pendulum").unwrap();
        let a = agent(&spec, 3);
        let mut opts = RolloutOptions::new(ActionMode::Stochastic);
        opts.max_steps = Some(17);
        let t = rollout_with(&a, &spec, &spec.nominal, &PerturbationPlan::none(), &mut seeded(1), &opts).unwrap();
        assert_eq!(t.len(), 17);
        assert!(t.truncated && !t.terminated);
    }

    #[test]
    fn mismatched_policy_rejected() {
        let spec: EnvSpec<f64> = nominal_spec("cartpole").unwrap();
        let pend: EnvSpec<f64> = nominal_spec("pendulum").unwrap();
        let a = agent(&pend, 0);
        let r = rollout(&a, &spec, &spec.nominal, &PerturbationPlan::none(), &mut seeded(0), ActionMode::Deterministic);
        assert!(matches!(r, Err(BenchError::Shape { .. })));
    }
}
