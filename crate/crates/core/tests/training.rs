use genbench::envsim::{spec_for, EnvContext, EnvKind};
use genbench::eval::{expected_testing_return_with, testing_return};
use genbench::perturb::{rollout, ActionMode, Channel, PerturbationPlan};
use genbench::policy::{Agent, PolicyKind, Topology};
use genbench::rng::{derive_stream, seeded};
use genbench::train::{collect_batch, ppo_loss_and_grads, ppo_update, train, Batch, PpoConfig, PpoOptimizer};
use genbench::GaussianMlpPolicy;

fn small_config() -> PpoConfig<f64> {
    PpoConfig {
        steps_per_batch: 256,
        total_steps: 512,
        minibatch_size: 64,
        epochs_per_iter: 2,
        hidden_width: 16,
        ..PpoConfig::default()
    }
}

fn pendulum() -> genbench::EnvSpec {
    spec_for(EnvKind::Pendulum)
}

#[test]
fn training_is_a_pure_function_of_the_seed() {
    let spec = pendulum();
    let a = train(&spec, &small_config(), 4).unwrap();
    let b = train(&spec, &small_config(), 4).unwrap();
    assert_eq!(a, b);
    let c = train(&spec, &small_config(), 5).unwrap();
    assert_ne!(a.agent, c.agent);
}

#[test]
fn one_batch_of_steps_is_one_iteration() {
    let config = PpoConfig {
        total_steps: 256,
        ..small_config()
    };
    assert_eq!(train(&pendulum(), &config, 0).unwrap().iterations(), 1);
}

fn fixture() -> (Agent<f64>, Batch<f64>, PpoConfig<f64>) {
    let spec = pendulum();
    let config = small_config();
    let agent = Agent::new(PolicyKind::Mlp, 16, 2, 1, &mut seeded(1));
    let trajs = collect_batch(&agent, &spec, &config, &mut seeded(2)).unwrap();
    let mut batch = Batch::from_trajectories(&trajs, config.discount, config.gae_lambda).unwrap();
    batch.normalize_advantages();
    (agent, batch, config)
}

#[test]
fn skipped_update_keeps_stored_log_probs() {
    let (mut agent, batch, config) = fixture();
    let mut opt = PpoOptimizer::new(&agent.policy, &agent.value);
    ppo_update(&batch, &mut agent.policy, &mut agent.value, &mut opt, &config, 0.0, &mut seeded(3)).unwrap();
    for (i, obs) in batch.obs.iter().enumerate() {
        let lp = agent.policy.log_prob(obs, &batch.actions[i]);
        assert!((lp - batch.old_log_probs[i]).abs() < 1e-12);
    }
}

#[test]
fn entropy_bonus_lowers_the_loss() {
    let (agent, batch, config) = fixture();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let loss = |coef: f64| {
        let c = PpoConfig {
            entropy_coef: coef,
            ..config.clone()
        };
        let mut pg = vec![0.0; agent.policy.n_params()];
        let mut vg = vec![0.0; agent.value.n_params()];
        ppo_loss_and_grads(&agent.policy, &agent.value, &batch, &idx, &c, &mut pg, &mut vg).total
    };
    // entropy of a unit-std 1-D Gaussian is positive, so the loss falls
    let (l0, l1, l2) = (loss(0.0), loss(0.01), loss(0.1));
    assert!(l0 > l1 && l1 > l2, "{l0} {l1} {l2}");
}

#[test]
fn domain_randomised_training_resamples_per_episode_only() {
    let spec = pendulum();
    let config = PpoConfig {
        train_plan: PerturbationPlan::for_channel(Channel::Dom, 0.3, EnvKind::Pendulum),
        ..small_config()
    };
    let agent = Agent::new(PolicyKind::Mlp, 16, 2, 1, &mut seeded(1));
    let trajs = collect_batch(&agent, &spec, &config, &mut seeded(2)).unwrap();
    assert!(trajs.len() >= 2);
    for t in &trajs {
        assert!(t.contexts.iter().all(|c| c == &t.contexts[0]));
    }
    assert!(trajs.windows(2).all(|w| w[0].contexts[0] != w[1].contexts[0]));

    let rec = train(&spec, &config, 0).unwrap();
    let distinct = rec
        .episode_contexts
        .windows(2)
        .filter(|w| w[0] != w[1])
        .count();
    assert_eq!(distinct + 1, rec.episode_contexts.len());
}

#[test]
fn reference_rollout_of_a_zero_policy() {
    // noiseless hanging start is an exact fixed point under zero torque, so
    // every step costs θ² = π²
    let mut spec = pendulum();
    spec.nominal.noise_init = 0.0;
    let topo = Topology {
        kind: PolicyKind::Mlp,
        width: 4,
        obs_dim: 2,
        act_dim: 1,
    };
    let mut agent = Agent::new(PolicyKind::Mlp, 4, 2, 1, &mut seeded(0));
    agent.policy = GaussianMlpPolicy::zeros(topo);
    let t = rollout(&agent, &spec, &spec.nominal, &PerturbationPlan::none(), &mut seeded(0), ActionMode::Deterministic)
        .unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    assert_eq!(t.len(), 200);
    assert!(t.rewards.iter().all(|&r| r == -pi2));
    assert!((t.total_return + 200.0 * pi2).abs() < 1e-9);
    let stats = testing_return(&agent, &spec, &spec.nominal, &PerturbationPlan::none(), 3, &mut seeded(0)).unwrap();
    assert_eq!(stats.std, 0.0);
}

#[test]
fn expected_return_averages_over_sampled_domains() {
    // stub episode whose return is the sampled gravity multiplier
    let nominal: EnvContext<f64> = pendulum().nominal;
    let plan = PerturbationPlan::for_channel(Channel::Dom, 0.1, EnvKind::Pendulum);
    let stats = expected_testing_return_with(&nominal, &plan, 4000, 2, &mut derive_stream(1, 0), |ctx, _| {
        Ok(ctx.gravity / nominal.gravity)
    })
    .unwrap();
    assert_eq!(stats.n(), 8000);
    assert!((stats.mean - 1.0).abs() < 0.01, "{}", stats.mean);
    assert!((stats.std - 0.1).abs() < 0.01, "{}", stats.std);
    let bad = PerturbationPlan::for_channel(Channel::Obs, 0.1, EnvKind::Pendulum);
    assert!(expected_testing_return_with(&nominal, &bad, 1, 1, &mut seeded(0), |_, _| Ok(0.0)).is_err());
}

#[test]
fn f32_training_runs() {
    let spec: genbench::EnvSpec32 = spec_for(EnvKind::CartPole);
    let config = PpoConfig::<f32> {
        steps_per_batch: 256,
        total_steps: 512,
        minibatch_size: 64,
        epochs_per_iter: 2,
        hidden_width: 16,
        ..PpoConfig::default()
    };
    let rec = train(&spec, &config, 0).unwrap();
    assert_eq!(rec.iterations(), 2);
    assert!(rec.mean_returns.iter().all(|r| r.is_finite()));
}
