//! Checks shared by the topic suites and the acceptance target. Each returns
//! an [`Outcome`] so the acceptance target can print one line per criterion
//! while the topic suites simply assert on it.

#![allow(dead_code)]

use genbench::envsim::{
    is_failure, pendulum_energy, reset, rk4_step, spec_for, step_dynamics, EnvContext, EnvKind,
};
use genbench::eval::{auc, pareto_indices, pearson, welch_t_test, ParetoPoint};
use genbench::perturb::{
    noisy_action, perturb_observation, perturb_state, rollout, sample_context, ActionMode, Channel,
    PerturbationPlan, SampleWhen,
};
use genbench::policy::{gaussian_log_prob, Agent, GaussianPolicy, PolicyKind, ValueNet};
use genbench::rng::{derive_stream, seeded, standard_normal};
use genbench::train::compute_gae;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }

    pub fn assert(&self) {
        assert!(self.pass, "{}", self.detail);
    }
}

/// Combines named sub-checks; passes only when all do.
pub struct Tally {
    pass: bool,
    parts: Vec<String>,
}

impl Tally {
    pub fn new() -> Self {
        Tally {
            pass: true,
            parts: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.pass &= ok;
        let status = if ok { "" } else { " FAILED" };
        let sep = if detail.is_empty() { "" } else { " " };
        self.parts.push(format!("{name}{status}{sep}{detail}"));
    }

    pub fn finish(self) -> Outcome {
        Outcome::new(self.pass, self.parts.join("; "))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------- metrics

pub fn brute_gae(rewards: &[f64], values: &[f64], terminal: bool, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let next = |t: usize| if t + 1 == n && terminal { 0.0 } else { values[t + 1] };
    let deltas: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * next(t) - values[t]).collect();
    (0..n)
        .map(|t| (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * deltas[k]).sum())
        .collect()
}

pub fn brute_pareto(points: &[ParetoPoint<f64>]) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&i| !points.iter().any(|q| q.dominates(&points[i])))
        .collect();
    keep.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.train_return
            .total_cmp(&pb.train_return)
            .then(pa.test_auc.total_cmp(&pb.test_auc))
            .then(a.cmp(&b))
    });
    keep
}

pub fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn oracle_welch(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0), n)
    };
    let (ma, va, na) = stats(a);
    let (mb, vb, nb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p = 2.0 * StudentsT::new(0.0, 1.0, dof).unwrap().cdf(-t.abs());
    (t, dof, p)
}

/// GAE, Pareto, Pearson, Welch and AUC against independent references on
/// `instances` random cases each.
pub fn metric_oracles(instances: usize, seed: u64) -> Outcome {
    let mut rng = seeded(seed);
    let mut tally = Tally::new();

    let mut gae_err = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..60);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let values: Vec<f64> = (0..=n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let terminal = rng.random_bool(0.5);
        let (gamma, lambda) = (rng.random_range(0.8..1.0), rng.random_range(0.0..=1.0));
        let (adv, targets) = compute_gae(&rewards, &values, terminal, gamma, lambda).unwrap();
        let want = brute_gae(&rewards, &values, terminal, gamma, lambda);
        for t in 0..n {
            gae_err = gae_err.max(rel(adv[t], want[t])).max(rel(targets[t], want[t] + values[t]));
        }
    }
    tally.check("gae", gae_err < 1e-9, format!("max err {gae_err:.1e}"));

    let mut pareto_bad = 0;
    for i in 0..instances {
        let n = rng.random_range(1..40);
        // coarse lattice in half the cases so ties and duplicates occur
        let coarse = i % 2 == 0;
        let pts: Vec<ParetoPoint<f64>> = (0..n)
            .map(|_| {
                if coarse {
                    ParetoPoint::new(rng.random_range(0..6) as f64, rng.random_range(0..6) as f64)
                } else {
                    ParetoPoint::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3))
                }
            })
            .collect();
        if pareto_indices(&pts).unwrap() != brute_pareto(&pts) {
            pareto_bad += 1;
        }
    }
    tally.check("pareto", pareto_bad == 0, format!("{pareto_bad} mismatches"));

    let mut pearson_err = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(3..50);
        let slope = rng.random_range(-2.0..2.0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + rng.random_range(-50.0..50.0)).collect();
        pearson_err = pearson_err.max((pearson(&x, &y).unwrap() - textbook_pearson(&x, &y)).abs());
    }
    tally.check("pearson", pearson_err < 1e-9, format!("max err {pearson_err:.1e}"));

    let (mut t_err, mut p_err) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (na, nb) = (rng.random_range(2..30), rng.random_range(2..30));
        let shift = rng.random_range(-3.0..3.0);
        let (sa, sb) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
        let a: Vec<f64> = (0..na).map(|_| sa * standard_normal::<f64, _>(&mut rng)).collect();
        let b: Vec<f64> = (0..nb).map(|_| shift + sb * standard_normal::<f64, _>(&mut rng)).collect();
        let got = welch_t_test(&a, &b).unwrap();
        let (t, dof, p) = oracle_welch(&a, &b);
        t_err = t_err.max(rel(got.t, t)).max(rel(got.dof, dof));
        p_err = p_err.max((got.p_value - p).abs());
    }
    tally.check("welch t/dof", t_err < 1e-9, format!("max err {t_err:.1e}"));
    tally.check("welch p", p_err < 1e-6, format!("max err {p_err:.1e}"));

    let mut auc_err = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..12);
        let step = rng.random_range(0.01..1.0);
        let curve: Vec<f64> = (0..n).map(|_| rng.random_range(-2000.0..200.0)).collect();
        let want: f64 = curve.iter().rev().map(|r| r * step).sum();
        auc_err = auc_err.max(rel(auc(&curve, step).unwrap(), want));
    }
    tally.check("auc", auc_err < 1e-9, format!("max err {auc_err:.1e}"));
    tally.finish()
}

// --------------------------------------------------------------- gradients

fn random_policy<R: Rng>(rng: &mut R) -> GaussianPolicy<f64> {
    let kind = if rng.random_bool(0.5) { PolicyKind::Mlp } else { PolicyKind::Scn };
    let (width, obs, act) = (rng.random_range(2..7), rng.random_range(1..5), rng.random_range(1..4));
    let mut p = GaussianPolicy::new(kind, width, obs, act, rng);
    // lift everything off the tiny initial head scale
    for w in p.params_mut() {
        *w = 0.6 * standard_normal::<f64, _>(rng);
    }
    p.clamp_log_std();
    p
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal::<f64, _>(rng)).collect()
}

fn fd_rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

const H: f64 = 1e-4;

/// Five-point stencil: O(h⁴) truncation, and a step large enough that
/// rounding in a log-density of magnitude ~100 stays far below tolerance.
fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (8.0 * (f(x + H) - f(x - H)) - (f(x + 2.0 * H) - f(x - 2.0 * H))) / (12.0 * H)
}

/// Policy log-prob, value and ARPL observation gradients against central
/// differences on `nets` random networks.
pub fn gradient_checks(nets: usize, seed: u64) -> Outcome {
    let mut rng = seeded(seed);
    let (mut lp_err, mut v_err, mut arpl_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..nets {
        let mut policy = random_policy(&mut rng);
        let (obs_dim, act_dim) = (policy.obs_dim(), policy.act_dim());
        let obs = gaussian_vec(&mut rng, obs_dim);
        let action = gaussian_vec(&mut rng, act_dim);

        let mean = policy.mean_action(&obs).unwrap();
        let ls = policy.log_std().to_vec();
        let d_mean: Vec<f64> = (0..act_dim).map(|i| (action[i] - mean[i]) / (2.0 * ls[i]).exp()).collect();
        let d_ls: Vec<f64> = (0..act_dim)
            .map(|i| ((action[i] - mean[i]) / ls[i].exp()).powi(2) - 1.0)
            .collect();
        let grads = policy.backprop(&obs, &d_mean, &d_ls).unwrap();
        for k in 0..policy.n_params() {
            let base = policy.params()[k];
            let fd = central(base, |w| {
                policy.params_mut()[k] = w;
                let m = policy.mean_action(&obs).unwrap();
                gaussian_log_prob(&m, policy.log_std(), &action)
            });
            policy.params_mut()[k] = base;
            lp_err = lp_err.max(fd_rel(grads[k], fd));
        }

        let mut value = ValueNet::<f64>::new(policy.topology().width, obs_dim, &mut rng);
        for w in value.params_mut() {
            *w = 0.6 * standard_normal::<f64, _>(&mut rng);
        }
        let vg = value.backprop(&obs, 1.0).unwrap();
        for k in 0..value.n_params() {
            let base = value.params()[k];
            let fd = central(base, |w| {
                value.params_mut()[k] = w;
                value.value(&obs)
            });
            value.params_mut()[k] = base;
            v_err = v_err.max(fd_rel(vg[k], fd));
        }

        let g = policy.grad_obs_action_norm(&obs);
        for j in 0..obs_dim {
            let mut x = obs.clone();
            let fd = central(obs[j], |v| {
                x[j] = v;
                genbench::scalar::norm(&policy.mean_action(&x).unwrap())
            });
            arpl_err = arpl_err.max(fd_rel(g[j], fd));
        }
    }
    let mut tally = Tally::new();
    tally.check("log-prob", lp_err < 1e-4, format!("max rel {lp_err:.1e}"));
    tally.check("value", v_err < 1e-4, format!("max rel {v_err:.1e}"));
    tally.check("arpl obs", arpl_err < 1e-4, format!("max rel {arpl_err:.1e}"));
    tally.finish()
}

// ----------------------------------------------------------------- physics

/// Fixed points, frictionless energy drift and RK4 against a fine-step
/// integration.
pub fn physics_checks() -> Outcome {
    let mut tally = Tally::new();
    let pend = spec_for::<f64>(EnvKind::Pendulum);
    let cart = spec_for::<f64>(EnvKind::CartPole);

    let fixed = [
        (EnvKind::Pendulum, pend.nominal, vec![0.0, 0.0]),
        (EnvKind::Pendulum, pend.nominal, vec![std::f64::consts::PI, 0.0]),
        (EnvKind::CartPole, cart.nominal, vec![0.0, 0.0, 0.0, 0.0]),
        (EnvKind::CartPole, cart.nominal, vec![1.5, 0.0, 0.0, 0.0]),
    ];
    let exact = fixed.iter().all(|(kind, ctx, s)| {
        let spec = spec_for::<f64>(*kind);
        let mut x = s.clone();
        (0..200).all(|_| {
            x = step_dynamics(&spec, ctx, &x, &[0.0]).unwrap();
            x == *s
        })
    });
    tally.check("equilibria", exact, String::new());

    let mut ctx = pend.nominal;
    ctx.friction = 0.0;
    let mut drift = 0.0f64;
    let mut rng = seeded(3);
    for _ in 0..20 {
        let mut s = vec![rng.random_range(-3.0..3.0), rng.random_range(-4.0..4.0)];
        let mut e = pendulum_energy(&ctx, &s);
        for _ in 0..200 {
            s = rk4_step(EnvKind::Pendulum, &ctx, &s, 0.0, pend.dt);
            let e2 = pendulum_energy(&ctx, &s);
            drift = drift.max((e2 - e).abs() / e.abs().max(ctx.mass_primary * ctx.gravity * ctx.length));
            e = e2;
        }
    }
    tally.check("energy drift", drift < 1e-6, format!("max {drift:.1e}/step"));

    let mut step_err = 0.0f64;
    for (kind, spec) in [(EnvKind::Pendulum, &pend), (EnvKind::CartPole, &cart)] {
        let mut rng = seeded(4);
        let mut s = reset(spec, &spec.nominal, &mut rng);
        for _ in 0..200 {
            // compare on the states episodes actually visit
            if is_failure(spec, &s) {
                s = reset(spec, &spec.nominal, &mut rng);
            }
            let force = rng.random_range(-spec.action_bound..spec.action_bound);
            let coarse = rk4_step(kind, &spec.nominal, &s, force, spec.dt);
            let mut fine = s.clone();
            for _ in 0..100 {
                fine = rk4_step(kind, &spec.nominal, &fine, force, spec.dt / 100.0);
            }
            for (a, b) in coarse.iter().zip(&fine) {
                step_err = step_err.max((a - b).abs());
            }
            s = fine;
        }
    }
    tally.check("rk4 vs fine", step_err < 1e-6, format!("max {step_err:.1e}"));
    tally.finish()
}

// ------------------------------------------------------------------- noise

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn within(samples: &[f64], sigma: f64) -> (bool, String) {
    let (m, s) = mean_std(samples);
    let ok = m.abs() < 0.05 * sigma && (s / sigma - 1.0).abs() < 0.05;
    (ok, format!("mean {m:+.4} std {s:.4} (σ {sigma})"))
}

/// Sample moments of every injection point, scale-0 identity and the dom
/// schedule.
pub fn noise_checks(samples: usize) -> Outcome {
    let mut tally = Tally::new();
    let mut rng = seeded(11);
    let sigma = 0.3;

    let mut obs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut o = [0.0];
        perturb_observation(&mut o, sigma, &mut rng);
        obs.push(o[0]);
    }
    let (ok, d) = within(&obs, sigma);
    tally.check("obs", ok, d);

    let bound = 2.0;
    let act: Vec<f64> = (0..samples).map(|_| noisy_action(&[0.0], sigma, &mut rng, bound)[0]).collect();
    let (ok, d) = within(&act, sigma * bound);
    tally.check("act", ok, d);

    let proc: Vec<f64> = (0..samples)
        .map(|_| {
            let mut s = [0.0];
            perturb_state(&mut s, sigma, &mut rng);
            s[0]
        })
        .collect();
    let (ok, d) = within(&proc, sigma);
    tally.check("state", ok, d);

    let pend = spec_for::<f64>(EnvKind::Pendulum);
    let init: Vec<f64> = (0..samples)
        .map(|_| reset(&pend, &pend.nominal, &mut rng)[1])
        .collect();
    let (ok, d) = within(&init, pend.nominal.noise_init);
    tally.check("init", ok, d);

    // small scale keeps the 0.05 floor out of reach
    let ctx_scale = 0.1;
    for (channel, when) in [(Channel::Env, SampleWhen::EachStep), (Channel::Dom, SampleWhen::TrialStart)] {
        let plan = PerturbationPlan::for_channel(channel, ctx_scale, EnvKind::Pendulum);
        let mult: Vec<f64> = (0..samples)
            .map(|_| sample_context(&pend.nominal, &plan, &mut rng, when).gravity / pend.nominal.gravity - 1.0)
            .collect();
        let (ok, d) = within(&mult, ctx_scale);
        tally.check(channel.name(), ok, d);
    }

    // scale 0: same trajectory and same generator state as no perturbation
    let agent = Agent::<f64>::new(PolicyKind::Mlp, 8, 2, 1, &mut seeded(5));
    let reference = {
        let mut r = derive_stream(9, 0);
        let t = rollout(&agent, &pend, &pend.nominal, &PerturbationPlan::none(), &mut r, ActionMode::Stochastic).unwrap();
        (t, r.random::<u64>())
    };
    let identical = Channel::TEST_CHANNELS.iter().all(|&c| {
        let plan = PerturbationPlan::for_channel(c, 0.0, EnvKind::Pendulum);
        let mut r = derive_stream(9, 0);
        let t = rollout(&agent, &pend, &pend.nominal, &plan, &mut r, ActionMode::Stochastic).unwrap();
        let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&t.rewards) == bits(&reference.0.rewards) && t.actions == reference.0.actions && r.random::<u64>() == reference.1
    });
    tally.check("scale-0 identity", identical, String::new());

    let plan = PerturbationPlan::for_channel(Channel::Dom, 0.3, EnvKind::Pendulum);
    let mut r = derive_stream(9, 1);
    let mut constant = true;
    let mut firsts: Vec<EnvContext<f64>> = Vec::new();
    for _ in 0..10 {
        let t = rollout(&agent, &pend, &pend.nominal, &plan, &mut r, ActionMode::Deterministic).unwrap();
        // zero variance means every step carries the same context bit for bit
        constant &= t.contexts.iter().all(|c| c == &t.contexts[0]);
        firsts.push(t.contexts[0]);
    }
    let varies = firsts.windows(2).all(|w| w[0] != w[1]);
    tally.check(
        "dom schedule",
        constant && varies,
        format!("constant within episodes {constant}, varies across episodes {varies}"),
    );
    tally.finish()
}

pub fn summarize(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.1} ± {s:.1}")
}
