//! Generalisation metrics: testing return under a fixed context, expected
//! testing return under a context distribution, AUC over perturbation-scale
//! sweeps, domain-shift heatmaps, plus the analysis statistics.

mod pareto;
mod stats;

pub use pareto::{pareto_frontier, pareto_indices, ParetoPoint};
pub use stats::{
    ln_gamma, pearson, regularized_incomplete_beta, student_t_cdf, student_t_two_sided, welch_t_test,
    StatTestResult, ALPHA,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envsim::{ContextParam, EnvContext, EnvSpec};
use crate::error::{BenchError, Result};
use crate::perturb::{
    default_varied_params, rollout, sample_context, ActionMode, Channel, PerturbationPlan, SampleWhen,
};
use crate::policy::Agent;
use crate::rng::{derive_stream, BenchRng};
use crate::scalar::Scalar;

/// Rollouts per evaluation cell.
pub const DEFAULT_ROLLOUTS: usize = 20;

/// Mean, sample std and raw episode returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats<T> {
    pub mean: T,
    pub std: T,
    pub samples: Vec<T>,
}

impl<T: Scalar> ReturnStats<T> {
    /// Sample statistics; the std of a single sample is 0.
    pub fn from_samples(samples: Vec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(BenchError::InvalidArgument("no returns to summarise".into()));
        }
        let n = T::from_usize_lossy(samples.len());
        let mean = samples.iter().copied().sum::<T>() / n;
        let std = if samples.len() < 2 {
            T::zero()
        } else {
            (samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (n - T::one())).sqrt()
        };
        Ok(ReturnStats { mean, std, samples })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }
}

/// Averages `n_rollouts` episode returns produced by `episode`.
pub fn testing_return_with<T, R, F>(n_rollouts: usize, rng: &mut R, mut episode: F) -> Result<ReturnStats<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<T>,
{
    if n_rollouts == 0 {
        return Err(BenchError::InvalidArgument("n_rollouts must be at least 1".into()));
    }
    let samples = (0..n_rollouts).map(|_| episode(rng)).collect::<Result<Vec<T>>>()?;
    ReturnStats::from_samples(samples)
}

/// Testing return: deterministic-policy episode returns under `ctx` and `plan`.
pub fn testing_return<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    ctx: &EnvContext<T>,
    plan: &PerturbationPlan<T>,
    n_rollouts: usize,
    rng: &mut R,
) -> Result<ReturnStats<T>> {
    testing_return_with(n_rollouts, rng, |rng| {
        Ok(rollout(agent, spec, ctx, plan, rng, ActionMode::Deterministic)?.total_return)
    })
}

/// Outer Monte-Carlo over `n_domains` contexts drawn once per trial from the
/// `dom` plan, inner `n_rollouts` episodes each; statistics pooled over all
/// episodes.
pub fn expected_testing_return_with<T, R, F>(
    nominal: &EnvContext<T>,
    domain_dist: &PerturbationPlan<T>,
    n_domains: usize,
    n_rollouts: usize,
    rng: &mut R,
    mut episode: F,
) -> Result<ReturnStats<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    F: FnMut(&EnvContext<T>, &mut R) -> Result<T>,
{
    if n_domains == 0 {
        return Err(BenchError::InvalidArgument("n_domains must be at least 1".into()));
    }
    if domain_dist.channel != Channel::Dom && domain_dist.channel != Channel::None {
        return Err(BenchError::InvalidArgument(format!(
            "domain distribution must use the `dom` channel, got `{}`",
            domain_dist.channel
        )));
    }
    let mut pooled = Vec::with_capacity(n_domains * n_rollouts);
    for _ in 0..n_domains {
        let ctx = sample_context(nominal, domain_dist, rng, SampleWhen::TrialStart);
        let inner = testing_return_with(n_rollouts, rng, |rng| episode(&ctx, rng))?;
        pooled.extend(inner.samples);
    }
    ReturnStats::from_samples(pooled)
}

/// Expected testing return over the context distribution `domain_dist`.
pub fn expected_testing_return<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    domain_dist: &PerturbationPlan<T>,
    n_domains: usize,
    n_rollouts: usize,
    rng: &mut R,
) -> Result<ReturnStats<T>> {
    let none = PerturbationPlan::none();
    expected_testing_return_with(&spec.nominal, domain_dist, n_domains, n_rollouts, rng, |ctx, rng| {
        Ok(rollout(agent, spec, ctx, &none, rng, ActionMode::Deterministic)?.total_return)
    })
}

/// `Δσ · Σₙ returnₙ`.
pub fn auc<T: Scalar>(per_scale_returns: &[T], step: T) -> Result<T> {
    if per_scale_returns.is_empty() {
        return Err(BenchError::InvalidArgument("auc of an empty curve".into()));
    }
    if !(step > T::zero()) {
        return Err(BenchError::InvalidArgument(format!("auc step must be positive, got {step}")));
    }
    Ok(step * per_scale_returns.iter().copied().sum::<T>())
}

/// Strictly increasing perturbation scales with a constant step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid<T> {
    values: Vec<T>,
    step: T,
}

impl<T: Scalar> ScaleGrid<T> {
    /// `start, start + step, …` (`n` values).
    pub fn uniform(start: T, step: T, n: usize) -> Result<Self> {
        let values = (0..n).map(|i| start + step * T::from_usize_lossy(i)).collect();
        Self::new(values, step)
    }

    /// Explicit values with a declared step, which they must follow.
    pub fn new(values: Vec<T>, step: T) -> Result<Self> {
        if values.is_empty() {
            return Err(BenchError::InvalidArgument("empty scale grid".into()));
        }
        if !(step > T::zero()) {
            return Err(BenchError::InvalidArgument("scale grid step must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(BenchError::InvalidArgument("scales must be finite and non-negative".into()));
        }
        let tol = T::lit(1e-9) * (T::one() + step);
        for w in values.windows(2) {
            if ((w[1] - w[0]) - step).abs() > tol {
                return Err(BenchError::InvalidArgument(format!(
                    "scale grid is not uniform with step {step}: {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(ScaleGrid { values, step })
    }

    /// Infers the step from consecutive values (needs at least two).
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(BenchError::InvalidArgument(
                "a single-point grid needs an explicit step".into(),
            ));
        }
        let step = values[1] - values[0];
        Self::new(values, step)
    }

    /// `{0.0, 0.1, …, 0.5}`.
    pub fn default_grid() -> Self {
        let values = (0..6).map(|i| T::lit(i as f64 / 10.0)).collect();
        ScaleGrid {
            values,
            step: T::lit(0.1),
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Testing returns across a scale grid for one channel, with its AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult<T> {
    pub channel: Channel,
    pub grid: ScaleGrid<T>,
    pub per_scale: Vec<ReturnStats<T>>,
    pub auc: T,
}

impl<T: Scalar> SweepResult<T> {
    pub fn means(&self) -> Vec<T> {
        self.per_scale.iter().map(|s| s.mean).collect()
    }
}

/// Evaluates one grid cell on its own derived stream.
fn channel_cell<T: Scalar>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    plan: &PerturbationPlan<T>,
    n_rollouts: usize,
    rng: &mut BenchRng,
) -> Result<ReturnStats<T>> {
    if plan.channel == Channel::Dom {
        // per-trial resampling: one episode per sampled domain
        expected_testing_return(agent, spec, plan, n_rollouts, 1, rng)
    } else {
        testing_return(agent, spec, &spec.nominal, plan, n_rollouts, rng)
    }
}

/// Sweep with the task's default varied parameters for `env`/`dom`.
pub fn sweep<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    channel: Channel,
    grid: &ScaleGrid<T>,
    n_rollouts: usize,
    rng: &mut R,
) -> Result<SweepResult<T>> {
    sweep_params(agent, spec, channel, &default_varied_params(spec.kind), grid, n_rollouts, rng)
}

/// Testing return at every scale of `grid` (cell `i` on stream `i` of a base
/// seed drawn from `rng`), then the AUC.
pub fn sweep_params<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    channel: Channel,
    varied_params: &[ContextParam],
    grid: &ScaleGrid<T>,
    n_rollouts: usize,
    rng: &mut R,
) -> Result<SweepResult<T>> {
    if channel == Channel::None {
        return Err(BenchError::InvalidArgument("sweep needs a perturbation channel".into()));
    }
    let base: u64 = rng.random();
    let per_scale = grid
        .values()
        .par_iter()
        .enumerate()
        .map(|(i, &scale)| {
            let plan = PerturbationPlan {
                channel,
                scale,
                varied_params: if channel.varies_dynamics() {
                    varied_params.to_vec()
                } else {
                    Vec::new()
                },
            };
            channel_cell(agent, spec, &plan, n_rollouts, &mut derive_stream(base, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<T> = per_scale.iter().map(|s| s.mean).collect();
    Ok(SweepResult {
        channel,
        grid: grid.clone(),
        auc: auc(&means, grid.step())?,
        per_scale,
    })
}

/// Testing returns over a grid of two multiplicatively shifted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResult<T> {
    pub param_x: ContextParam,
    pub param_y: ContextParam,
    /// Multipliers applied to the nominal value of `param_x`.
    pub grid_x: Vec<T>,
    pub grid_y: Vec<T>,
    /// `cells[ix][iy]`.
    pub cells: Vec<Vec<ReturnStats<T>>>,
    /// Grid indices of the training domain (multiplier 1 on both axes), if present.
    pub training_cell: Option<(usize, usize)>,
}

impl<T: Scalar> HeatmapResult<T> {
    pub fn mean_matrix(&self) -> Vec<Vec<T>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(|c| c.mean).collect())
            .collect()
    }
}

/// Nominal context with `param_x`, `param_y` scaled by the given multipliers.
pub fn shifted_context<T: Scalar>(
    nominal: &EnvContext<T>,
    param_x: ContextParam,
    mx: T,
    param_y: ContextParam,
    my: T,
) -> EnvContext<T> {
    let mut ctx = *nominal;
    ctx.set(param_x, nominal.get(param_x) * mx);
    ctx.set(param_y, nominal.get(param_y) * my);
    ctx
}

/// Cell `(ix, iy)` is evaluated on stream `ix·|grid_y| + iy` of a base seed
/// drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn heatmap<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    spec: &EnvSpec<T>,
    param_x: ContextParam,
    param_y: ContextParam,
    grid_x: &[T],
    grid_y: &[T],
    n_rollouts: usize,
    rng: &mut R,
) -> Result<HeatmapResult<T>> {
    if param_x == param_y {
        return Err(BenchError::InvalidArgument("heatmap parameters must differ".into()));
    }
    if grid_x.is_empty() || grid_y.is_empty() {
        return Err(BenchError::InvalidArgument("heatmap grids must be nonempty".into()));
    }
    let base: u64 = rng.random();
    let ny = grid_y.len();
    let none = PerturbationPlan::none();
    let flat = (0..grid_x.len() * ny)
        .into_par_iter()
        .map(|k| {
            let (ix, iy) = (k / ny, k % ny);
            let ctx = shifted_context(&spec.nominal, param_x, grid_x[ix], param_y, grid_y[iy]);
            ctx.validate()?;
            testing_return(agent, spec, &ctx, &none, n_rollouts, &mut derive_stream(base, k as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = flat.into_iter();
    let cells = (0..grid_x.len())
        .map(|_| it.by_ref().take(ny).collect())
        .collect();
    let find_one = |g: &[T]| g.iter().position(|&v| v == T::one());
    Ok(HeatmapResult {
        param_x,
        param_y,
        grid_x: grid_x.to_vec(),
        grid_y: grid_y.to_vec(),
        cells,
        training_cell: find_one(grid_x).zip(find_one(grid_y)),
    })
}
