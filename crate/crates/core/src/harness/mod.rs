//! Experiment orchestration: train every (variant, seed), sweep each test
//! channel, optionally evaluate a domain-shift heatmap, and write plot-ready
//! reports.
//!
//! Output layout under the experiment's `output_dir`:
//!
//! ```text
//! experiment.cfg                       the resolved config
//! runs/<variant>/seed_<s>/checkpoint.json
//! runs/<variant>/seed_<s>/train.json   training curves and training return
//! runs/<variant>/seed_<s>/sweep_<channel>.json
//! runs/<variant>/seed_<s>/heatmap.json
//! runs/<variant>/seed_<s>/failed.json  present when training aborted
//! results.csv, auc.csv, heatmap.csv, analysis.json
//! ```
//!
//! Every per-run artifact is written atomically and reused on the next
//! invocation, so an interrupted run resumes where it stopped and a finished
//! one is not recomputed. Each artifact depends only on the config and its
//! seed, which makes results independent of the worker count.

pub mod analysis;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use analysis::{analyze, Analysis};
pub use config::{emit_config, parse_config, ConfigError, ExperimentSpec, Variant};
pub use report::{read_report_set, write_report_set, AucRow, HeatmapRow, ReportRow, ReportSet};

use crate::envsim::{spec_for, ContextParam, EnvSpec};
use crate::error::BenchError;
use crate::eval::{heatmap, sweep_params, HeatmapResult, ScaleGrid, SweepResult};
use crate::perturb::Channel;
use crate::policy::{load_checkpoint, save_checkpoint, Agent};
use crate::rng::derive_stream;
use crate::train::{train, trailing_mean, PpoConfig};
use report::{read_to_string, write_atomic, FAILED_CHANNEL, HEATMAP_CHANNEL, TRAIN_CHANNEL};

pub const CONFIG_FILE: &str = "experiment.cfg";

/// Seed-stream index of the evaluation of `channel`; disjoint from the
/// training streams.
fn eval_stream(channel: Channel) -> u64 {
    100 + channel as u64
}
const HEATMAP_STREAM: u64 = 200;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Persisted training curves of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub seed: u64,
    pub iterations: usize,
    /// Mean over the final 10% of iterations.
    pub training_return: f64,
    /// Sample std of the per-iteration returns in that window.
    pub training_return_std: f64,
    /// Iterations in that window.
    pub window: usize,
    pub mean_returns: Vec<f64>,
    pub mean_episode_lengths: Vec<f64>,
    pub policy_loss: Vec<f64>,
    pub value_loss: Vec<f64>,
    pub entropy: Vec<f64>,
    pub clip_fraction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub variant: Variant,
    pub seed: u64,
    pub reason: String,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: ReportSet,
    pub failures: Vec<Failure>,
    /// Training runs, sweeps and heatmaps computed (rather than reloaded).
    pub computed: usize,
}

impl RunOutcome {
    pub fn partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

fn json_write<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

fn json_read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn run_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join("runs").join(variant.name()).join(format!("seed_{seed}"))
}

fn summarize(variant: Variant, rec: &crate::TrainRecord) -> TrainSummary {
    let n = rec.iterations();
    let window = ((n as f64 * 0.1).ceil() as usize).clamp(1, n.max(1));
    let tail = &rec.mean_returns[n.saturating_sub(window)..];
    let mean = trailing_mean(&rec.mean_returns, 0.1);
    let std = if tail.len() < 2 {
        0.0
    } else {
        (tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (tail.len() - 1) as f64).sqrt()
    };
    TrainSummary {
        variant,
        seed: rec.seed,
        iterations: n,
        training_return: rec.training_return(),
        training_return_std: std,
        window,
        mean_returns: rec.mean_returns.clone(),
        mean_episode_lengths: rec.mean_episode_lengths.clone(),
        policy_loss: rec.policy_loss.clone(),
        value_loss: rec.value_loss.clone(),
        entropy: rec.entropy.clone(),
        clip_fraction: rec.clip_fraction.clone(),
    }
}

/// Trains one (variant, seed) into `dir`, or reloads it when present.
///
/// Returns `Ok(Err(failure))` when training aborted; the failure is
/// persisted so reruns do not retry it.
pub fn train_run(
    env: &EnvSpec<f64>,
    config: &PpoConfig<f64>,
    variant: Variant,
    seed: u64,
    dir: &Path,
    computed: &mut usize,
) -> Result<std::result::Result<(TrainSummary, Agent<f64>), Failure>, HarnessError> {
    let failed = dir.join("failed.json");
    if failed.exists() {
        return Ok(Err(json_read(&failed)?));
    }
    let (ckpt, summary_path) = (dir.join("checkpoint.json"), dir.join("train.json"));
    if ckpt.exists() && summary_path.exists() {
        return Ok(Ok((json_read(&summary_path)?, load_checkpoint(&ckpt)?)));
    }
    *computed += 1;
    match train(env, config, seed) {
        Ok(rec) => {
            let summary = summarize(variant, &rec);
            std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            save_checkpoint(&rec.agent, &ckpt)?;
            json_write(&summary_path, &summary)?;
            Ok(Ok((summary, rec.agent)))
        }
        Err(e @ (BenchError::TrainingDiverged { .. } | BenchError::NonFinite(_))) => {
            let f = Failure {
                variant,
                seed,
                reason: e.to_string(),
            };
            json_write(&failed, &f)?;
            Ok(Err(f))
        }
        Err(e) => Err(e.into()),
    }
}

/// Sweeps `agent` over `channels`; channel `c` uses its own stream of `seed`,
/// so a sweep does not depend on which other channels are requested.
pub fn evaluate_agent(
    agent: &Agent<f64>,
    env: &EnvSpec<f64>,
    channels: &[Channel],
    grid: &ScaleGrid<f64>,
    varied_params: &[ContextParam],
    rollouts: usize,
    seed: u64,
) -> crate::Result<Vec<SweepResult<f64>>> {
    channels
        .iter()
        .map(|&c| {
            let mut rng = derive_stream(seed, eval_stream(c));
            sweep_params(agent, env, c, varied_params, grid, rollouts, &mut rng)
        })
        .collect()
}

fn sweep_rows(
    spec: &ExperimentSpec,
    variant: Variant,
    seed: u64,
    training_return: f64,
    sw: &SweepResult<f64>,
    out: &mut ReportSet,
) {
    for (&scale, stats) in sw.grid.values().iter().zip(&sw.per_scale) {
        out.rows.push(ReportRow {
            experiment_id: spec.id.clone(),
            env: spec.env.name().into(),
            variant: variant.name().into(),
            seed,
            channel: sw.channel.name().into(),
            scale,
            mean_return: stats.mean,
            std_return: stats.std,
            n_episodes: stats.n(),
            training_return,
        });
    }
    out.auc.push(AucRow {
        experiment_id: spec.id.clone(),
        env: spec.env.name().into(),
        variant: variant.name().into(),
        seed,
        channel: sw.channel.name().into(),
        auc: sw.auc,
    });
}

fn heatmap_rows(
    spec: &ExperimentSpec,
    variant: Variant,
    seed: u64,
    training_return: f64,
    h: &HeatmapResult<f64>,
    out: &mut ReportSet,
) {
    let ny = h.grid_y.len();
    for (ix, &mx) in h.grid_x.iter().enumerate() {
        for (iy, &my) in h.grid_y.iter().enumerate() {
            let c = &h.cells[ix][iy];
            out.rows.push(ReportRow {
                experiment_id: spec.id.clone(),
                env: spec.env.name().into(),
                variant: variant.name().into(),
                seed,
                channel: HEATMAP_CHANNEL.into(),
                scale: (ix * ny + iy) as f64,
                mean_return: c.mean,
                std_return: c.std,
                n_episodes: c.n(),
                training_return,
            });
            out.heatmap.push(HeatmapRow {
                experiment_id: spec.id.clone(),
                env: spec.env.name().into(),
                variant: variant.name().into(),
                seed,
                param_x: h.param_x.name().into(),
                mult_x: mx,
                param_y: h.param_y.name().into(),
                mult_y: my,
                mean_return: c.mean,
                std_return: c.std,
                n_episodes: c.n(),
            });
        }
    }
}

struct SeedOutcome {
    report: ReportSet,
    failure: Option<Failure>,
    computed: usize,
}

fn run_seed(spec: &ExperimentSpec, variant: Variant, seed: u64) -> Result<SeedOutcome, HarnessError> {
    let env = spec_for::<f64>(spec.env);
    let dir = run_dir(&spec.output_dir, variant, seed);
    let mut computed = 0;
    let mut report = ReportSet::default();
    let (summary, agent) = match train_run(&env, &spec.ppo_config(variant), variant, seed, &dir, &mut computed)? {
        Ok(ok) => ok,
        Err(f) => {
            report.rows.push(ReportRow {
                experiment_id: spec.id.clone(),
                env: spec.env.name().into(),
                variant: variant.name().into(),
                seed,
                channel: FAILED_CHANNEL.into(),
                scale: 0.0,
                mean_return: 0.0,
                std_return: 0.0,
                n_episodes: 0,
                training_return: 0.0,
            });
            return Ok(SeedOutcome {
                report,
                failure: Some(f),
                computed,
            });
        }
    };
    let tr = summary.training_return;
    report.rows.push(ReportRow {
        experiment_id: spec.id.clone(),
        env: spec.env.name().into(),
        variant: variant.name().into(),
        seed,
        channel: TRAIN_CHANNEL.into(),
        scale: 0.0,
        mean_return: tr,
        std_return: summary.training_return_std,
        n_episodes: summary.window,
        training_return: tr,
    });

    for &channel in &spec.test_channels {
        let path = dir.join(format!("sweep_{channel}.json"));
        let sw: SweepResult<f64> = if path.exists() {
            json_read(&path)?
        } else {
            computed += 1;
            let sw = evaluate_agent(
                &agent,
                &env,
                &[channel],
                &spec.grid,
                &spec.test_varied_params,
                spec.rollouts,
                seed,
            )?
            .remove(0);
            json_write(&path, &sw)?;
            sw
        };
        sweep_rows(spec, variant, seed, tr, &sw, &mut report);
    }

    if let Some(h) = &spec.heatmap {
        let path = dir.join("heatmap.json");
        let hm: HeatmapResult<f64> = if path.exists() {
            json_read(&path)?
        } else {
            computed += 1;
            let mut rng = derive_stream(seed, HEATMAP_STREAM);
            let hm = heatmap(&agent, &env, h.param_x, h.param_y, &h.grid_x, &h.grid_y, spec.rollouts, &mut rng)?;
            json_write(&path, &hm)?;
            hm
        };
        heatmap_rows(spec, variant, seed, tr, &hm, &mut report);
    }
    Ok(SeedOutcome {
        report,
        failure: None,
        computed,
    })
}

/// Writes `experiment.cfg`, or checks that an existing one describes the
/// same experiment (output directory and worker count may differ).
fn claim_output_dir(spec: &ExperimentSpec) -> Result<(), HarnessError> {
    let path = spec.output_dir.join(CONFIG_FILE);
    if path.exists() {
        let existing = parse_config(&read_to_string(&path)?)?;
        let normalize = |s: &ExperimentSpec| ExperimentSpec {
            output_dir: PathBuf::new(),
            workers: 0,
            ..s.clone()
        };
        if normalize(&existing) != normalize(spec) {
            return Err(HarnessError::Format {
                path,
                message: "output directory holds a different experiment".into(),
            });
        }
        return Ok(());
    }
    write_atomic(&path, emit_config(spec).as_bytes())
}

/// Trains and evaluates every (variant, seed) of `spec`, in parallel up to
/// `spec.workers`, and writes the CSV reports. Aborted training runs become
/// `failed` rows; the remaining seeds still run.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunOutcome, HarnessError> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.output_dir).map_err(|source| HarnessError::Io {
        path: spec.output_dir.clone(),
        source,
    })?;
    claim_output_dir(spec)?;

    let jobs: Vec<(Variant, u64)> = spec
        .variants
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let outcomes: Vec<SeedOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, s)| run_seed(spec, v, s))
            .collect::<Result<_, _>>()
    })?;

    let mut report = ReportSet::default();
    let mut failures = Vec::new();
    let mut computed = 0;
    for o in outcomes {
        report.extend(o.report);
        failures.extend(o.failure);
        computed += o.computed;
    }
    report.sort();
    write_report_set(&report, &spec.output_dir)?;
    Ok(RunOutcome {
        report,
        failures,
        computed,
    })
}

/// Writes the CSV files and `analysis.json` into `out_dir`.
pub fn emit_reports(set: &ReportSet, analysis: &Analysis, out_dir: &Path) -> Result<(), HarnessError> {
    write_report_set(set, out_dir)?;
    let path = out_dir.join(report::ANALYSIS_FILE);
    let mut text = serde_json::to_string_pretty(analysis).map_err(|e| HarnessError::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())
}
