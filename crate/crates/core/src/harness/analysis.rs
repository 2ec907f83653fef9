//! Cross-variant analysis of report rows: Welch comparisons against vanilla
//! PPO, training-vs-testing correlation, Pareto frontiers and noisy-training
//! tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{CorrelationMode, Variant, VARIANT_TRAIN_SCALE};
use super::report::{ReportSet, FAILED_CHANNEL, TRAIN_CHANNEL};
use crate::eval::{pareto_indices, pearson, welch_t_test, ParetoPoint, StatTestResult};

/// Variant every other variant is compared against.
pub const BASELINE_VARIANT: &str = "vanilla";
/// Testing scales reported in noisy-training tables.
pub const NOISY_TABLE_TEST_SCALES: [f64; 3] = [0.0, 0.2, 0.4];
const SCALE_TOL: f64 = 1e-9;

/// Mean and sample standard deviation of a handful of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(MeanStd { mean, std, n })
    }
}

/// One variant-vs-baseline Welch test; `test` is `None` when skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variant: String,
    pub baseline: String,
    pub variant_stats: Option<MeanStd>,
    pub baseline_stats: Option<MeanStd>,
    /// `mean(variant) − mean(baseline)`.
    pub effect: Option<f64>,
    pub test: Option<StatTestResult>,
    /// One-sided p-value for `variant > baseline`.
    pub p_greater: Option<f64>,
    pub skipped: Option<String>,
}

impl Comparison {
    fn run(variant: &str, baseline: &str, a: &[f64], b: &[f64]) -> Self {
        let (va, vb) = (MeanStd::of(a), MeanStd::of(b));
        let effect = va.zip(vb).map(|(x, y)| x.mean - y.mean);
        let (test, skipped) = match welch_t_test(a, b) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Comparison {
            variant: variant.to_string(),
            baseline: baseline.to_string(),
            variant_stats: va,
            baseline_stats: vb,
            effect,
            p_greater: test.map(|t| t.p_greater()),
            test,
            skipped,
        }
    }
}

/// A (training return, testing AUC) point; `seed` is `None` for averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub variant: String,
    pub seed: Option<u64>,
    pub train_return: f64,
    pub test_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub auc: MeanStd,
    /// Mean AUC divided by the baseline's mean AUC for the same channel.
    pub auc_over_vanilla_auc: Option<f64>,
    pub training_return: MeanStd,
    /// The variant's point for correlation and Pareto analysis.
    pub point: ParetoEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAnalysis {
    pub welch: Vec<Comparison>,
    /// Pearson r over every (seed, variant) point.
    pub pearson: Option<f64>,
    pub pearson_points: usize,
    /// Pearson r over the per-variant points (needs three variants).
    pub pearson_variants: Option<f64>,
    pub skipped: Vec<String>,
    /// Non-dominated per-variant points, by training return ascending.
    pub pareto: Vec<ParetoEntry>,
    pub variants: Vec<VariantSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub env: String,
    pub variant: String,
    pub seeds: usize,
    pub failed: usize,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyCell {
    pub sigma_test: f64,
    pub testing_return: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyRow {
    pub variant: String,
    pub sigma_train: f64,
    pub training_return: Option<MeanStd>,
    pub cells: Vec<NoisyCell>,
}

/// Deterministic- versus noise-trained policies on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyTable {
    pub env: String,
    pub channel: String,
    pub rows: Vec<NoisyRow>,
    /// Noise-trained versus baseline per-seed testing returns, per σ_test.
    pub comparisons: Vec<(f64, Comparison)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub correlation_mode: CorrelationMode,
    /// env → channel → analysis.
    pub envs: BTreeMap<String, BTreeMap<String, ChannelAnalysis>>,
    pub failures: Vec<FailureSummary>,
    pub noisy_training: Vec<NoisyTable>,
}

/// Identifies one training run across experiments.
type RunKey = (String, u64);

#[derive(Default)]
struct VariantData {
    runs: Vec<RunKey>,
    failed: Vec<RunKey>,
    training: BTreeMap<RunKey, f64>,
    /// channel → run → AUC
    auc: BTreeMap<String, BTreeMap<RunKey, f64>>,
    /// channel → run → [(scale, mean)]
    sweep: BTreeMap<String, BTreeMap<RunKey, Vec<(f64, f64)>>>,
}

impl VariantData {
    fn ok(&self, run: &RunKey) -> bool {
        !self.failed.contains(run)
    }
}

fn collect(set: &ReportSet) -> BTreeMap<String, BTreeMap<String, VariantData>> {
    let mut by_env: BTreeMap<String, BTreeMap<String, VariantData>> = BTreeMap::new();
    for r in &set.rows {
        let d = by_env
            .entry(r.env.clone())
            .or_default()
            .entry(r.variant.clone())
            .or_default();
        let run = (r.experiment_id.clone(), r.seed);
        if !d.runs.contains(&run) {
            d.runs.push(run.clone());
        }
        match r.channel.as_str() {
            FAILED_CHANNEL => d.failed.push(run),
            TRAIN_CHANNEL => {
                d.training.insert(run, r.mean_return);
            }
            ch => d
                .sweep
                .entry(ch.to_string())
                .or_default()
                .entry(run)
                .or_default()
                .push((r.scale, r.mean_return)),
        }
    }
    for a in &set.auc {
        let d = by_env
            .entry(a.env.clone())
            .or_default()
            .entry(a.variant.clone())
            .or_default();
        d.auc
            .entry(a.channel.clone())
            .or_default()
            .insert((a.experiment_id.clone(), a.seed), a.auc);
    }
    by_env
}

fn variant_point(variant: &str, pts: &[(RunKey, f64, f64)], mode: CorrelationMode) -> Option<ParetoEntry> {
    match mode {
        CorrelationMode::Best => pts
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(run, tr, auc)| ParetoEntry {
                variant: variant.to_string(),
                seed: Some(run.1),
                train_return: *tr,
                test_auc: *auc,
            }),
        CorrelationMode::Average => {
            let tr = MeanStd::of(&pts.iter().map(|p| p.1).collect::<Vec<_>>())?;
            let auc = MeanStd::of(&pts.iter().map(|p| p.2).collect::<Vec<_>>())?;
            Some(ParetoEntry {
                variant: variant.to_string(),
                seed: None,
                train_return: tr.mean,
                test_auc: auc.mean,
            })
        }
    }
}

fn analyze_channel(
    channel: &str,
    variants: &BTreeMap<String, VariantData>,
    mode: CorrelationMode,
) -> ChannelAnalysis {
    let mut skipped = Vec::new();
    // per-variant (run, training return, auc) over successful runs
    let mut points: BTreeMap<&str, Vec<(RunKey, f64, f64)>> = BTreeMap::new();
    for (name, d) in variants {
        let Some(aucs) = d.auc.get(channel) else { continue };
        let pts: Vec<_> = aucs
            .iter()
            .filter(|(run, _)| d.ok(run))
            .filter_map(|(run, &auc)| d.training.get(run).map(|&tr| (run.clone(), tr, auc)))
            .collect();
        if !pts.is_empty() {
            points.insert(name, pts);
        }
    }

    let baseline_aucs: Option<Vec<f64>> = points.get(BASELINE_VARIANT).map(|p| p.iter().map(|x| x.2).collect());
    let baseline_mean = baseline_aucs.as_deref().and_then(MeanStd::of).map(|m| m.mean);

    let mut welch = Vec::new();
    if points.len() >= 2 {
        match &baseline_aucs {
            Some(base) => {
                for (name, pts) in &points {
                    if *name == BASELINE_VARIANT {
                        continue;
                    }
                    let a: Vec<f64> = pts.iter().map(|x| x.2).collect();
                    let c = Comparison::run(name, BASELINE_VARIANT, &a, base);
                    if let Some(reason) = &c.skipped {
                        skipped.push(format!("welch {name} vs {BASELINE_VARIANT}: {reason}"));
                    }
                    welch.push(c);
                }
            }
            None => skipped.push(format!("welch: no `{BASELINE_VARIANT}` rows to compare against")),
        }
    }

    let all: Vec<&(RunKey, f64, f64)> = points.values().flatten().collect();
    let xs: Vec<f64> = all.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = all.iter().map(|p| p.2).collect();
    let pearson_all = match pearson(&xs, &ys) {
        Ok(r) => Some(r),
        Err(e) => {
            skipped.push(format!("pearson over seeds: {e}"));
            None
        }
    };

    let mut summaries = Vec::new();
    for (name, pts) in &points {
        let auc = MeanStd::of(&pts.iter().map(|p| p.2).collect::<Vec<_>>()).unwrap();
        let training_return = MeanStd::of(&pts.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap();
        let point = variant_point(name, pts, mode).unwrap();
        summaries.push(VariantSummary {
            variant: name.to_string(),
            auc,
            auc_over_vanilla_auc: baseline_mean.filter(|m| *m != 0.0).map(|m| auc.mean / m),
            training_return,
            point,
        });
    }

    let vpts: Vec<ParetoPoint<f64>> = summaries
        .iter()
        .map(|s| ParetoPoint::new(s.point.train_return, s.point.test_auc))
        .collect();
    let pareto = if vpts.is_empty() {
        Vec::new()
    } else {
        pareto_indices(&vpts)
            .map(|idx| idx.into_iter().map(|i| summaries[i].point.clone()).collect())
            .unwrap_or_else(|e| {
                skipped.push(format!("pareto: {e}"));
                Vec::new()
            })
    };
    let pearson_variants = if summaries.len() >= 3 {
        let xs: Vec<f64> = summaries.iter().map(|s| s.point.train_return).collect();
        let ys: Vec<f64> = summaries.iter().map(|s| s.point.test_auc).collect();
        pearson(&xs, &ys)
            .map_err(|e| skipped.push(format!("pearson over variants: {e}")))
            .ok()
    } else {
        None
    };

    ChannelAnalysis {
        welch,
        pearson: pearson_all,
        pearson_points: all.len(),
        pearson_variants,
        skipped,
        pareto,
        variants: summaries,
    }
}

fn sweep_value(runs: &[(f64, f64)], scale: f64) -> Option<f64> {
    runs.iter().find(|(s, _)| (s - scale).abs() <= SCALE_TOL).map(|p| p.1)
}

fn noisy_table(env: &str, variants: &BTreeMap<String, VariantData>, noisy: Variant) -> Option<NoisyTable> {
    let channel = noisy.noisy_channel()?.name();
    let base = variants.get(BASELINE_VARIANT)?;
    let trained = variants.get(noisy.name())?;
    let per_seed = |d: &VariantData, scale: f64| -> Vec<f64> {
        d.sweep.get(channel).map_or_else(Vec::new, |m| {
            m.iter()
                .filter(|(run, _)| d.ok(run))
                .filter_map(|(_, pts)| sweep_value(pts, scale))
                .collect()
        })
    };
    let training = |d: &VariantData| -> Option<MeanStd> {
        let v: Vec<f64> = d.training.iter().filter(|(run, _)| d.ok(run)).map(|(_, &x)| x).collect();
        MeanStd::of(&v)
    };
    let row = |name: &str, sigma_train: f64, d: &VariantData| NoisyRow {
        variant: name.to_string(),
        sigma_train,
        training_return: training(d),
        cells: NOISY_TABLE_TEST_SCALES
            .iter()
            .map(|&s| NoisyCell {
                sigma_test: s,
                testing_return: MeanStd::of(&per_seed(d, s)),
            })
            .collect(),
    };
    let comparisons = NOISY_TABLE_TEST_SCALES
        .iter()
        .map(|&s| (s, Comparison::run(noisy.name(), BASELINE_VARIANT, &per_seed(trained, s), &per_seed(base, s))))
        .collect();
    Some(NoisyTable {
        env: env.to_string(),
        channel: channel.to_string(),
        rows: vec![row(BASELINE_VARIANT, 0.0, base), row(noisy.name(), VARIANT_TRAIN_SCALE, trained)],
        comparisons,
    })
}

/// Analysis of every (env, channel) present in `set`. Comparisons that lack
/// data are skipped with a recorded reason rather than failing.
pub fn analyze(set: &ReportSet, mode: CorrelationMode) -> Analysis {
    let data = collect(set);
    let mut envs = BTreeMap::new();
    let mut failures = Vec::new();
    let mut noisy_training = Vec::new();
    for (env, variants) in &data {
        let mut channels: Vec<&String> = variants.values().flat_map(|d| d.auc.keys()).collect();
        channels.sort();
        channels.dedup();
        let per_channel: BTreeMap<String, ChannelAnalysis> = channels
            .into_iter()
            .map(|c| (c.clone(), analyze_channel(c, variants, mode)))
            .collect();
        envs.insert(env.clone(), per_channel);
        for (name, d) in variants {
            let seeds = d.runs.len();
            failures.push(FailureSummary {
                env: env.clone(),
                variant: name.clone(),
                seeds,
                failed: d.failed.len(),
                failure_rate: if seeds == 0 { 0.0 } else { d.failed.len() as f64 / seeds as f64 },
            });
        }
        for v in [Variant::NoisyObs, Variant::NoisyAct, Variant::NoisyEnv] {
            noisy_training.extend(noisy_table(env, variants, v));
        }
    }
    Analysis {
        correlation_mode: mode,
        envs,
        failures,
        noisy_training,
    }
}
