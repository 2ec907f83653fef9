//! Experiment configuration: a flat, sectioned `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! [experiment]
//! id = pendulum-baselines
//! env = pendulum
//! variant = vanilla, ent, scn
//! seeds = 0,1,2,3
//!
//! [train]
//! scale = 0.3
//!
//! [test]
//! channels = obs, dom
//! grid = 0.0, 0.1, 0.2
//!
//! [ppo]
//! total_steps = 20480
//! ```
//!
//! Sections and keys:
//!
//! * `[experiment]`: `id`, `env`, `variant` (one or more), `seeds`,
//!   `rollouts`, `output_dir`, `workers` (0 = all cores), `correlation`
//!   (`best` or `average`).
//! * `[train]`: `channel`, `scale`, `varied_params`; overrides the training
//!   plan implied by each variant.
//! * `[test]`: `channels`, `grid`, `grid_step` (needed for a one-point grid),
//!   `varied_params`, `heatmap_x`, `heatmap_y`, `heatmap_grid_x`,
//!   `heatmap_grid_y`.
//! * `[ppo]`: every [`PpoConfig`] field except the training plan;
//!   `max_grad_norm = none` disables clipping.
//!
//! `[train]` and `[ppo]` keys override the variant defaults for every listed
//! variant.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envsim::{ContextParam, EnvKind};
use crate::eval::{ScaleGrid, DEFAULT_ROLLOUTS};
use crate::perturb::{default_varied_params, Channel, PerturbationPlan};
use crate::policy::PolicyKind;
use crate::train::{PpoConfig, DEFAULT_ARPL_EPSILON, DEFAULT_ENTROPY_COEF};

/// Training-noise scale of the noisy-training and multi-domain variants.
pub const VARIANT_TRAIN_SCALE: f64 = 0.2;

/// A configuration error, with the 1-based line it was found on (0 when the
/// problem is not tied to a line).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

/// Training algorithm or architecture under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "ent")]
    Ent,
    #[serde(rename = "scn")]
    Scn,
    #[serde(rename = "scn16")]
    Scn16,
    #[serde(rename = "mlp16")]
    Mlp16,
    #[serde(rename = "arpl")]
    Arpl,
    #[serde(rename = "mdl")]
    Mdl,
    #[serde(rename = "noisy-obs")]
    NoisyObs,
    #[serde(rename = "noisy-act")]
    NoisyAct,
    #[serde(rename = "noisy-env")]
    NoisyEnv,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Vanilla,
        Variant::Ent,
        Variant::Scn,
        Variant::Scn16,
        Variant::Mlp16,
        Variant::Arpl,
        Variant::Mdl,
        Variant::NoisyObs,
        Variant::NoisyAct,
        Variant::NoisyEnv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Ent => "ent",
            Variant::Scn => "scn",
            Variant::Scn16 => "scn16",
            Variant::Mlp16 => "mlp16",
            Variant::Arpl => "arpl",
            Variant::Mdl => "mdl",
            Variant::NoisyObs => "noisy-obs",
            Variant::NoisyAct => "noisy-act",
            Variant::NoisyEnv => "noisy-env",
        }
    }

    /// The channel a noisy-training variant trains under.
    pub fn noisy_channel(self) -> Option<Channel> {
        match self {
            Variant::NoisyObs => Some(Channel::Obs),
            Variant::NoisyAct => Some(Channel::Act),
            Variant::NoisyEnv => Some(Channel::Env),
            _ => None,
        }
    }

    /// Default PPO configuration for this variant on `env`.
    pub fn ppo_config(self, env: EnvKind) -> PpoConfig<f64> {
        let mut c = PpoConfig::default();
        match self {
            Variant::Vanilla => {}
            Variant::Ent => c.entropy_coef = DEFAULT_ENTROPY_COEF,
            Variant::Scn => c.policy_kind = PolicyKind::Scn,
            Variant::Scn16 => {
                c.policy_kind = PolicyKind::Scn;
                c.hidden_width = 16;
            }
            Variant::Mlp16 => c.hidden_width = 16,
            Variant::Arpl => c.arpl_epsilon = DEFAULT_ARPL_EPSILON,
            Variant::Mdl => c.train_plan = PerturbationPlan::dom(VARIANT_TRAIN_SCALE, default_varied_params(env)),
            Variant::NoisyObs | Variant::NoisyAct | Variant::NoisyEnv => {
                let ch = self.noisy_channel().unwrap();
                c.train_plan = PerturbationPlan::for_channel(ch, VARIANT_TRAIN_SCALE, env);
            }
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// How Fig. 5-style points summarise the seeds of a variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    /// The seed with the highest training return.
    #[default]
    Best,
    /// Seed averages of training return and AUC.
    Average,
}

impl CorrelationMode {
    pub fn name(self) -> &'static str {
        match self {
            CorrelationMode::Best => "best",
            CorrelationMode::Average => "average",
        }
    }
}

impl FromStr for CorrelationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "best" => Ok(CorrelationMode::Best),
            "average" => Ok(CorrelationMode::Average),
            other => Err(format!("unknown correlation mode `{other}` (expected best or average)")),
        }
    }
}

/// Two-parameter domain-shift grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub param_x: ContextParam,
    pub param_y: ContextParam,
    /// Multipliers of the nominal value.
    pub grid_x: Vec<f64>,
    pub grid_y: Vec<f64>,
}

impl HeatmapSpec {
    pub fn cells(&self) -> usize {
        self.grid_x.len() * self.grid_y.len()
    }
}

/// `[train]` overrides; unset fields keep the variant's plan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOverrides {
    pub channel: Option<Channel>,
    pub scale: Option<f64>,
    pub varied_params: Option<Vec<ContextParam>>,
}

/// `[ppo]` overrides; unset fields keep the variant's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoOverrides {
    pub steps_per_batch: Option<usize>,
    pub epochs_per_iter: Option<usize>,
    pub minibatch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub discount: Option<f64>,
    pub clip_range: Option<f64>,
    pub total_steps: Option<usize>,
    pub entropy_coef: Option<f64>,
    pub arpl_epsilon: Option<f64>,
    pub value_coef: Option<f64>,
    pub lr_anneal: Option<bool>,
    /// `Some(None)` disables clipping explicitly.
    pub max_grad_norm: Option<Option<f64>>,
    pub reward_scaling: Option<bool>,
    pub policy_kind: Option<PolicyKind>,
    pub hidden_width: Option<usize>,
}

/// A validated experiment: one environment, one or more variants, a seed
/// list and the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub env: EnvKind,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub rollouts: usize,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub correlation: CorrelationMode,
    pub train: TrainOverrides,
    pub ppo: PpoOverrides,
    pub test_channels: Vec<Channel>,
    pub grid: ScaleGrid<f64>,
    pub test_varied_params: Vec<ContextParam>,
    pub heatmap: Option<HeatmapSpec>,
}

impl ExperimentSpec {
    /// Defaults for `env` and `variants`: seeds 0..11, 20 rollouts, every
    /// test channel on the default grid.
    pub fn new(id: impl Into<String>, env: EnvKind, variants: Vec<Variant>) -> Self {
        ExperimentSpec {
            id: id.into(),
            env,
            variants,
            seeds: (0..12).collect(),
            rollouts: DEFAULT_ROLLOUTS,
            output_dir: PathBuf::from("genbench-out"),
            workers: 0,
            correlation: CorrelationMode::Best,
            train: TrainOverrides::default(),
            ppo: PpoOverrides::default(),
            test_channels: Channel::TEST_CHANNELS.to_vec(),
            grid: ScaleGrid::default_grid(),
            test_varied_params: default_varied_params(env),
            heatmap: None,
        }
    }

    /// Resolved PPO configuration (variant defaults plus overrides).
    pub fn ppo_config(&self, variant: Variant) -> PpoConfig<f64> {
        let mut c = variant.ppo_config(self.env);
        let o = &self.ppo;
        macro_rules! apply {
            ($($f:ident),*) => {$(if let Some(v) = o.$f.clone() { c.$f = v; })*};
        }
        apply!(
            steps_per_batch,
            epochs_per_iter,
            minibatch_size,
            learning_rate,
            gae_lambda,
            discount,
            clip_range,
            total_steps,
            entropy_coef,
            arpl_epsilon,
            value_coef,
            lr_anneal,
            max_grad_norm,
            reward_scaling,
            policy_kind,
            hidden_width
        );
        let t = &self.train;
        if let Some(ch) = t.channel {
            c.train_plan.channel = ch;
            if ch.varies_dynamics() && c.train_plan.varied_params.is_empty() {
                c.train_plan.varied_params = default_varied_params(self.env);
            }
            if !ch.varies_dynamics() {
                c.train_plan.varied_params.clear();
            }
            if ch == Channel::None {
                c.train_plan.scale = 0.0;
            } else if t.scale.is_none() && c.train_plan.scale == 0.0 {
                c.train_plan.scale = VARIANT_TRAIN_SCALE;
            }
        }
        if let Some(s) = t.scale {
            c.train_plan.scale = s;
        }
        if let Some(p) = &t.varied_params {
            c.train_plan.varied_params = p.clone();
        }
        c
    }

    /// Rows `run_experiment` emits when every seed succeeds.
    pub fn expected_rows(&self) -> usize {
        let per_seed = self.test_channels.len() * self.grid.len() + 1 + self.heatmap.as_ref().map_or(0, |h| h.cells());
        self.variants.len() * self.seeds.len() * per_seed
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_at(&KeyLines::default())
    }

    fn validate_at(&self, lines: &KeyLines) -> Result<(), ConfigError> {
        let err = |key: &str, msg: String| Err(ConfigError::new(lines.get(key), msg));
        if self.id.is_empty() || self.id.contains(|c: char| c == ',' || c == '/' || c.is_whitespace()) {
            return err("experiment.id", format!("invalid experiment id `{}`", self.id));
        }
        if self.variants.is_empty() {
            return err("experiment.variant", "at least one variant is required".into());
        }
        if let Some(v) = first_duplicate(&self.variants) {
            return err("experiment.variant", format!("duplicate variant `{v}`"));
        }
        if self.seeds.is_empty() {
            return err("experiment.seeds", "seed list is empty".into());
        }
        if let Some(s) = first_duplicate(&self.seeds) {
            return err("experiment.seeds", format!("duplicate seed {s}"));
        }
        if self.rollouts == 0 {
            return err("experiment.rollouts", "rollouts must be at least 1".into());
        }
        if self.test_channels.is_empty() {
            return err("test.channels", "at least one test channel is required".into());
        }
        if let Some(c) = self.test_channels.iter().find(|c| **c == Channel::None) {
            return err("test.channels", format!("`{c}` is not a test channel (use obs, act, env or dom)"));
        }
        if let Some(c) = first_duplicate(&self.test_channels) {
            return err("test.channels", format!("duplicate test channel `{c}`"));
        }
        let needs_params = self.test_channels.iter().any(|c| c.varies_dynamics());
        if needs_params && self.test_varied_params.is_empty() {
            return err("test.varied_params", "env/dom testing needs at least one varied parameter".into());
        }
        if let Some(h) = &self.heatmap {
            if h.param_x == h.param_y {
                return err("test.heatmap_y", "heatmap parameters must differ".into());
            }
            for (key, g) in [("test.heatmap_grid_x", &h.grid_x), ("test.heatmap_grid_y", &h.grid_y)] {
                if g.is_empty() {
                    return err(key, "heatmap grid is empty".into());
                }
                if g.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
                    return err(key, "heatmap multipliers must be positive".into());
                }
            }
        }
        for &v in &self.variants {
            let c = self.ppo_config(v);
            if let Err(e) = c.validate() {
                let key = if e.to_string().contains("perturbation") || e.to_string().contains("varied") {
                    "train.scale"
                } else {
                    "ppo"
                };
                return err(key, format!("variant `{v}`: {e}"));
            }
        }
        Ok(())
    }
}

fn first_duplicate<T: Ord + Clone>(xs: &[T]) -> Option<T> {
    let mut seen = BTreeSet::new();
    xs.iter().find(|x| !seen.insert((*x).clone())).cloned()
}

/// Line numbers of the keys seen while parsing (`section.key` → line).
#[derive(Debug, Default)]
struct KeyLines(Vec<(String, usize)>);

impl KeyLines {
    fn get(&self, key: &str) -> usize {
        self.0
            .iter()
            .find(|(k, _)| k == key || (!key.contains('.') && k.starts_with(&format!("{key}."))))
            .map_or(0, |(_, l)| *l)
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| ConfigError::new(line, format!("invalid value `{raw}` for `{key}`: {e}")))
}

fn parse_list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|s| parse_value(line, key, s.trim())).collect()
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::new(line, format!("`{key}` expects true or false, got `{raw}`"))),
    }
}

const SECTIONS: [&str; 4] = ["experiment", "train", "test", "ppo"];

/// Parses and validates a config. Every error carries its line number.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let mut entries: Vec<(String, String, usize)> = Vec::new();
    let mut section: Option<String> = None;
    let mut lines = KeyLines::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::new(line, format!("malformed section header `{content}`")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::new(line, format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::new(line, format!("expected `key = value`, got `{content}`")))?;
        let sec = section
            .as_deref()
            .ok_or_else(|| ConfigError::new(line, "key outside of any section"))?;
        let full = format!("{sec}.{}", key.trim());
        if lines.0.iter().any(|(k, _)| *k == full) {
            return Err(ConfigError::new(line, format!("duplicate key `{full}`")));
        }
        lines.0.push((full.clone(), line));
        entries.push((full, value.trim().to_string(), line));
    }

    let find = |key: &str| entries.iter().find(|(k, _, _)| k == key).map(|(_, v, l)| (v.as_str(), *l));
    let (env_raw, env_line) = find("experiment.env").ok_or_else(|| ConfigError::new(0, "missing `env` in [experiment]"))?;
    let env: EnvKind = parse_value(env_line, "env", env_raw)?;
    let (var_raw, var_line) = find("experiment.variant").unwrap_or(("vanilla", 0));
    let variants: Vec<Variant> = parse_list(var_line, "variant", var_raw)?;
    let default_id = format!(
        "{}-{}",
        env,
        variants.iter().map(|v| v.name()).collect::<Vec<_>>().join("-")
    );
    let mut spec = ExperimentSpec::new(default_id, env, variants);
    let mut grid_values: Option<(Vec<f64>, usize)> = None;
    let mut grid_step: Option<(f64, usize)> = None;
    let mut heat_x: Option<ContextParam> = None;
    let mut heat_y: Option<ContextParam> = None;
    let mut heat_gx: Option<Vec<f64>> = None;
    let mut heat_gy: Option<Vec<f64>> = None;
    let mut heat_line = 0;

    for (key, value, line) in &entries {
        let (line, v) = (*line, value.as_str());
        let short = key.split_once('.').map_or(key.as_str(), |(_, k)| k);
        let o = &mut spec.ppo;
        match key.as_str() {
            "experiment.env" | "experiment.variant" => {}
            "experiment.id" => spec.id = v.to_string(),
            "experiment.seeds" => spec.seeds = parse_list(line, short, v)?,
            "experiment.rollouts" => spec.rollouts = parse_value(line, short, v)?,
            "experiment.output_dir" => spec.output_dir = PathBuf::from(v),
            "experiment.workers" => spec.workers = parse_value(line, short, v)?,
            "experiment.correlation" => spec.correlation = parse_value(line, short, v)?,
            "train.channel" => spec.train.channel = Some(parse_value(line, short, v)?),
            "train.scale" => spec.train.scale = Some(parse_value(line, short, v)?),
            "train.varied_params" => spec.train.varied_params = Some(parse_list(line, short, v)?),
            "test.channels" => spec.test_channels = parse_list(line, short, v)?,
            "test.grid" => grid_values = Some((parse_list(line, short, v)?, line)),
            "test.grid_step" => grid_step = Some((parse_value(line, short, v)?, line)),
            "test.varied_params" => spec.test_varied_params = parse_list(line, short, v)?,
            "test.heatmap_x" => (heat_x, heat_line) = (Some(parse_value(line, short, v)?), line),
            "test.heatmap_y" => (heat_y, heat_line) = (Some(parse_value(line, short, v)?), line),
            "test.heatmap_grid_x" => (heat_gx, heat_line) = (Some(parse_list(line, short, v)?), line),
            "test.heatmap_grid_y" => (heat_gy, heat_line) = (Some(parse_list(line, short, v)?), line),
            "ppo.steps_per_batch" => o.steps_per_batch = Some(parse_value(line, short, v)?),
            "ppo.epochs_per_iter" => o.epochs_per_iter = Some(parse_value(line, short, v)?),
            "ppo.minibatch_size" => o.minibatch_size = Some(parse_value(line, short, v)?),
            "ppo.learning_rate" => o.learning_rate = Some(parse_value(line, short, v)?),
            "ppo.gae_lambda" => o.gae_lambda = Some(parse_value(line, short, v)?),
            "ppo.discount" => o.discount = Some(parse_value(line, short, v)?),
            "ppo.clip_range" => o.clip_range = Some(parse_value(line, short, v)?),
            "ppo.total_steps" => o.total_steps = Some(parse_value(line, short, v)?),
            "ppo.entropy_coef" => o.entropy_coef = Some(parse_value(line, short, v)?),
            "ppo.arpl_epsilon" => o.arpl_epsilon = Some(parse_value(line, short, v)?),
            "ppo.value_coef" => o.value_coef = Some(parse_value(line, short, v)?),
            "ppo.lr_anneal" => o.lr_anneal = Some(parse_bool(line, short, v)?),
            "ppo.reward_scaling" => o.reward_scaling = Some(parse_bool(line, short, v)?),
            "ppo.max_grad_norm" => {
                o.max_grad_norm = Some(if v == "none" { None } else { Some(parse_value(line, short, v)?) })
            }
            "ppo.policy_kind" => o.policy_kind = Some(parse_value(line, short, v)?),
            "ppo.hidden_width" => o.hidden_width = Some(parse_value(line, short, v)?),
            other => return Err(ConfigError::new(line, format!("unknown key `{other}`"))),
        }
    }

    if let Some((values, line)) = grid_values {
        let grid = match (values.len(), grid_step) {
            (_, Some((step, _))) => ScaleGrid::new(values, step),
            (1, None) => {
                return Err(ConfigError::new(line, "a one-point grid needs `grid_step`"));
            }
            _ => ScaleGrid::from_values(values),
        };
        spec.grid = grid.map_err(|e| ConfigError::new(line, e.to_string()))?;
    } else if let Some((_, line)) = grid_step {
        return Err(ConfigError::new(line, "`grid_step` given without `grid`"));
    }

    match (heat_x, heat_y, heat_gx, heat_gy) {
        (None, None, None, None) => {}
        (Some(param_x), Some(param_y), Some(grid_x), Some(grid_y)) => {
            spec.heatmap = Some(HeatmapSpec {
                param_x,
                param_y,
                grid_x,
                grid_y,
            })
        }
        _ => {
            return Err(ConfigError::new(
                heat_line,
                "a heatmap needs heatmap_x, heatmap_y, heatmap_grid_x and heatmap_grid_y",
            ))
        }
    }

    spec.validate_at(&lines)?;
    Ok(spec)
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Writes `spec` in the config format; `parse_config` of the result equals
/// `spec`.
pub fn emit_config(spec: &ExperimentSpec) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "[experiment]");
    let _ = writeln!(w, "id = {}", spec.id);
    let _ = writeln!(w, "env = {}", spec.env);
    let _ = writeln!(w, "variant = {}", join(&spec.variants));
    let _ = writeln!(w, "seeds = {}", join(&spec.seeds));
    let _ = writeln!(w, "rollouts = {}", spec.rollouts);
    let _ = writeln!(w, "output_dir = {}", spec.output_dir.display());
    let _ = writeln!(w, "workers = {}", spec.workers);
    let _ = writeln!(w, "correlation = {}", spec.correlation.name());

    let t = &spec.train;
    if t != &TrainOverrides::default() {
        let _ = writeln!(w, "\n[train]");
        if let Some(c) = t.channel {
            let _ = writeln!(w, "channel = {c}");
        }
        if let Some(x) = t.scale {
            let _ = writeln!(w, "scale = {x:?}");
        }
        if let Some(p) = &t.varied_params {
            let _ = writeln!(w, "varied_params = {}", join(p));
        }
    }

    let _ = writeln!(w, "\n[test]");
    let _ = writeln!(w, "channels = {}", join(&spec.test_channels));
    let grid: Vec<String> = spec.grid.values().iter().map(|x| format!("{x:?}")).collect();
    let _ = writeln!(w, "grid = {}", grid.join(", "));
    let _ = writeln!(w, "grid_step = {:?}", spec.grid.step());
    let _ = writeln!(w, "varied_params = {}", join(&spec.test_varied_params));
    if let Some(h) = &spec.heatmap {
        let fmt = |g: &[f64]| g.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(w, "heatmap_x = {}", h.param_x);
        let _ = writeln!(w, "heatmap_y = {}", h.param_y);
        let _ = writeln!(w, "heatmap_grid_x = {}", fmt(&h.grid_x));
        let _ = writeln!(w, "heatmap_grid_y = {}", fmt(&h.grid_y));
    }

    let o = &spec.ppo;
    if o != &PpoOverrides::default() {
        let _ = writeln!(w, "\n[ppo]");
        macro_rules! emit {
            ($($f:ident),*) => {$(if let Some(v) = &o.$f { let _ = writeln!(w, "{} = {:?}", stringify!($f), v); })*};
        }
        emit!(
            steps_per_batch,
            epochs_per_iter,
            minibatch_size,
            learning_rate,
            gae_lambda,
            discount,
            clip_range,
            total_steps,
            entropy_coef,
            arpl_epsilon,
            value_coef,
            lr_anneal,
            reward_scaling,
            hidden_width
        );
        match o.max_grad_norm {
            Some(Some(g)) => {
                let _ = writeln!(w, "max_grad_norm = {g:?}");
            }
            Some(None) => {
                let _ = writeln!(w, "max_grad_norm = none");
            }
            None => {}
        }
        if let Some(k) = o.policy_kind {
            let _ = writeln!(w, "policy_kind = {k}");
        }
    }
    s
}

/// Applies a `section.key=value` override on top of a config text, replacing
/// any existing value. Replaced lines are blanked rather than removed and the
/// override is appended in its own section block, so line numbers in later
/// errors still point into the original file.
pub fn apply_override(text: &str, assignment: &str) -> Result<String, ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new(0, format!("override `{assignment}` is not `section.key=value`")))?;
    let (section, key) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| ConfigError::new(0, format!("override key `{key}` has no section")))?;
    if !SECTIONS.contains(&section) {
        return Err(ConfigError::new(0, format!("unknown section `{section}` in override")));
    }
    let mut out = Vec::new();
    let mut current = String::new();
    for raw in text.lines() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = content.strip_prefix('[').and_then(|n| n.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section && content.split_once('=').is_some_and(|(k, _)| k.trim() == key) {
            out.push(String::new());
            continue;
        }
        out.push(raw.to_string());
    }
    out.push(format!("[{section}]"));
    out.push(format!("{key} = {}", value.trim()));
    Ok(out.join("\n") + "\n")
}
