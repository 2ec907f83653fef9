//! `genbench`: train, sweep, evaluate and report generalisation benchmarks.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime failure, 3 partial
//! (some seeds failed to train).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use genbench::envsim::{spec_for, ContextParam, EnvKind};
use genbench::eval::ScaleGrid;
use genbench::harness::config::{apply_override, CorrelationMode};
use genbench::harness::report::{to_csv, write_atomic, ReportSet};
use genbench::harness::{
    analyze, emit_reports, evaluate_agent, parse_config, read_report_set, run_dir, run_experiment, train_run,
    ConfigError, ExperimentSpec, HarnessError, Variant,
};
use genbench::perturb::{default_varied_params, Channel};
use genbench::policy::load_checkpoint;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(version, about = "Generalisation benchmark for continuous-control policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant on one seed and save its checkpoint
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        /// Variant to train (defaults to the first configured one)
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Run the full train → evaluate → analyse protocol of a config
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Sweep a saved checkpoint over test channels
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: EnvKind,
        #[arg(long, value_delimiter = ',', default_value = "obs,act,env,dom")]
        channels: Vec<Channel>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
        grid: Vec<f64>,
        /// Grid step; required for a one-point grid
        #[arg(long)]
        grid_step: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        varied_params: Option<Vec<ContextParam>>,
        #[arg(long, default_value_t = 20)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for eval.csv and eval_auc.csv (stdout when absent)
        #[arg(long, env = "GENBENCH_OUT")]
        out: Option<PathBuf>,
    },
    /// Analyse results.csv/auc.csv from one or more output directories
    Report {
        /// Output directories of earlier sweeps
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, env = "GENBENCH_OUT")]
        out: PathBuf,
        #[arg(long, default_value = "best")]
        correlation: CorrelationMode,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`)
    #[arg(long, env = "GENBENCH_OUT")]
    out: Option<PathBuf>,
    /// Comma-separated seed list (overrides `seeds`)
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (overrides `workers`)
    #[arg(long)]
    workers: Option<usize>,
    /// Any config key, e.g. `--set ppo.total_steps=20480`
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ExperimentSpec> {
        let mut text = std::fs::read_to_string(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        let mut sets = self.overrides.clone();
        if let Some(s) = &self.seeds {
            sets.push(format!("experiment.seeds={s}"));
        }
        if let Some(w) = self.workers {
            sets.push(format!("experiment.workers={w}"));
        }
        if let Some(out) = &self.out {
            sets.push(format!("experiment.output_dir={}", out.display()));
        }
        for s in &sets {
            text = apply_override(&text, s)?;
        }
        Ok(parse_config(&text).with_context(|| format!("in {}", self.config.display()))?)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| {
        e.is::<ConfigError>() || matches!(e.downcast_ref::<HarnessError>(), Some(HarnessError::Config(_)))
    });
    if config {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Train { config, seed, variant } => {
            let spec = config.load()?;
            let variant = variant.unwrap_or(spec.variants[0]);
            let env = spec_for::<f64>(spec.env);
            let dir = run_dir(&spec.output_dir, variant, seed);
            let mut computed = 0;
            match train_run(&env, &spec.ppo_config(variant), variant, seed, &dir, &mut computed)? {
                Ok((summary, _)) => {
                    let verb = if computed > 0 { "trained" } else { "already trained" };
                    println!(
                        "{verb} {} {variant} seed {seed}: training return {:.3} over the last {} of {} iterations",
                        spec.env, summary.training_return, summary.window, summary.iterations
                    );
                    println!("checkpoint: {}", dir.join("checkpoint.json").display());
                    Ok(0)
                }
                Err(f) => {
                    eprintln!("training failed: {}", f.reason);
                    Ok(EXIT_PARTIAL)
                }
            }
        }
        Command::Sweep { config } => {
            let spec = config.load()?;
            println!(
                "{}: {} on {} with {} variant(s) x {} seed(s) -> {}",
                spec.id,
                spec.test_channels.iter().map(|c| c.name()).collect::<Vec<_>>().join(","),
                spec.env,
                spec.variants.len(),
                spec.seeds.len(),
                spec.output_dir.display()
            );
            let outcome = run_experiment(&spec)?;
            let analysis = analyze(&outcome.report, spec.correlation);
            emit_reports(&outcome.report, &analysis, &spec.output_dir)?;
            println!("{} rows written, {} units computed", outcome.report.rows.len(), outcome.computed);
            print_summary(&analysis);
            for f in &outcome.failures {
                eprintln!("seed {} ({}) failed: {}", f.seed, f.variant, f.reason);
            }
            Ok(if outcome.partial() { EXIT_PARTIAL } else { 0 })
        }
        Command::Evaluate {
            checkpoint,
            env,
            channels,
            grid,
            grid_step,
            varied_params,
            rollouts,
            seed,
            out,
        } => {
            let grid = match grid_step {
                Some(step) => ScaleGrid::new(grid, step),
                None => ScaleGrid::from_values(grid),
            }
            .map_err(|e| ConfigError {
                line: 0,
                message: format!("--grid: {e}"),
            })?;
            if channels.contains(&Channel::None) {
                bail!(ConfigError {
                    line: 0,
                    message: "--channels: `none` is not a test channel".into()
                });
            }
            let agent = load_checkpoint::<f64>(&checkpoint)?;
            let spec = spec_for::<f64>(env);
            let params = varied_params.unwrap_or_else(|| default_varied_params(env));
            let sweeps = evaluate_agent(&agent, &spec, &channels, &grid, &params, rollouts, seed)?;
            let mut rows = Vec::new();
            let mut aucs = Vec::new();
            for sw in &sweeps {
                for (&scale, s) in sw.grid.values().iter().zip(&sw.per_scale) {
                    rows.push((sw.channel.name(), scale, s.mean, s.std, s.n()));
                }
                aucs.push((sw.channel.name(), sw.auc));
            }
            let eval_csv = to_csv("channel,scale,mean_return,std_return,n_episodes", &rows)?;
            let auc_csv = to_csv("channel,auc", &aucs)?;
            match out {
                Some(dir) => {
                    write_atomic(&dir.join("eval.csv"), eval_csv.as_bytes())?;
                    write_atomic(&dir.join("eval_auc.csv"), auc_csv.as_bytes())?;
                    println!("wrote {}", dir.display());
                }
                None => print!("{eval_csv}\n{auc_csv}"),
            }
            Ok(0)
        }
        Command::Report {
            input,
            out,
            correlation,
        } => {
            let mut set = ReportSet::default();
            for dir in &input {
                set.extend(read_report_set(dir)?);
            }
            let analysis = analyze(&set, correlation);
            emit_reports(&set, &analysis, &out)?;
            println!("{} rows from {} input(s) -> {}", set.rows.len(), input.len(), out.display());
            print_summary(&analysis);
            Ok(0)
        }
    }
}

fn print_summary(analysis: &genbench::harness::Analysis) {
    for (env, channels) in &analysis.envs {
        for (channel, a) in channels {
            let r = a.pearson.map_or("n/a".to_string(), |r| format!("{r:+.3}"));
            println!("{env}/{channel}: pearson(train, auc) = {r} over {} runs", a.pearson_points);
            for v in &a.variants {
                println!(
                    "  {:<10} auc {:>12.3} ± {:<10.3} train {:>10.3}",
                    v.variant, v.auc.mean, v.auc.std, v.training_return.mean
                );
            }
            for c in &a.welch {
                match (&c.test, &c.effect) {
                    (Some(t), Some(d)) => println!(
                        "  welch {} vs {}: Δauc {:+.3}, t {:+.3}, p {:.4}{}",
                        c.variant,
                        c.baseline,
                        d,
                        t.t,
                        t.p_value,
                        if t.significant { " *" } else { "" }
                    ),
                    _ => println!(
                        "  welch {} vs {}: skipped ({})",
                        c.variant,
                        c.baseline,
                        c.skipped.as_deref().unwrap_or("")
                    ),
                }
            }
        }
    }
    for f in analysis.failures.iter().filter(|f| f.failed > 0) {
        println!(
            "{}/{}: {} of {} seeds failed ({:.0}%)",
            f.env,
            f.variant,
            f.failed,
            f.seeds,
            100.0 * f.failure_rate
        );
    }
}
