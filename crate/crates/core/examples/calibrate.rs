//! Baseline runs used to pick the learning threshold.
//!
//! `cargo run --release --example calibrate -- pendulum 100 112 [total_steps] [--no-reward-scaling]`

use std::time::Instant;

use genbench::envsim::nominal_spec;
use genbench::eval::{sweep, testing_return, ScaleGrid};
use genbench::perturb::Channel;
use genbench::rng::derive_stream;
use genbench::train::train;
use genbench::{PerturbationPlan, PpoConfig};

fn main() -> genbench::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let env = args.first().map(String::as_str).unwrap_or("pendulum");
    let from: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let to: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(from + 12);
    let spec = nominal_spec::<f64>(env)?;
    let mut config = PpoConfig::default();
    if let Some(steps) = args.get(3).and_then(|s| s.parse().ok()) {
        config.total_steps = steps;
    }
    if args.iter().any(|a| a == "--no-reward-scaling") {
        config.reward_scaling = false;
    }
    for seed in from..to {
        let t0 = Instant::now();
        let rec = train(&spec, &config, seed)?;
        let mut rng = derive_stream(seed, 99);
        let eval = testing_return(&rec.agent, &spec, &spec.nominal, &PerturbationPlan::none(), 20, &mut rng)?;
        println!(
            "seed {seed}: eval {:.1} ± {:.1}, train first {:.1} last {:.1}, len {:.1}, {:.1}s",
            eval.mean,
            eval.std,
            rec.mean_returns[0],
            rec.training_return(),
            rec.mean_episode_lengths.last().unwrap(),
            t0.elapsed().as_secs_f64()
        );
        for ch in [Channel::Obs, Channel::Dom] {
            let sw = sweep(&rec.agent, &spec, ch, &ScaleGrid::default_grid(), 20, &mut rng)?;
            let means: Vec<String> = sw.means().iter().map(|m| format!("{m:.1}")).collect();
            println!("  {ch}: [{}] auc {:.1}", means.join(", "), sw.auc);
        }
    }
    Ok(())
}
