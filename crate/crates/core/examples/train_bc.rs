//! Warm-start a policy from scripted demonstrations and report success.
//!
//! cargo run --release -p hitl-core --example train_bc -- [n_demos] [epochs]

use std::time::Instant;

use hitl_core::oracle::generate_demo;
use hitl_core::trainer::top_k_checkpoint_average;
use hitl_core::{train, Dataset, PolicyArch, TaskConfig, TrainConfig, WeightingScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n_demos: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);

    let task = TaskConfig::default();
    let demos = (0..n_demos)
        .map(|s| generate_demo(&task, s))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = Dataset::from_trajectories(&task.task_id, demos);
    println!("{} demos, {} samples", n_demos, dataset.num_samples());

    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let started = Instant::now();
    let out = train(
        &dataset,
        &WeightingScheme::unweighted(),
        &PolicyArch::default(),
        &cfg,
        &task,
    )?;
    for e in &out.log.entries {
        if let Some(s) = e.eval_success {
            println!("epoch {:>3}  loss {:>8.4}  success {:.2}", e.epoch, e.mean_loss, s);
        }
    }
    println!(
        "best epoch {:?}, top-3 average {:.3}, {:.1}s",
        out.best_epoch,
        top_k_checkpoint_average(&out.log, 3).unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
