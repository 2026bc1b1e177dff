//! Class-removal ablation on round-1 data.
//!
//! cargo run --release -p hitl-core --example ablation -- [config.json]

use hitl_core::experiments::{ablate_remove_class, round_one_dataset};
use hitl_core::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::from_file(path.as_ref())?,
        None => RunConfig::default(),
    };
    let data = round_one_dataset(&cfg)?;
    println!(
        "round-1 data: {} trajectories, {} samples",
        data.trajectories.len(),
        data.num_samples()
    );
    for row in ablate_remove_class(&cfg, &data)? {
        match row.score {
            Some(s) => println!(
                "{:<9} top-3 success {:.3}  best {:.3}",
                row.setting, s.top3_success, s.best_success
            ),
            None => println!("{:<9} {}", row.setting, row.note),
        }
    }
    Ok(())
}
