//! Full deployment-learning loop with the scripted operator.
//!
//! cargo run --release -p hitl-core --example deployment_loop -- [seed] [out_dir] [config.json]

use std::path::PathBuf;
use std::time::Instant;

use hitl_core::deploy::write_run_dir;
use hitl_core::{run, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let out: Option<PathBuf> = args.next().map(PathBuf::from);

    let base: RunConfig = match args.next() {
        Some(path) => RunConfig::from_file(path.as_ref())?,
        None => RunConfig::default(),
    };
    let cfg = RunConfig { seed, ..base };
    let started = Instant::now();
    let result = run(&cfg)?;
    println!("round  episodes  intv  preintv  robot  intv_ratio  freq   len    policy  top3");
    for r in &result.records {
        let (ratio, freq, len) = r
            .workload
            .map(|w| (w.intv_sample_ratio, w.intv_frequency, w.mean_intv_length))
            .unwrap_or_default();
        println!(
            "{:>5}  {:>8}  {:>4}  {:>7}  {:>5}  {:>10.3}  {:>5.2}  {:>5.1}  pi_{:<4}  {:.3}",
            r.round,
            r.episodes,
            r.counts.intv,
            r.counts.preintv,
            r.counts.robot,
            ratio,
            freq,
            len,
            r.policy.index,
            r.policy.top3_success
        );
    }
    println!("{:.1}s", started.elapsed().as_secs_f64());
    if let Some(dir) = out {
        write_run_dir(&dir, &cfg, &result)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
