//! Runs the loop over several seeds and compares weighting schemes on each
//! run's final data.
//!
//! cargo run --release -p hitl-core --example method_comparison -- [n_seeds] [config.json]

use hitl_core::experiments::compare_methods;
use hitl_core::{run, RunConfig};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let base: RunConfig = match args.next() {
        Some(path) => RunConfig::from_file(path.as_ref())?,
        None => RunConfig::default(),
    };
    let (mut s, mut i, mut b, mut first, mut last, mut r1, mut rx) = Default::default();
    let push = |v: &mut Vec<f64>, x: f64| v.push(x);
    println!("seed  sirius  iwr     bc      pi_1    pi_last  ratio_1  ratio_last");
    for seed in 0..n {
        let cfg = RunConfig { seed, ..base.clone() };
        let result = run(&cfg)?;
        let m = compare_methods(&cfg, &result)?;
        let curve = result.success_curve();
        let ratio = |r: usize| result.records[r].workload.map_or(0.0, |w| w.intv_sample_ratio);
        println!(
            "{seed:>4}  {:.3}   {:.3}   {:.3}   {:.3}   {:.3}    {:.4}   {:.4}",
            m.sirius,
            m.iwr,
            m.unweighted,
            curve[0],
            curve[cfg.rounds],
            ratio(1),
            ratio(cfg.rounds)
        );
        push(&mut s, m.sirius);
        push(&mut i, m.iwr);
        push(&mut b, m.unweighted);
        push(&mut first, curve[0]);
        push(&mut last, curve[cfg.rounds]);
        push(&mut r1, ratio(1));
        push(&mut rx, ratio(cfg.rounds));
    }
    println!(
        "mean  {:.3}   {:.3}   {:.3}   {:.3}   {:.3}    {:.4}   {:.4}",
        mean(&s),
        mean(&i),
        mean(&b),
        mean(&first),
        mean(&last),
        mean(&r1),
        mean(&rx)
    );
    Ok(())
}
