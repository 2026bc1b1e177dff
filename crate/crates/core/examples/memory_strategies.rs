//! Streams trajectories with varying intervention counts through a capped
//! buffer under each eviction strategy and prints what survives.
//!
//! cargo run --release -p hitl-core --example memory_strategies -- [capacity]

use hitl_core::data::Sample;
use hitl_core::{ClassLabel, MemoryBuffer, Source, Strategy, Trajectory};

fn with_interventions(round: u32, n_intv: usize) -> Trajectory {
    let samples = (0..30)
        .map(|t| Sample {
            t: t as u32,
            state: vec![0.0; 7],
            action: vec![0.0; 3],
            reward: 0.0,
            label: if t < n_intv {
                ClassLabel::Intv
            } else {
                ClassLabel::Robot
            },
        })
        .collect();
    Trajectory::new(samples, round, n_intv as u64, false, Source::ScriptedOracle).expect("valid trajectory")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let capacity: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    // Three rounds whose interventions thin out as the policy improves.
    let rounds = [vec![12, 0, 9, 15], vec![3, 0, 8, 0], vec![0, 2, 0, 1]];
    println!("capacity {capacity}, stream {rounds:?}");
    for strategy in Strategy::ALL {
        let mut buf = MemoryBuffer::new(Some(capacity), strategy, 7);
        for (r, counts) in rounds.iter().enumerate() {
            buf.insert_many(counts.iter().map(|&n| with_interventions(r as u32 + 1, n)))?;
        }
        let kept: Vec<String> = buf
            .trajectories()
            .map(|t| format!("r{}:{}", t.round(), t.count(ClassLabel::Intv)))
            .collect();
        println!(
            "{:<8} keeps [{}]  intv samples {}",
            strategy.to_string(),
            kept.join(" "),
            buf.total_interventions()
        );
    }
    Ok(())
}
