//! One scripted deployment round with an untrained policy: intervention
//! segments, preintv relabeling and the class weights of each scheme.
//!
//! cargo run --release -p hitl-core --example relabel_and_weights

use hitl_core::data::{class_distribution, intervention_segments};
use hitl_core::deploy::{deploy_round, ScriptedIntervenor};
use hitl_core::weighting::{target_distribution, weight_table};
use hitl_core::{ClassLabel, Dataset, PolicyArch, PolicyParams, RunConfig, WeightingScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        max_episodes_per_round: 5,
        ..RunConfig::default()
    };
    let policy = PolicyParams::init(&PolicyArch::default(), 1);
    let mut op = ScriptedIntervenor::new(cfg.oracle.clone());
    let dep = deploy_round(&policy, &cfg, 1, 200, &mut op)?;

    for (k, t) in dep.trajectories.iter().enumerate() {
        let row: String = t
            .labels()
            .map(|l| match l {
                ClassLabel::Robot => '.',
                ClassLabel::Preintv => 'p',
                ClassLabel::Intv => 'H',
                ClassLabel::Demo => 'd',
            })
            .collect();
        println!(
            "episode {k}: segments {:?} success {}",
            intervention_segments(t),
            t.success()
        );
        println!("  {row}");
    }

    let data = Dataset {
        task_id: cfg.task.task_id.clone(),
        trajectories: dep.trajectories.into_iter().map(Into::into).collect(),
    };
    let p = class_distribution(&data)?;
    println!("\nobserved P (demo, intv, preintv, robot): {:.3?}", p.as_array());
    for (name, scheme) in [
        ("unweighted", WeightingScheme::unweighted()),
        ("iwr", WeightingScheme::iwr()),
        ("sirius", WeightingScheme::sirius()),
    ] {
        match target_distribution(&p, &scheme) {
            Ok(p_star) => {
                let w = weight_table(&p, &p_star)?;
                println!("{name:<10} P* {:.3?}  w {:.3?}", p_star.as_array(), w.as_array());
            }
            Err(e) => println!("{name:<10} {e}"),
        }
    }
    Ok(())
}
