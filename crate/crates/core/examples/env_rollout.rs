//! Drives the task with the scripted expert and prints the trajectory, then
//! shows which monitor alarms a policy that only pushes right would trip.
//!
//! cargo run --release -p hitl-core --example env_rollout -- [episode_seed]

use hitl_core::oracle::{expert_action, Monitor};
use hitl_core::{EnvAction, Episode, InterventionModel, TaskConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let task = TaskConfig::default().noisy();

    let mut ep = Episode::new(&task, seed);
    println!("expert, episode seed {seed}");
    let mut success = false;
    while !ep.is_done() {
        let s = *ep.state();
        let a = expert_action(&s, &task);
        if s.t % 10 == 0 {
            println!(
                "  t {:>3}  agent ({:.3}, {:.3})  object ({:.3}, {:.3})  carried {:<5}  action ({:+.2}, {:+.2}, {:+.1})",
                s.t, s.agent_xy[0], s.agent_xy[1], s.object_xy[0], s.object_xy[1], s.carried, a.dxdy[0], a.dxdy[1], a.grip
            );
        }
        success |= ep.step(&a)?.success;
    }
    println!("  finished at t {} with success {success}", ep.state().t);

    let mut ep = Episode::new(&task, seed);
    let mut monitor = Monitor::new(InterventionModel::default());
    let push = EnvAction::new(1.0, 0.0, -1.0);
    while !ep.is_done() {
        let alarm = monitor.observe(ep.state(), &task);
        if alarm.any() {
            println!("pushing right: first alarm at t {}: {alarm:?}", ep.state().t);
            break;
        }
        ep.step(&push)?;
    }
    Ok(())
}
