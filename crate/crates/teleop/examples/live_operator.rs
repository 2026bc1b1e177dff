//! Serves a live session and connects an in-process websocket operator that
//! takes over whenever a frame carries the advisory flag, steering with the
//! scripted expert until the episode ends.
//!
//! cargo run --release -p hitl-teleop --example live_operator -- [tick_hz]

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use hitl_core::data::intervention_segments;
use hitl_core::deploy::deploy_round;
use hitl_core::oracle::{expert_action, Owner};
use hitl_core::{ClassLabel, PolicyArch, PolicyParams, RunConfig, TaskConfig};
use hitl_teleop::{decode_frame, encode_command, Command, Gateway, GatewayConfig};
use tokio_tungstenite::tungstenite::Message;

async fn operator(url: String, task: TaskConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await?;
    let mut episode = 0;
    let mut taken = false;
    while let Ok(Some(msg)) = tokio::time::timeout(Duration::from_secs(3), ws.next()).await {
        // The gateway shutting down ends the session.
        let text = match msg {
            Ok(Message::Text(text)) => text,
            Ok(_) => continue,
            Err(_) => break,
        };
        let frame = decode_frame(&text)?;
        if frame.episode != episode {
            (episode, taken) = (frame.episode, false);
        }
        let cmd = match frame.owner {
            Owner::Human => {
                let a = expert_action(&frame.state(), &task);
                Command::Action {
                    dxdy: a.dxdy,
                    grip: a.grip,
                }
            }
            Owner::Robot if frame.advisory && !taken => {
                taken = true;
                println!("episode {episode}: taking over at t {}", frame.t);
                Command::InterveneStart
            }
            Owner::Robot => continue,
        };
        ws.send(Message::text(encode_command(&cmd))).await?;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let tick_hz: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100.0);
    let cfg = RunConfig {
        task: TaskConfig::default(),
        max_episodes_per_round: 3,
        ..RunConfig::default()
    };
    let gateway = Gateway::start(
        "127.0.0.1:0".parse()?,
        GatewayConfig {
            tick_hz,
            monitor: cfg.oracle.clone(),
        },
    )?;
    let url = format!("ws://{}/ws", gateway.local_addr());
    println!("gateway on {url}, {tick_hz} Hz");

    let task = cfg.task.clone();
    let client = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .expect("runtime");
        if let Err(e) = rt.block_on(operator(url, task)) {
            eprintln!("operator: {e}");
        }
    });
    if !gateway.wait_for_client(Duration::from_secs(5)) {
        return Err("operator did not connect".into());
    }

    let policy = PolicyParams::init(&PolicyArch::default(), 3);
    let dep = deploy_round(&policy, &cfg, 1, 1000, &mut gateway.intervenor())?;
    for (k, t) in dep.trajectories.iter().enumerate() {
        println!(
            "episode {}: {} steps, success {}, segments {:?}, preintv {}",
            k + 1,
            t.len(),
            t.success(),
            intervention_segments(t),
            t.count(ClassLabel::Preintv)
        );
    }
    gateway.shutdown();
    client.join().ok();
    Ok(())
}
