//! `hitl`: generate demos, run the deployment loop, ablate, benchmark memory
//! strategies and serve a live operator session.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime abort.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use hitl_core::data::{write_dataset, Dataset};
use hitl_core::deploy::{collect_demos, run_with, write_run_dir};
use hitl_core::experiments::{
    ablate_remove_class, bench_memory, round_one_dataset, sweep_intv_ratio, write_ablation_csv, write_memory_csv,
};
use hitl_core::metrics::aggregate;
use hitl_core::{run, RunConfig, Strategy, TaskConfig};
use hitl_teleop::{Gateway, GatewayConfig, Recorder};

#[derive(Parser)]
#[command(
    name = "hitl",
    version,
    about = "Human-in-the-loop deployment and learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write scripted demonstrations as a dataset directory.
    DemoGen {
        /// Task JSON; the default task when omitted.
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the deployment-learning loop and write a run directory.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train then deploy instead of overlapping the two.
        #[arg(long)]
        sequential: bool,
    },
    /// Weighting ablations on round-1 data.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        sweep: Sweep,
        #[arg(long)]
        out: PathBuf,
        /// Explicit intv target grid, comma separated.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Grid points spanning the feasible range when no grid is given.
        #[arg(long, default_value_t = 5)]
        points: usize,
    },
    /// Run the loop once, then replay its data through capped buffers.
    BenchMemory {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `all` or a comma separated list of lfi, mfi, fifo, filo, uniform.
        #[arg(long, default_value = "all")]
        strategies: String,
        #[arg(long, value_delimiter = ',', default_value = "0.15,0.3,1.0")]
        caps: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a live session: a websocket operator is the intervenor.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = hitl_teleop::server::DEFAULT_TICK_HZ)]
        tick_hz: f64,
        /// Seconds to wait for an operator before giving up.
        #[arg(long, default_value_t = 300)]
        wait: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run directories into report, timeline and convergence CSVs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    IntvRatio,
    RemoveClass,
}

/// Marks an error as a configuration problem (exit code 2).
#[derive(Debug)]
struct ConfigError;

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("configuration error")
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: &str) -> anyhow::Error {
    anyhow::anyhow!("{msg}").context(ConfigError)
}

fn config_err<T>(r: hitl_core::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| {
        let config = e.is_config_error();
        let err = anyhow::Error::new(e);
        if config {
            err.context(ConfigError)
        } else {
            err
        }
    })
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::from_file(p).map_err(|e| anyhow::Error::new(e).context(ConfigError))?,
        None => RunConfig::default(),
    };
    config_err(cfg.validate())?;
    Ok(cfg)
}

fn load_task(path: Option<&Path>) -> anyhow::Result<TaskConfig> {
    let task = match path {
        Some(p) => TaskConfig::from_file(p).map_err(|e| anyhow::Error::new(e).context(ConfigError))?,
        None => TaskConfig::default(),
    };
    config_err(task.validate())?;
    Ok(task)
}

fn parse_strategies(s: &str) -> anyhow::Result<Vec<Strategy>> {
    if s == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    s.split(',')
        .map(|x| x.trim().parse::<Strategy>().map_err(|e| config_error(&e.to_string())))
        .collect()
}

fn demo_gen(task: Option<&Path>, out: &Path, count: usize, seed: u64) -> anyhow::Result<()> {
    if count == 0 {
        return Err(config_error("--count must be at least 1"));
    }
    let cfg = RunConfig {
        seed,
        task: load_task(task)?,
        demos: count,
        ..RunConfig::default()
    };
    let demos = config_err(collect_demos(&cfg))?;
    let manifest = config_err(write_dataset(
        out,
        &Dataset::from_trajectories(&cfg.task.task_id, demos),
    ))?;
    println!("wrote {} demos to {}", manifest.files.len(), out.display());
    Ok(())
}

fn run_cmd(config: Option<&Path>, out: &Path, sequential: bool) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    cfg.parallel &= !sequential;
    let result = config_err(run(&cfg))?;
    config_err(write_run_dir(out, &cfg, &result))?;
    for r in &result.records {
        println!(
            "round {}: policy {} success {:.3}",
            r.round, r.policy.index, r.policy.top3_success
        );
    }
    Ok(())
}

fn ablate(config: Option<&Path>, sweep: Sweep, out: &Path, grid: Option<&[f64]>, points: usize) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let data = config_err(round_one_dataset(&cfg))?;
    let rows = match sweep {
        Sweep::RemoveClass => config_err(ablate_remove_class(&cfg, &data))?,
        Sweep::IntvRatio => config_err(sweep_intv_ratio(&cfg, &data, grid, points))?,
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    config_err(write_ablation_csv(&out.join("ablation.csv"), &rows))?;
    for r in &rows {
        match &r.score {
            Some(s) => println!(
                "{:<10} intv {:.3}  success {:.3}",
                r.setting, r.p_star_intv, s.top3_success
            ),
            None => println!("{:<10} intv {:.3}  {}", r.setting, r.p_star_intv, r.note),
        }
    }
    Ok(())
}

fn bench(config: Option<&Path>, strategies: &str, caps: &[f64], out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let strategies = parse_strategies(strategies)?;
    if caps.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
        return Err(config_error("caps must lie in (0, 1]"));
    }
    let result = config_err(run(&cfg))?;
    config_err(write_run_dir(&out.join("run"), &cfg, &result))?;
    let rows = config_err(bench_memory(&cfg, &result, &strategies, caps))?;
    config_err(write_memory_csv(&out.join("memory.csv"), &rows))?;
    for r in &rows {
        println!(
            "{:<8} cap {:.2}  kept {:>4} (intv {:>5})  success {:.3}  converged {}",
            r.strategy,
            r.cap_fraction,
            r.retained,
            r.retained_intv,
            r.score.top3_success,
            r.score.convergence_epoch.map_or("-".into(), |e| e.to_string())
        );
    }
    Ok(())
}

fn serve(config: Option<&Path>, addr: SocketAddr, tick_hz: f64, wait: Duration, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    if !(tick_hz > 0.0 && tick_hz.is_finite()) {
        return Err(config_error("--tick-hz must be positive"));
    }
    let gateway = Gateway::start(
        addr,
        GatewayConfig {
            tick_hz,
            monitor: cfg.oracle.clone(),
        },
    )?;
    gateway.close_on_interrupt();
    println!("waiting for an operator on ws://{}/ws", gateway.local_addr());
    if !gateway.wait_for_client(wait) {
        if gateway.session().is_closed() {
            return Ok(());
        }
        bail!("no operator connected within {}s", wait.as_secs());
    }
    let live_dir = out.join("live");
    let mut recorder = Recorder::new(gateway.intervenor(), &live_dir, &cfg.task.task_id, cfg.labeling);
    match run_with(&cfg, &mut recorder) {
        Ok(result) => {
            config_err(write_run_dir(&out.join("run"), &cfg, &result))?;
            println!(
                "run finished; {} live episodes in {}",
                recorder.buffer().len(),
                live_dir.display()
            );
            Ok(())
        }
        Err(e) if gateway.session().is_closed() => {
            log::info!("loop stopped: {e}");
            println!(
                "stopped; {} live episodes saved in {}",
                recorder.buffer().len(),
                live_dir.display()
            );
            Ok(())
        }
        Err(e) => config_err(Err(e)),
    }
}

/// The error chain on one line. Library errors already embed their source
/// in the message, so links repeated by the next outer message are dropped.
fn describe(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for msg in e.chain().map(|c| c.to_string()) {
        if !parts.last().is_some_and(|prev| prev.ends_with(&msg)) {
            parts.push(msg);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Cmd::DemoGen { task, out, count, seed } => demo_gen(task.as_deref(), out, *count, *seed),
        Cmd::Run {
            config,
            out,
            sequential,
        } => run_cmd(config.as_deref(), out, *sequential),
        Cmd::Ablate {
            config,
            sweep,
            out,
            grid,
            points,
        } => ablate(config.as_deref(), *sweep, out, grid.as_deref(), *points),
        Cmd::BenchMemory {
            config,
            strategies,
            caps,
            out,
        } => bench(config.as_deref(), strategies, caps, out),
        Cmd::Serve {
            config,
            port,
            host,
            tick_hz,
            wait,
            out,
        } => match format!("{host}:{port}").parse() {
            Ok(addr) => serve(config.as_deref(), addr, *tick_hz, Duration::from_secs(*wait), out),
            Err(e) => Err(config_error(&format!("bad address {host}:{port}: {e}"))),
        },
        Cmd::Report { runs, out } => config_err(aggregate(runs, out)).map(|rows| {
            println!("aggregated {} runs into {} rounds", runs.len(), rows.len());
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
