//! `teleop`: run a session, replay a recording, check a robot description,
//! or time the control step.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use teleop_core::collision::check_self_collision;
use teleop_core::config::{self, EnvConfig, FeedbackConfig};
use teleop_core::latency::{self, BenchMode};
use teleop_core::leader::OfflineTrajectoryLeader;
use teleop_core::recording::{RecordField, Recording};
use teleop_core::session::{
    assemble, build_session, load_follower, RecordOptions, SessionConfig, SessionStats,
};
use teleop_service::{serve, Engine, ServiceConfig, DEFAULT_PORT};

#[derive(Parser, Debug)]
#[command(
    name = "teleop",
    version,
    about = "Leader/follower teleoperation engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a live session until the leader ends it or Ctrl-C.
    Run {
        #[arg(long)]
        leader: PathBuf,
        #[arg(long)]
        follower: PathBuf,
        #[arg(long)]
        env: PathBuf,
        /// JSONL output; later Running intervals go to `<stem>-N.jsonl`.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Per-step keys to record, comma separated (default: all).
        #[arg(long, value_delimiter = ',', value_parser = record_field)]
        fields: Vec<RecordField>,
        /// Control loop rate in Hz (default: the follower config's).
        #[arg(long)]
        rate: Option<f64>,
        /// WebSocket port for the operator console.
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Run without the WebSocket service.
        #[arg(long)]
        no_serve: bool,
        /// Directory with the console bundle, served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Stop after this many wall-clock seconds.
        #[arg(long)]
        max_seconds: Option<f64>,
    },
    /// Feed a recording back through the pipeline and compare commands.
    Replay {
        file: PathBuf,
        #[arg(long)]
        follower: PathBuf,
        /// Environment config (default: simulator, not paced).
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        record: Option<PathBuf>,
        /// Fail when any joint command differs from the recording by more.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Parse a robot description and report each limb.
    ValidateModel {
        urdf: PathBuf,
        /// Any config with `[[limbs]]` or `[[puppeteer.limbs]]`.
        #[arg(long)]
        limbs: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
    },
    /// Time the control step on the built-in fixtures.
    Bench {
        #[arg(long, default_value_t = 1, value_parser = limb_count)]
        limbs: usize,
        #[arg(long, value_enum, default_value_t = Mode::Joint)]
        mode: Mode,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
    },
}

fn record_field(s: &str) -> Result<RecordField, String> {
    RecordField::ALL
        .into_iter()
        .find(|f| f.key() == s)
        .ok_or_else(|| {
            let keys: Vec<_> = RecordField::ALL.iter().map(|f| f.key()).collect();
            format!("'{s}' is not one of {}", keys.join(", "))
        })
}

fn limb_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n @ (1 | 2 | 4)) => Ok(n),
        _ => Err(format!("'{s}' is not one of 1, 2, 4")),
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Joint,
    Eef,
}

impl From<Mode> for BenchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Joint => BenchMode::Joint,
            Mode::Eef => BenchMode::Eef,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            leader,
            follower,
            env,
            record,
            fields,
            rate,
            port,
            host,
            no_serve,
            static_dir,
            max_seconds,
        } => {
            let mut cfg = SessionConfig::new(leader, follower, env);
            cfg.rate_hz = rate;
            cfg.record = record;
            if !fields.is_empty() {
                cfg.fields = fields;
            }
            let service = (!no_serve).then(|| ServiceConfig {
                bind: (host, port).into(),
                static_dir,
                ..ServiceConfig::default()
            });
            run(&cfg, service, max_seconds.map(Duration::from_secs_f64))
        }
        Command::Replay {
            file,
            follower,
            env,
            record,
            tolerance,
        } => replay(&file, &follower, env.as_deref(), record, tolerance),
        Command::ValidateModel {
            urdf,
            limbs,
            margin,
        } => validate_model(&urdf, &limbs, margin),
        Command::Bench { limbs, mode, steps } => bench(limbs, mode.into(), steps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cfg: &SessionConfig, service: Option<ServiceConfig>, limit: Option<Duration>) -> Result<()> {
    let built = build_session(cfg).context("building the session")?;
    for w in &built.warnings {
        log::warn!("{w}");
    }
    let dt = built.session.dt();
    let engine = Engine::spawn(built.session, built.console);
    let rt = tokio::runtime::Runtime::new()?;
    let stats = rt.block_on(async {
        let server = match service {
            Some(s) => Some(serve(engine.handle(), s).await?),
            None => None,
        };
        if let Some(s) = &server {
            println!("console endpoint ws://{}/ws", s.addr());
        }
        let started = Instant::now();
        let mut poll = tokio::time::interval(Duration::from_millis(20));
        loop {
            tokio::select! {
                _ = poll.tick() => {
                    if engine.is_finished() || limit.is_some_and(|l| started.elapsed() >= l) {
                        break;
                    }
                }
                _ = tokio::signal::ctrl_c() => {
                    log::info!("interrupted; parking the follower");
                    break;
                }
            }
        }
        if let Some(s) = server {
            s.shutdown().await;
        }
        let stats = tokio::task::spawn_blocking(move || engine.stop()).await?;
        anyhow::Ok(stats?)
    })?;
    print_stats(&stats, dt);
    if let Some(p) = &cfg.record {
        println!("recording base path: {}", p.display());
    }
    Ok(())
}

fn print_stats(stats: &SessionStats, dt: f64) {
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    println!("sessions completed: {}", stats.sessions_completed);
    println!(
        "running ticks: {} ({:.2} s)",
        stats.running_ticks,
        stats.running_ticks as f64 * dt
    );
    println!(
        "step compute: mean {:.3} ms, max {:.3} ms",
        ms(stats.compute.mean()),
        ms(stats.compute.max)
    );
    if stats.period.count > 0 {
        println!(
            "loop period: mean {:.3} ms (target {:.3} ms), max {:.3} ms",
            ms(stats.period.mean()),
            dt * 1e3,
            ms(stats.period.max)
        );
    }
    println!("ik failures: {}", stats.ik_failures);
}

fn replay(
    file: &Path,
    follower: &Path,
    env: Option<&Path>,
    record: Option<PathBuf>,
    tolerance: Option<f64>,
) -> Result<()> {
    let original = Recording::load(file).with_context(|| format!("reading {}", file.display()))?;
    let leader = OfflineTrajectoryLeader::load_identity(file)?;
    let (follower_cfg, model, warnings) = load_follower(follower)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let env = match env {
        Some(p) => config::load::<EnvConfig>(p)?.config,
        None => EnvConfig {
            realtime: false,
            ..EnvConfig::default()
        },
    };
    let (out, scratch) = match record {
        Some(p) => (p, false),
        None => (scratch_path(), true),
    };
    let mut session = assemble(
        Box::new(leader),
        &follower_cfg.config,
        Arc::new(model),
        &env,
        &FeedbackConfig::default(),
        original.header.loop_period,
        Some(RecordOptions {
            path: out.clone(),
            fields: RecordField::ALL.to_vec(),
        }),
    )?;
    // approach, replay and park with generous slack
    let cap = 10 * original.steps.len() as u64 + 100_000;
    let end = session.run(Some(cap))?;
    let files = session.recorded_files();
    drop(session);

    let mut replayed = Vec::new();
    for (path, _) in &files {
        replayed.extend(Recording::load(path)?.steps);
    }
    if scratch {
        for (path, _) in &files {
            let _ = std::fs::remove_file(path);
        }
    }
    let mut max_diff: f64 = 0.0;
    let mut compared = 0;
    for (a, b) in original.steps.iter().zip(&replayed) {
        if let (Some(qa), Some(qb)) = (&a.q_cmd, &b.q_cmd) {
            compared += 1;
            for (la, lb) in qa.iter().zip(qb) {
                for (x, y) in la.iter().zip(lb) {
                    max_diff = max_diff.max((x - y).abs());
                }
            }
        }
    }
    println!("final state: {end:?}");
    println!(
        "steps: recorded {}, replayed {}",
        original.steps.len(),
        replayed.len()
    );
    if compared == 0 {
        println!("q_cmd not present in both files; nothing to compare");
    } else {
        println!("max |q_cmd difference| over {compared} steps: {max_diff:.3e} rad");
    }
    if !scratch {
        for (p, n) in &files {
            println!("wrote {} ({n} steps)", p.display());
        }
    }
    if let Some(tol) = tolerance {
        if compared == 0 || replayed.len() != original.steps.len() || max_diff > tol {
            bail!("replay differs from the recording beyond {tol}");
        }
    }
    Ok(())
}

fn scratch_path() -> PathBuf {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    std::env::temp_dir().join(format!(
        "teleop-replay-{}-{nanos}.jsonl",
        std::process::id()
    ))
}

fn validate_model(urdf: &Path, limbs_cfg: &Path, margin: f64) -> Result<()> {
    let specs = config::load_limb_specs(limbs_cfg)?;
    let (model, warnings) = config::load_model(urdf, &specs)?;
    println!("robot '{}': {} limb(s)", model.name, model.limbs.len());
    for (limb, q) in model.limbs.iter().zip(&model.base_pose) {
        println!(
            "limb '{}' ({} -> {}), {} dof",
            limb.name,
            limb.base_link,
            limb.tip_link,
            limb.dof()
        );
        for (j, name) in limb.joint_names().iter().enumerate() {
            println!(
                "  {name}: [{:.4}, {:.4}] rad, {:.3} rad/s, base {:.4}",
                limb.lower_limits()[j],
                limb.upper_limits()[j],
                limb.velocity_limits()[j],
                q[j]
            );
        }
        match &limb.gripper_joint {
            Some(g) => println!("  gripper joint: {}", g.name),
            None => println!("  no gripper joint"),
        }
        println!("  collision spheres: {}", limb.collision_spheres.len());
        let eef = limb.forward_kinematics(q)?;
        let t = eef.translation();
        let r = eef.rpy();
        println!(
            "  base eef (limb base frame): xyz [{:.4}, {:.4}, {:.4}] rpy [{:.4}, {:.4}, {:.4}]",
            t.x, t.y, t.z, r[0], r[1], r[2]
        );
    }
    let pairs = check_self_collision(&model, &model.base_pose, margin)?;
    if pairs.is_empty() {
        println!("base pose: collision free (margin {margin})");
    } else {
        for p in &pairs {
            println!(
                "base pose collision: {}#{} / {}#{} at {:.4} < {:.4}",
                model.limbs[p.a.limb].name,
                p.a.sphere,
                model.limbs[p.b.limb].name,
                p.b.sphere,
                p.distance,
                p.threshold
            );
        }
    }
    for w in &warnings {
        println!("warning: {w}");
    }
    if !pairs.is_empty() {
        bail!("base pose is in self-collision");
    }
    Ok(())
}

fn bench(limbs: usize, mode: BenchMode, steps: usize) -> Result<()> {
    if steps == 0 {
        bail!("--steps must be positive");
    }
    let r = latency::measure(limbs, mode, steps)?;
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    println!(
        "limbs {} mode {} steps {}: mean {:.4} ms  p50 {:.4} ms  p99 {:.4} ms  max {:.4} ms  ik failures {}",
        r.limbs,
        r.mode.as_str(),
        r.steps,
        ms(r.mean),
        ms(r.p50),
        ms(r.p99),
        ms(r.max),
        r.ik_failures
    );
    Ok(())
}
