use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use slotwise_cli::console::{follow, StdinChannel};
use slotwise_cli::server::{router, AppState, TOKEN_ENV};
use slotwise_core::evalkit::{battery_names, Metric, Suite, Table};
use slotwise_core::gateway::Recorder;
use slotwise_core::orchestrator::{
    lint, replay, Assets, BackendRef, EndStatus, RunConfig, RunTrace, ScriptedReplies, Session, SessionLog,
    SimUserChannel, UserChannel,
};
use slotwise_core::pilot::Pilot;
use slotwise_core::simenv::SimUser;

#[derive(Parser)]
#[command(
    name = "slotwise",
    version,
    about = "Slot-driven mobile task agent: runs, replays, evaluation and the session service"
)]
struct Cli {
    /// Asset directory with scenarios/, knowledge/ and fixtures/.
    #[arg(long, global = true, env = "SLOTWISE_ASSETS")]
    assets: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario.
    Run(RunArgs),
    /// Re-run a trace with its recorded replies and report whether it reproduces.
    Replay {
        trace: PathBuf,
        #[arg(long, default_value = "pilot")]
        backend: String,
        /// Write the replayed trace here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check traces against the workflow rules.
    Lint { traces: Vec<PathBuf> },
    /// Score scenarios (the twelve-variant battery by default).
    Eval(EvalArgs),
    /// Run one scenario under a range of window sizes.
    Sweep {
        #[arg(long, default_value = "flight-roundtrip")]
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
        windows: Vec<usize>,
        #[command(flatten)]
        out: Outputs,
    },
    /// Compare the full agent with each reflection dimension switched off.
    Ablate(EvalArgs),
    /// Record pilot completions as fixture files.
    Record {
        /// Scenario names; all scenarios when empty.
        scenarios: Vec<String>,
    },
    /// Host the session service and console assets.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Console build directory.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Save finished traces here.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Seconds a session waits for a reply before failing.
        #[arg(long)]
        reply_timeout: Option<u64>,
        #[arg(long, env = TOKEN_ENV, hide_env_values = true)]
        token: Option<String>,
    },
}

#[derive(Args)]
struct Knobs {
    /// Run configuration file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// `pilot`, `fixtures`, a fixture .jsonl file or a backend .toml file.
    #[arg(long, default_value = "pilot")]
    backend: String,
    /// Trajectory window size.
    #[arg(short = 'n', long)]
    window: Option<usize>,
    #[arg(long)]
    no_action_reflection: bool,
    #[arg(long)]
    no_info_reflection: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

impl Knobs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(n) = self.window {
            c.window = n;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(m) = self.max_iterations {
            c.max_iterations = m;
        }
        c.action_reflection &= !self.no_action_reflection;
        c.information_reflection &= !self.no_info_reflection;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    scenario: String,
    /// Replaces the scenario's instruction.
    #[arg(long)]
    instruction: Option<String>,
    #[command(flatten)]
    knobs: Knobs,
    /// Answer inquiries on the terminal instead of from the scenario.
    #[arg(long, conflicts_with = "replies")]
    interactive: bool,
    /// JSON file with a list of replies to give in order.
    #[arg(long)]
    replies: Option<PathBuf>,
    /// Write the trace here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print only the final status.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Scenario names; `all` for every scenario. Defaults to the battery.
    #[arg(long, value_delimiter = ',')]
    scenarios: Vec<String>,
    #[command(flatten)]
    knobs: Knobs,
    #[command(flatten)]
    out: Outputs,
}

#[derive(Args)]
struct Outputs {
    /// Per-run CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Markdown report.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl Outputs {
    fn write(&self, table: &Table, report: &str) -> Result<()> {
        print!("{report}");
        if let Some(p) = &self.csv {
            table.write_csv(fs::File::create(p).with_context(|| p.display().to_string())?)?;
        }
        if let Some(p) = &self.report {
            fs::write(p, report).with_context(|| p.display().to_string())?;
        }
        Ok(())
    }
}

fn load_config(p: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
    Ok(if p.extension().is_some_and(|x| x == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    })
}

fn backend_ref(s: &str) -> Result<BackendRef> {
    Ok(match s {
        "pilot" => BackendRef::Pilot,
        "fixtures" => BackendRef::Fixtures { paths: vec![] },
        p if p.ends_with(".jsonl") => BackendRef::Fixtures {
            paths: vec![PathBuf::from(p)],
        },
        p if p.ends_with(".toml") => BackendRef::Config { path: PathBuf::from(p) },
        other => bail!("unknown backend `{other}`: use pilot, fixtures, a .jsonl fixture file or a .toml config"),
    })
}

fn scenario_list(assets: &Assets, names: &[String]) -> Result<Vec<String>> {
    Ok(match names {
        [] => battery_names(),
        [a] if a == "all" => assets.scenario_names()?,
        _ => names.to_vec(),
    })
}

fn cmd_run(assets: &Assets, a: RunArgs) -> Result<()> {
    let cfg = a.knobs.config()?;
    let scenario = assets.load_scenario(&a.scenario)?;
    let backend = assets.backend(&backend_ref(&a.knobs.backend)?, &scenario)?;
    let channel: Box<dyn UserChannel> = if a.interactive {
        Box::new(StdinChannel)
    } else if let Some(p) = &a.replies {
        let replies = serde_json::from_str::<Vec<_>>(&fs::read_to_string(p)?)?;
        Box::new(ScriptedReplies::new(replies))
    } else {
        Box::new(SimUserChannel(SimUser::new(&scenario)))
    };
    let log = SessionLog::new();
    let session = Session::new(
        scenario,
        a.instruction,
        cfg,
        backend,
        assets.knowledge()?,
        channel,
        Some(log.clone()),
    )?;
    let printer = follow(log, a.quiet);
    let trace = session.run();
    printer.join().ok();
    if let Some(p) = &a.out {
        trace.save(p)?;
    }
    if trace.status() != Some(EndStatus::Success) {
        std::process::exit(1);
    }
    Ok(())
}

fn cmd_replay(assets: &Assets, path: &Path, backend: &str, out: Option<&Path>) -> Result<()> {
    let original = RunTrace::load(path)?;
    let name = original.scenario_name().context("trace has no scenario name")?;
    let scenario = assets.load_scenario(name)?;
    let backend = assets.backend(&backend_ref(backend)?, &scenario)?;
    let again = replay(&original, &scenario, backend, assets.knowledge()?)?;
    if let Some(p) = out {
        again.save(p)?;
    }
    match original.first_divergence(&again) {
        None => println!("reproduced: {} events", again.events.len()),
        Some(seq) => bail!("replay diverges at seq {seq}"),
    }
    Ok(())
}

fn cmd_lint(paths: &[PathBuf]) -> Result<()> {
    let mut bad = 0;
    for p in paths {
        let v = lint(&RunTrace::load(p)?);
        for x in &v {
            println!("{}: {x}", p.display());
        }
        if v.is_empty() {
            println!("{}: ok", p.display());
        }
        bad += v.len();
    }
    if bad > 0 {
        bail!("{bad} violations");
    }
    Ok(())
}

fn cmd_record(assets: &Assets, names: &[String]) -> Result<()> {
    let names = if names.is_empty() {
        assets.scenario_names()?
    } else {
        names.to_vec()
    };
    let kb = assets.knowledge()?;
    for name in names {
        let scenario = assets.load_scenario(&name)?;
        let rec = Arc::new(Recorder::new(Arc::new(Pilot::new(scenario.clone()))));
        let cfg = RunConfig::default();
        let live = slotwise_core::orchestrator::run_scenario(&scenario, &cfg, rec.clone(), kb.clone())?;
        let path = assets.fixture_file(&scenario.name);
        let n = rec.write_jsonl(&path)?;
        let scripted = assets.backend(&BackendRef::Fixtures { paths: vec![] }, &scenario)?;
        let again = slotwise_core::orchestrator::run_scenario(&scenario, &cfg, scripted, kb.clone())?;
        if let Some(seq) = live.first_divergence(&again) {
            bail!("{name}: fixture run diverges at seq {seq}");
        }
        println!("{name}: {n} completions -> {}", path.display());
    }
    Ok(())
}

fn serve(
    assets: Assets,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
    trace_dir: Option<PathBuf>,
    reply_timeout: Option<u64>,
    token: Option<String>,
) -> Result<()> {
    let state = AppState::new(assets)
        .with_token(token)
        .with_trace_dir(trace_dir)
        .with_reply_timeout(reply_timeout.map(Duration::from_secs));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state), static_dir))
            .with_graceful_shutdown(async {
                tokio::signal::ctrl_c().await.ok();
            })
            .await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let assets = match cli.assets {
        Some(p) => Assets::new(p),
        None => Assets::discover()?,
    };
    match cli.cmd {
        Cmd::Run(a) => cmd_run(&assets, a),
        Cmd::Replay { trace, backend, out } => cmd_replay(&assets, &trace, &backend, out.as_deref()),
        Cmd::Lint { traces } => cmd_lint(&traces),
        Cmd::Eval(a) => {
            let suite = Suite::new(assets.clone(), backend_ref(&a.knobs.backend)?)?;
            let names = scenario_list(&assets, &a.scenarios)?;
            let table = suite.run_all(&names, "full", &a.knobs.config()?)?;
            a.out.write(&table, &table.render())
        }
        Cmd::Ablate(a) => {
            let suite = Suite::new(assets.clone(), backend_ref(&a.knobs.backend)?)?;
            let names = scenario_list(&assets, &a.scenarios)?;
            let table = suite.ablate(&names, &a.knobs.config()?)?;
            let mut report = table.render();
            for m in [Metric::SR, Metric::CCR] {
                let full = table.pooled_for("full").get(m).display();
                report += &format!(
                    "\n{}: full {full}, no_action_reflection {}, no_info_reflection {}",
                    m.as_str(),
                    table.pooled_for("no_action_reflection").get(m).display(),
                    table.pooled_for("no_info_reflection").get(m).display()
                );
            }
            report.push('\n');
            a.out.write(&table, &report)
        }
        Cmd::Sweep { scenario, windows, out } => {
            let suite = Suite::new(assets, BackendRef::Pilot)?;
            let sweep = suite.sweep(&scenario, &windows, &RunConfig::default())?;
            let table = Table {
                rows: sweep.rows.iter().map(|(_, r)| r.clone()).collect(),
            };
            out.write(&table, &sweep.render())
        }
        Cmd::Record { scenarios } => cmd_record(&assets, &scenarios),
        Cmd::Serve {
            addr,
            static_dir,
            trace_dir,
            reply_timeout,
            token,
        } => serve(assets, addr, static_dir, trace_dir, reply_timeout, token),
    }
}
