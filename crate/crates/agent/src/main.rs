use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use pulse_agent::config::AgentConfig;
use pulse_agent::datastore::{parse_instant, IngestRequest, Store};
use pulse_agent::orchestrator::datapipe::DataPipe;
use pulse_agent::orchestrator::registry::Registry;
use pulse_agent::orchestrator::{build_backend, Orchestrator, SessionOutcome};
use pulse_agent::report::{evaluate_store, write_report};
use pulse_agent::service::{serve, AppState};
use pulse_agent::synth::{seed_store, CorpusSpec};
use pulse_core::Channel;

#[derive(Parser)]
#[command(
    name = "pulse-agent",
    version,
    about = "Heart-rate analysis agent for wearable PPG and ECG recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Recording store directory (overrides the configuration).
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Store a CSV recording (`t_offset_s,value`).
    Ingest {
        csv: PathBuf,
        #[arg(long)]
        user: String,
        /// PPG or ECG_LEAD_II.
        #[arg(long)]
        modality: String,
        /// Start time: ISO date-time in the configured timezone, or Unix seconds.
        #[arg(long)]
        start: String,
        /// Sample rate in Hz.
        #[arg(long)]
        rate: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate PPG heart rate against the ECG reference over all paired recordings.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[command(flatten)]
        common: Common,
    },
    /// Interactive questions about one user's recordings.
    Ask {
        #[arg(long)]
        user: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic paired PPG/ECG corpus into the store.
    Generate {
        #[arg(long, default_value_t = 50)]
        recordings: usize,
        #[arg(long, default_value_t = 900.0)]
        duration: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
}

/// A failure reported as `error: <code>: <message>`.
struct Failure {
    code: String,
    message: String,
}

impl Failure {
    fn new(code: &str, message: impl ToString) -> Self {
        Self {
            code: code.into(),
            message: message.to_string(),
        }
    }
}

impl From<pulse_agent::datastore::StoreError> for Failure {
    fn from(e: pulse_agent::datastore::StoreError) -> Self {
        Failure::new(e.code(), e)
    }
}

fn load_config(common: &Common) -> Result<AgentConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => AgentConfig::load(path).map_err(|e| Failure::new("ConfigError", e))?,
        None => AgentConfig::default(),
    };
    if let Some(root) = &common.data_root {
        config.data_root = root.clone();
    }
    config.tz().map_err(|e| Failure::new("ConfigError", e))?;
    Ok(config)
}

fn open_store(config: &AgentConfig) -> Result<Store, Failure> {
    Ok(Store::open(&config.data_root, config.trim_s)?)
}

fn orchestrator(config: AgentConfig) -> Result<Orchestrator, Failure> {
    let store = open_store(&config)?;
    let llm = build_backend(&config.llm).map_err(|e| Failure::new(e.code(), e))?;
    Ok(Orchestrator::new(Registry::builtin(), store, config, llm))
}

fn ingest(
    csv: &Path,
    user: String,
    modality: &str,
    start: &str,
    rate: f64,
    config: AgentConfig,
) -> Result<(), Failure> {
    let modality: Channel = modality
        .parse()
        .map_err(|_| Failure::new("InvalidRequest", "modality must be PPG or ECG_LEAD_II"))?;
    let tz = config.tz().map_err(|e| Failure::new("ConfigError", e))?;
    let request = IngestRequest {
        user_id: user,
        modality,
        start_epoch_s: parse_instant(start, tz)?,
        sample_rate_hz: rate,
    };
    let meta = open_store(&config)?.ingest(csv, &request)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&meta).expect("meta serializes")
    );
    Ok(())
}

fn evaluate(out: &Path, config: AgentConfig) -> Result<(), Failure> {
    let store = open_store(&config)?;
    let report = evaluate_store(&store, &config).map_err(|e| Failure::new(e.code(), e))?;
    write_report(out, &report).map_err(|e| Failure::new("IoError", e))?;
    match &report.pooled.metrics {
        Some(m) => println!(
            "{} recordings, {} skipped: MAE {:.3} BPM, RMSE {:.3} BPM, MAPE {:.2}%, n = {}",
            report.recordings.len(),
            report.skipped.len(),
            m.mae,
            m.rmse,
            m.mape_pct,
            m.n
        ),
        None => println!(
            "{} recordings, {} skipped: no valid windows",
            report.recordings.len(),
            report.skipped.len()
        ),
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn run_server(port: Option<u16>, mut config: AgentConfig) -> Result<(), Failure> {
    if let Some(p) = port {
        config.service.port = p;
    }
    let addr = format!("{}:{}", config.service.bind, config.service.port);
    let state = Arc::new(AppState::new(orchestrator(config)?));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new("IoError", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::new("BindError", format!("{addr}: {e}")))?;
        tracing::info!(
            "listening on {}",
            listener
                .local_addr()
                .map_or(addr.clone(), |a| a.to_string())
        );
        serve(state, listener)
            .await
            .map_err(|e| Failure::new("IoError", e))
    })
}

fn ask(user: &str, config: AgentConfig) -> Result<(), Failure> {
    let orchestrator = orchestrator(config)?;
    let session_id = "cli";
    let mut history = vec![format!("Questions are about user {user}.")];
    let mut pipe = DataPipe::new();
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    loop {
        print!("> ");
        let _ = stdout.flush();
        let mut line = String::new();
        if stdin
            .lock()
            .read_line(&mut line)
            .map_err(|e| Failure::new("IoError", e))?
            == 0
        {
            return Ok(());
        }
        let query = line.trim();
        if query.is_empty() {
            continue;
        }
        if matches!(query, "quit" | "exit") {
            return Ok(());
        }
        match orchestrator.run_session(session_id, query, &history, &mut pipe) {
            SessionOutcome::Response(r) => println!("{}", r.text),
            SessionOutcome::Clarification(c) => println!("? {}", c.message),
            SessionOutcome::Failed(f) => eprintln!("error: {}: {}", f.code, f.message),
        }
        history.push(query.to_string());
    }
}

fn generate(
    recordings: usize,
    duration: f64,
    seed: u64,
    config: AgentConfig,
) -> Result<(), Failure> {
    let store = open_store(&config)?;
    let spec = CorpusSpec {
        recordings,
        duration_s: duration,
        seed,
        ..CorpusSpec::default()
    };
    let written = seed_store(&store, &spec)?;
    println!(
        "wrote {} recordings to {}",
        written.len(),
        store.root().display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest {
            csv,
            user,
            modality,
            start,
            rate,
            common,
        } => ingest(&csv, user, &modality, &start, rate, load_config(&common)?),
        Command::Evaluate { out, common } => evaluate(&out, load_config(&common)?),
        Command::Serve { port, common } => run_server(port, load_config(&common)?),
        Command::Ask { user, common } => ask(&user, load_config(&common)?),
        Command::Generate {
            recordings,
            duration,
            seed,
            common,
        } => generate(recordings, duration, seed, load_config(&common)?),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.code, f.message);
            ExitCode::from(1)
        }
    }
}
