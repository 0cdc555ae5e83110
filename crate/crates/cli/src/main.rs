use std::collections::BTreeMap;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use quicfsm_core::alphabet::{CipherSuite, HandshakeMode, InputSymbol, TimeoutClass, TimeoutSetting};
use quicfsm_core::automata::{format_observation, from_dot_with_metadata, parse_label_word, parse_word, to_dot, MealyMachine, ModelMetadata, RenderOptions};
use quicfsm_core::differ::{cross_diff, reference_check, report, temporal_diff, Deviation, LtsDiffParams};
use quicfsm_core::harness::{calibrate_short, CalibrationParams, HarnessTimeouts};
use quicfsm_core::learner::MembershipOracle;
use quicfsm_core::mockqut::{bundled_alphabet, pipe_server, reference_model, spawn_pipe, spawn_wire, wire_server, Flaky, FaultProfile, MockOptions};
use quicfsm_core::optimizer::{optimize, reduction_ratio};
use quicfsm_core::orchestrator::{
    bundled_references, connect, run_session, CrashRecord, ProcessTarget, SessionConfig, SupervisedOracle, Target, Transport,
    EXIT_CLEAN, EXIT_FAILURE, EXIT_FINDINGS,
};

#[derive(Parser)]
#[command(name = "quicfsm", version, about = "Learns state machines of QUIC servers and diffs them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full session from a TOML config.
    Learn {
        #[arg(long)]
        config: PathBuf,
    },
    /// Measure the short wait for a running server.
    Calibrate {
        #[command(flatten)]
        conn: Connection,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 2.0)]
        factor: f64,
    },
    /// Drop self-loops and merge timeout twins in a model.
    Optimize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare models with each other. With --temporal, models are keyed by their timeout metadata.
    Diff {
        #[arg(required = true, num_args = 2..)]
        models: Vec<PathBuf>,
        #[arg(long)]
        temporal: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare a model against a reference, the bundled one for its mode by default.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        mode: Option<HandshakeMode>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Execute one input word against a server and report a crash if it happens.
    Replay {
        /// Comma-separated inputs. Labels without a timeout class get the short one.
        #[arg(long, conflicts_with = "crash_file", required_unless_present = "crash_file")]
        word: Option<String>,
        #[arg(long)]
        crash_file: Option<PathBuf>,
        #[command(flatten)]
        conn: Connection,
        /// Start this command as the server; the remaining arguments are passed to it.
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        launch: Option<Vec<String>>,
        #[arg(long, default_value_t = 500)]
        startup_grace_ms: u64,
    },
    /// Serve a model as a mock QUIC server.
    MockServe(MockServe),
}

#[derive(Args)]
struct Connection {
    #[arg(long, default_value = "127.0.0.1:4433")]
    addr: SocketAddr,
    #[arg(long, value_enum, default_value_t = TransportArg::Udp)]
    transport: TransportArg,
    #[arg(long, default_value = "Basic")]
    mode: HandshakeMode,
    #[arg(long, default_value_t = 50)]
    short_ms: u64,
}

#[derive(Args)]
struct MockServe {
    /// DOT model to serve.
    #[arg(long, conflicts_with = "reference")]
    model: Option<PathBuf>,
    /// Serve the compliant model of this mode.
    #[arg(long)]
    reference: Option<HandshakeMode>,
    #[arg(long, default_value = "none")]
    fault: String,
    /// Crash trigger word for --fault crash.
    #[arg(long)]
    trigger: Option<String>,
    #[arg(long, value_enum, default_value_t = TransportArg::Pipe)]
    transport: TransportArg,
    #[arg(long, default_value_t = 4433)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    #[arg(long)]
    flaky_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Udp,
    Pipe,
}

impl From<TransportArg> for Transport {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::Udp => Transport::Udp,
            TransportArg::Pipe => Transport::Pipe,
        }
    }
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    };
    ExitCode::from(code as u8)
}

fn run(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Learn { config } => {
            let cfg = SessionConfig::load(&config)?;
            let outcome = run_session(&cfg)?;
            print!("{}", outcome.summary());
            Ok(outcome.exit_code())
        }
        Command::Calibrate { conn, trials, factor } => {
            let mut backend = connect(conn.transport.into(), conn.addr, conn.mode, timeouts(conn.short_ms), CipherSuite::Aes128, None)?;
            let params = CalibrationParams { trials, factor, ..CalibrationParams::default() };
            let short = calibrate_short(backend.as_mut(), &params)?;
            println!("short_ms {}", short.as_millis());
            Ok(EXIT_CLEAN)
        }
        Command::Optimize { model, out } => {
            let (m, metadata) = load(&model)?;
            let (optimized, stats) = optimize(&m);
            fs::write(&out, to_dot(&optimized, &RenderOptions::with_metadata(metadata)))?;
            println!("{stats}");
            println!("reduction {:.3}", reduction_ratio(&stats));
            Ok(EXIT_CLEAN)
        }
        Command::Diff { models, temporal, json } => {
            let params = LtsDiffParams::default();
            let devs = if temporal {
                let mut by_setting = BTreeMap::new();
                for path in &models {
                    let (m, meta) = load(path)?;
                    let setting: TimeoutSetting = meta
                        .timeout
                        .as_deref()
                        .ok_or_else(|| format!("{} has no timeout metadata", path.display()))?
                        .parse()?;
                    if by_setting.insert(setting, m).is_some() {
                        return Err(format!("two models for timeout setting {setting}").into());
                    }
                }
                let t = temporal_diff(&by_setting, &params);
                t.pairs.into_iter().flat_map(|p| p.deviations).collect()
            } else {
                let mut named = Vec::new();
                for path in &models {
                    named.push((stem(path), load(path)?.0));
                }
                cross_diff(&named, &params)
            };
            finish(&devs, &params, json.as_deref())
        }
        Command::Check { model, reference, mode, json } => {
            let params = LtsDiffParams::default();
            let (learned, meta) = load(&model)?;
            let reference = match reference {
                Some(path) => load(&path)?.0,
                None => {
                    let mode = mode.or(meta.mode).ok_or("the model has no mode metadata; pass --mode or --reference")?;
                    bundled_references().into_iter().find(|r| r.mode == mode).map(|r| r.machine).ok_or("no bundled reference")?
                }
            };
            let devs = reference_check(&learned, &reference, &params)?;
            finish(&devs, &params, json.as_deref())
        }
        Command::Replay { word, crash_file, conn, launch, startup_grace_ms } => {
            let word = match (word, crash_file) {
                (Some(w), _) => parse_label_word(&w)?
                    .into_iter()
                    .map(|s| match s.timeout {
                        None if !s.is_directive() => InputSymbol { timeout: Some(TimeoutClass::Short), ..s },
                        _ => s,
                    })
                    .collect(),
                (None, Some(path)) => CrashRecord::word_from_text(&fs::read_to_string(&path)?)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            replay(&word, &conn, launch, Duration::from_millis(startup_grace_ms))
        }
        Command::MockServe(args) => mock_serve(args),
    }
}

fn timeouts(short_ms: u64) -> HarnessTimeouts {
    HarnessTimeouts::new(Duration::from_millis(short_ms), Duration::ZERO)
}

fn load(path: &Path) -> Result<(MealyMachine, ModelMetadata), Failure> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(from_dot_with_metadata(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn finish(devs: &[Deviation], params: &LtsDiffParams, json: Option<&Path>) -> Result<i32, Failure> {
    print!("{}", report::to_text(devs));
    if let Some(path) = json {
        fs::write(path, report::to_json(devs, params))?;
    }
    Ok(if devs.is_empty() { EXIT_CLEAN } else { EXIT_FINDINGS })
}

fn replay(word: &[InputSymbol], conn: &Connection, launch: Option<Vec<String>>, grace: Duration) -> Result<i32, Failure> {
    let mut process = match launch {
        Some(command) => {
            let p = ProcessTarget::launch(command, None, grace)?;
            std::thread::sleep(grace);
            Some(p)
        }
        None => None,
    };
    let mut backend = connect(conn.transport.into(), conn.addr, conn.mode, timeouts(conn.short_ms), CipherSuite::Aes128, None)?;
    if !backend.ready(Duration::from_secs(10)) {
        return Err("target did not answer the readiness probe".into());
    }
    let target = process.as_mut().map(|p| p as &mut dyn Target);
    let mut oracle = SupervisedOracle::new(backend.as_mut(), target);
    oracle.reset()?;
    let mut outputs = Vec::new();
    for sym in word {
        let obs = oracle.step(sym)?;
        println!("{sym} / {}", format_observation(std::slice::from_ref(&obs)));
        outputs.push(obs);
        if !oracle.crashes.is_empty() {
            break;
        }
    }
    let crashes = std::mem::take(&mut oracle.crashes);
    drop(oracle);
    match crashes.first() {
        Some(c) => {
            println!("crash reproduced");
            print!("{}", c.to_text());
            Ok(EXIT_FINDINGS)
        }
        None => {
            println!("no crash");
            Ok(EXIT_CLEAN)
        }
    }
}

fn mock_serve(args: MockServe) -> Result<i32, Failure> {
    let (model, mode) = match (&args.model, args.reference) {
        (Some(path), _) => {
            let (m, meta) = load(path)?;
            (m, meta.mode.unwrap_or(HandshakeMode::Basic))
        }
        (None, reference) => {
            let mode = reference.unwrap_or(HandshakeMode::Basic);
            (reference_model(mode, &bundled_alphabet(mode)), mode)
        }
    };
    let trigger = args.trigger.as_deref().map(parse_word).transpose()?;
    let fault = FaultProfile::parse(&args.fault, trigger)?;
    let options = MockOptions {
        delay: Duration::from_millis(args.delay_ms),
        flaky: args.flaky_rate.map(|rate| Flaky { rate, seed: args.seed }),
        ..MockOptions::default()
    };
    let served = fault.apply(&model)?;
    let addr = SocketAddr::new(args.host, args.port);
    let alive: Box<dyn Fn() -> bool> = match args.transport {
        TransportArg::Pipe => {
            let running = spawn_pipe(pipe_server::bind(addr)?, served, fault.clone(), options)?;
            println!("listening pipe {}", running.addr);
            Box::new(move || running.alive())
        }
        TransportArg::Udp => {
            if mode != HandshakeMode::Basic {
                return Err("the UDP mock serves the Basic handshake only".into());
            }
            let running = spawn_wire(wire_server::bind_udp(addr)?, served, fault.clone(), options)?;
            println!("listening udp {}", running.addr);
            Box::new(move || running.alive())
        }
    };
    log::info!("serving {mode} with fault {fault}");
    while alive() {
        std::thread::sleep(Duration::from_millis(100));
    }
    Ok(EXIT_CLEAN)
}
