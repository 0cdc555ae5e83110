//! Target process supervision and crash logging.
//!
//! The target is checked after every harness step. When it is gone, a crash
//! record with the input word executed so far is kept (once per word), the
//! target is restarted, and no further query reaches it before the startup
//! grace has passed and it answers a readiness probe.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::Read;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use super::{OrchestratorError, Phase};
use crate::alphabet::{InputSymbol, OutputSymbol};
use crate::automata::{format_word, parse_word, MealyMachine, ObservationStep};
use crate::harness::Backend;
use crate::learner::{LearnError, MembershipOracle};
use crate::mockqut::{pipe_server, CrashAction, FaultProfile, MockOptions, RunningPipe};

/// A server whose liveness can be observed and which can be started again.
pub trait Target {
    /// True iff the server process exists and has not exited.
    fn check_alive(&mut self) -> bool;

    /// Stops whatever is left of the server and starts a new one.
    fn restart(&mut self) -> Result<(), OrchestratorError>;

    /// How the last instance ended, if it did.
    fn exit_status(&mut self) -> Option<String>;

    /// Captured (stdout, stderr) of the current instance.
    fn output(&self) -> (String, String);

    fn startup_grace(&self) -> Duration;

    /// Extra wait before concluding a silent step did not kill the target.
    fn settle(&self) -> Duration {
        Duration::from_millis(30)
    }
}

/// Keeps the last `cap` bytes written.
#[derive(Debug)]
struct Ring {
    buf: VecDeque<u8>,
    cap: usize,
}

impl Ring {
    fn new(cap: usize) -> Self {
        Ring { buf: VecDeque::with_capacity(cap.min(4096)), cap }
    }

    fn extend(&mut self, data: &[u8]) {
        let data = &data[data.len().saturating_sub(self.cap)..];
        let overflow = (self.buf.len() + data.len()).saturating_sub(self.cap);
        self.buf.drain(..overflow);
        self.buf.extend(data);
    }

    fn text(&self) -> String {
        let (a, b) = self.buf.as_slices();
        String::from_utf8_lossy(&[a, b].concat()).into_owned()
    }
}

const OUTPUT_CAP: usize = 64 * 1024;

fn drain<R: Read + Send + 'static>(mut from: R, into: Arc<Mutex<Ring>>) {
    thread::spawn(move || {
        let mut chunk = [0u8; 4096];
        while let Ok(n) = from.read(&mut chunk) {
            if n == 0 {
                break;
            }
            into.lock().expect("ring lock").extend(&chunk[..n]);
        }
    });
}

fn describe_status(status: ExitStatus) -> String {
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return format!("signal {sig}");
        }
    }
    match status.code() {
        Some(code) => format!("exit code {code}"),
        None => "unknown".to_string(),
    }
}

/// A locally launched server process.
pub struct ProcessTarget {
    command: Vec<String>,
    working_dir: Option<PathBuf>,
    grace: Duration,
    child: Option<Child>,
    status: Option<ExitStatus>,
    stdout: Arc<Mutex<Ring>>,
    stderr: Arc<Mutex<Ring>>,
}

impl ProcessTarget {
    /// Starts the process. The caller waits out the grace period.
    pub fn launch(command: Vec<String>, working_dir: Option<PathBuf>, grace: Duration) -> Result<Self, OrchestratorError> {
        let mut t = ProcessTarget {
            command,
            working_dir,
            grace,
            child: None,
            status: None,
            stdout: Arc::new(Mutex::new(Ring::new(OUTPUT_CAP))),
            stderr: Arc::new(Mutex::new(Ring::new(OUTPUT_CAP))),
        };
        t.spawn()?;
        Ok(t)
    }

    fn spawn(&mut self) -> Result<(), OrchestratorError> {
        let (program, args) = self.command.split_first().ok_or_else(|| OrchestratorError::phase(Phase::Launch, "empty command"))?;
        let mut cmd = Command::new(program);
        cmd.args(args).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
        if let Some(dir) = &self.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| OrchestratorError::phase(Phase::Launch, format!("{program}: {e}")))?;
        self.stdout = Arc::new(Mutex::new(Ring::new(OUTPUT_CAP)));
        self.stderr = Arc::new(Mutex::new(Ring::new(OUTPUT_CAP)));
        if let Some(out) = child.stdout.take() {
            drain(out, self.stdout.clone());
        }
        if let Some(err) = child.stderr.take() {
            drain(err, self.stderr.clone());
        }
        log::info!("launched {} (pid {})", self.command.join(" "), child.id());
        self.child = Some(child);
        self.status = None;
        Ok(())
    }

    pub fn pid(&self) -> Option<u32> {
        self.child.as_ref().map(Child::id)
    }

    /// Kills and reaps the process.
    pub fn kill(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            if let Ok(s) = c.wait() {
                self.status.get_or_insert(s);
            }
        }
    }
}

impl Target for ProcessTarget {
    fn check_alive(&mut self) -> bool {
        let Some(child) = self.child.as_mut() else { return false };
        // try_wait reaps an exited child, so a zombie counts as dead
        match child.try_wait() {
            Ok(None) => true,
            Ok(Some(status)) => {
                self.status = Some(status);
                false
            }
            Err(_) => false,
        }
    }

    fn restart(&mut self) -> Result<(), OrchestratorError> {
        self.kill();
        self.spawn()
    }

    fn exit_status(&mut self) -> Option<String> {
        if self.status.is_none() {
            self.check_alive();
        }
        self.status.map(describe_status)
    }

    fn output(&self) -> (String, String) {
        // give the reader threads a moment to pick up the last writes
        thread::sleep(Duration::from_millis(20));
        (self.stdout.lock().expect("ring lock").text(), self.stderr.lock().expect("ring lock").text())
    }

    fn startup_grace(&self) -> Duration {
        self.grace
    }
}

impl Drop for ProcessTarget {
    fn drop(&mut self) {
        self.kill();
    }
}

/// The pipe mock running in this process; a crash ends its serving thread.
pub struct MockTarget {
    addr: SocketAddr,
    model: MealyMachine,
    fault: FaultProfile,
    options: MockOptions,
    running: Option<RunningPipe>,
    crashed: bool,
}

impl MockTarget {
    pub fn start(addr: SocketAddr, model: MealyMachine, fault: FaultProfile, options: MockOptions) -> Result<Self, OrchestratorError> {
        let options = MockOptions { crash: CrashAction::StopServing, ..options };
        let mut t = MockTarget { addr, model, fault, options, running: None, crashed: false };
        t.spawn()?;
        Ok(t)
    }

    fn spawn(&mut self) -> Result<(), OrchestratorError> {
        let listener = pipe_server::bind(self.addr).map_err(|e| OrchestratorError::phase(Phase::Launch, e))?;
        self.addr = listener.local_addr().map_err(|e| OrchestratorError::phase(Phase::Launch, e))?;
        let served = self.fault.apply(&self.model).map_err(|e| OrchestratorError::phase(Phase::Launch, e))?;
        let running = pipe_server::spawn_pipe(listener, served, self.fault.clone(), self.options.clone())
            .map_err(|e| OrchestratorError::phase(Phase::Launch, e))?;
        self.running = Some(running);
        self.crashed = false;
        Ok(())
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Target for MockTarget {
    fn check_alive(&mut self) -> bool {
        let alive = self.running.as_ref().is_some_and(RunningPipe::alive);
        self.crashed |= !alive;
        alive
    }

    fn restart(&mut self) -> Result<(), OrchestratorError> {
        if let Some(mut r) = self.running.take() {
            r.stop();
        }
        self.spawn()
    }

    fn exit_status(&mut self) -> Option<String> {
        self.crashed.then(|| "serving loop ended".to_string())
    }

    fn output(&self) -> (String, String) {
        (String::new(), String::new())
    }

    fn startup_grace(&self) -> Duration {
        Duration::ZERO
    }

    // the serving thread's liveness is known exactly
    fn settle(&self) -> Duration {
        Duration::ZERO
    }
}

/// One observed target crash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashRecord {
    /// Inputs executed on the connection up to and including the last one before the crash.
    pub word: Vec<InputSymbol>,
    pub stdout: String,
    pub stderr: String,
    pub status: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Restarts performed before this crash.
    pub restarts: u32,
}

impl CrashRecord {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "word: {}", format_word(&self.word));
        let _ = writeln!(out, "status: {}", self.status);
        let _ = writeln!(out, "timestamp: {}", self.timestamp);
        let _ = writeln!(out, "restarts: {}", self.restarts);
        let _ = writeln!(out, "--- stdout ---\n{}", self.stdout.trim_end());
        let _ = writeln!(out, "--- stderr ---\n{}", self.stderr.trim_end());
        out
    }

    /// The replayable word of a crash file.
    pub fn word_from_text(text: &str) -> Result<Vec<InputSymbol>, OrchestratorError> {
        let line = text
            .lines()
            .find_map(|l| l.strip_prefix("word: "))
            .ok_or_else(|| OrchestratorError::InvalidConfig("crash file has no word line".into()))?;
        parse_word(line).map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))
    }
}

/// Wraps a backend so every step is followed by a liveness check of the target.
pub struct SupervisedOracle<'a, 'b> {
    backend: &'a mut dyn Backend,
    target: Option<&'b mut dyn Target>,
    word: Vec<InputSymbol>,
    // set once the target died during the current word
    dead: bool,
    pub crashes: Vec<CrashRecord>,
    pub restarts: u32,
    /// How long a restarted target may take to answer its readiness probe.
    pub ready_within: Duration,
}

impl<'a, 'b> SupervisedOracle<'a, 'b> {
    pub fn new(backend: &'a mut dyn Backend, target: Option<&'b mut dyn Target>) -> Self {
        SupervisedOracle {
            backend,
            target,
            word: Vec::new(),
            dead: false,
            crashes: Vec::new(),
            restarts: 0,
            ready_within: Duration::from_secs(10),
        }
    }

    pub fn backend(&mut self) -> &mut dyn Backend {
        self.backend
    }

    /// `waited` is how long the step already listened after sending.
    fn alive(&mut self, silent: bool, waited: Duration) -> bool {
        let Some(t) = self.target.as_deref_mut() else { return true };
        let settle = t.settle().saturating_sub(waited);
        if !t.check_alive() {
            return false;
        }
        // a dying process may still be around right after it stopped answering
        if silent && !settle.is_zero() {
            thread::sleep(settle);
            return t.check_alive();
        }
        true
    }

    fn crashed(&mut self) -> Result<(), LearnError> {
        let Some(t) = self.target.as_deref_mut() else { return Ok(()) };
        let (stdout, stderr) = t.output();
        let status = t.exit_status().unwrap_or_else(|| "unknown".to_string());
        if !self.crashes.iter().any(|c| c.word == self.word) {
            log::warn!("target crashed after {} ({status})", format_word(&self.word));
            let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            self.crashes.push(CrashRecord { word: self.word.clone(), stdout, stderr, status, timestamp, restarts: self.restarts });
        }
        self.restart()
    }

    /// Restarts the target and waits until it is usable.
    pub fn restart(&mut self) -> Result<(), LearnError> {
        let Some(t) = self.target.as_deref_mut() else { return Ok(()) };
        t.restart().map_err(|e| LearnError::OracleUnavailable(e.to_string()))?;
        self.restarts += 1;
        thread::sleep(t.startup_grace());
        if !self.backend.ready(self.ready_within) {
            return Err(LearnError::OracleUnavailable("target did not come back after a restart".into()));
        }
        Ok(())
    }
}

impl MembershipOracle for SupervisedOracle<'_, '_> {
    fn reset(&mut self) -> Result<(), LearnError> {
        self.word.clear();
        self.dead = false;
        if !self.alive(false, Duration::ZERO) {
            self.crashed()?;
        }
        self.backend.reset()
    }

    fn step(&mut self, input: &InputSymbol) -> Result<ObservationStep, LearnError> {
        self.word.push(input.clone());
        // the connection died with the server; the rest of the word sees silence
        if self.dead {
            return Ok(if input.is_directive() { ObservationStep::new() } else { ObservationStep::single(OutputSymbol::NoResponse) });
        }
        let sent = Instant::now();
        let result = self.backend.step(input);
        let silent = match &result {
            Ok(o) => !self.backend.last_step_answered() && (o.is_empty() || o.contains(&OutputSymbol::NoResponse)),
            Err(_) => true,
        };
        if self.alive(silent, sent.elapsed()) {
            return result;
        }
        self.dead = true;
        self.crashed()?;
        Ok(match result {
            Ok(o) => o,
            Err(_) if input.is_directive() => ObservationStep::new(),
            Err(_) => ObservationStep::single(OutputSymbol::NoResponse),
        })
    }
}
