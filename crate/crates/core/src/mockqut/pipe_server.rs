//! Serves a machine over the symbol pipe.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{CrashAction, FaultProfile, MockError, MockOptions};
use crate::alphabet::{OutputSymbol, SymbolRegistry};
use crate::automata::{MealyMachine, ObservationStep};
use crate::harness::pipe::write_observation;

/// One session's view of the served machine.
pub struct Session<'a> {
    model: &'a MealyMachine,
    registry: &'a SymbolRegistry,
    trigger: Option<&'a [crate::alphabet::InputSymbol]>,
    state: usize,
    word: Vec<crate::alphabet::InputSymbol>,
}

pub enum Reply {
    Observation(ObservationStep),
    Crash,
}

impl<'a> Session<'a> {
    pub fn new(model: &'a MealyMachine, registry: &'a SymbolRegistry, fault: &'a FaultProfile) -> Self {
        Session { model, registry, trigger: fault.trigger(), state: model.initial(), word: Vec::new() }
    }

    pub fn handle(&mut self, label: &str) -> Reply {
        let sym = match self.registry.parse_input(label) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("mock: {e}");
                return Reply::Observation(ObservationStep::single(OutputSymbol::HarnessError));
            }
        };
        self.word.push(sym.clone());
        if self.trigger == Some(self.word.as_slice()) {
            return Reply::Crash;
        }
        // a model without timing distinctions answers every wait the same
        let index = self.model.input_index(&sym).or_else(|| {
            self.model.inputs().iter().position(|s| s.kind == sym.kind && s.cipher == sym.cipher)
        });
        match index.and_then(|i| self.model.transition(self.state, i)) {
            Some((obs, next)) => {
                self.state = next;
                Reply::Observation(obs.clone())
            }
            // directives outside the model's alphabet are accepted silently
            None if sym.is_directive() => Reply::Observation(ObservationStep::new()),
            None => Reply::Observation(ObservationStep::single(OutputSymbol::HarnessError)),
        }
    }
}

/// A pipe server running on a background thread.
pub struct RunningPipe {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    active: Arc<Mutex<Option<TcpStream>>>,
    handle: Option<JoinHandle<()>>,
}

impl RunningPipe {
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock a session still reading from its client, then the accept loop
        if let Some(conn) = self.active.lock().expect("not poisoned").take() {
            let _ = conn.shutdown(std::net::Shutdown::Both);
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    /// Whether the serving loop is still running; false after a simulated crash.
    pub fn alive(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| !h.is_finished())
    }
}

impl Drop for RunningPipe {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn bind(addr: SocketAddr) -> Result<TcpListener, MockError> {
    TcpListener::bind(addr).map_err(|e| MockError::TransportBindFailure(format!("{addr}: {e}")))
}

/// Serves on a background thread. Crashes end the loop and drop the listener.
pub fn spawn_pipe(
    listener: TcpListener,
    model: MealyMachine,
    fault: FaultProfile,
    options: MockOptions,
) -> Result<RunningPipe, MockError> {
    let addr = listener.local_addr().map_err(|e| MockError::TransportBindFailure(e.to_string()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let active = Arc::new(Mutex::new(None));
    let (flag, slot) = (stop.clone(), active.clone());
    let handle = thread::spawn(move || {
        let _ = serve_pipe(&listener, &model, &fault, &options, &flag, Some(&slot));
    });
    Ok(RunningPipe { addr, stop, active, handle: Some(handle) })
}

/// Serves connections one at a time until stopped or crashed.
///
/// The current connection is published in `active` so a stopper can shut it down.
pub fn serve_pipe(
    listener: &TcpListener,
    model: &MealyMachine,
    fault: &FaultProfile,
    options: &MockOptions,
    stop: &AtomicBool,
    active: Option<&Mutex<Option<TcpStream>>>,
) -> Result<(), MockError> {
    let registry = options.registry.clone().unwrap_or_else(SymbolRegistry::standard);
    let mut rng = StdRng::seed_from_u64(options.flaky.map_or(0, |f| f.seed));
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(conn) = conn else { continue };
        let _ = conn.set_nodelay(true);
        let mut writer = match conn.try_clone() {
            Ok(w) => w,
            Err(_) => continue,
        };
        if let (Some(slot), Ok(c)) = (active, conn.try_clone()) {
            *slot.lock().expect("not poisoned") = Some(c);
        }
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let mut session = Session::new(model, &registry, fault);
        for line in BufReader::new(conn).lines() {
            let Ok(line) = line else { break };
            let label = line.trim();
            if label.is_empty() {
                continue;
            }
            let obs = match session.handle(label) {
                Reply::Crash => match options.crash {
                    CrashAction::Abort => {
                        log::error!("mock: crash trigger reached");
                        std::process::abort();
                    }
                    CrashAction::StopServing => return Ok(()),
                },
                Reply::Observation(obs) => obs,
            };
            let obs = match options.flaky {
                Some(f) if !obs.is_empty() && rng.gen_bool(f.rate) => ObservationStep::single(OutputSymbol::NoResponse),
                _ => obs,
            };
            if !options.delay.is_zero() {
                thread::sleep(options.delay);
            }
            if write_observation(&mut writer, &obs).is_err() {
                break;
            }
        }
        let _ = writer.flush();
    }
    Ok(())
}
