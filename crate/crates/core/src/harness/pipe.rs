//! Symbol-pipe backend: abstract symbols over a local TCP stream.
//!
//! Framing: the client writes one input label per line. The server answers
//! with one output symbol per line and a blank line ends the observation.
//! One connection is one session, so a reset is a reconnect.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use super::calibrate::Calibrate;
use super::symbolize::finish;
use super::{Backend, HarnessError, HarnessTimeouts};
use crate::alphabet::{CipherSuite, InputKind, InputSymbol, SymbolRegistry, TimeoutClass};
use crate::automata::ObservationStep;
use crate::learner::{LearnError, MembershipOracle};

/// Writes an observation in pipe framing.
pub fn write_observation<W: Write>(w: &mut W, obs: &ObservationStep) -> io::Result<()> {
    let mut buf = String::new();
    for o in obs.outputs() {
        buf.push_str(o.name());
        buf.push('\n');
    }
    buf.push('\n');
    w.write_all(buf.as_bytes())?;
    w.flush()
}

pub struct PipeClient {
    addr: SocketAddr,
    timeouts: HarnessTimeouts,
    registry: SymbolRegistry,
    conn: Option<(BufReader<TcpStream>, TcpStream)>,
    /// Set when the server missed a deadline; the rest of the word is silent.
    lost: bool,
    /// Input used by calibration trials.
    pub probe: InputSymbol,
}

impl PipeClient {
    pub fn new(addr: SocketAddr, timeouts: HarnessTimeouts) -> Self {
        PipeClient {
            addr,
            timeouts,
            registry: SymbolRegistry::standard(),
            conn: None,
            lost: false,
            probe: InputSymbol::client_hello(InputKind::InitCltHelloVldAck, TimeoutClass::Short, CipherSuite::Aes128),
        }
    }

    pub fn with_registry(mut self, registry: SymbolRegistry) -> Self {
        self.registry = registry;
        self
    }

    fn connect(&mut self) -> Result<(), HarnessError> {
        let stream = TcpStream::connect_timeout(&self.addr, self.timeouts.long.max(Duration::from_millis(200)))
            .map_err(|e| HarnessError::TargetUnreachable(format!("{}: {e}", self.addr)))?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        self.conn = Some((reader, stream));
        self.lost = false;
        Ok(())
    }

    /// Sends one label and reads the observation, or `None` if `wait` passed first.
    fn exchange(&mut self, label: &str, wait: Duration) -> Result<Option<ObservationStep>, HarnessError> {
        if self.conn.is_none() {
            self.connect()?;
        }
        let (reader, writer) = self.conn.as_mut().expect("connected");
        writer.write_all(format!("{label}\n").as_bytes())?;
        writer.flush()?;
        let deadline = Instant::now() + wait;
        let mut obs = ObservationStep::new();
        let mut line = String::new();
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            reader.get_ref().set_read_timeout(Some(deadline - now))?;
            // a timed-out read may leave a partial line in `line`; keep it
            match reader.read_line(&mut line) {
                Ok(0) => return Ok(None),
                Ok(_) if !line.ends_with('\n') => continue,
                Ok(_) => {
                    let text = line.trim();
                    if text.is_empty() {
                        return Ok(Some(obs));
                    }
                    match self.registry.parse_output(text) {
                        Ok(o) => obs.push(o),
                        Err(e) => {
                            log::warn!("unparseable pipe output {text:?}: {e}");
                            obs.push(crate::alphabet::OutputSymbol::HarnessError);
                        }
                    }
                    line.clear();
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) if matches!(e.kind(), io::ErrorKind::ConnectionReset | io::ErrorKind::BrokenPipe) => {
                    return Ok(None)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn step_inner(&mut self, sym: &InputSymbol) -> Result<ObservationStep, HarnessError> {
        if self.lost {
            return Ok(if sym.is_directive() { ObservationStep::new() } else { finish(ObservationStep::new()) });
        }
        // directives get an (empty) acknowledgement at once
        let wait = if sym.is_directive() { self.timeouts.long } else { self.timeouts.wait(sym.timeout) };
        match self.exchange(&sym.to_string(), wait) {
            Ok(Some(obs)) => Ok(if sym.is_directive() { obs } else { finish(obs) }),
            Ok(None) | Err(HarnessError::Socket(_)) => {
                log::debug!("{sym}: no answer within {wait:?}; session lost");
                self.lost = true;
                self.conn = None;
                Ok(if sym.is_directive() { ObservationStep::new() } else { finish(ObservationStep::new()) })
            }
            Err(e) => Err(e),
        }
    }
}

impl MembershipOracle for PipeClient {
    fn reset(&mut self) -> Result<(), LearnError> {
        self.conn = None;
        Ok(self.connect()?)
    }

    fn step(&mut self, input: &InputSymbol) -> Result<ObservationStep, LearnError> {
        Ok(self.step_inner(input)?)
    }
}

impl Calibrate for PipeClient {
    fn trial(&mut self, window: Duration) -> Result<Option<Duration>, HarnessError> {
        self.conn = None;
        self.connect()?;
        let start = Instant::now();
        let label = self.probe.to_string();
        let got = self.exchange(&label, window)?;
        self.conn = None;
        Ok(got.map(|_| start.elapsed()))
    }
}

impl Backend for PipeClient {
    fn ready(&mut self, within: Duration) -> bool {
        let deadline = Instant::now() + within;
        loop {
            self.conn = None;
            if self.connect().is_ok() {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn timeouts(&self) -> HarnessTimeouts {
        self.timeouts
    }

    fn set_timeouts(&mut self, timeouts: HarnessTimeouts) {
        self.timeouts = timeouts;
    }

    // the mock writes a line for every step, silence included
    fn last_step_answered(&self) -> bool {
        !self.lost
    }
}
