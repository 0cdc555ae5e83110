//! Compliant reference behavior for each handshake mode.
//!
//! An abstract server state is stepped symbol by symbol and the reachable
//! part is explored into a minimal Mealy machine over a chosen alphabet.
//! Client key availability mirrors the wire harness: Handshake and 1-RTT keys
//! appear with the server flight, 0-RTT keys with any PSK ClientHello.

use std::collections::{HashMap, VecDeque};

use crate::alphabet::{default_alphabet, CipherSuite, EncryptionLevel, HandshakeMode, InputKind, InputSymbol, OutputSymbol, TimeoutClass};
use crate::automata::{MealyBuilder, MealyMachine, ObservationStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Phase {
    Fresh,
    RetrySent,
    /// Server flight sent, waiting for the client's second flight.
    Flight,
    Done,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ClientCert {
    None,
    Valid,
    Verified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Server {
    phase: Phase,
    cert: ClientCert,
    /// The server processed a Handshake packet and dropped its Initial keys.
    initial_discarded: bool,
    client_handshake_keys: bool,
    client_early_keys: bool,
    padding_removed: bool,
    original_dcid: bool,
    retry_token: bool,
}

impl Server {
    fn new() -> Server {
        Server {
            phase: Phase::Fresh,
            cert: ClientCert::None,
            initial_discarded: false,
            client_handshake_keys: false,
            client_early_keys: false,
            padding_removed: false,
            original_dcid: false,
            retry_token: false,
        }
    }

    fn client_has(&self, level: EncryptionLevel) -> bool {
        match level {
            EncryptionLevel::Initial => true,
            EncryptionLevel::ZeroRtt => self.client_early_keys,
            EncryptionLevel::Handshake | EncryptionLevel::OneRtt => self.client_handshake_keys,
        }
    }

    /// Whether a probe ping at the client's highest level would be acknowledged.
    fn probe_acked(&self) -> bool {
        if !self.client_handshake_keys {
            // the probe is an Initial ping, dropped before a ClientHello and unpadded ones always
            return false;
        }
        match self.phase {
            Phase::Flight => true,
            Phase::Done => !self.original_dcid,
            _ => false,
        }
    }

    fn status(&self) -> OutputSymbol {
        if self.probe_acked() {
            OutputSymbol::ConAct
        } else {
            OutputSymbol::ConClosed
        }
    }

    fn close(mut self) -> Server {
        self.phase = Phase::Closed;
        self.cert = ClientCert::None;
        self
    }

    fn flight(mode: HandshakeMode) -> Vec<OutputSymbol> {
        use OutputSymbol::*;
        match mode {
            HandshakeMode::Psk => vec![InitSvrHello, HndEncExt, HndFin],
            m if m.uses_client_auth() => vec![InitSvrHello, HndEncExt, HndCertReq, HndCert, HndCertVer, HndFin],
            _ => vec![InitSvrHello, HndEncExt, HndCert, HndCertVer, HndFin],
        }
    }

    fn step(self, mode: HandshakeMode, input: &InputSymbol) -> (Vec<OutputSymbol>, Server) {
        use InputKind::*;
        use OutputSymbol::{ConClose, HarnessError, HndshkDone, NewTkn, NoResponse, PingAck, Retry};
        let mut s = self;
        match input.kind {
            IncRetryTkn => {
                s.retry_token = true;
                return (vec![], s);
            }
            RmPadFrmInitPkts => {
                s.padding_removed = true;
                return (vec![], s);
            }
            ChgDestConIdOri => {
                s.original_dcid = true;
                return (vec![], s);
            }
            _ => {}
        }
        let Some(level) = input.kind.level() else {
            return (vec![NoResponse], s);
        };
        if !s.client_has(level) {
            return (vec![HarnessError], s);
        }
        let close = input.kind.is_connection_close();
        let silent = |s: Server| {
            if close {
                (vec![NoResponse, s.status()], s)
            } else {
                (vec![NoResponse], s)
            }
        };
        let dropped = match s.phase {
            Phase::Closed => true,
            Phase::Done if s.original_dcid => true,
            _ => level == EncryptionLevel::Initial && (s.padding_removed || s.initial_discarded),
        };
        if dropped {
            return silent(s);
        }
        // a closing input the server processes
        let closes = |s: Server| {
            let s = s.close();
            (vec![NoResponse, s.status()], s)
        };
        let fails = |s: Server| (vec![ConClose], s.close());

        match s.phase {
            Phase::Fresh | Phase::RetrySent => {
                if !input.kind.is_client_hello() {
                    // no connection yet
                    return silent(s);
                }
                if mode.uses_retry() && !(s.phase == Phase::RetrySent && s.retry_token) {
                    s.phase = Phase::RetrySent;
                    return (vec![Retry], s);
                }
                s.phase = Phase::Flight;
                s.client_handshake_keys = true;
                s.client_early_keys = mode == HandshakeMode::Psk;
                (Server::flight(mode), s)
            }
            Phase::Flight | Phase::Done => {
                let done = s.phase == Phase::Done;
                if level == EncryptionLevel::Handshake {
                    if done {
                        // handshake keys are gone once the handshake is confirmed
                        return silent(s);
                    }
                    s.initial_discarded = true;
                }
                if level == EncryptionLevel::ZeroRtt && done {
                    return silent(s);
                }
                match input.kind {
                    InitCltHelloVldAck | InitCltHelloInvldAck => (vec![NoResponse], s),
                    InitPing | HndPing | ZeroRttPing | VldNewConId => (vec![PingAck], s),
                    InitConClose | HndConClose | ZeroRttConClose => closes(s),
                    InitNoFr | HndNoFr | ZeroRttNoFr | InitUnxpFrType | HndUnxpFrType | ZeroRttUnxpFrType
                    | ZeroRttFin | ZeroRttAck | InvldNewConId => fails(s),
                    HndEmpCert | HndInvldCert => fails(s),
                    HndCert if s.cert == ClientCert::None && mode.uses_client_auth() => {
                        s.cert = ClientCert::Valid;
                        (vec![NoResponse], s)
                    }
                    HndCertVer if s.cert == ClientCert::Valid => {
                        s.cert = ClientCert::Verified;
                        (vec![NoResponse], s)
                    }
                    HndCert | HndCertVer => fails(s),
                    HndFin => {
                        if mode.uses_client_auth() && s.cert != ClientCert::Verified {
                            return fails(s);
                        }
                        s.phase = Phase::Done;
                        s.cert = ClientCert::None;
                        let out = if mode == HandshakeMode::Psk { vec![HndshkDone, NewTkn] } else { vec![HndshkDone] };
                        (out, s)
                    }
                    _ => (vec![NoResponse], s),
                }
            }
            Phase::Closed => unreachable!("handled as dropped"),
        }
    }
}

/// Explores the compliant server for `mode` over `alphabet` into a minimal machine.
pub fn reference_model(mode: HandshakeMode, alphabet: &[InputSymbol]) -> MealyMachine {
    let mut ids: HashMap<Server, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut b = MealyBuilder::new(alphabet.to_vec());
    let start = Server::new();
    ids.insert(start, b.add_state());
    queue.push_back(start);
    while let Some(s) = queue.pop_front() {
        let from = ids[&s];
        for (i, input) in alphabet.iter().enumerate() {
            let (out, next) = s.step(mode, input);
            let to = *ids.entry(next).or_insert_with(|| {
                queue.push_back(next);
                b.add_state()
            });
            b.set(from, i, ObservationStep::from_outputs(out), to);
        }
    }
    b.set_initial(0);
    b.build().minimize().canonical()
}

/// The alphabet bundled reference models are learned over: short waits, one cipher.
pub fn bundled_alphabet(mode: HandshakeMode) -> Vec<InputSymbol> {
    default_alphabet(mode, &[TimeoutClass::Short], &[CipherSuite::Aes128]).expect("non-empty parameters")
}
