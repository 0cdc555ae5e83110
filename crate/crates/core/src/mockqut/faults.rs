//! Seeded noncompliance and crash faults, applied as model rewrites.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::reference::{bundled_alphabet, reference_model};
use super::MockError;
use crate::alphabet::{
    CipherSuite, EncryptionLevel, HandshakeMode, InputKind, InputSymbol, OutputSymbol, TimeoutClass,
};
use crate::automata::{format_word, MealyBuilder, MealyMachine, ObservationStep, StateId};
use crate::differ::Deviation;

/// How a server treats an Initial PING from a client without a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PingBehavior {
    Drop,
    Close,
    /// Acknowledges and creates a connection context for the ping.
    AckAllocate,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultProfile {
    None,
    /// Initial keys are never discarded.
    KeyRetention,
    /// An empty client Certificate is accepted as if verified.
    ClientAuthBypass,
    /// The server process dies when a connection's inputs equal the trigger.
    CrashOnSequence { trigger: Vec<InputSymbol> },
    PingContext { on_ping: PingBehavior },
}

impl FaultProfile {
    /// Builds a profile from CLI-style parts. A trigger is accepted only for `crash`.
    pub fn parse(kind: &str, trigger: Option<Vec<InputSymbol>>) -> Result<FaultProfile, MockError> {
        let profile = match (kind, trigger) {
            ("crash", Some(t)) if !t.is_empty() => return Ok(FaultProfile::CrashOnSequence { trigger: t }),
            ("crash", _) => return Err(MockError::BadFault("crash needs a non-empty trigger word".into())),
            (_, Some(_)) => return Err(MockError::BadFault(format!("{kind} takes no trigger"))),
            ("none", None) => FaultProfile::None,
            ("key-retention", None) => FaultProfile::KeyRetention,
            ("client-auth-bypass", None) => FaultProfile::ClientAuthBypass,
            ("ping-drop", None) => FaultProfile::PingContext { on_ping: PingBehavior::Drop },
            ("ping-close", None) => FaultProfile::PingContext { on_ping: PingBehavior::Close },
            ("ping-ack-allocate", None) => FaultProfile::PingContext { on_ping: PingBehavior::AckAllocate },
            (other, None) => return Err(MockError::BadFault(format!("unknown fault {other:?}"))),
        };
        Ok(profile)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FaultProfile::None => "none",
            FaultProfile::KeyRetention => "key-retention",
            FaultProfile::ClientAuthBypass => "client-auth-bypass",
            FaultProfile::CrashOnSequence { .. } => "crash",
            FaultProfile::PingContext { on_ping: PingBehavior::Drop } => "ping-drop",
            FaultProfile::PingContext { on_ping: PingBehavior::Close } => "ping-close",
            FaultProfile::PingContext { on_ping: PingBehavior::AckAllocate } => "ping-ack-allocate",
        }
    }

    pub fn trigger(&self) -> Option<&[InputSymbol]> {
        match self {
            FaultProfile::CrashOnSequence { trigger } => Some(trigger),
            _ => None,
        }
    }

    /// The machine the mock serves. Crashes are runtime behavior and leave it unchanged.
    pub fn apply(&self, model: &MealyMachine) -> Result<MealyMachine, MockError> {
        if !model.is_complete() {
            return Err(MockError::InvalidModel("model is not input-complete".into()));
        }
        match self {
            FaultProfile::None | FaultProfile::CrashOnSequence { .. } => Ok(model.clone()),
            FaultProfile::KeyRetention => Ok(key_retention(model)),
            FaultProfile::ClientAuthBypass => client_auth_bypass(model),
            FaultProfile::PingContext { on_ping } => Ok(ping_context(model, *on_ping)),
        }
    }
}

impl fmt::Display for FaultProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.trigger() {
            Some(t) => write!(f, "crash[{}]", format_word(t)),
            None => f.write_str(self.name()),
        }
    }
}

fn outputs(step: &[OutputSymbol]) -> ObservationStep {
    ObservationStep::from_outputs(step.iter().cloned())
}

/// A state whose liveness probe after a close is still acknowledged.
fn live(m: &MealyMachine, s: StateId) -> bool {
    m.inputs().iter().enumerate().any(|(i, sym)| {
        sym.kind.is_connection_close() && m.transition(s, i).is_some_and(|(o, _)| o.contains(&OutputSymbol::ConAct))
    })
}

/// Initial inputs keep being processed after the client moved to the Handshake level.
fn key_retention(m: &MealyMachine) -> MealyMachine {
    let hnd_close = m.inputs().iter().position(|s| s.kind == InputKind::HndConClose);
    let mut ids: HashMap<(StateId, bool), StateId> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut b = MealyBuilder::new(m.inputs().to_vec());
    ids.insert((m.initial(), false), b.add_state());
    queue.push_back((m.initial(), false));
    while let Some((s, moved)) = queue.pop_front() {
        let from = ids[&(s, moved)];
        for (i, sym) in m.inputs().iter().enumerate() {
            let (out, to) = m.transition(s, i).expect("complete");
            let (mut out, mut to) = (out.clone(), to);
            let now_moved = moved
                || (sym.kind.level() == Some(EncryptionLevel::Handshake)
                    && out != ObservationStep::single(OutputSymbol::HarnessError));
            if moved && live(m, s) {
                match sym.kind {
                    InputKind::InitPing if out == ObservationStep::single(OutputSymbol::NoResponse) => {
                        out = ObservationStep::single(OutputSymbol::PingAck);
                    }
                    InputKind::InitConClose if out.contains(&OutputSymbol::ConAct) => {
                        if let Some((o, t)) = hnd_close.and_then(|h| m.transition(s, h)) {
                            if o.contains(&OutputSymbol::ConClosed) {
                                out = o.clone();
                                to = t;
                            }
                        }
                    }
                    _ => {}
                }
            }
            let key = (to, now_moved);
            let target = *ids.entry(key).or_insert_with(|| {
                queue.push_back(key);
                b.add_state()
            });
            b.set(from, i, out, target);
        }
    }
    b.set_initial(0);
    b.build().minimize().canonical()
}

/// `hndEmpCert` takes the server where `hndCert, hndCertVer` would have.
fn client_auth_bypass(m: &MealyMachine) -> Result<MealyMachine, MockError> {
    let idx = |k: InputKind| {
        m.inputs()
            .iter()
            .position(|s| s.kind == k)
            .ok_or_else(|| MockError::BadFault(format!("client-auth-bypass needs {k} in the alphabet")))
    };
    let (emp, cert, ver, fin) = (idx(InputKind::HndEmpCert)?, idx(InputKind::HndCert)?, idx(InputKind::HndCertVer)?, idx(InputKind::HndFin)?);
    let done = |s: StateId| m.transition(s, fin).is_some_and(|(o, _)| o.contains(&OutputSymbol::HndshkDone));
    let mut changed = false;
    let out = m.map_edges(|s, sym, o, t| {
        if m.input_index(sym) != Some(emp) || done(s) {
            return Some((o.clone(), t));
        }
        let (_, t1) = m.transition(s, cert)?;
        let (_, t2) = m.transition(t1, ver)?;
        if done(t2) {
            changed = true;
            Some((ObservationStep::single(OutputSymbol::NoResponse), t2))
        } else {
            Some((o.clone(), t))
        }
    });
    if !changed {
        return Err(MockError::BadFault("no state where a certificate is requested".into()));
    }
    Ok(out.minimize().canonical())
}

fn ping_context(m: &MealyMachine, on_ping: PingBehavior) -> MealyMachine {
    if on_ping == PingBehavior::Drop {
        return m.clone();
    }
    let s0 = m.initial();
    let n = m.num_states();
    let (sink, allocated) = (n, n + 1);
    let mut b = MealyBuilder::new(m.inputs().to_vec());
    b.add_states(n + 2);
    for (s, i, o, t) in m.edges() {
        b.set(s, i, o.clone(), t);
    }
    let is_ping = |sym: &InputSymbol| sym.kind == InputKind::InitPing;
    for (i, sym) in m.inputs().iter().enumerate() {
        let (o0, t0) = m.transition(s0, i).expect("complete");
        // the closed context answers nothing; levels the client lacks stay errors
        let sink_out = if sym.is_directive() {
            ObservationStep::new()
        } else if *o0 == ObservationStep::single(OutputSymbol::HarnessError) {
            o0.clone()
        } else if sym.kind.is_connection_close() {
            outputs(&[OutputSymbol::NoResponse, OutputSymbol::ConClosed])
        } else {
            ObservationStep::single(OutputSymbol::NoResponse)
        };
        b.set(sink, i, sink_out, sink);
        let dropped_ping = is_ping(sym) && *o0 == ObservationStep::single(OutputSymbol::NoResponse) && t0 == s0;
        match on_ping {
            PingBehavior::Close if dropped_ping => b.set(s0, i, ObservationStep::single(OutputSymbol::ConClose), sink),
            PingBehavior::AckAllocate => {
                if dropped_ping {
                    b.set(s0, i, ObservationStep::single(OutputSymbol::PingAck), allocated);
                    b.set(allocated, i, ObservationStep::single(OutputSymbol::PingAck), allocated);
                } else if sym.kind.is_connection_close() && t0 == s0 {
                    // the allocated context is closed for good
                    b.set(allocated, i, outputs(&[OutputSymbol::NoResponse, OutputSymbol::ConClosed]), sink);
                } else {
                    let t = if t0 == s0 { allocated } else { t0 };
                    b.set(allocated, i, o0.clone(), t);
                }
            }
            _ => {}
        }
    }
    if on_ping == PingBehavior::Close {
        // keep the unused slot well-formed; `build` drops it as unreachable
        for i in 0..m.inputs().len() {
            b.set(allocated, i, ObservationStep::single(OutputSymbol::NoResponse), allocated);
        }
    }
    b.set_initial(s0);
    b.build().minimize().canonical()
}

/// What the pipeline must report for a catalog fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    NoDeviations,
    Deviation(Signature),
    Crash { word: Vec<InputSymbol> },
}

/// A deviation shape: the divergent input, what the witness passes through,
/// and what the faulty model does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    /// The divergent input must be one of these kinds.
    pub inputs: Vec<InputKind>,
    /// The witness must contain an input of each of these kinds.
    pub witness_contains: Vec<InputKind>,
    /// A word the faulty model answers with `reaches` at its last step.
    pub path: Vec<InputSymbol>,
    pub reaches: Option<OutputSymbol>,
}

impl Signature {
    pub fn matches(&self, deviations: &[Deviation], learned: &MealyMachine) -> bool {
        let found = deviations.iter().any(|d| {
            self.inputs.contains(&d.input.kind)
                && self.witness_contains.iter().all(|k| d.witness.iter().any(|w| w.kind == *k))
        });
        let reached = match &self.reaches {
            None => true,
            Some(o) => learned.run(&self.path).ok().and_then(|obs| obs.last().cloned()).is_some_and(|s| s.contains(o)),
        };
        found && reached
    }
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub mode: HandshakeMode,
    pub alphabet: Vec<InputSymbol>,
    pub fault: FaultProfile,
    pub expected: Expectation,
}

impl CatalogEntry {
    /// The compliant parent the faulty model is compared against.
    pub fn reference(&self) -> MealyMachine {
        reference_model(self.mode, &self.alphabet)
    }

    /// The machine the mock serves for this entry.
    pub fn served(&self) -> MealyMachine {
        self.fault.apply(&self.reference()).expect("catalog faults apply to their parents")
    }
}

fn short(kind: InputKind) -> InputSymbol {
    InputSymbol::timed(kind, TimeoutClass::Short)
}

fn hello(kind: InputKind) -> InputSymbol {
    InputSymbol::client_hello(kind, TimeoutClass::Short, CipherSuite::Aes128)
}

/// The crash trigger: an Initial ping, then a ClientHello whose ACK is invalid.
pub fn default_crash_trigger() -> Vec<InputSymbol> {
    vec![short(InputKind::InitPing), hello(InputKind::InitCltHelloInvldAck)]
}

/// Small alphabets keep desk-scale learning fast; directives are left out.
pub fn compact_alphabet(mode: HandshakeMode) -> Vec<InputSymbol> {
    use InputKind::*;
    bundled_alphabet(mode)
        .into_iter()
        .filter(|s| !s.is_directive())
        .filter(|s| !matches!(s.kind, InitNoFr | InitUnxpFrType | HndNoFr | HndUnxpFrType | HndInvldCert | InvldNewConId))
        .collect()
}

pub fn fault_catalog() -> Vec<CatalogEntry> {
    use InputKind::*;
    let basic = compact_alphabet(HandshakeMode::Basic);
    let auth = compact_alphabet(HandshakeMode::ClientAuth);
    vec![
        CatalogEntry {
            name: "none",
            mode: HandshakeMode::Basic,
            alphabet: basic.clone(),
            fault: FaultProfile::None,
            expected: Expectation::NoDeviations,
        },
        CatalogEntry {
            name: "key-retention",
            mode: HandshakeMode::Basic,
            alphabet: basic.clone(),
            fault: FaultProfile::KeyRetention,
            expected: Expectation::Deviation(Signature {
                inputs: vec![InitPing, InitConClose, HndPing, HndConClose, HndFin],
                witness_contains: vec![InitCltHelloVldAck],
                path: vec![hello(InitCltHelloVldAck), short(HndPing), short(InitPing)],
                reaches: Some(OutputSymbol::PingAck),
            }),
        },
        CatalogEntry {
            name: "client-auth-bypass",
            mode: HandshakeMode::ClientAuth,
            alphabet: auth,
            fault: FaultProfile::ClientAuthBypass,
            expected: Expectation::Deviation(Signature {
                inputs: vec![HndEmpCert],
                witness_contains: vec![InitCltHelloVldAck],
                path: vec![hello(InitCltHelloVldAck), short(HndEmpCert), short(HndFin)],
                reaches: Some(OutputSymbol::HndshkDone),
            }),
        },
        CatalogEntry {
            name: "crash-on-sequence",
            mode: HandshakeMode::Basic,
            alphabet: basic.clone(),
            fault: FaultProfile::CrashOnSequence { trigger: default_crash_trigger() },
            expected: Expectation::Crash { word: default_crash_trigger() },
        },
        CatalogEntry {
            name: "ping-drop",
            mode: HandshakeMode::Basic,
            alphabet: basic.clone(),
            fault: FaultProfile::PingContext { on_ping: PingBehavior::Drop },
            // dropping is what the compliant parent does
            expected: Expectation::NoDeviations,
        },
        CatalogEntry {
            name: "ping-close",
            mode: HandshakeMode::Basic,
            alphabet: basic.clone(),
            fault: FaultProfile::PingContext { on_ping: PingBehavior::Close },
            expected: Expectation::Deviation(Signature {
                inputs: vec![InitPing],
                witness_contains: vec![],
                path: vec![short(InitPing)],
                reaches: Some(OutputSymbol::ConClose),
            }),
        },
        CatalogEntry {
            name: "ping-ack-allocate",
            mode: HandshakeMode::Basic,
            alphabet: basic,
            fault: FaultProfile::PingContext { on_ping: PingBehavior::AckAllocate },
            expected: Expectation::Deviation(Signature {
                inputs: vec![InitPing],
                witness_contains: vec![],
                path: vec![short(InitPing)],
                reaches: Some(OutputSymbol::PingAck),
            }),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::parse_word;
    use crate::differ::{reference_check, LtsDiffParams};
    use crate::optimizer::optimize;

    fn last(m: &MealyMachine, word: &str) -> String {
        m.run(&parse_word(word).unwrap()).unwrap().last().unwrap().to_string()
    }

    #[test]
    fn parse_enforces_the_trigger_rule() {
        assert!(FaultProfile::parse("crash", None).is_err());
        assert!(FaultProfile::parse("none", Some(default_crash_trigger())).is_err());
        assert!(FaultProfile::parse("bogus", None).is_err());
        for e in fault_catalog() {
            let again = FaultProfile::parse(e.fault.name(), e.fault.trigger().map(|t| t.to_vec())).unwrap();
            assert_eq!(again, e.fault);
        }
    }

    #[test]
    fn key_retention_answers_stale_initial_packets() {
        let m = FaultProfile::KeyRetention.apply(&reference_model(HandshakeMode::Basic, &compact_alphabet(HandshakeMode::Basic))).unwrap();
        assert_eq!(last(&m, "initCltHello-vldACK(short,AES_128),hndPing(short),initPing(short)"), "PingACK");
        let close = "initCltHello-vldACK(short,AES_128),hndPing(short),initConClose(short)";
        assert_eq!(last(&m, close), "NoResponse,<ConClosed>");
        let r = reference_model(HandshakeMode::Basic, &compact_alphabet(HandshakeMode::Basic));
        assert_eq!(last(&r, close), "NoResponse,<ConAct>");
    }

    #[test]
    fn bypass_completes_without_a_certificate() {
        let r = reference_model(HandshakeMode::ClientAuth, &compact_alphabet(HandshakeMode::ClientAuth));
        let m = FaultProfile::ClientAuthBypass.apply(&r).unwrap();
        let word = "initCltHello-vldACK(short,AES_128),hndEmpCert(short),hndFin(short)";
        assert_eq!(last(&r, word), "NoResponse");
        assert_eq!(last(&m, word), "HndshkDone");
        let basic = reference_model(HandshakeMode::Basic, &compact_alphabet(HandshakeMode::Basic));
        assert!(FaultProfile::ClientAuthBypass.apply(&basic).is_err());
    }

    #[test]
    fn ping_variants() {
        let r = reference_model(HandshakeMode::Basic, &compact_alphabet(HandshakeMode::Basic));
        let apply = |b| FaultProfile::PingContext { on_ping: b }.apply(&r).unwrap();
        assert!(crate::automata::isomorphic(&apply(PingBehavior::Drop), &r));
        let close = apply(PingBehavior::Close);
        assert_eq!(last(&close, "initPing(short)"), "ConClose");
        assert_eq!(last(&close, "initPing(short),initCltHello-vldACK(short,AES_128)"), "NoResponse");
        let alloc = apply(PingBehavior::AckAllocate);
        assert_eq!(last(&alloc, "initPing(short),initPing(short)"), "PingACK");
        assert_eq!(last(&alloc, "initPing(short),initCltHello-vldACK(short,AES_128),hndFin(short)"), "HndshkDone");
        assert_eq!(last(&alloc, "initPing(short),initConClose(short),initCltHello-vldACK(short,AES_128)"), "NoResponse");
        assert_eq!(last(&r, "initConClose(short),initCltHello-vldACK(short,AES_128)"), "initSvrHello,hndEncExt,hndCert,hndCertVer,hndFin");
    }

    /// The served models themselves already carry each signature.
    #[test]
    fn catalog_signatures_hold_on_served_models() {
        let params = LtsDiffParams::default();
        for e in fault_catalog() {
            let reference = optimize(&e.reference()).0;
            let served = e.served();
            let devs = reference_check(&optimize(&served).0, &reference, &params).unwrap();
            match &e.expected {
                Expectation::NoDeviations => assert!(devs.is_empty(), "{}: {devs:?}", e.name),
                Expectation::Crash { word } => {
                    assert!(devs.is_empty());
                    assert_eq!(word, &default_crash_trigger());
                }
                Expectation::Deviation(sig) => assert!(sig.matches(&devs, &served), "{}: {devs:#?}", e.name),
            }
        }
    }
}
