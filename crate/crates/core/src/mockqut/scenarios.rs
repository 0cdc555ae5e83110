//! Hand-built model pairs for analysis checks.

use crate::alphabet::{CipherSuite, InputKind, InputSymbol, OutputSymbol, TimeoutClass};
use crate::automata::{MealyBuilder, MealyMachine, ObservationStep};

const KINDS: [InputKind; 7] = [
    InputKind::InitPing,
    InputKind::InitCltHelloVldAck,
    InputKind::InitCltHelloInvldAck,
    InputKind::HndCert,
    InputKind::HndCertVer,
    InputKind::HndFin,
    InputKind::VldNewConId,
];

fn alphabet(t: TimeoutClass) -> Vec<InputSymbol> {
    KINDS
        .iter()
        .map(|k| {
            if k.is_client_hello() {
                InputSymbol::client_hello(k.clone(), t, CipherSuite::Aes128)
            } else {
                InputSymbol::timed(k.clone(), t)
            }
        })
        .collect()
}

fn flight() -> ObservationStep {
    use OutputSymbol::*;
    ObservationStep::from_outputs([InitSvrHello, HndEncExt, HndCertReq, HndCert, HndCertVer, HndFin])
}

/// A ClientAuth server observed with short and with long waits.
///
/// Both acknowledge a first Initial PING and complete the handshake. With
/// short waits, a ClientHello with an invalid ACK sent after that ping is
/// still answered with the full flight, but the server stops answering as
/// soon as it processes a Handshake packet. Returns (short, long) with 11
/// and 9 states.
pub fn timing_pair() -> (MealyMachine, MealyMachine) {
    (timing_model(TimeoutClass::Short), timing_model(TimeoutClass::Long))
}

fn timing_model(t: TimeoutClass) -> MealyMachine {
    use OutputSymbol::*;
    let (ping, chv, chi, cert, ver, fin, ncid) = (0, 1, 2, 3, 4, 5, 6);
    let mut b = MealyBuilder::new(alphabet(t));
    let one = ObservationStep::single;
    let n_states = if t == TimeoutClass::Short { 11 } else { 9 };
    b.add_states(n_states);
    let closing = 8;
    // defaults: silence once keys exist, errors before
    for s in 0..n_states {
        for i in 0..KINDS.len() {
            let out = if s <= 1 && i >= cert { one(HarnessError) } else { one(NoResponse) };
            b.set(s, i, out, s);
        }
    }
    b.set(0, ping, one(PingAck), 1);
    b.set(0, chv, flight(), 2);
    b.set(0, chi, flight(), 2);
    b.set(1, chv, flight(), 2);
    b.set(1, chi, flight(), 2);
    // awaiting the client certificate
    b.set(2, ping, one(PingAck), 2);
    b.set(2, cert, one(NoResponse), 3);
    b.set(2, ver, one(ConClose), closing);
    b.set(2, fin, one(ConClose), closing);
    b.set(3, cert, one(ConClose), closing);
    b.set(3, ver, one(NoResponse), 4);
    b.set(3, fin, one(ConClose), closing);
    b.set(4, cert, one(ConClose), closing);
    b.set(4, ver, one(ConClose), closing);
    b.set(4, fin, one(HndshkDone), 5);
    b.set(5, ncid, one(PingAck), 6);
    b.set(6, ncid, one(PingAck), 7);
    b.set(7, ncid, one(ConClose), closing);
    for i in 0..KINDS.len() {
        b.set(closing, i, one(ConClose), closing);
    }
    if t == TimeoutClass::Short {
        let (zombie, dead) = (9, 10);
        b.set(1, chi, flight(), zombie);
        b.set(zombie, ping, one(PingAck), zombie);
        for i in [cert, ver, fin, ncid] {
            b.set(zombie, i, one(NoResponse), dead);
        }
    }
    b.set_initial(0);
    b.build()
}

/// Three-state handshake skeleton in two variants.
///
/// Over inputs initPing, hndPing, hndConClose, hndFin and initConClose, both
/// run s0 -initPing-> s1 -hndFin-> s2 -initConClose-> s0. The first also has
/// s1 -hndPing-> s2, the second s1 -hndConClose-> s0 instead. Every other
/// input is a silent self-loop, so the pair differs by exactly one removed
/// and one added transition.
pub fn three_state_pair() -> (MealyMachine, MealyMachine) {
    use OutputSymbol::{NoResponse, PingAck};
    let inputs: Vec<InputSymbol> = [
        InputKind::InitPing,
        InputKind::HndPing,
        InputKind::HndConClose,
        InputKind::HndFin,
        InputKind::InitConClose,
    ]
    .into_iter()
    .map(|k| InputSymbol::timed(k, TimeoutClass::Short))
    .collect();
    let build = |extra: (usize, usize, usize)| {
        let mut b = MealyBuilder::new(inputs.clone());
        b.add_states(3);
        for s in 0..3 {
            for i in 0..inputs.len() {
                b.set(s, i, ObservationStep::single(NoResponse), s);
            }
        }
        for (s, i, t) in [(0, 0, 1), (1, 3, 2), (2, 4, 0), extra] {
            b.set(s, i, ObservationStep::single(PingAck), t);
        }
        b.set_initial(0);
        b.build()
    };
    (build((1, 1, 2)), build((1, 2, 0)))
}
