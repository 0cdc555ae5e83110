//! Serves a Basic-mode machine over UDP with real QUIC v1 packet protection.
//!
//! Each client address is one session. Incoming packets are classified into
//! input symbols, the model is stepped, and its outputs are turned back into
//! packets. The ping following a close input is the harness's liveness probe;
//! it is acknowledged iff the close step reported `<ConAct>`, and the model is
//! not stepped for it.

use std::collections::HashMap;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{CrashAction, FaultProfile, MockError, MockOptions};
use crate::alphabet::{CipherSuite, EncryptionLevel, InputKind, InputSymbol, OutputSymbol};
use crate::automata::{MealyMachine, ObservationStep, StateId};
use crate::harness::certs::{Identity, ECDSA_P256_SHA256};
use crate::harness::crypto::{HashAlg, LevelKeys, PacketKey};
use crate::harness::packet::{decode_datagram_step, encode_packet, Frame, KeyLookup, Packet, PacketType, Parsed};
use crate::harness::tls::{self, CryptoStream, KeyShare, Schedule, TransportParams};

const CID_LEN: usize = 8;
/// Advertised to clients; a valid NEW_CONNECTION_ID burst stays below it.
const ACTIVE_CID_LIMIT: u64 = 4;

fn level_of(ty: PacketType) -> EncryptionLevel {
    match ty {
        PacketType::Initial | PacketType::Retry => EncryptionLevel::Initial,
        PacketType::ZeroRtt => EncryptionLevel::ZeroRtt,
        PacketType::Handshake => EncryptionLevel::Handshake,
        PacketType::OneRtt => EncryptionLevel::OneRtt,
    }
}

struct PendingHello {
    valid: (ObservationStep, StateId),
    invalid: (ObservationStep, StateId),
    emitted: ObservationStep,
}

struct Peer {
    state: StateId,
    word: Vec<InputSymbol>,
    original_dcid: Vec<u8>,
    scid: Vec<u8>,
    client_cid: Vec<u8>,
    keys: [Option<LevelKeys>; 4],
    pn: [u64; 3],
    largest: [Option<u64>; 3],
    crypto_in: [CryptoStream; 4],
    crypto_out: [u64; 4],
    cipher: CipherSuite,
    transcript: Vec<u8>,
    schedule: Option<Schedule>,
    handshake_secrets: Option<(Vec<u8>, Vec<u8>)>,
    client_hello: Option<(Vec<u8>, tls::ClientHelloInfo)>,
    pending_probe: Option<OutputSymbol>,
    pending_hello: Option<PendingHello>,
}

impl KeyLookup for Peer {
    fn key(&self, ty: PacketType) -> Option<&PacketKey> {
        self.keys[level_of(ty).index()].as_ref().map(|k| k.receiving(false))
    }

    fn largest_pn(&self, space: usize) -> Option<u64> {
        self.largest[space]
    }
}

impl Peer {
    fn new(model: &MealyMachine, original_dcid: &[u8], client_cid: &[u8]) -> Result<Peer, MockError> {
        let mut keys: [Option<LevelKeys>; 4] = Default::default();
        keys[0] = Some(LevelKeys::initial(original_dcid).map_err(|e| MockError::InvalidModel(e.to_string()))?);
        let scid: [u8; CID_LEN] = rand::random();
        Ok(Peer {
            state: model.initial(),
            word: Vec::new(),
            original_dcid: original_dcid.to_vec(),
            scid: scid.to_vec(),
            client_cid: client_cid.to_vec(),
            keys,
            pn: [0; 3],
            largest: [None; 3],
            crypto_in: Default::default(),
            crypto_out: [0; 4],
            cipher: CipherSuite::Aes128,
            transcript: Vec::new(),
            schedule: None,
            handshake_secrets: None,
            client_hello: None,
            pending_probe: None,
            pending_hello: None,
        })
    }

    fn packet(&mut self, level: EncryptionLevel, frames: Vec<Frame>) -> Option<Vec<u8>> {
        let keys = self.keys[level.index()].as_ref()?;
        let ty = match level {
            EncryptionLevel::Initial => PacketType::Initial,
            EncryptionLevel::ZeroRtt => return None,
            EncryptionLevel::Handshake => PacketType::Handshake,
            EncryptionLevel::OneRtt => PacketType::OneRtt,
        };
        let space = ty.space();
        let pn = self.pn[space];
        self.pn[space] += 1;
        let p = Packet::new(ty, &self.client_cid, &self.scid, pn, frames);
        Some(encode_packet(&p, keys.sending(false), 0))
    }

    fn crypto(&mut self, level: EncryptionLevel, msg: &[u8]) -> Frame {
        let offset = self.crypto_out[level.index()];
        self.crypto_out[level.index()] += msg.len() as u64;
        Frame::Crypto { offset, data: msg.to_vec() }
    }

    /// Server handshake messages named in `outputs`, in protocol order.
    fn flight(&mut self, outputs: &ObservationStep, identity: &Identity) -> Vec<u8> {
        use OutputSymbol::*;
        let mut datagram = Vec::new();
        if outputs.contains(&InitSvrHello) {
            let Some((ch, info)) = self.client_hello.clone() else {
                log::warn!("wire mock: ServerHello without a ClientHello");
                return datagram;
            };
            let cipher = info.ciphers.first().copied().unwrap_or(CipherSuite::Aes128);
            let mut share = KeyShare::generate();
            let shared = match info.key_share.as_deref().map(|k| share.agree(k)) {
                Some(Ok(s)) => s,
                _ => {
                    log::warn!("wire mock: ClientHello without a usable key share");
                    return datagram;
                }
            };
            let sh = tls::server_hello(&tls::random32(), cipher, &share.public, false);
            self.cipher = cipher;
            self.transcript = [ch, sh.clone()].concat();
            let hash = HashAlg::for_suite(cipher);
            let mut schedule = Schedule::new(hash, None);
            let (c, s) = schedule.handshake(&shared, &hash.digest(&self.transcript));
            self.keys[EncryptionLevel::Handshake.index()] = Some(LevelKeys::from_secrets(cipher, &c, &s));
            self.handshake_secrets = Some((c, s));
            self.schedule = Some(schedule);
            let frame = self.crypto(EncryptionLevel::Initial, &sh);
            datagram.extend(self.packet(EncryptionLevel::Initial, vec![frame]).unwrap_or_default());
        }
        if self.schedule.is_none() {
            return datagram;
        }
        let hash = HashAlg::for_suite(self.cipher);
        let mut msgs = Vec::new();
        if outputs.contains(&HndEncExt) {
            let tp = TransportParams {
                original_destination_connection_id: Some(self.original_dcid.clone()),
                max_idle_timeout: Some(30_000),
                active_connection_id_limit: Some(ACTIVE_CID_LIMIT),
                initial_source_connection_id: Some(self.scid.clone()),
                ..Default::default()
            };
            msgs.push(tls::encrypted_extensions(&tp.encode(), false));
        }
        if outputs.contains(&HndCertReq) {
            msgs.push(tls::certificate_request());
        }
        if outputs.contains(&HndCert) {
            msgs.push(tls::certificate(&identity.chain));
        }
        for m in &msgs {
            self.transcript.extend_from_slice(m);
        }
        if outputs.contains(&HndCertVer) {
            let content = tls::certificate_verify_content(true, &hash.digest(&self.transcript));
            match identity.sign(&content) {
                Ok(sig) => {
                    let m = tls::certificate_verify(ECDSA_P256_SHA256, &sig);
                    self.transcript.extend_from_slice(&m);
                    msgs.push(m);
                }
                Err(e) => log::warn!("wire mock: signing failed: {e}"),
            }
        }
        if outputs.contains(&HndFin) {
            let base = self.handshake_secrets.as_ref().map(|(_, s)| s.clone()).unwrap_or_default();
            let m = tls::finished(&tls::finished_verify_data(hash, &base, &hash.digest(&self.transcript)));
            self.transcript.extend_from_slice(&m);
            msgs.push(m);
            let th = hash.digest(&self.transcript);
            if let Some((c, s)) = self.schedule.as_mut().and_then(|sch| sch.application(&th)) {
                self.keys[EncryptionLevel::OneRtt.index()] = Some(LevelKeys::from_secrets(self.cipher, &c, &s));
            }
        }
        if !msgs.is_empty() {
            let frames: Vec<Frame> = msgs.iter().map(|m| self.crypto(EncryptionLevel::Handshake, m)).collect();
            datagram.extend(self.packet(EncryptionLevel::Handshake, frames).unwrap_or_default());
        }
        datagram
    }
}

/// Input kind a client packet stands for; `None` for pure acknowledgements.
fn classify(level: EncryptionLevel, frames: &[Frame], messages: &[(u8, Vec<u8>)]) -> Option<InputKind> {
    use InputKind::*;
    let meaningful: Vec<&Frame> = frames.iter().filter(|f| !matches!(f, Frame::Padding(_))).collect();
    // ACK frames are not allowed in 0-RTT, so there an ACK-only packet is an input
    let ack_only = !meaningful.is_empty() && meaningful.iter().all(|f| matches!(f, Frame::Ack { .. }));
    if ack_only && level != EncryptionLevel::ZeroRtt {
        return None;
    }
    let has = |p: fn(&Frame) -> bool| meaningful.iter().any(|f| p(f));
    let ncid = meaningful.iter().filter(|f| matches!(f, Frame::NewConnectionId { .. })).count() as u64;
    if ncid > 0 {
        return Some(if ncid < ACTIVE_CID_LIMIT { VldNewConId } else { InvldNewConId });
    }
    let (ping, close, nofr, unxp, ack) = match level {
        EncryptionLevel::Initial => (InitPing, InitConClose, InitNoFr, InitUnxpFrType, None),
        EncryptionLevel::Handshake => (HndPing, HndConClose, HndNoFr, HndUnxpFrType, None),
        EncryptionLevel::ZeroRtt => (ZeroRttPing, ZeroRttConClose, ZeroRttNoFr, ZeroRttUnxpFrType, Some(ZeroRttAck)),
        EncryptionLevel::OneRtt => return None,
    };
    if let Some((typ, body)) = messages.first() {
        return match (*typ, level) {
            (tls::CLIENT_HELLO, EncryptionLevel::Initial) => Some(InitCltHelloVldAck),
            (tls::FINISHED, EncryptionLevel::ZeroRtt) => Some(ZeroRttFin),
            (tls::FINISHED, _) => Some(HndFin),
            (tls::CERTIFICATE_VERIFY, _) => Some(HndCertVer),
            (tls::CERTIFICATE, _) => match tls::parse_certificate(&body[4..]) {
                Ok(chain) if chain.is_empty() => Some(HndEmpCert),
                _ => Some(HndCert),
            },
            _ => None,
        };
    }
    if has(|f| matches!(f, Frame::Unknown(_))) {
        Some(unxp)
    } else if has(|f| matches!(f, Frame::ConnectionClose { .. })) {
        Some(close)
    } else if has(|f| matches!(f, Frame::Ping)) {
        Some(ping)
    } else if has(|f| matches!(f, Frame::Ack { .. })) {
        ack
    } else if meaningful.is_empty() {
        Some(nofr)
    } else {
        None
    }
}

/// The model input for a kind; the first matching timeout class wins.
fn symbol_for(model: &MealyMachine, kind: &InputKind, cipher: Option<CipherSuite>) -> Option<usize> {
    model.inputs().iter().position(|s| s.kind == *kind && (cipher.is_none() || s.cipher == cipher))
}

struct WireMock {
    socket: UdpSocket,
    model: MealyMachine,
    fault: FaultProfile,
    options: MockOptions,
    identity: Identity,
    peers: HashMap<SocketAddr, Peer>,
}

impl WireMock {
    fn send(&self, to: SocketAddr, datagram: &[u8]) {
        if datagram.is_empty() {
            return;
        }
        if let Err(e) = self.socket.send_to(datagram, to) {
            log::warn!("wire mock: send to {to}: {e}");
        }
    }

    /// Returns false when a crash trigger stopped serving.
    fn datagram(&mut self, from: SocketAddr, data: &[u8]) -> bool {
        if !self.peers.contains_key(&from) {
            // only a long-header Initial opens a session
            if data.len() < 7 || data[0] & 0xb0 != 0x80 {
                return true;
            }
            let dlen = data[5] as usize;
            let Some(dcid) = data.get(6..6 + dlen) else { return true };
            let Some(slen) = data.get(6 + dlen).map(|&b| b as usize) else { return true };
            let Some(scid) = data.get(7 + dlen..7 + dlen + slen) else { return true };
            match Peer::new(&self.model, dcid, scid) {
                Ok(p) => {
                    self.peers.insert(from, p);
                }
                Err(e) => {
                    log::warn!("wire mock: {e}");
                    return true;
                }
            }
        }
        let mut rest = data;
        while !rest.is_empty() {
            let peer = self.peers.get(&from).expect("inserted");
            let Ok((parsed, used)) = decode_datagram_step(rest, CID_LEN, peer) else { break };
            rest = &rest[used..];
            match parsed {
                Parsed::Packet(p) => {
                    if !self.packet(from, p) {
                        return false;
                    }
                }
                Parsed::Opaque { ty, error, .. } => log::debug!("wire mock: dropped {ty:?} packet: {error}"),
            }
        }
        true
    }

    fn packet(&mut self, from: SocketAddr, p: Packet) -> bool {
        let level = level_of(p.ty);
        let peer = self.peers.get_mut(&from).expect("session exists");
        let space = p.ty.space();
        peer.largest[space] = Some(peer.largest[space].map_or(p.pn, |l| l.max(p.pn)));
        let mut messages = Vec::new();
        for f in &p.frames {
            if let Frame::Crypto { offset, data } = f {
                peer.crypto_in[level.index()].receive(*offset, data);
                messages.extend(peer.crypto_in[level.index()].messages());
            }
        }
        // an Initial ACK settles which ClientHello variant was sent
        if level == EncryptionLevel::Initial && peer.pending_hello.is_some() {
            if let Some(largest) = p.frames.iter().find_map(|f| match f {
                Frame::Ack { largest, .. } => Some(*largest),
                _ => None,
            }) {
                let pending = peer.pending_hello.take().expect("checked");
                let valid = largest < peer.pn[0];
                let (obs, next) = if valid { pending.valid } else { pending.invalid };
                peer.state = next;
                let rest = ObservationStep::from_outputs(obs.outputs().iter().filter(|o| !pending.emitted.contains(o)).cloned());
                self.emit(from, level, p.pn, &rest, false);
                return true;
            }
        }
        if let Some(status) = self.peers[&from].pending_probe.clone() {
            if p.frames.iter().any(|f| matches!(f, Frame::Ping)) {
                self.peers.get_mut(&from).expect("exists").pending_probe = None;
                if status == OutputSymbol::ConAct {
                    let ack = vec![Frame::Ack { largest: p.pn, delay: 0, first_range: 0 }];
                    let d = self.peers.get_mut(&from).expect("exists").packet(level, ack).unwrap_or_default();
                    self.send(from, &d);
                }
                return true;
            }
        }
        let Some(kind) = classify(level, &p.frames, &messages) else { return true };
        let peer = self.peers.get_mut(&from).expect("exists");
        let mut cipher = None;
        if kind == InputKind::InitCltHelloVldAck {
            let Some((_, ch)) = messages.iter().find(|(t, _)| *t == tls::CLIENT_HELLO) else { return true };
            match tls::parse_client_hello(&ch[4..]) {
                Ok(info) => {
                    cipher = info.ciphers.first().copied();
                    peer.client_hello = Some((ch.clone(), info));
                }
                Err(e) => {
                    log::warn!("wire mock: bad ClientHello: {e}");
                    return true;
                }
            }
        }
        let valid = symbol_for(&self.model, &kind, cipher);
        let invalid = if kind == InputKind::InitCltHelloVldAck {
            symbol_for(&self.model, &InputKind::InitCltHelloInvldAck, cipher)
        } else {
            None
        };
        let Some(index) = valid.or(invalid) else {
            log::debug!("wire mock: {kind} is not in the served alphabet");
            return true;
        };
        let sym = self.model.inputs()[index].clone();
        peer.word.push(sym.clone());
        if self.fault.trigger() == Some(peer.word.as_slice()) {
            match self.options.crash {
                CrashAction::Abort => {
                    log::error!("wire mock: crash trigger reached");
                    std::process::abort();
                }
                CrashAction::StopServing => return false,
            }
        }
        let state = peer.state;
        let step = |i: usize| {
            let (o, t) = self.model.transition(state, i).expect("complete model");
            (o.clone(), t)
        };
        let (obs, next) = step(index);
        match (valid, invalid) {
            (Some(v), Some(i)) if step(v) != step(i) => {
                // emit what both variants share and wait for the client's ACK
                let (vo, io) = (step(v).0, step(i).0);
                let common = ObservationStep::from_outputs(vo.outputs().iter().filter(|o| io.contains(o)).cloned());
                self.peers.get_mut(&from).expect("exists").pending_hello =
                    Some(PendingHello { valid: step(v), invalid: step(i), emitted: common.clone() });
                self.emit(from, level, p.pn, &common, false);
            }
            _ => {
                self.peers.get_mut(&from).expect("exists").state = next;
                self.emit(from, level, p.pn, &obs, kind_is_close(&sym));
            }
        }
        true
    }

    fn emit(&mut self, to: SocketAddr, level: EncryptionLevel, pn: u64, obs: &ObservationStep, close: bool) {
        use OutputSymbol::*;
        if !self.options.delay.is_zero() {
            thread::sleep(self.options.delay);
        }
        let peer = self.peers.get_mut(&to).expect("session exists");
        let mut datagram = peer.flight(obs, &self.identity);
        let mut one_rtt = Vec::new();
        for o in obs.outputs() {
            match o {
                PingAck => {
                    let ack = vec![Frame::Ack { largest: pn, delay: 0, first_range: 0 }];
                    datagram.extend(peer.packet(level, ack).unwrap_or_default());
                }
                ConClose => {
                    let f = Frame::ConnectionClose { application: false, error_code: 0x0a, frame_type: 0, reason: Vec::new() };
                    datagram.extend(peer.packet(level, vec![f]).unwrap_or_default());
                }
                HndshkDone => one_rtt.push(Frame::HandshakeDone),
                NewTkn => one_rtt.push(Frame::NewToken(rand::random::<[u8; 16]>().to_vec())),
                VldNewConId => one_rtt.push(Frame::NewConnectionId {
                    sequence: 1,
                    retire_prior_to: 0,
                    cid: rand::random::<[u8; CID_LEN]>().to_vec(),
                    reset_token: rand::random(),
                }),
                ConAct | ConClosed => peer.pending_probe = Some(o.clone()),
                Retry => log::warn!("wire mock: Retry is not supported on the wire"),
                _ => {}
            }
        }
        if close && peer.pending_probe.is_none() {
            peer.pending_probe = Some(ConClosed);
        }
        if !one_rtt.is_empty() {
            datagram.extend(peer.packet(EncryptionLevel::OneRtt, one_rtt).unwrap_or_default());
        }
        self.send(to, &datagram);
    }
}

fn kind_is_close(sym: &InputSymbol) -> bool {
    sym.kind.is_connection_close()
}

pub struct RunningWire {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl RunningWire {
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn alive(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| !h.is_finished())
    }
}

impl Drop for RunningWire {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn bind_udp(addr: SocketAddr) -> Result<UdpSocket, MockError> {
    UdpSocket::bind(addr).map_err(|e| MockError::TransportBindFailure(format!("{addr}: {e}")))
}

/// Serves on a background thread until stopped.
pub fn spawn_wire(
    socket: UdpSocket,
    model: MealyMachine,
    fault: FaultProfile,
    options: MockOptions,
) -> Result<RunningWire, MockError> {
    let addr = socket.local_addr().map_err(|e| MockError::TransportBindFailure(e.to_string()))?;
    let identity = Identity::self_signed("localhost").map_err(|e| MockError::TransportBindFailure(e.to_string()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let handle = thread::spawn(move || serve_wire(socket, model, fault, options, identity, &flag));
    Ok(RunningWire { addr, stop, handle: Some(handle) })
}

/// The blocking serving loop.
pub fn serve_wire(
    socket: UdpSocket,
    model: MealyMachine,
    fault: FaultProfile,
    options: MockOptions,
    identity: Identity,
    stop: &AtomicBool,
) {
    let _ = socket.set_read_timeout(Some(Duration::from_millis(50)));
    let mut mock = WireMock { socket, model, fault, options, identity, peers: HashMap::new() };
    let mut buf = vec![0u8; 65536];
    while !stop.load(Ordering::SeqCst) {
        match mock.socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                let data = buf[..n].to_vec();
                if !mock.datagram(from, &data) {
                    return;
                }
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => log::debug!("wire mock: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{HandshakeMode, TimeoutClass};
    use crate::automata::parse_word;
    use crate::harness::{HarnessTimeouts, WireConfig, WireHarness};
    use crate::learner::MembershipOracle;
    use crate::mockqut::reference_model;

    fn alphabet() -> Vec<InputSymbol> {
        parse_word("initPing(short),initConClose(short),initCltHello-vldACK(short,AES_128),hndFin(short)").unwrap()
    }

    fn harness(addr: SocketAddr) -> WireHarness {
        let mut cfg = WireConfig::new(addr, HandshakeMode::Basic);
        cfg.timeouts = HarnessTimeouts::new(Duration::from_millis(40), Duration::ZERO);
        WireHarness::new(cfg).unwrap()
    }

    #[test]
    fn wire_answers_follow_the_model() {
        let model = reference_model(HandshakeMode::Basic, &alphabet());
        let server = spawn_wire(bind_udp("127.0.0.1:0".parse().unwrap()).unwrap(), model.clone(), FaultProfile::None, MockOptions::default()).unwrap();
        let mut h = harness(server.addr);
        for word in [
            "initCltHello-vldACK(short,AES_128),hndFin(short),initConClose(short)",
            "initPing(short),initConClose(short),hndFin(short)",
            "initCltHello-vldACK(short,AES_128),initPing(short),initConClose(short),initPing(short)",
            "initCltHello-vldACK(short,AES_128),initCltHello-vldACK(short,AES_128),hndFin(short),hndFin(short)",
        ] {
            let w = parse_word(word).unwrap();
            assert_eq!(h.query(&w).unwrap(), model.run(&w).unwrap(), "{word}");
        }
        assert!(server.alive());
    }

    #[test]
    fn classification() {
        use InputKind::*;
        let ack = Frame::Ack { largest: 1, delay: 0, first_range: 0 };
        assert_eq!(classify(EncryptionLevel::Initial, &[ack.clone(), Frame::Padding(10)], &[]), None);
        assert_eq!(classify(EncryptionLevel::Initial, &[Frame::Padding(10)], &[]), Some(InitNoFr));
        assert_eq!(classify(EncryptionLevel::Handshake, &[Frame::Ping, Frame::Unknown(0xff)], &[]), Some(HndUnxpFrType));
        assert_eq!(classify(EncryptionLevel::ZeroRtt, &[ack], &[]), Some(ZeroRttAck));
        let _ = TimeoutClass::Short;
    }
}
