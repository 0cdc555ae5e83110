//! QUIC v1 client harness over UDP.

use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use super::calibrate::Calibrate;
use super::certs::{Identity, ECDSA_P256_SHA256};
use super::crypto::{HashAlg, LevelKeys, PacketKey};
use super::packet::{
    decode_datagram_step, encode_packet, Frame, KeyLookup, Packet, PacketType, Parsed, MIN_INITIAL_DATAGRAM,
};
use super::symbolize::{finish, message_symbol, packet_symbols};
use super::tls::{self, ClientHelloParams, CryptoStream, KeyShare, PskOffer, Schedule, TransportParams};
use super::{Backend, HarnessError, HarnessTimeouts};
use crate::alphabet::{CipherSuite, EncryptionLevel, HandshakeMode, InputKind, InputSymbol, OutputSymbol};
use crate::automata::ObservationStep;
use crate::learner::{LearnError, MembershipOracle};

/// Frame type used by the unexpected-frame inputs.
pub const UNEXPECTED_FRAME_TYPE: u64 = 0xff;
/// How far past the server's largest packet number an invalid ACK points.
const INVALID_ACK_GAP: u64 = 1000;

#[derive(Debug, Clone)]
pub struct WireConfig {
    pub server: SocketAddr,
    pub mode: HandshakeMode,
    pub timeouts: HarnessTimeouts,
    /// Client certificate for client authentication; generated if absent.
    pub client_identity: Option<Identity>,
    pub alpn: Vec<Vec<u8>>,
    pub server_name: Option<String>,
    /// Cipher for the PSK setup handshake and calibration.
    pub setup_cipher: CipherSuite,
}

impl WireConfig {
    pub fn new(server: SocketAddr, mode: HandshakeMode) -> Self {
        WireConfig {
            server,
            mode,
            timeouts: HarnessTimeouts::default(),
            client_identity: None,
            alpn: vec![b"hq-interop".to_vec(), b"h3".to_vec()],
            server_name: Some("localhost".to_string()),
            setup_cipher: CipherSuite::Aes128,
        }
    }
}

fn level_of(ty: PacketType) -> EncryptionLevel {
    match ty {
        PacketType::Initial | PacketType::Retry => EncryptionLevel::Initial,
        PacketType::ZeroRtt => EncryptionLevel::ZeroRtt,
        PacketType::Handshake => EncryptionLevel::Handshake,
        PacketType::OneRtt => EncryptionLevel::OneRtt,
    }
}

fn packet_type(level: EncryptionLevel) -> PacketType {
    match level {
        EncryptionLevel::Initial => PacketType::Initial,
        EncryptionLevel::ZeroRtt => PacketType::ZeroRtt,
        EncryptionLevel::Handshake => PacketType::Handshake,
        EncryptionLevel::OneRtt => PacketType::OneRtt,
    }
}

/// Client-side state of one QUIC connection.
pub struct ConnectionContext {
    pub dcid: Vec<u8>,
    pub scid: Vec<u8>,
    pub original_dcid: Vec<u8>,
    pub retry_token: Option<Vec<u8>>,
    pub include_retry_token: bool,
    pub padding_enabled: bool,
    pub use_original_dcid: bool,
    /// Next packet number per space: Initial, Handshake, ApplicationData.
    pub pn: [u64; 3],
    pub largest_received: [Option<u64>; 3],
    ack_pending: [Option<u64>; 3],
    /// Installed keys per encryption level; never removed.
    pub keys: [Option<LevelKeys>; 4],
    pub transport_params: Option<TransportParams>,
    pub cipher: Option<CipherSuite>,
    pub psk_ticket: Option<PskOffer>,
    transcript: Vec<u8>,
    schedule: Option<Schedule>,
    key_share: Option<KeyShare>,
    handshake_secrets: Option<(Vec<u8>, Vec<u8>)>,
    resumption_master: Option<Vec<u8>>,
    crypto_in: [CryptoStream; 4],
    crypto_out: [u64; 4],
    ncid_sequence: u64,
    /// Tickets received on this connection.
    pub tickets: Vec<tls::Ticket>,
}

impl ConnectionContext {
    pub fn new() -> ConnectionContext {
        let dcid: [u8; 8] = rand::random();
        let scid: [u8; 8] = rand::random();
        let mut keys: [Option<LevelKeys>; 4] = Default::default();
        keys[EncryptionLevel::Initial.index()] = Some(LevelKeys::initial(&dcid).expect("8-byte dcid"));
        ConnectionContext {
            dcid: dcid.to_vec(),
            scid: scid.to_vec(),
            original_dcid: dcid.to_vec(),
            retry_token: None,
            include_retry_token: false,
            padding_enabled: true,
            use_original_dcid: false,
            pn: [0; 3],
            largest_received: [None; 3],
            ack_pending: [None; 3],
            keys,
            transport_params: None,
            cipher: None,
            psk_ticket: None,
            transcript: Vec::new(),
            schedule: None,
            key_share: None,
            handshake_secrets: None,
            resumption_master: None,
            crypto_in: Default::default(),
            crypto_out: [0; 4],
            ncid_sequence: 0,
            tickets: Vec::new(),
        }
    }

    pub fn has_keys(&self, level: EncryptionLevel) -> bool {
        self.keys[level.index()].is_some()
    }

    pub fn installed_levels(&self) -> Vec<EncryptionLevel> {
        EncryptionLevel::ALL.into_iter().filter(|l| self.has_keys(*l)).collect()
    }

    fn install(&mut self, level: EncryptionLevel, keys: LevelKeys) {
        log::debug!("installing {level} keys");
        self.keys[level.index()] = Some(keys);
    }

    fn header_dcid(&self) -> Vec<u8> {
        if self.use_original_dcid {
            self.original_dcid.clone()
        } else {
            self.dcid.clone()
        }
    }

    fn next_pn(&mut self, ty: PacketType) -> u64 {
        let space = ty.space();
        let pn = self.pn[space];
        self.pn[space] += 1;
        pn
    }

    /// Builds one protected packet at `level`.
    pub fn build(&mut self, level: EncryptionLevel, frames: Vec<Frame>, pad: bool) -> Result<Vec<u8>, HarnessError> {
        let ty = packet_type(level);
        if !self.has_keys(level) {
            return Err(HarnessError::NoKeysForLevel(level));
        }
        let pn = self.next_pn(ty);
        let mut p = Packet::new(ty, &self.header_dcid(), &self.scid, pn, frames);
        if ty == PacketType::Initial && self.include_retry_token {
            p.token = self.retry_token.clone().unwrap_or_default();
        }
        let min = if pad { MIN_INITIAL_DATAGRAM } else { 0 };
        let key = self.keys[level.index()].as_ref().expect("checked").sending(true);
        Ok(encode_packet(&p, key, min))
    }

    fn crypto_frame(&mut self, level: EncryptionLevel, msg: &[u8]) -> Frame {
        let offset = self.crypto_out[level.index()];
        self.crypto_out[level.index()] += msg.len() as u64;
        Frame::Crypto { offset, data: msg.to_vec() }
    }

    fn hash(&self) -> HashAlg {
        HashAlg::for_suite(self.cipher.unwrap_or(CipherSuite::Aes128))
    }

    fn transcript_hash(&self) -> Vec<u8> {
        self.hash().digest(&self.transcript)
    }
}

impl Default for ConnectionContext {
    fn default() -> Self {
        ConnectionContext::new()
    }
}

impl KeyLookup for ConnectionContext {
    fn key(&self, ty: PacketType) -> Option<&PacketKey> {
        self.keys[level_of(ty).index()].as_ref().map(|k| k.receiving(true))
    }

    fn largest_pn(&self, space: usize) -> Option<u64> {
        self.largest_received[space]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitialAck {
    None,
    Valid,
    Invalid,
}

#[derive(Debug, Default)]
struct Capture {
    symbols: ObservationStep,
    saw_ack: bool,
    last_arrival: Option<Duration>,
}

pub struct WireHarness {
    cfg: WireConfig,
    socket: Option<UdpSocket>,
    pub ctx: ConnectionContext,
    client: Identity,
    untrusted: Identity,
}

impl WireHarness {
    pub fn new(cfg: WireConfig) -> Result<WireHarness, HarnessError> {
        let client = match &cfg.client_identity {
            Some(id) => id.clone(),
            None => Identity::self_signed("quicfsm-client")?,
        };
        let untrusted = Identity::untrusted("quicfsm-client")?;
        Ok(WireHarness { cfg, socket: None, ctx: ConnectionContext::new(), client, untrusted })
    }

    pub fn config(&self) -> &WireConfig {
        &self.cfg
    }

    fn open_socket(&self) -> Result<UdpSocket, HarnessError> {
        let bind: SocketAddr = if self.cfg.server.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal");
        let s = UdpSocket::bind(bind)?;
        s.connect(self.cfg.server).map_err(|e| HarnessError::TargetUnreachable(e.to_string()))?;
        Ok(s)
    }

    fn send(&self, datagram: &[u8]) -> Result<(), HarnessError> {
        let s = self.socket.as_ref().ok_or_else(|| HarnessError::TargetUnreachable("no socket".into()))?;
        s.send(datagram)?;
        Ok(())
    }

    /// Builds the datagram an input symbol stands for, updating handshake state.
    pub fn datagram_for(&mut self, sym: &InputSymbol) -> Result<Vec<u8>, HarnessError> {
        use InputKind::*;
        let level = sym.kind.level().ok_or(HarnessError::NoKeysForLevel(EncryptionLevel::Initial))?;
        if !self.ctx.has_keys(level) {
            return Err(HarnessError::NoKeysForLevel(level));
        }
        let pad = level == EncryptionLevel::Initial && self.ctx.padding_enabled;
        let close = Frame::ConnectionClose { application: false, error_code: 0, frame_type: 0, reason: Vec::new() };
        let frames = match &sym.kind {
            InitPing | ZeroRttPing | HndPing => vec![Frame::Ping],
            InitConClose | ZeroRttConClose | HndConClose => vec![close],
            InitNoFr | ZeroRttNoFr | HndNoFr => vec![],
            InitUnxpFrType | ZeroRttUnxpFrType | HndUnxpFrType => vec![Frame::Ping, Frame::Unknown(UNEXPECTED_FRAME_TYPE)],
            InitCltHelloVldAck | InitCltHelloInvldAck => {
                let msg = self.client_hello(sym.cipher.unwrap_or(self.cfg.setup_cipher));
                vec![self.ctx.crypto_frame(level, &msg)]
            }
            ZeroRttFin | HndFin => {
                let msg = self.client_finished();
                vec![self.ctx.crypto_frame(level, &msg)]
            }
            ZeroRttAck => {
                let largest = self.ctx.largest_received[2].map_or(0, |l| l + 1) + INVALID_ACK_GAP;
                vec![Frame::Ack { largest, delay: 0, first_range: 0 }]
            }
            HndEmpCert => self.certificate(&[], level),
            HndInvldCert => {
                let chain = self.untrusted.chain.clone();
                self.certificate(&chain, level)
            }
            HndCert => {
                let chain = self.client.chain.clone();
                self.certificate(&chain, level)
            }
            HndCertVer => {
                let content = tls::certificate_verify_content(false, &self.ctx.transcript_hash());
                let msg = tls::certificate_verify(ECDSA_P256_SHA256, &self.client.sign(&content)?);
                self.ctx.transcript.extend_from_slice(&msg);
                vec![self.ctx.crypto_frame(level, &msg)]
            }
            VldNewConId | InvldNewConId => {
                let limit = self.ctx.transport_params.as_ref().and_then(|t| t.active_connection_id_limit).unwrap_or(2);
                let count = if sym.kind == VldNewConId { limit.saturating_sub(1) } else { limit + 1 };
                (0..count)
                    .map(|_| {
                        self.ctx.ncid_sequence += 1;
                        let cid: [u8; 8] = rand::random();
                        Frame::NewConnectionId {
                            sequence: self.ctx.ncid_sequence,
                            retire_prior_to: 0,
                            cid: cid.to_vec(),
                            reset_token: rand::random(),
                        }
                    })
                    .collect()
            }
            IncRetryTkn | RmPadFrmInitPkts | ChgDestConIdOri | Extension { .. } => {
                return Err(HarnessError::NoKeysForLevel(level));
            }
        };
        self.ctx.build(level, frames, pad)
    }

    fn certificate(&mut self, chain: &[Vec<u8>], level: EncryptionLevel) -> Vec<Frame> {
        let msg = tls::certificate(chain);
        self.ctx.transcript.extend_from_slice(&msg);
        vec![self.ctx.crypto_frame(level, &msg)]
    }

    fn client_hello(&mut self, cipher: CipherSuite) -> Vec<u8> {
        let share = KeyShare::generate();
        let tp = TransportParams::client_default(&self.ctx.scid).encode();
        let psk = if self.cfg.mode == HandshakeMode::Psk { self.ctx.psk_ticket.clone() } else { None };
        let msg = tls::client_hello(&ClientHelloParams {
            random: tls::random32(),
            cipher,
            key_share: &share.public,
            transport_params: tp,
            alpn: self.cfg.alpn.clone(),
            server_name: self.cfg.server_name.clone(),
            psk: psk.as_ref(),
            early_data: psk.is_some(),
        });
        self.ctx.cipher = Some(cipher);
        self.ctx.transcript = msg.clone();
        self.ctx.key_share = Some(share);
        let hash = HashAlg::for_suite(cipher);
        let schedule = Schedule::new(hash, psk.as_ref().map(|p| p.psk.as_slice()));
        if psk.is_some() {
            let early = schedule.client_early_traffic(&hash.digest(&msg));
            // 0-RTT is one-directional; the server half is never used
            self.ctx.install(EncryptionLevel::ZeroRtt, LevelKeys::from_secrets(cipher, &early, &early));
        }
        self.ctx.schedule = Some(schedule);
        msg
    }

    fn client_finished(&mut self) -> Vec<u8> {
        let hash = self.ctx.hash();
        let base = match &self.ctx.handshake_secrets {
            Some((c, _)) => c.clone(),
            None => vec![0u8; hash.len()],
        };
        let verify = tls::finished_verify_data(hash, &base, &self.ctx.transcript_hash());
        let msg = tls::finished(&verify);
        self.ctx.transcript.extend_from_slice(&msg);
        if let Some(schedule) = &self.ctx.schedule {
            self.ctx.resumption_master = schedule.resumption_master(&self.ctx.transcript_hash());
        }
        msg
    }

    /// Reads datagrams until `wait` has passed since the call.
    fn capture(&mut self, wait: Duration, initial_ack: InitialAck) -> Result<Capture, HarnessError> {
        let start = Instant::now();
        let deadline = start + wait;
        let mut cap = Capture::default();
        let mut pending: Vec<Vec<u8>> = Vec::new();
        let mut buf = vec![0u8; 65536];
        loop {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            let socket = self.socket.as_ref().expect("socket open during a step");
            socket.set_read_timeout(Some(deadline - now))?;
            match socket.recv(&mut buf) {
                Ok(n) => {
                    cap.last_arrival = Some(start.elapsed());
                    let data = buf[..n].to_vec();
                    self.process_datagram(&data, &mut cap, &mut pending, initial_ack)?;
                }
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => break,
                // ICMP port unreachable from a dead target
                Err(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => continue,
                Err(e) => return Err(e.into()),
            }
        }
        for raw in &pending {
            log::debug!("dropping {} undecryptable bytes", raw.len());
        }
        self.send_acks()?;
        Ok(cap)
    }

    fn process_datagram(
        &mut self,
        data: &[u8],
        cap: &mut Capture,
        pending: &mut Vec<Vec<u8>>,
        initial_ack: InitialAck,
    ) -> Result<(), HarnessError> {
        let mut rest = data;
        while !rest.is_empty() {
            let (parsed, used) = match decode_datagram_step(rest, self.ctx.scid.len(), &self.ctx) {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("unparseable datagram ({e}): {}", hex(rest));
                    cap.symbols.push(OutputSymbol::HarnessError);
                    break;
                }
            };
            rest = &rest[used..];
            match parsed {
                Parsed::Packet(p) => {
                    let before = self.ctx.installed_levels().len();
                    self.handle_packet(p, cap, initial_ack)?;
                    if self.ctx.installed_levels().len() > before && !pending.is_empty() {
                        let retry: Vec<Vec<u8>> = std::mem::take(pending);
                        for raw in retry {
                            self.process_datagram(&raw, cap, pending, initial_ack)?;
                        }
                    }
                }
                Parsed::Opaque { error: super::packet::CodecError::NoKeys(_), raw, .. } => pending.push(raw),
                Parsed::Opaque { ty, error, raw } => {
                    log::warn!("undecryptable {ty:?} packet ({error}): {}", hex(&raw));
                    cap.symbols.push(OutputSymbol::HarnessError);
                }
            }
        }
        Ok(())
    }

    fn handle_packet(&mut self, p: Packet, cap: &mut Capture, initial_ack: InitialAck) -> Result<(), HarnessError> {
        for s in packet_symbols(&p) {
            cap.symbols.push(s);
        }
        if p.ty == PacketType::Retry {
            self.ctx.retry_token = Some(p.token.clone());
            self.ctx.dcid = p.scid.clone();
            self.ctx.install(EncryptionLevel::Initial, LevelKeys::initial(&p.scid)?);
            return Ok(());
        }
        let space = p.ty.space();
        self.ctx.largest_received[space] = Some(self.ctx.largest_received[space].map_or(p.pn, |l| l.max(p.pn)));
        if p.ty == PacketType::Initial && self.ctx.dcid == self.ctx.original_dcid && !p.scid.is_empty() {
            // the server picks its own connection id in its first Initial
            self.ctx.dcid = p.scid.clone();
        }
        let eliciting = p.frames.iter().any(Frame::is_ack_eliciting);
        for f in &p.frames {
            match f {
                Frame::Ack { .. } => cap.saw_ack = true,
                Frame::Crypto { offset, data } => {
                    let level = level_of(p.ty);
                    self.ctx.crypto_in[level.index()].receive(*offset, data);
                    for (typ, msg) in self.ctx.crypto_in[level.index()].messages() {
                        if let Some(s) = message_symbol(typ) {
                            cap.symbols.push(s);
                        }
                        self.handle_message(typ, &msg);
                    }
                }
                _ => {}
            }
        }
        if eliciting {
            if p.ty == PacketType::Initial {
                match initial_ack {
                    InitialAck::None => {}
                    InitialAck::Valid => {
                        let frames = vec![Frame::Ack { largest: p.pn, delay: 0, first_range: 0 }];
                        let d = self.ctx.build(EncryptionLevel::Initial, frames, true)?;
                        self.send(&d)?;
                    }
                    InitialAck::Invalid => {
                        let frames = vec![Frame::Ack { largest: p.pn + INVALID_ACK_GAP, delay: 0, first_range: 0 }];
                        let d = self.ctx.build(EncryptionLevel::Initial, frames, false)?;
                        self.send(&d)?;
                    }
                }
            } else {
                self.ctx.ack_pending[space] = Some(p.pn.max(self.ctx.ack_pending[space].unwrap_or(0)));
            }
        }
        Ok(())
    }

    fn handle_message(&mut self, typ: u8, msg: &[u8]) {
        let body = &msg[4..];
        match typ {
            tls::SERVER_HELLO => {
                let Ok(sh) = tls::parse_server_hello(body) else {
                    log::warn!("malformed ServerHello");
                    return;
                };
                self.ctx.cipher = Some(sh.cipher);
                self.ctx.transcript.extend_from_slice(msg);
                let shared = match self.ctx.key_share.as_mut().map(|k| k.agree(&sh.key_share)) {
                    Some(Ok(s)) => s,
                    _ => {
                        log::warn!("no usable key share for ServerHello");
                        return;
                    }
                };
                let hash = HashAlg::for_suite(sh.cipher);
                let psk = if sh.psk_selected { self.ctx.psk_ticket.as_ref().map(|p| p.psk.clone()) } else { None };
                let mut schedule = Schedule::new(hash, psk.as_deref());
                let (c, s) = schedule.handshake(&shared, &hash.digest(&self.ctx.transcript));
                self.ctx.install(EncryptionLevel::Handshake, LevelKeys::from_secrets(sh.cipher, &c, &s));
                self.ctx.handshake_secrets = Some((c, s));
                self.ctx.schedule = Some(schedule);
            }
            tls::FINISHED => {
                self.ctx.transcript.extend_from_slice(msg);
                let th = self.ctx.transcript_hash();
                let cipher = self.ctx.cipher.unwrap_or(CipherSuite::Aes128);
                if let Some((c, s)) = self.ctx.schedule.as_mut().and_then(|sch| sch.application(&th)) {
                    self.ctx.install(EncryptionLevel::OneRtt, LevelKeys::from_secrets(cipher, &c, &s));
                }
            }
            tls::NEW_SESSION_TICKET => match tls::parse_new_session_ticket(body) {
                Ok(t) => self.ctx.tickets.push(t),
                Err(e) => log::warn!("malformed NewSessionTicket: {e}"),
            },
            tls::ENCRYPTED_EXTENSIONS => {
                self.ctx.transcript.extend_from_slice(msg);
                if let Ok(tp) = tls::parse_encrypted_extensions(body) {
                    self.ctx.transport_params = tp;
                }
            }
            _ => self.ctx.transcript.extend_from_slice(msg),
        }
    }

    fn send_acks(&mut self) -> Result<(), HarnessError> {
        for (space, level) in [(1, EncryptionLevel::Handshake), (2, EncryptionLevel::OneRtt)] {
            if let Some(largest) = self.ctx.ack_pending[space].take() {
                if self.ctx.has_keys(level) {
                    let d = self.ctx.build(level, vec![Frame::Ack { largest, delay: 0, first_range: 0 }], false)?;
                    self.send(&d)?;
                }
            }
        }
        Ok(())
    }

    /// Pings at the highest installed level and reports whether the server still answers.
    pub fn probe_status(&mut self) -> Result<OutputSymbol, HarnessError> {
        let level = [EncryptionLevel::OneRtt, EncryptionLevel::Handshake, EncryptionLevel::Initial]
            .into_iter()
            .find(|l| self.ctx.has_keys(*l))
            .expect("Initial keys always exist");
        let pad = level == EncryptionLevel::Initial && self.ctx.padding_enabled;
        let d = self.ctx.build(level, vec![Frame::Ping], pad)?;
        self.send(&d)?;
        let cap = self.capture(self.cfg.timeouts.short, InitialAck::None)?;
        Ok(if cap.saw_ack { OutputSymbol::ConAct } else { OutputSymbol::ConClosed })
    }

    fn step_inner(&mut self, sym: &InputSymbol) -> Result<ObservationStep, HarnessError> {
        match sym.kind {
            InputKind::IncRetryTkn => self.ctx.include_retry_token = true,
            InputKind::RmPadFrmInitPkts => self.ctx.padding_enabled = false,
            InputKind::ChgDestConIdOri => self.ctx.use_original_dcid = true,
            _ => {}
        }
        if sym.kind.is_directive() {
            return Ok(ObservationStep::new());
        }
        if self.socket.is_none() {
            self.socket = Some(self.open_socket()?);
        }
        let datagram = match self.datagram_for(sym) {
            Ok(d) => d,
            Err(HarnessError::NoKeysForLevel(level)) => {
                log::debug!("{sym}: no {level} keys");
                return Ok(ObservationStep::single(OutputSymbol::HarnessError));
            }
            Err(e) => return Err(e),
        };
        self.send(&datagram)?;
        let ack = match sym.kind {
            InputKind::InitCltHelloVldAck => InitialAck::Valid,
            InputKind::InitCltHelloInvldAck => InitialAck::Invalid,
            _ => InitialAck::None,
        };
        let cap = self.capture(self.cfg.timeouts.wait(sym.timeout), ack)?;
        let mut obs = finish(cap.symbols);
        if sym.kind.is_connection_close() {
            obs.push(self.probe_status()?);
        }
        Ok(obs)
    }

    /// Completes a full handshake on a throwaway connection to obtain a resumption ticket.
    fn setup_ticket(&mut self) -> Result<PskOffer, HarnessError> {
        self.ctx = ConnectionContext::new();
        self.socket = Some(self.open_socket()?);
        let cipher = self.cfg.setup_cipher;
        let ch = InputSymbol::client_hello(InputKind::InitCltHelloVldAck, crate::alphabet::TimeoutClass::Long, cipher);
        let saved_mode = self.cfg.mode;
        self.cfg.mode = HandshakeMode::Basic;
        let result = (|| {
            let d = self.datagram_for(&ch)?;
            self.send(&d)?;
            self.capture(self.cfg.timeouts.long, InitialAck::Valid)?;
            let fin = InputSymbol::timed(InputKind::HndFin, crate::alphabet::TimeoutClass::Long);
            let d = self.datagram_for(&fin)?;
            self.send(&d)?;
            self.capture(self.cfg.timeouts.long, InitialAck::None)?;
            let ticket = self.ctx.tickets.last().cloned().ok_or_else(|| {
                HarnessError::SetupHandshakeFailed("no NewSessionTicket received".into())
            })?;
            let rms = self
                .ctx
                .resumption_master
                .clone()
                .ok_or_else(|| HarnessError::SetupHandshakeFailed("handshake did not complete".into()))?;
            let hash = HashAlg::for_suite(self.ctx.cipher.unwrap_or(cipher));
            Ok(PskOffer {
                identity: ticket.ticket.clone(),
                obfuscated_age: ticket.age_add,
                psk: tls::psk_from_ticket(hash, &rms, &ticket.nonce),
                suite: self.ctx.cipher.unwrap_or(cipher),
            })
        })();
        self.cfg.mode = saved_mode;
        self.teardown();
        result.map_err(|e| match e {
            HarnessError::SetupHandshakeFailed(_) => e,
            other => HarnessError::SetupHandshakeFailed(other.to_string()),
        })
    }

    fn teardown(&mut self) {
        if self.socket.is_some() {
            let level = [EncryptionLevel::OneRtt, EncryptionLevel::Handshake, EncryptionLevel::Initial]
                .into_iter()
                .find(|l| self.ctx.has_keys(*l))
                .expect("Initial keys always exist");
            let close = Frame::ConnectionClose { application: false, error_code: 0, frame_type: 0, reason: Vec::new() };
            if let Ok(d) = self.ctx.build(level, vec![close], level == EncryptionLevel::Initial) {
                let _ = self.send(&d);
            }
        }
        self.socket = None;
    }

    pub fn reset_connection(&mut self) -> Result<(), HarnessError> {
        self.teardown();
        let ticket = if self.cfg.mode == HandshakeMode::Psk { Some(self.setup_ticket()?) } else { None };
        self.ctx = ConnectionContext::new();
        self.ctx.psk_ticket = ticket;
        self.socket = Some(self.open_socket()?);
        Ok(())
    }
}

fn hex(data: &[u8]) -> String {
    data.iter().take(64).map(|b| format!("{b:02x}")).collect()
}

impl MembershipOracle for WireHarness {
    fn reset(&mut self) -> Result<(), LearnError> {
        Ok(self.reset_connection()?)
    }

    fn step(&mut self, input: &InputSymbol) -> Result<ObservationStep, LearnError> {
        Ok(self.step_inner(input)?)
    }
}

impl Calibrate for WireHarness {
    fn trial(&mut self, window: Duration) -> Result<Option<Duration>, HarnessError> {
        self.reset_connection()?;
        let cipher = self.cfg.setup_cipher;
        let ch = InputSymbol::client_hello(InputKind::InitCltHelloVldAck, crate::alphabet::TimeoutClass::Short, cipher);
        let d = self.datagram_for(&ch)?;
        self.send(&d)?;
        let first = self.capture(window, InitialAck::Valid)?.last_arrival;
        let mut longest = first;
        if self.ctx.has_keys(EncryptionLevel::Handshake) {
            let fin = InputSymbol::timed(InputKind::HndFin, crate::alphabet::TimeoutClass::Short);
            let d = self.datagram_for(&fin)?;
            self.send(&d)?;
            if let Some(t) = self.capture(window, InitialAck::None)?.last_arrival {
                longest = Some(longest.map_or(t, |l| l.max(t)));
            }
        }
        self.teardown();
        Ok(longest)
    }
}

impl Backend for WireHarness {
    /// UDP has no connection to wait for, so readiness means a ClientHello gets an answer.
    fn ready(&mut self, within: Duration) -> bool {
        let deadline = Instant::now() + within;
        loop {
            let window = self.cfg.timeouts.long.clamp(Duration::from_millis(50), Duration::from_millis(500));
            if let Ok(Some(_)) = self.trial(window) {
                return self.reset_connection().is_ok();
            }
            if Instant::now() >= deadline {
                return false;
            }
        }
    }

    fn timeouts(&self) -> HarnessTimeouts {
        self.cfg.timeouts
    }

    fn set_timeouts(&mut self, timeouts: HarnessTimeouts) {
        self.cfg.timeouts = timeouts;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{default_alphabet, TimeoutClass};
    use crate::harness::packet::{decode_datagram, PacketType};

    /// Opens a client's own packets with the client keys.
    struct Own<'a>(&'a ConnectionContext);

    impl KeyLookup for Own<'_> {
        fn key(&self, ty: PacketType) -> Option<&PacketKey> {
            self.0.keys[level_of(ty).index()].as_ref().map(|k| k.sending(true))
        }
        fn largest_pn(&self, space: usize) -> Option<u64> {
            self.0.pn[space].checked_sub(1)
        }
    }

    fn harness(mode: HandshakeMode) -> WireHarness {
        WireHarness::new(WireConfig::new("127.0.0.1:9".parse().unwrap(), mode)).unwrap()
    }

    fn install_all(h: &mut WireHarness) {
        for level in [EncryptionLevel::ZeroRtt, EncryptionLevel::Handshake, EncryptionLevel::OneRtt] {
            h.ctx.install(level, LevelKeys::from_secrets(CipherSuite::Aes128, &[1; 32], &[2; 32]));
        }
    }

    #[test]
    fn fresh_context_defaults() {
        let a = ConnectionContext::new();
        let b = ConnectionContext::new();
        assert_eq!(a.pn, [0; 3]);
        assert_ne!(a.scid, b.scid);
        assert!(a.padding_enabled);
        assert_eq!(a.installed_levels(), vec![EncryptionLevel::Initial]);
    }

    #[test]
    fn missing_keys_are_reported() {
        let mut h = harness(HandshakeMode::Basic);
        let fin = InputSymbol::timed(InputKind::HndFin, TimeoutClass::Short);
        assert!(matches!(h.datagram_for(&fin), Err(HarnessError::NoKeysForLevel(EncryptionLevel::Handshake))));
    }

    #[test]
    fn every_input_kind_parses_back() {
        let mut alphabet = Vec::new();
        for mode in HandshakeMode::ALL {
            for s in default_alphabet(mode, &[TimeoutClass::Short], &CipherSuite::ALL).unwrap() {
                if !alphabet.contains(&s) {
                    alphabet.push(s);
                }
            }
        }
        let mut h = harness(HandshakeMode::ClientAuth);
        install_all(&mut h);
        for sym in alphabet.iter().filter(|s| !s.is_directive()) {
            let level = sym.kind.level().unwrap();
            let d = h.datagram_for(sym).unwrap();
            let parsed = decode_datagram(&d, h.ctx.scid.len(), &Own(&h.ctx)).unwrap();
            let Parsed::Packet(p) = &parsed[0] else { panic!("{sym}: {parsed:?}") };
            assert_eq!(level_of(p.ty), level, "{sym}");
            let kinds: Vec<&Frame> = p.frames.iter().filter(|f| !matches!(f, Frame::Padding(_))).collect();
            use InputKind::*;
            let ok = match sym.kind {
                InitPing | ZeroRttPing | HndPing => matches!(kinds[..], [Frame::Ping]),
                InitConClose | ZeroRttConClose | HndConClose => matches!(kinds[..], [Frame::ConnectionClose { .. }]),
                InitNoFr | ZeroRttNoFr | HndNoFr => kinds.is_empty(),
                InitUnxpFrType | ZeroRttUnxpFrType | HndUnxpFrType => {
                    matches!(kinds[..], [Frame::Ping, Frame::Unknown(UNEXPECTED_FRAME_TYPE)])
                }
                ZeroRttAck => matches!(kinds[..], [Frame::Ack { .. }]),
                VldNewConId => kinds.len() == 1 && matches!(kinds[0], Frame::NewConnectionId { .. }),
                InvldNewConId => kinds.len() == 3,
                _ => matches!(kinds[..], [Frame::Crypto { .. }]),
            };
            assert!(ok, "{sym}: {kinds:?}");
        }
        // the installed levels are all still there
        assert_eq!(h.ctx.installed_levels().len(), 4);
    }

    #[test]
    fn padding_law() {
        let mut h = harness(HandshakeMode::Basic);
        install_all(&mut h);
        let ping = InputSymbol::timed(InputKind::InitPing, TimeoutClass::Short);
        assert!(h.datagram_for(&ping).unwrap().len() >= MIN_INITIAL_DATAGRAM);
        let hnd = InputSymbol::timed(InputKind::HndPing, TimeoutClass::Short);
        assert!(h.datagram_for(&hnd).unwrap().len() < MIN_INITIAL_DATAGRAM);
        h.step_inner(&InputSymbol::directive(InputKind::RmPadFrmInitPkts)).unwrap();
        assert!(h.datagram_for(&ping).unwrap().len() < MIN_INITIAL_DATAGRAM);
    }

    #[test]
    fn packet_numbers_increase_per_space() {
        let mut h = harness(HandshakeMode::Basic);
        install_all(&mut h);
        let ping = InputSymbol::timed(InputKind::InitPing, TimeoutClass::Short);
        let hnd = InputSymbol::timed(InputKind::HndPing, TimeoutClass::Short);
        for _ in 0..3 {
            h.datagram_for(&ping).unwrap();
        }
        h.datagram_for(&hnd).unwrap();
        assert_eq!(h.ctx.pn, [3, 1, 0]);
    }

    #[test]
    fn directives_only_touch_flags() {
        let mut h = harness(HandshakeMode::Retry);
        for (kind, check) in [
            (InputKind::IncRetryTkn, (|c: &ConnectionContext| c.include_retry_token) as fn(&ConnectionContext) -> bool),
            (InputKind::RmPadFrmInitPkts, |c| !c.padding_enabled),
            (InputKind::ChgDestConIdOri, |c| c.use_original_dcid),
        ] {
            let obs = h.step_inner(&InputSymbol::directive(kind)).unwrap();
            assert!(obs.is_empty());
            assert!(check(&h.ctx));
        }
        assert!(h.socket.is_none(), "no datagram was needed");
    }
}
