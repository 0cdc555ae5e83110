//! A minimal TLS 1.3 handshake codec.
//!
//! It encodes and parses exactly the messages a QUIC handshake carries and
//! never validates what it is asked to send, so the harness can emit empty
//! certificate lists, foreign certificates or Finished messages at the
//! wrong level.

use std::collections::BTreeMap;

use ring::agreement::{self, EphemeralPrivateKey, UnparsedPublicKey, X25519};
use ring::rand::{SecureRandom, SystemRandom};

use super::crypto::{derive_secret, expand_label, hkdf_extract, hmac_sign, CryptoError, HashAlg};
use super::packet::{put_varint, CodecError, Reader};
use crate::alphabet::CipherSuite;

pub const CLIENT_HELLO: u8 = 1;
pub const SERVER_HELLO: u8 = 2;
pub const NEW_SESSION_TICKET: u8 = 4;
pub const ENCRYPTED_EXTENSIONS: u8 = 8;
pub const CERTIFICATE: u8 = 11;
pub const CERTIFICATE_REQUEST: u8 = 13;
pub const CERTIFICATE_VERIFY: u8 = 15;
pub const FINISHED: u8 = 20;

const EXT_SERVER_NAME: u16 = 0;
const EXT_SUPPORTED_GROUPS: u16 = 10;
const EXT_SIGNATURE_ALGORITHMS: u16 = 13;
const EXT_ALPN: u16 = 16;
const EXT_PRE_SHARED_KEY: u16 = 41;
const EXT_EARLY_DATA: u16 = 42;
const EXT_SUPPORTED_VERSIONS: u16 = 43;
const EXT_PSK_MODES: u16 = 45;
const EXT_KEY_SHARE: u16 = 51;
const EXT_QUIC_TRANSPORT_PARAMETERS: u16 = 57;
const GROUP_X25519: u16 = 0x001d;
const TLS13: u16 = 0x0304;

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_vec8(out: &mut Vec<u8>, data: &[u8]) {
    out.push(data.len() as u8);
    out.extend_from_slice(data);
}

fn put_vec16(out: &mut Vec<u8>, data: &[u8]) {
    put_u16(out, data.len() as u16);
    out.extend_from_slice(data);
}

fn put_vec24(out: &mut Vec<u8>, data: &[u8]) {
    let n = data.len();
    out.extend_from_slice(&[(n >> 16) as u8, (n >> 8) as u8, n as u8]);
    out.extend_from_slice(data);
}

fn put_ext(out: &mut Vec<u8>, id: u16, body: &[u8]) {
    put_u16(out, id);
    put_vec16(out, body);
}

/// Wraps a body in the four-byte handshake header.
pub fn message(typ: u8, body: &[u8]) -> Vec<u8> {
    let mut out = vec![typ];
    put_vec24(&mut out, body);
    out
}

fn parse_extensions(data: &[u8]) -> Result<BTreeMap<u16, Vec<u8>>, CodecError> {
    let mut r = Reader::new(data);
    let mut out = BTreeMap::new();
    while r.remaining() > 0 {
        let id = r.u16()?;
        out.insert(id, r.vec16()?.to_vec());
    }
    Ok(out)
}

/// QUIC transport parameters the harness sets or reads.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransportParams {
    pub original_destination_connection_id: Option<Vec<u8>>,
    pub max_idle_timeout: Option<u64>,
    pub initial_max_data: Option<u64>,
    pub initial_max_stream_data_bidi_local: Option<u64>,
    pub initial_max_stream_data_bidi_remote: Option<u64>,
    pub initial_max_streams_bidi: Option<u64>,
    pub active_connection_id_limit: Option<u64>,
    pub initial_source_connection_id: Option<Vec<u8>>,
    pub retry_source_connection_id: Option<Vec<u8>>,
}

impl TransportParams {
    pub fn client_default(scid: &[u8]) -> TransportParams {
        TransportParams {
            max_idle_timeout: Some(30_000),
            initial_max_data: Some(1 << 20),
            initial_max_stream_data_bidi_local: Some(1 << 18),
            initial_max_stream_data_bidi_remote: Some(1 << 18),
            initial_max_streams_bidi: Some(16),
            active_connection_id_limit: Some(4),
            initial_source_connection_id: Some(scid.to_vec()),
            ..Default::default()
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut bytes = |id: u64, v: &Option<Vec<u8>>| {
            if let Some(v) = v {
                put_varint(&mut out, id);
                put_varint(&mut out, v.len() as u64);
                out.extend_from_slice(v);
            }
        };
        bytes(0x00, &self.original_destination_connection_id);
        bytes(0x0f, &self.initial_source_connection_id);
        bytes(0x10, &self.retry_source_connection_id);
        for (id, v) in [
            (0x01, self.max_idle_timeout),
            (0x04, self.initial_max_data),
            (0x05, self.initial_max_stream_data_bidi_local),
            (0x06, self.initial_max_stream_data_bidi_remote),
            (0x08, self.initial_max_streams_bidi),
            (0x0e, self.active_connection_id_limit),
        ] {
            if let Some(v) = v {
                let mut val = Vec::new();
                put_varint(&mut val, v);
                put_varint(&mut out, id);
                put_varint(&mut out, val.len() as u64);
                out.extend_from_slice(&val);
            }
        }
        out
    }

    pub fn decode(data: &[u8]) -> Result<TransportParams, CodecError> {
        let mut r = Reader::new(data);
        let mut tp = TransportParams::default();
        while r.remaining() > 0 {
            let id = r.varint()?;
            let len = r.varint()? as usize;
            let val = r.bytes(len)?;
            let int = || Reader::new(val).varint();
            match id {
                0x00 => tp.original_destination_connection_id = Some(val.to_vec()),
                0x01 => tp.max_idle_timeout = Some(int()?),
                0x04 => tp.initial_max_data = Some(int()?),
                0x05 => tp.initial_max_stream_data_bidi_local = Some(int()?),
                0x06 => tp.initial_max_stream_data_bidi_remote = Some(int()?),
                0x08 => tp.initial_max_streams_bidi = Some(int()?),
                0x0e => tp.active_connection_id_limit = Some(int()?),
                0x0f => tp.initial_source_connection_id = Some(val.to_vec()),
                0x10 => tp.retry_source_connection_id = Some(val.to_vec()),
                _ => {}
            }
        }
        Ok(tp)
    }
}

/// An X25519 key share whose private half is used once.
pub struct KeyShare {
    private: Option<EphemeralPrivateKey>,
    pub public: Vec<u8>,
}

impl KeyShare {
    pub fn generate() -> KeyShare {
        let rng = SystemRandom::new();
        let private = EphemeralPrivateKey::generate(&X25519, &rng).expect("system randomness");
        let public = private.compute_public_key().expect("x25519 public key").as_ref().to_vec();
        KeyShare { private: Some(private), public }
    }

    pub fn agree(&mut self, peer: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let private = self.private.take().ok_or(CryptoError::KeyAgreement)?;
        agreement::agree_ephemeral(private, &UnparsedPublicKey::new(&X25519, peer), |s| s.to_vec())
            .map_err(|_| CryptoError::KeyAgreement)
    }
}

pub fn random32() -> [u8; 32] {
    let mut r = [0u8; 32];
    SystemRandom::new().fill(&mut r).expect("system randomness");
    r
}

/// A resumption ticket offered in a later ClientHello.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PskOffer {
    pub identity: Vec<u8>,
    pub obfuscated_age: u32,
    pub psk: Vec<u8>,
    pub suite: CipherSuite,
}

#[derive(Debug, Clone)]
pub struct ClientHelloParams<'a> {
    pub random: [u8; 32],
    pub cipher: CipherSuite,
    pub key_share: &'a [u8],
    pub transport_params: Vec<u8>,
    pub alpn: Vec<Vec<u8>>,
    pub server_name: Option<String>,
    pub psk: Option<&'a PskOffer>,
    pub early_data: bool,
}

/// Encodes a full ClientHello message, computing the PSK binder if a ticket is offered.
pub fn client_hello(p: &ClientHelloParams) -> Vec<u8> {
    let mut body = Vec::new();
    put_u16(&mut body, 0x0303);
    body.extend_from_slice(&p.random);
    put_vec8(&mut body, &[]);
    put_vec16(&mut body, &p.cipher.tls_id().to_be_bytes());
    put_vec8(&mut body, &[0]);

    let mut ext = Vec::new();
    if let Some(name) = &p.server_name {
        let mut entry = vec![0];
        put_vec16(&mut entry, name.as_bytes());
        let mut list = Vec::new();
        put_vec16(&mut list, &entry);
        put_ext(&mut ext, EXT_SERVER_NAME, &list);
    }
    put_ext(&mut ext, EXT_SUPPORTED_VERSIONS, &[2, 0x03, 0x04]);
    let mut groups = Vec::new();
    put_vec16(&mut groups, &GROUP_X25519.to_be_bytes());
    put_ext(&mut ext, EXT_SUPPORTED_GROUPS, &groups);
    let mut sigs = Vec::new();
    put_vec16(&mut sigs, &[0x04, 0x03, 0x08, 0x04, 0x08, 0x07]);
    put_ext(&mut ext, EXT_SIGNATURE_ALGORITHMS, &sigs);
    let mut share = Vec::new();
    put_u16(&mut share, GROUP_X25519);
    put_vec16(&mut share, p.key_share);
    let mut shares = Vec::new();
    put_vec16(&mut shares, &share);
    put_ext(&mut ext, EXT_KEY_SHARE, &shares);
    if !p.alpn.is_empty() {
        let mut list = Vec::new();
        for a in &p.alpn {
            put_vec8(&mut list, a);
        }
        let mut body = Vec::new();
        put_vec16(&mut body, &list);
        put_ext(&mut ext, EXT_ALPN, &body);
    }
    put_ext(&mut ext, EXT_QUIC_TRANSPORT_PARAMETERS, &p.transport_params);
    let hash = HashAlg::for_suite(p.cipher);
    if let Some(psk) = p.psk {
        put_ext(&mut ext, EXT_PSK_MODES, &[1, 1]);
        if p.early_data {
            put_ext(&mut ext, EXT_EARLY_DATA, &[]);
        }
        // pre_shared_key must be last; the binder is filled in below
        let mut ids = Vec::new();
        put_vec16(&mut ids, &psk.identity);
        ids.extend_from_slice(&psk.obfuscated_age.to_be_bytes());
        let mut offer = Vec::new();
        put_vec16(&mut offer, &ids);
        let mut binders = Vec::new();
        put_vec8(&mut binders, &vec![0u8; hash.len()]);
        put_vec16(&mut offer, &binders);
        put_ext(&mut ext, EXT_PRE_SHARED_KEY, &offer);
    }
    put_vec16(&mut body, &ext);
    let mut msg = message(CLIENT_HELLO, &body);
    if let Some(psk) = p.psk {
        let binders_len = 2 + 1 + hash.len();
        let truncated = &msg[..msg.len() - binders_len];
        let schedule = Schedule::new(hash, Some(&psk.psk));
        let binder = finished_verify_data(hash, &schedule.binder_key(), &hash.digest(truncated));
        let n = msg.len();
        msg[n - hash.len()..].copy_from_slice(&binder);
    }
    msg
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHelloInfo {
    pub random: Vec<u8>,
    pub ciphers: Vec<CipherSuite>,
    pub key_share: Option<Vec<u8>>,
    pub transport_params: Option<TransportParams>,
    pub psk_identities: Vec<Vec<u8>>,
    pub early_data: bool,
}

pub fn parse_client_hello(body: &[u8]) -> Result<ClientHelloInfo, CodecError> {
    let mut r = Reader::new(body);
    r.u16()?;
    let random = r.bytes(32)?.to_vec();
    r.vec8()?;
    let suites = r.vec16()?;
    let ciphers = suites
        .chunks(2)
        .filter_map(|c| CipherSuite::from_tls_id(u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)])))
        .collect();
    r.vec8()?;
    let ext = parse_extensions(r.vec16()?)?;
    let key_share = match ext.get(&EXT_KEY_SHARE) {
        Some(data) => {
            let mut list = Reader::new(data);
            let mut shares = Reader::new(list.vec16()?);
            let mut found = None;
            while shares.remaining() > 0 {
                let group = shares.u16()?;
                let key = shares.vec16()?;
                if group == GROUP_X25519 {
                    found = Some(key.to_vec());
                }
            }
            found
        }
        None => None,
    };
    let transport_params =
        ext.get(&EXT_QUIC_TRANSPORT_PARAMETERS).map(|d| TransportParams::decode(d)).transpose()?;
    let mut psk_identities = Vec::new();
    if let Some(data) = ext.get(&EXT_PRE_SHARED_KEY) {
        let mut ids = Reader::new(Reader::new(data).vec16()?);
        while ids.remaining() > 0 {
            psk_identities.push(ids.vec16()?.to_vec());
            ids.u32()?;
        }
    }
    Ok(ClientHelloInfo {
        random,
        ciphers,
        key_share,
        transport_params,
        psk_identities,
        early_data: ext.contains_key(&EXT_EARLY_DATA),
    })
}

pub fn server_hello(random: &[u8; 32], cipher: CipherSuite, key_share: &[u8], psk_selected: bool) -> Vec<u8> {
    let mut body = Vec::new();
    put_u16(&mut body, 0x0303);
    body.extend_from_slice(random);
    put_vec8(&mut body, &[]);
    put_u16(&mut body, cipher.tls_id());
    body.push(0);
    let mut ext = Vec::new();
    put_ext(&mut ext, EXT_SUPPORTED_VERSIONS, &TLS13.to_be_bytes());
    let mut share = Vec::new();
    put_u16(&mut share, GROUP_X25519);
    put_vec16(&mut share, key_share);
    put_ext(&mut ext, EXT_KEY_SHARE, &share);
    if psk_selected {
        put_ext(&mut ext, EXT_PRE_SHARED_KEY, &[0, 0]);
    }
    put_vec16(&mut body, &ext);
    message(SERVER_HELLO, &body)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerHelloInfo {
    pub cipher: CipherSuite,
    pub key_share: Vec<u8>,
    pub psk_selected: bool,
}

pub fn parse_server_hello(body: &[u8]) -> Result<ServerHelloInfo, CodecError> {
    let mut r = Reader::new(body);
    r.u16()?;
    r.bytes(32)?;
    r.vec8()?;
    let cipher = CipherSuite::from_tls_id(r.u16()?).ok_or(CodecError::Malformed("cipher suite"))?;
    r.u8()?;
    let ext = parse_extensions(r.vec16()?)?;
    let share = ext.get(&EXT_KEY_SHARE).ok_or(CodecError::Malformed("server key share"))?;
    let mut s = Reader::new(share);
    if s.u16()? != GROUP_X25519 {
        return Err(CodecError::Malformed("key share group"));
    }
    Ok(ServerHelloInfo {
        cipher,
        key_share: s.vec16()?.to_vec(),
        psk_selected: ext.contains_key(&EXT_PRE_SHARED_KEY),
    })
}

pub fn encrypted_extensions(transport_params: &[u8], early_data: bool) -> Vec<u8> {
    let mut ext = Vec::new();
    put_ext(&mut ext, EXT_QUIC_TRANSPORT_PARAMETERS, transport_params);
    if early_data {
        put_ext(&mut ext, EXT_EARLY_DATA, &[]);
    }
    let mut body = Vec::new();
    put_vec16(&mut body, &ext);
    message(ENCRYPTED_EXTENSIONS, &body)
}

pub fn parse_encrypted_extensions(body: &[u8]) -> Result<Option<TransportParams>, CodecError> {
    let ext = parse_extensions(Reader::new(body).vec16()?)?;
    ext.get(&EXT_QUIC_TRANSPORT_PARAMETERS).map(|d| TransportParams::decode(d)).transpose()
}

pub fn certificate_request() -> Vec<u8> {
    let mut body = Vec::new();
    put_vec8(&mut body, &[]);
    let mut sigs = Vec::new();
    put_vec16(&mut sigs, &[0x04, 0x03]);
    let mut ext = Vec::new();
    put_ext(&mut ext, EXT_SIGNATURE_ALGORITHMS, &sigs);
    put_vec16(&mut body, &ext);
    message(CERTIFICATE_REQUEST, &body)
}

/// A Certificate message; an empty chain gives an empty certificate_list.
pub fn certificate(chain: &[Vec<u8>]) -> Vec<u8> {
    let mut list = Vec::new();
    for cert in chain {
        put_vec24(&mut list, cert);
        put_vec16(&mut list, &[]);
    }
    let mut body = Vec::new();
    put_vec8(&mut body, &[]);
    put_vec24(&mut body, &list);
    message(CERTIFICATE, &body)
}

pub fn parse_certificate(body: &[u8]) -> Result<Vec<Vec<u8>>, CodecError> {
    let mut r = Reader::new(body);
    r.vec8()?;
    let mut list = Reader::new(r.vec24()?);
    let mut out = Vec::new();
    while list.remaining() > 0 {
        out.push(list.vec24()?.to_vec());
        list.vec16()?;
    }
    Ok(out)
}

/// The bytes covered by a CertificateVerify signature.
pub fn certificate_verify_content(server: bool, transcript_hash: &[u8]) -> Vec<u8> {
    let mut out = vec![0x20u8; 64];
    out.extend_from_slice(if server {
        b"TLS 1.3, server CertificateVerify".as_slice()
    } else {
        b"TLS 1.3, client CertificateVerify".as_slice()
    });
    out.push(0);
    out.extend_from_slice(transcript_hash);
    out
}

pub fn certificate_verify(scheme: u16, signature: &[u8]) -> Vec<u8> {
    let mut body = Vec::new();
    put_u16(&mut body, scheme);
    put_vec16(&mut body, signature);
    message(CERTIFICATE_VERIFY, &body)
}

pub fn finished(verify_data: &[u8]) -> Vec<u8> {
    message(FINISHED, verify_data)
}

pub fn finished_verify_data(hash: HashAlg, base_secret: &[u8], transcript_hash: &[u8]) -> Vec<u8> {
    let key = expand_label(hash, base_secret, "finished", &[], hash.len());
    hmac_sign(hash, &key, transcript_hash)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ticket {
    pub lifetime: u32,
    pub age_add: u32,
    pub nonce: Vec<u8>,
    pub ticket: Vec<u8>,
    pub max_early_data: Option<u32>,
}

pub fn new_session_ticket(t: &Ticket) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&t.lifetime.to_be_bytes());
    body.extend_from_slice(&t.age_add.to_be_bytes());
    put_vec8(&mut body, &t.nonce);
    put_vec16(&mut body, &t.ticket);
    let mut ext = Vec::new();
    if let Some(max) = t.max_early_data {
        put_ext(&mut ext, EXT_EARLY_DATA, &max.to_be_bytes());
    }
    put_vec16(&mut body, &ext);
    message(NEW_SESSION_TICKET, &body)
}

pub fn parse_new_session_ticket(body: &[u8]) -> Result<Ticket, CodecError> {
    let mut r = Reader::new(body);
    let lifetime = r.u32()?;
    let age_add = r.u32()?;
    let nonce = r.vec8()?.to_vec();
    let ticket = r.vec16()?.to_vec();
    let ext = parse_extensions(r.vec16()?)?;
    let max_early_data = ext.get(&EXT_EARLY_DATA).and_then(|d| Reader::new(d).u32().ok());
    Ok(Ticket { lifetime, age_add, nonce, ticket, max_early_data })
}

/// The TLS 1.3 secret ladder.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub hash: HashAlg,
    early: Vec<u8>,
    handshake: Option<Vec<u8>>,
    master: Option<Vec<u8>>,
}

impl Schedule {
    pub fn new(hash: HashAlg, psk: Option<&[u8]>) -> Schedule {
        let zeros = vec![0u8; hash.len()];
        let early = hkdf_extract(hash, &zeros, psk.unwrap_or(&zeros));
        Schedule { hash, early, handshake: None, master: None }
    }

    pub fn binder_key(&self) -> Vec<u8> {
        derive_secret(self.hash, &self.early, "res binder", &self.hash.digest(&[]))
    }

    pub fn client_early_traffic(&self, client_hello_hash: &[u8]) -> Vec<u8> {
        derive_secret(self.hash, &self.early, "c e traffic", client_hello_hash)
    }

    /// Client and server handshake traffic secrets.
    pub fn handshake(&mut self, shared: &[u8], hello_hash: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let salt = derive_secret(self.hash, &self.early, "derived", &self.hash.digest(&[]));
        let hs = hkdf_extract(self.hash, &salt, shared);
        let c = derive_secret(self.hash, &hs, "c hs traffic", hello_hash);
        let s = derive_secret(self.hash, &hs, "s hs traffic", hello_hash);
        self.handshake = Some(hs);
        (c, s)
    }

    /// Client and server application traffic secrets.
    pub fn application(&mut self, server_finished_hash: &[u8]) -> Option<(Vec<u8>, Vec<u8>)> {
        let hs = self.handshake.as_ref()?;
        let salt = derive_secret(self.hash, hs, "derived", &self.hash.digest(&[]));
        let master = hkdf_extract(self.hash, &salt, &vec![0u8; self.hash.len()]);
        let c = derive_secret(self.hash, &master, "c ap traffic", server_finished_hash);
        let s = derive_secret(self.hash, &master, "s ap traffic", server_finished_hash);
        self.master = Some(master);
        Some((c, s))
    }

    pub fn resumption_master(&self, client_finished_hash: &[u8]) -> Option<Vec<u8>> {
        Some(derive_secret(self.hash, self.master.as_ref()?, "res master", client_finished_hash))
    }
}

pub fn psk_from_ticket(hash: HashAlg, resumption_master: &[u8], nonce: &[u8]) -> Vec<u8> {
    expand_label(hash, resumption_master, "resumption", nonce, hash.len())
}

/// Reassembles a CRYPTO stream and yields complete handshake messages.
#[derive(Debug, Clone, Default)]
pub struct CryptoStream {
    pending: BTreeMap<u64, Vec<u8>>,
    read: u64,
    buffer: Vec<u8>,
    /// Offset for the next outgoing CRYPTO frame.
    pub send_offset: u64,
}

impl CryptoStream {
    pub fn receive(&mut self, offset: u64, data: &[u8]) {
        self.pending.insert(offset, data.to_vec());
        while let Some((&off, _)) = self.pending.iter().next() {
            if off > self.read {
                break;
            }
            let data = self.pending.remove(&off).expect("present");
            let skip = (self.read - off) as usize;
            if skip < data.len() {
                self.buffer.extend_from_slice(&data[skip..]);
                self.read += (data.len() - skip) as u64;
            }
        }
    }

    /// Complete messages as (type, full message bytes).
    pub fn messages(&mut self) -> Vec<(u8, Vec<u8>)> {
        let mut out = Vec::new();
        loop {
            if self.buffer.len() < 4 {
                break;
            }
            let len = ((self.buffer[1] as usize) << 16) | ((self.buffer[2] as usize) << 8) | self.buffer[3] as usize;
            if self.buffer.len() < 4 + len {
                break;
            }
            let msg: Vec<u8> = self.buffer.drain(..4 + len).collect();
            out.push((msg[0], msg));
        }
        out
    }
}
