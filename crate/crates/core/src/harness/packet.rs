//! QUIC v1 packet and frame codec with packet protection.

use thiserror::Error;

use super::crypto::{retry_integrity_tag, CryptoError, PacketKey, QUIC_V1};

pub const MIN_INITIAL_DATAGRAM: usize = 1200;
const PN_LEN: usize = 4;
const TAG_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated input")]
    Truncated,
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("no keys for {0:?} packets")]
    NoKeys(PacketType),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Cursor over a byte slice.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.bytes(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u24(&mut self) -> Result<usize, CodecError> {
        let b = self.bytes(3)?;
        Ok(((b[0] as usize) << 16) | ((b[1] as usize) << 8) | b[2] as usize)
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub fn varint(&mut self) -> Result<u64, CodecError> {
        let first = self.u8()?;
        let len = 1usize << (first >> 6);
        let mut v = (first & 0x3f) as u64;
        for &b in self.bytes(len - 1)? {
            v = (v << 8) | b as u64;
        }
        Ok(v)
    }

    pub fn vec8(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u8()? as usize;
        self.bytes(n)
    }

    pub fn vec16(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u16()? as usize;
        self.bytes(n)
    }

    pub fn vec24(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u24()?;
        self.bytes(n)
    }
}

pub fn put_varint(out: &mut Vec<u8>, v: u64) {
    if v < 1 << 6 {
        out.push(v as u8);
    } else if v < 1 << 14 {
        out.extend_from_slice(&((v as u16) | 0x4000).to_be_bytes());
    } else if v < 1 << 30 {
        out.extend_from_slice(&((v as u32) | 0x8000_0000).to_be_bytes());
    } else {
        out.extend_from_slice(&(v | 0xc000_0000_0000_0000).to_be_bytes());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Padding(usize),
    Ping,
    Ack { largest: u64, delay: u64, first_range: u64 },
    Crypto { offset: u64, data: Vec<u8> },
    NewToken(Vec<u8>),
    NewConnectionId { sequence: u64, retire_prior_to: u64, cid: Vec<u8>, reset_token: [u8; 16] },
    ConnectionClose { application: bool, error_code: u64, frame_type: u64, reason: Vec<u8> },
    HandshakeDone,
    /// A frame type this codec does not parse; the rest of the packet is skipped.
    Unknown(u64),
}

impl Frame {
    pub fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Frame::Padding(n) => out.extend(std::iter::repeat(0u8).take(*n)),
            Frame::Ping => out.push(0x01),
            Frame::Ack { largest, delay, first_range } => {
                out.push(0x02);
                put_varint(out, *largest);
                put_varint(out, *delay);
                put_varint(out, 0);
                put_varint(out, *first_range);
            }
            Frame::Crypto { offset, data } => {
                out.push(0x06);
                put_varint(out, *offset);
                put_varint(out, data.len() as u64);
                out.extend_from_slice(data);
            }
            Frame::NewToken(token) => {
                out.push(0x07);
                put_varint(out, token.len() as u64);
                out.extend_from_slice(token);
            }
            Frame::NewConnectionId { sequence, retire_prior_to, cid, reset_token } => {
                out.push(0x18);
                put_varint(out, *sequence);
                put_varint(out, *retire_prior_to);
                out.push(cid.len() as u8);
                out.extend_from_slice(cid);
                out.extend_from_slice(reset_token);
            }
            Frame::ConnectionClose { application, error_code, frame_type, reason } => {
                out.push(if *application { 0x1d } else { 0x1c });
                put_varint(out, *error_code);
                if !application {
                    put_varint(out, *frame_type);
                }
                put_varint(out, reason.len() as u64);
                out.extend_from_slice(reason);
            }
            Frame::HandshakeDone => out.push(0x1e),
            Frame::Unknown(t) => put_varint(out, *t),
        }
    }

    pub fn is_ack_eliciting(&self) -> bool {
        !matches!(self, Frame::Padding(_) | Frame::Ack { .. } | Frame::ConnectionClose { .. })
    }
}

pub fn encode_frames(frames: &[Frame]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        f.encode(&mut out);
    }
    out
}

pub fn decode_frames(payload: &[u8]) -> Result<Vec<Frame>, CodecError> {
    let mut r = Reader::new(payload);
    let mut frames = Vec::new();
    while r.remaining() > 0 {
        let t = r.varint()?;
        let frame = match t {
            0x00 => {
                let mut n = 1;
                while r.remaining() > 0 && payload[r.position()] == 0 {
                    r.u8()?;
                    n += 1;
                }
                Frame::Padding(n)
            }
            0x01 => Frame::Ping,
            0x02 | 0x03 => {
                let largest = r.varint()?;
                let delay = r.varint()?;
                let count = r.varint()?;
                let first_range = r.varint()?;
                for _ in 0..count {
                    r.varint()?;
                    r.varint()?;
                }
                if t == 0x03 {
                    for _ in 0..3 {
                        r.varint()?;
                    }
                }
                Frame::Ack { largest, delay, first_range }
            }
            0x06 => {
                let offset = r.varint()?;
                let len = r.varint()? as usize;
                Frame::Crypto { offset, data: r.bytes(len)?.to_vec() }
            }
            0x07 => {
                let len = r.varint()? as usize;
                Frame::NewToken(r.bytes(len)?.to_vec())
            }
            0x18 => {
                let sequence = r.varint()?;
                let retire_prior_to = r.varint()?;
                let cid = r.vec8()?.to_vec();
                let mut reset_token = [0u8; 16];
                reset_token.copy_from_slice(r.bytes(16)?);
                Frame::NewConnectionId { sequence, retire_prior_to, cid, reset_token }
            }
            0x1c | 0x1d => {
                let application = t == 0x1d;
                let error_code = r.varint()?;
                let frame_type = if application { 0 } else { r.varint()? };
                let len = r.varint()? as usize;
                Frame::ConnectionClose { application, error_code, frame_type, reason: r.bytes(len)?.to_vec() }
            }
            0x1e => Frame::HandshakeDone,
            other => {
                frames.push(Frame::Unknown(other));
                break;
            }
        };
        frames.push(frame);
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketType {
    Initial,
    ZeroRtt,
    Handshake,
    Retry,
    OneRtt,
}

impl PacketType {
    fn long_type_bits(self) -> u8 {
        match self {
            PacketType::Initial => 0,
            PacketType::ZeroRtt => 1,
            PacketType::Handshake => 2,
            PacketType::Retry => 3,
            PacketType::OneRtt => unreachable!("short header"),
        }
    }

    /// Packet number space index: Initial, Handshake, ApplicationData.
    pub fn space(self) -> usize {
        match self {
            PacketType::Initial | PacketType::Retry => 0,
            PacketType::Handshake => 1,
            PacketType::ZeroRtt | PacketType::OneRtt => 2,
        }
    }
}

/// A packet in plaintext form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub ty: PacketType,
    pub version: u32,
    pub dcid: Vec<u8>,
    pub scid: Vec<u8>,
    /// Initial token, or the Retry token.
    pub token: Vec<u8>,
    pub pn: u64,
    pub frames: Vec<Frame>,
}

impl Packet {
    pub fn new(ty: PacketType, dcid: &[u8], scid: &[u8], pn: u64, frames: Vec<Frame>) -> Packet {
        Packet { ty, version: QUIC_V1, dcid: dcid.to_vec(), scid: scid.to_vec(), token: Vec::new(), pn, frames }
    }
}

/// Protects and serializes `p`, padding its payload so the packet is at least `min_len` bytes.
pub fn encode_packet(p: &Packet, key: &PacketKey, min_len: usize) -> Vec<u8> {
    let mut payload = encode_frames(&p.frames);
    let mut header = Vec::new();
    let pn_bits = (PN_LEN - 1) as u8;
    if p.ty == PacketType::OneRtt {
        header.push(0x40 | pn_bits);
        header.extend_from_slice(&p.dcid);
    } else {
        header.push(0xc0 | (p.ty.long_type_bits() << 4) | pn_bits);
        header.extend_from_slice(&p.version.to_be_bytes());
        header.push(p.dcid.len() as u8);
        header.extend_from_slice(&p.dcid);
        header.push(p.scid.len() as u8);
        header.extend_from_slice(&p.scid);
        if p.ty == PacketType::Initial {
            put_varint(&mut header, p.token.len() as u64);
            header.extend_from_slice(&p.token);
        }
    }
    // two-byte length field for long headers, fixed so padding can be computed up front
    let length_len = if p.ty == PacketType::OneRtt { 0 } else { 2 };
    let fixed = header.len() + length_len + PN_LEN + TAG_LEN;
    if fixed + payload.len() < min_len {
        payload.resize(min_len - fixed, 0);
    }
    // the header protection sample needs 4 bytes of payload past the packet number
    if payload.len() < 4 {
        payload.resize(4, 0);
    }
    if p.ty != PacketType::OneRtt {
        let len = (PN_LEN + payload.len() + TAG_LEN) as u16;
        header.extend_from_slice(&(len | 0x4000).to_be_bytes());
    }
    let pn_offset = header.len();
    header.extend_from_slice(&(p.pn as u32).to_be_bytes());
    key.seal(p.pn, &header, &mut payload);
    let mut packet = header;
    packet.extend_from_slice(&payload);
    let sample_at = pn_offset + 4;
    let mask = key.mask(&packet[sample_at..sample_at + 16]).expect("sample is 16 bytes");
    packet[0] ^= mask[0] & if p.ty == PacketType::OneRtt { 0x1f } else { 0x0f };
    for i in 0..PN_LEN {
        packet[pn_offset + i] ^= mask[1 + i];
    }
    packet
}

/// Serializes a Retry packet with its integrity tag.
/// The four unused low bits of the first byte are set, as in the published example.
pub fn encode_retry(dcid: &[u8], scid: &[u8], token: &[u8], original_dcid: &[u8]) -> Vec<u8> {
    let mut out = vec![0xff];
    out.extend_from_slice(&QUIC_V1.to_be_bytes());
    out.push(dcid.len() as u8);
    out.extend_from_slice(dcid);
    out.push(scid.len() as u8);
    out.extend_from_slice(scid);
    out.extend_from_slice(token);
    let tag = retry_integrity_tag(original_dcid, &out);
    out.extend_from_slice(&tag);
    out
}

/// Full packet number from its truncated encoding.
pub fn decode_pn(largest: Option<u64>, truncated: u64, pn_len: usize) -> u64 {
    let expected = largest.map_or(0, |l| l + 1);
    let win = 1u64 << (pn_len * 8);
    let hwin = win / 2;
    let mask = win - 1;
    let candidate = (expected & !mask) | truncated;
    if candidate + hwin <= expected && candidate < (1u64 << 62) - win {
        candidate + win
    } else if candidate > expected + hwin && candidate >= win {
        candidate - win
    } else {
        candidate
    }
}

/// Result of parsing one packet out of a datagram.
#[derive(Debug)]
pub enum Parsed {
    Packet(Packet),
    /// The packet's keys are unavailable or decryption failed; carries the raw bytes.
    Opaque { ty: PacketType, error: CodecError, raw: Vec<u8> },
}

/// Hooks the datagram parser needs from its owner.
pub trait KeyLookup {
    fn key(&self, ty: PacketType) -> Option<&PacketKey>;
    fn largest_pn(&self, space: usize) -> Option<u64>;
}

/// Splits a datagram into coalesced packets and removes their protection.
pub fn decode_datagram(buf: &[u8], short_dcid_len: usize, keys: &dyn KeyLookup) -> Result<Vec<Parsed>, CodecError> {
    let mut out = Vec::new();
    let mut rest = buf;
    while !rest.is_empty() {
        let (parsed, used) = decode_datagram_step(rest, short_dcid_len, keys)?;
        out.push(parsed);
        rest = &rest[used..];
    }
    Ok(out)
}

pub fn decode_datagram_step(buf: &[u8], short_dcid_len: usize, keys: &dyn KeyLookup) -> Result<(Parsed, usize), CodecError> {
    let mut r = Reader::new(buf);
    let first = r.u8()?;
    if first & 0x80 == 0 {
        let dcid = r.bytes(short_dcid_len)?.to_vec();
        let pn_offset = r.position();
        let parsed = unprotect(buf, PacketType::OneRtt, pn_offset, buf.len(), QUIC_V1, dcid, Vec::new(), Vec::new(), keys);
        return Ok((parsed, buf.len()));
    }
    let version = r.u32()?;
    let dcid = r.vec8()?.to_vec();
    let scid = r.vec8()?.to_vec();
    let ty = match (first >> 4) & 0x03 {
        0 => PacketType::Initial,
        1 => PacketType::ZeroRtt,
        2 => PacketType::Handshake,
        _ => PacketType::Retry,
    };
    if ty == PacketType::Retry {
        let body = r.rest();
        if body.len() < TAG_LEN {
            return Err(CodecError::Malformed("retry packet"));
        }
        let token = body[..body.len() - TAG_LEN].to_vec();
        let p = Packet { ty, version, dcid, scid, token, pn: 0, frames: Vec::new() };
        return Ok((Parsed::Packet(p), buf.len()));
    }
    let token = if ty == PacketType::Initial {
        let n = r.varint()? as usize;
        r.bytes(n)?.to_vec()
    } else {
        Vec::new()
    };
    let length = r.varint()? as usize;
    let pn_offset = r.position();
    let end = pn_offset + length;
    if end > buf.len() {
        return Err(CodecError::Truncated);
    }
    Ok((unprotect(buf, ty, pn_offset, end, version, dcid, scid, token, keys), end))
}

#[allow(clippy::too_many_arguments)]
fn unprotect(
    buf: &[u8],
    ty: PacketType,
    pn_offset: usize,
    end: usize,
    version: u32,
    dcid: Vec<u8>,
    scid: Vec<u8>,
    token: Vec<u8>,
    keys: &dyn KeyLookup,
) -> Parsed {
    let raw = buf[..end].to_vec();
    let opaque = |error: CodecError| Parsed::Opaque { ty, error, raw: raw.clone() };
    let Some(key) = keys.key(ty) else {
        return opaque(CodecError::NoKeys(ty));
    };
    if pn_offset + 4 + 16 > end {
        return opaque(CodecError::Truncated);
    }
    let mask = match key.mask(&buf[pn_offset + 4..pn_offset + 20]) {
        Ok(m) => m,
        Err(e) => return opaque(e.into()),
    };
    let mut packet = buf[..end].to_vec();
    packet[0] ^= mask[0] & if ty == PacketType::OneRtt { 0x1f } else { 0x0f };
    let pn_len = (packet[0] & 0x03) as usize + 1;
    let mut truncated = 0u64;
    for i in 0..pn_len {
        packet[pn_offset + i] ^= mask[1 + i];
        truncated = (truncated << 8) | packet[pn_offset + i] as u64;
    }
    let pn = decode_pn(keys.largest_pn(ty.space()), truncated, pn_len);
    let header_end = pn_offset + pn_len;
    let mut payload = packet[header_end..].to_vec();
    if let Err(e) = key.open(pn, &packet[..header_end], &mut payload) {
        return opaque(e.into());
    }
    match decode_frames(&payload) {
        Ok(frames) => Parsed::Packet(Packet { ty, version, dcid, scid, token, pn, frames }),
        Err(e) => opaque(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::CipherSuite;
    use crate::harness::crypto::{derive_initial_keys, LevelKeys, QUIC_V1};
    use proptest::prelude::*;

    struct Keys(Vec<(PacketType, PacketKey)>);

    impl KeyLookup for Keys {
        fn key(&self, ty: PacketType) -> Option<&PacketKey> {
            self.0.iter().find(|(t, _)| *t == ty).map(|(_, k)| k)
        }
        fn largest_pn(&self, _: usize) -> Option<u64> {
            None
        }
    }

    fn hex(s: &str) -> Vec<u8> {
        (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
    }

    #[test]
    fn varint_examples() {
        for (v, enc) in [(37u64, "25"), (15293, "7bbd"), (494878333, "9d7f3e7d"), (151288809941952652, "c2197c5eff14e88c")] {
            let mut out = Vec::new();
            put_varint(&mut out, v);
            assert_eq!(out, hex(enc));
            assert_eq!(Reader::new(&out).varint().unwrap(), v);
        }
    }

    #[test]
    fn pn_reconstruction_example() {
        assert_eq!(decode_pn(Some(0xa82f30ea), 0x9b32, 2), 0xa82f9b32);
    }

    #[test]
    fn initial_round_trip_and_padding() {
        let dcid = hex("8394c8f03e515708");
        let keys = LevelKeys::initial(&dcid).unwrap();
        let p = Packet::new(PacketType::Initial, &dcid, &[1, 2], 0, vec![Frame::Ping]);
        let bytes = encode_packet(&p, &keys.client, MIN_INITIAL_DATAGRAM);
        assert_eq!(bytes.len(), MIN_INITIAL_DATAGRAM);
        let small = encode_packet(&p, &keys.client, 0);
        assert!(small.len() < MIN_INITIAL_DATAGRAM);
        let lookup = Keys(vec![(PacketType::Initial, keys.client.clone())]);
        let parsed = decode_datagram(&bytes, 8, &lookup).unwrap();
        match &parsed[..] {
            [Parsed::Packet(q)] => {
                assert_eq!(q.frames[0], Frame::Ping);
                assert_eq!(q.dcid, dcid);
                assert_eq!(q.pn, 0);
            }
            other => panic!("{other:?}"),
        }
        // the server's key cannot open a client packet
        let wrong = Keys(vec![(PacketType::Initial, keys.server.clone())]);
        assert!(matches!(decode_datagram(&bytes, 8, &wrong).unwrap()[0], Parsed::Opaque { .. }));
        let none = Keys(vec![]);
        assert!(matches!(
            decode_datagram(&bytes, 8, &none).unwrap()[0],
            Parsed::Opaque { error: CodecError::NoKeys(PacketType::Initial), .. }
        ));
    }

    #[test]
    fn chacha_short_header_published_example() {
        let secret = hex("9ac312a7f877468ebe69422748ad00a15443f18203a07d6060f688f30f21632b");
        let key = PacketKey::from_secret(CipherSuite::ChaCha20, &secret);
        assert_eq!(key.material.key, hex("c6d98ff3441c3fe1b2182094f69caa2ed4b716b65488960a7a984979fb23e1c8"));
        assert_eq!(key.material.iv, hex("e0459b3474bdd0e44a41c144"));
        assert_eq!(key.material.hp, hex("25a282b9e82f06f21f488917a4fc8f1b73573685608597d0efcb076b0ab7a7a4"));
        // protected 1-RTT packet carrying a single PING with packet number 654360564
        let packet = hex("4cfe4189655e5cd55c41f69080575d7999c25a5bfb");
        struct One(PacketKey);
        impl KeyLookup for One {
            fn key(&self, _: PacketType) -> Option<&PacketKey> {
                Some(&self.0)
            }
            fn largest_pn(&self, _: usize) -> Option<u64> {
                Some(654360563)
            }
        }
        let parsed = decode_datagram(&packet, 0, &One(key)).unwrap();
        match &parsed[..] {
            [Parsed::Packet(p)] => {
                assert_eq!(p.pn, 654360564);
                assert_eq!(p.frames, vec![Frame::Ping]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn retry_packet_parses() {
        let odcid = hex("8394c8f03e515708");
        let bytes = encode_retry(&[], &hex("f067a5502a4262b5"), b"token", &odcid);
        assert_eq!(bytes, hex("ff000000010008f067a5502a4262b5746f6b656e04a265ba2eff4d829058fb3f0f2496ba"));
        let parsed = decode_datagram(&bytes, 0, &Keys(vec![])).unwrap();
        match &parsed[..] {
            [Parsed::Packet(p)] => {
                assert_eq!(p.ty, PacketType::Retry);
                assert_eq!(p.token, b"token");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coalesced_packets_split() {
        let dcid = [9u8; 8];
        let initial = LevelKeys::initial(&dcid).unwrap();
        let hs = LevelKeys::from_secrets(CipherSuite::Aes128, &[1; 32], &[2; 32]);
        let mut dgram = encode_packet(
            &Packet::new(PacketType::Initial, &dcid, &[], 3, vec![Frame::Crypto { offset: 0, data: vec![2, 0, 0, 0] }]),
            &initial.server,
            0,
        );
        dgram.extend(encode_packet(&Packet::new(PacketType::Handshake, &dcid, &[], 0, vec![Frame::HandshakeDone]), &hs.server, 0));
        let keys = Keys(vec![(PacketType::Initial, initial.server.clone()), (PacketType::Handshake, hs.server.clone())]);
        let parsed = decode_datagram(&dgram, 8, &keys).unwrap();
        assert_eq!(parsed.len(), 2);
        assert!(parsed.iter().all(|p| matches!(p, Parsed::Packet(_))));
        let _ = derive_initial_keys(&dcid, QUIC_V1).unwrap();
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        prop_oneof![
            Just(Frame::Ping),
            Just(Frame::HandshakeDone),
            (0u64..1 << 30, 0u64..1000, 0u64..100).prop_map(|(largest, delay, r)| Frame::Ack {
                largest,
                delay,
                first_range: r.min(largest)
            }),
            (0u64..1 << 20, proptest::collection::vec(any::<u8>(), 0..64))
                .prop_map(|(offset, data)| Frame::Crypto { offset, data }),
            proptest::collection::vec(any::<u8>(), 0..32).prop_map(Frame::NewToken),
            (0u64..10, proptest::collection::vec(any::<u8>(), 1..20)).prop_map(|(sequence, cid)| {
                Frame::NewConnectionId { sequence, retire_prior_to: 0, cid, reset_token: [7; 16] }
            }),
            (any::<bool>(), 0u64..0x200, proptest::collection::vec(any::<u8>(), 0..16)).prop_map(
                |(application, error_code, reason)| Frame::ConnectionClose {
                    application,
                    error_code,
                    frame_type: 0,
                    reason
                }
            ),
        ]
    }

    proptest! {
        #[test]
        fn frames_round_trip(frames in proptest::collection::vec(arb_frame(), 0..6)) {
            prop_assert_eq!(decode_frames(&encode_frames(&frames)).unwrap(), frames);
        }

        #[test]
        fn protection_round_trip(pn in 0u64..1 << 31, suite in 0usize..3, frames in proptest::collection::vec(arb_frame(), 1..4)) {
            let suite = CipherSuite::ALL[suite];
            let key = PacketKey::from_secret(suite, &[5u8; 48][..crate::harness::crypto::HashAlg::for_suite(suite).len()]);
            let p = Packet::new(PacketType::Handshake, &[1; 8], &[2; 4], pn, frames);
            let bytes = encode_packet(&p, &key, 0);
            struct K(PacketKey, u64);
            impl KeyLookup for K {
                fn key(&self, _: PacketType) -> Option<&PacketKey> { Some(&self.0) }
                fn largest_pn(&self, _: usize) -> Option<u64> { self.1.checked_sub(1) }
            }
            let parsed = decode_datagram(&bytes, 8, &K(key, pn)).unwrap();
            match &parsed[..] {
                [Parsed::Packet(q)] => {
                    prop_assert_eq!(q.pn, pn);
                    // trailing padding from the minimum sample length may follow
                    prop_assert_eq!(&q.frames[..p.frames.len()], &p.frames[..]);
                }
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }
}
