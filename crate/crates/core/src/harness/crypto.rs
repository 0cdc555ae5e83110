//! QUIC packet protection and the TLS 1.3 key schedule primitives it needs.

use ring::aead::{self, quic, LessSafeKey, Nonce, UnboundKey};
use ring::{digest, hkdf, hmac};
use thiserror::Error;

use crate::alphabet::CipherSuite;

pub const QUIC_V1: u32 = 0x0000_0001;
pub const INITIAL_SALT_V1: [u8; 20] = [
    0x38, 0x76, 0x2c, 0xf7, 0xf5, 0x59, 0x34, 0xb3, 0x4d, 0x17, 0x9a, 0xe6, 0xa4, 0xc8, 0x0c, 0xad, 0xcc, 0xbb, 0x7f,
    0x0a,
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unsupported QUIC version {0:#010x}")]
    UnsupportedVersion(u32),
    #[error("connection id longer than 20 bytes")]
    ConnectionIdTooLong,
    #[error("packet decryption failed")]
    Decrypt,
    #[error("packet too short for header protection sample")]
    ShortPacket,
    #[error("key agreement failed")]
    KeyAgreement,
    #[error("signature failed: {0}")]
    Signature(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HashAlg {
    Sha256,
    Sha384,
}

impl HashAlg {
    pub fn for_suite(suite: CipherSuite) -> HashAlg {
        match suite {
            CipherSuite::Aes256 => HashAlg::Sha384,
            _ => HashAlg::Sha256,
        }
    }

    pub fn len(self) -> usize {
        match self {
            HashAlg::Sha256 => 32,
            HashAlg::Sha384 => 48,
        }
    }

    fn hkdf(self) -> hkdf::Algorithm {
        match self {
            HashAlg::Sha256 => hkdf::HKDF_SHA256,
            HashAlg::Sha384 => hkdf::HKDF_SHA384,
        }
    }

    fn hmac(self) -> hmac::Algorithm {
        match self {
            HashAlg::Sha256 => hmac::HMAC_SHA256,
            HashAlg::Sha384 => hmac::HMAC_SHA384,
        }
    }

    pub fn digest(self, data: &[u8]) -> Vec<u8> {
        let alg = match self {
            HashAlg::Sha256 => &digest::SHA256,
            HashAlg::Sha384 => &digest::SHA384,
        };
        digest::digest(alg, data).as_ref().to_vec()
    }
}

struct Len(usize);

impl hkdf::KeyType for Len {
    fn len(&self) -> usize {
        self.0
    }
}

pub fn hkdf_extract(hash: HashAlg, salt: &[u8], ikm: &[u8]) -> Vec<u8> {
    hmac_sign(hash, salt, ikm)
}

pub fn hmac_sign(hash: HashAlg, key: &[u8], data: &[u8]) -> Vec<u8> {
    hmac::sign(&hmac::Key::new(hash.hmac(), key), data).as_ref().to_vec()
}

/// HKDF-Expand-Label from TLS 1.3, with the "tls13 " prefix.
pub fn expand_label(hash: HashAlg, secret: &[u8], label: &str, context: &[u8], len: usize) -> Vec<u8> {
    let full = format!("tls13 {label}");
    let mut info = Vec::with_capacity(4 + full.len() + context.len());
    info.extend_from_slice(&(len as u16).to_be_bytes());
    info.push(full.len() as u8);
    info.extend_from_slice(full.as_bytes());
    info.push(context.len() as u8);
    info.extend_from_slice(context);
    let prk = hkdf::Prk::new_less_safe(hash.hkdf(), secret);
    let mut out = vec![0u8; len];
    prk.expand(&[&info], Len(len))
        .and_then(|okm| okm.fill(&mut out))
        .expect("output length is within the HKDF limit");
    out
}

/// Derive-Secret(secret, label, transcript hash).
pub fn derive_secret(hash: HashAlg, secret: &[u8], label: &str, transcript_hash: &[u8]) -> Vec<u8> {
    expand_label(hash, secret, label, transcript_hash, hash.len())
}

/// Raw key material for one direction at one encryption level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    pub secret: Vec<u8>,
    pub key: Vec<u8>,
    pub iv: Vec<u8>,
    pub hp: Vec<u8>,
}

impl KeyMaterial {
    pub fn from_secret(suite: CipherSuite, secret: &[u8]) -> KeyMaterial {
        let hash = HashAlg::for_suite(suite);
        let key_len = key_len(suite);
        KeyMaterial {
            secret: secret.to_vec(),
            key: expand_label(hash, secret, "quic key", &[], key_len),
            iv: expand_label(hash, secret, "quic iv", &[], 12),
            hp: expand_label(hash, secret, "quic hp", &[], key_len),
        }
    }
}

fn key_len(suite: CipherSuite) -> usize {
    match suite {
        CipherSuite::Aes128 => 16,
        CipherSuite::Aes256 | CipherSuite::ChaCha20 => 32,
    }
}

/// The Initial secrets and keys for a client-chosen destination connection id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialSecrets {
    pub initial_secret: Vec<u8>,
    pub client: KeyMaterial,
    pub server: KeyMaterial,
}

pub fn derive_initial_keys(dcid: &[u8], version: u32) -> Result<InitialSecrets, CryptoError> {
    if version != QUIC_V1 {
        return Err(CryptoError::UnsupportedVersion(version));
    }
    if dcid.len() > 20 {
        return Err(CryptoError::ConnectionIdTooLong);
    }
    let hash = HashAlg::Sha256;
    let initial_secret = hkdf_extract(hash, &INITIAL_SALT_V1, dcid);
    let client = expand_label(hash, &initial_secret, "client in", &[], 32);
    let server = expand_label(hash, &initial_secret, "server in", &[], 32);
    Ok(InitialSecrets {
        initial_secret,
        client: KeyMaterial::from_secret(CipherSuite::Aes128, &client),
        server: KeyMaterial::from_secret(CipherSuite::Aes128, &server),
    })
}

/// Ready-to-use AEAD and header protection for one direction.
pub struct PacketKey {
    pub suite: CipherSuite,
    pub material: KeyMaterial,
    aead: LessSafeKey,
    hp: quic::HeaderProtectionKey,
}

impl std::fmt::Debug for PacketKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PacketKey").field("suite", &self.suite).finish_non_exhaustive()
    }
}

impl Clone for PacketKey {
    fn clone(&self) -> Self {
        PacketKey::new(self.suite, self.material.clone())
    }
}

impl PacketKey {
    pub fn new(suite: CipherSuite, material: KeyMaterial) -> PacketKey {
        let (aead_alg, hp_alg) = match suite {
            CipherSuite::Aes128 => (&aead::AES_128_GCM, &quic::AES_128),
            CipherSuite::Aes256 => (&aead::AES_256_GCM, &quic::AES_256),
            CipherSuite::ChaCha20 => (&aead::CHACHA20_POLY1305, &quic::CHACHA20),
        };
        let aead = LessSafeKey::new(UnboundKey::new(aead_alg, &material.key).expect("key length matches suite"));
        let hp = quic::HeaderProtectionKey::new(hp_alg, &material.hp).expect("hp length matches suite");
        PacketKey { suite, material, aead, hp }
    }

    pub fn from_secret(suite: CipherSuite, secret: &[u8]) -> PacketKey {
        PacketKey::new(suite, KeyMaterial::from_secret(suite, secret))
    }

    fn nonce(&self, pn: u64) -> Nonce {
        let mut n = [0u8; 12];
        n.copy_from_slice(&self.material.iv);
        for (i, b) in pn.to_be_bytes().iter().enumerate() {
            n[4 + i] ^= b;
        }
        Nonce::assume_unique_for_key(n)
    }

    /// Encrypts `payload` in place, appending the tag.
    pub fn seal(&self, pn: u64, header: &[u8], payload: &mut Vec<u8>) {
        self.aead
            .seal_in_place_append_tag(self.nonce(pn), aead::Aad::from(header), payload)
            .expect("payload fits the AEAD limit");
    }

    pub fn open(&self, pn: u64, header: &[u8], payload: &mut Vec<u8>) -> Result<(), CryptoError> {
        let len = self
            .aead
            .open_in_place(self.nonce(pn), aead::Aad::from(header), payload)
            .map_err(|_| CryptoError::Decrypt)?
            .len();
        payload.truncate(len);
        Ok(())
    }

    pub fn mask(&self, sample: &[u8]) -> Result<[u8; 5], CryptoError> {
        self.hp.new_mask(sample).map_err(|_| CryptoError::ShortPacket)
    }
}

/// Client and server keys of one encryption level.
#[derive(Debug, Clone)]
pub struct LevelKeys {
    pub client: PacketKey,
    pub server: PacketKey,
}

impl LevelKeys {
    pub fn initial(dcid: &[u8]) -> Result<LevelKeys, CryptoError> {
        let s = derive_initial_keys(dcid, QUIC_V1)?;
        Ok(LevelKeys {
            client: PacketKey::new(CipherSuite::Aes128, s.client),
            server: PacketKey::new(CipherSuite::Aes128, s.server),
        })
    }

    pub fn from_secrets(suite: CipherSuite, client: &[u8], server: &[u8]) -> LevelKeys {
        LevelKeys { client: PacketKey::from_secret(suite, client), server: PacketKey::from_secret(suite, server) }
    }

    pub fn sending(&self, is_client: bool) -> &PacketKey {
        if is_client {
            &self.client
        } else {
            &self.server
        }
    }

    pub fn receiving(&self, is_client: bool) -> &PacketKey {
        self.sending(!is_client)
    }
}

/// Token for the Retry integrity tag of RFC 9001.
pub fn retry_integrity_tag(original_dcid: &[u8], retry_without_tag: &[u8]) -> [u8; 16] {
    const KEY: [u8; 16] =
        [0xbe, 0x0c, 0x69, 0x0b, 0x9f, 0x66, 0x57, 0x5a, 0x1d, 0x76, 0x6b, 0x54, 0xe3, 0x68, 0xc8, 0x4e];
    const NONCE: [u8; 12] = [0x46, 0x15, 0x99, 0xd3, 0x5d, 0x63, 0x2b, 0xf2, 0x23, 0x98, 0x25, 0xbb];
    let key = LessSafeKey::new(UnboundKey::new(&aead::AES_128_GCM, &KEY).expect("fixed key"));
    let mut aad = Vec::with_capacity(1 + original_dcid.len() + retry_without_tag.len());
    aad.push(original_dcid.len() as u8);
    aad.extend_from_slice(original_dcid);
    aad.extend_from_slice(retry_without_tag);
    let tag = key
        .seal_in_place_separate_tag(Nonce::assume_unique_for_key(NONCE), aead::Aad::from(aad), &mut [])
        .expect("empty payload");
    let mut out = [0u8; 16];
    out.copy_from_slice(tag.as_ref());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(s: &str) -> Vec<u8> {
        (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
    }

    #[test]
    fn same_dcid_same_keys() {
        let a = derive_initial_keys(&[1, 2, 3], QUIC_V1).unwrap();
        let b = derive_initial_keys(&[1, 2, 3], QUIC_V1).unwrap();
        assert_eq!(a, b);
        let c = derive_initial_keys(&[1, 2, 4], QUIC_V1).unwrap();
        assert_ne!(a.client.key, c.client.key);
    }

    #[test]
    fn version_and_length_are_checked() {
        assert_eq!(derive_initial_keys(&[0; 8], 2), Err(CryptoError::UnsupportedVersion(2)));
        assert_eq!(derive_initial_keys(&[0; 21], QUIC_V1), Err(CryptoError::ConnectionIdTooLong));
    }

    #[test]
    fn seal_open_round_trip_for_every_suite() {
        for suite in CipherSuite::ALL {
            let k = PacketKey::from_secret(suite, &[7u8; 48][..HashAlg::for_suite(suite).len()]);
            let header = b"header bytes";
            let mut payload = b"some frames".to_vec();
            k.seal(42, header, &mut payload);
            assert_ne!(&payload[..11], b"some frames");
            k.open(42, header, &mut payload).unwrap();
            assert_eq!(payload, b"some frames");
            let mut bad = payload.clone();
            k.seal(42, header, &mut bad);
            assert_eq!(k.open(43, header, &mut bad), Err(CryptoError::Decrypt));
        }
    }

    #[test]
    fn expand_label_matches_hmac_construction() {
        // HKDF-Expand for one block is HMAC(prk, info || 0x01).
        let secret = [3u8; 32];
        let mut info = vec![0, 16, 14];
        info.extend_from_slice(b"tls13 quic key");
        info.push(0);
        info.push(1);
        let block = hmac_sign(HashAlg::Sha256, &secret, &info);
        assert_eq!(expand_label(HashAlg::Sha256, &secret, "quic key", &[], 16), block[..16]);
    }

    #[test]
    fn retry_tag_matches_published_example() {
        let odcid = hex("8394c8f03e515708");
        let retry = hex("ff000000010008f067a5502a4262b5746f6b656e");
        assert_eq!(retry_integrity_tag(&odcid, &retry).to_vec(), hex("04a265ba2eff4d829058fb3f0f2496ba"));
    }
}
