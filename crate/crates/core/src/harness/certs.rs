//! Certificates and signing keys for client authentication and the mock server.

use std::fs;
use std::path::Path;

use rcgen::{BasicConstraints, CertificateParams, IsCa, KeyPair};
use ring::rand::SystemRandom;
use ring::signature::{EcdsaKeyPair, ECDSA_P256_SHA256_ASN1_SIGNING};

use super::crypto::CryptoError;

/// TLS SignatureScheme ecdsa_secp256r1_sha256.
pub const ECDSA_P256_SHA256: u16 = 0x0403;

/// A certificate chain with the private key of its leaf.
#[derive(Debug, Clone)]
pub struct Identity {
    pub chain: Vec<Vec<u8>>,
    pkcs8: Vec<u8>,
}

impl Identity {
    /// A self-signed certificate for `name`.
    pub fn self_signed(name: &str) -> Result<Identity, CryptoError> {
        let key = KeyPair::generate().map_err(sig_err)?;
        let cert = CertificateParams::new(vec![name.to_string()]).map_err(sig_err)?.self_signed(&key).map_err(sig_err)?;
        Ok(Identity { chain: vec![cert.der().to_vec()], pkcs8: key.serialize_der() })
    }

    /// A valid-looking certificate issued by a throwaway CA that nobody trusts.
    pub fn untrusted(name: &str) -> Result<Identity, CryptoError> {
        let ca_key = KeyPair::generate().map_err(sig_err)?;
        let mut ca_params = CertificateParams::new(vec!["throwaway ca".to_string()]).map_err(sig_err)?;
        ca_params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        let ca = ca_params.self_signed(&ca_key).map_err(sig_err)?;
        let key = KeyPair::generate().map_err(sig_err)?;
        let cert = CertificateParams::new(vec![name.to_string()])
            .map_err(sig_err)?
            .signed_by(&key, &ca, &ca_key)
            .map_err(sig_err)?;
        Ok(Identity { chain: vec![cert.der().to_vec(), ca.der().to_vec()], pkcs8: key.serialize_der() })
    }

    /// Loads a PEM certificate chain and a PEM PKCS#8 P-256 key.
    pub fn load(cert_path: &Path, key_path: &Path) -> Result<Identity, CryptoError> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| CryptoError::Signature(format!("{}: {e}", p.display())));
        let chain = pem::parse_many(read(cert_path)?)
            .map_err(sig_err)?
            .into_iter()
            .filter(|p| p.tag() == "CERTIFICATE")
            .map(|p| p.into_contents())
            .collect::<Vec<_>>();
        if chain.is_empty() {
            return Err(CryptoError::Signature(format!("{}: no certificate", cert_path.display())));
        }
        let key = KeyPair::from_pem(&read(key_path)?).map_err(sig_err)?;
        let id = Identity { chain, pkcs8: key.serialize_der() };
        id.signer()?;
        Ok(id)
    }

    pub fn save(&self, cert_path: &Path, key_path: &Path) -> std::io::Result<()> {
        let certs: Vec<pem::Pem> = self.chain.iter().map(|c| pem::Pem::new("CERTIFICATE", c.clone())).collect();
        fs::write(cert_path, pem::encode_many(&certs))?;
        fs::write(key_path, pem::encode(&pem::Pem::new("PRIVATE KEY", self.pkcs8.clone())))
    }

    fn signer(&self) -> Result<EcdsaKeyPair, CryptoError> {
        EcdsaKeyPair::from_pkcs8(&ECDSA_P256_SHA256_ASN1_SIGNING, &self.pkcs8, &SystemRandom::new()).map_err(sig_err)
    }

    pub fn sign(&self, message: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let pair = self.signer()?;
        pair.sign(&SystemRandom::new(), message).map(|s| s.as_ref().to_vec()).map_err(sig_err)
    }
}

fn sig_err<E: std::fmt::Display>(e: E) -> CryptoError {
    CryptoError::Signature(e.to_string())
}
