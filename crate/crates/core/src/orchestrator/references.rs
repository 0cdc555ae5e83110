//! Reference models shipped with the tool, one per handshake mode.
//!
//! They are generated from the compliant mock behavior over each mode's full
//! dictionary with short waits and AES_128, not learned from any real server.
//! Regenerate with `QUICFSM_UPDATE_REFERENCES=1 cargo test -p quicfsm-core references`.

use crate::alphabet::HandshakeMode;
use crate::automata::{from_dot_with_metadata, to_dot, MealyMachine, ModelMetadata, RenderOptions};
use crate::mockqut::{bundled_alphabet, reference_model};

const FILES: [(HandshakeMode, &str, &str); 5] = [
    (HandshakeMode::Basic, "basic", include_str!("../../references/basic.dot")),
    (HandshakeMode::Retry, "retry", include_str!("../../references/retry.dot")),
    (HandshakeMode::ClientAuth, "clientauth", include_str!("../../references/clientauth.dot")),
    (HandshakeMode::RetryClientAuth, "retryclientauth", include_str!("../../references/retryclientauth.dot")),
    (HandshakeMode::Psk, "psk", include_str!("../../references/psk.dot")),
];

pub const ORIGIN: &str = "mock-derived compliant behavior";

#[derive(Debug, Clone)]
pub struct BundledReference {
    pub name: &'static str,
    pub mode: HandshakeMode,
    pub machine: MealyMachine,
    pub metadata: ModelMetadata,
}

pub fn bundled_references() -> Vec<BundledReference> {
    FILES
        .iter()
        .map(|&(mode, name, text)| {
            let (machine, metadata) = from_dot_with_metadata(text).expect("bundled reference parses");
            BundledReference { name, mode, machine, metadata }
        })
        .collect()
}

/// The DOT text of the bundled reference for `mode`.
pub fn render_reference(mode: HandshakeMode) -> String {
    let m = reference_model(mode, &bundled_alphabet(mode));
    let mut metadata = ModelMetadata {
        mode: Some(mode),
        timeout: Some("short".to_string()),
        target: Some("reference".to_string()),
        ..ModelMetadata::default()
    };
    metadata.extra.insert("origin".to_string(), ORIGIN.to_string());
    to_dot(&m, &RenderOptions::with_metadata(metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::isomorphic;
    use std::path::Path;

    #[test]
    fn bundled_files_match_the_generator() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("references");
        let update = std::env::var_os("QUICFSM_UPDATE_REFERENCES").is_some();
        for (mode, name, text) in FILES {
            let fresh = render_reference(mode);
            if update {
                std::fs::write(dir.join(format!("{name}.dot")), &fresh).unwrap();
                continue;
            }
            assert_eq!(text, fresh, "{name}.dot is stale");
        }
    }

    #[test]
    fn one_reference_per_mode() {
        let refs = bundled_references();
        for mode in HandshakeMode::ALL {
            let r: Vec<_> = refs.iter().filter(|r| r.mode == mode).collect();
            assert_eq!(r.len(), 1, "{mode}");
            assert_eq!(r[0].metadata.mode, Some(mode));
            assert_eq!(r[0].metadata.extra.get("origin").map(String::as_str), Some(ORIGIN));
            assert!(isomorphic(&r[0].machine, &reference_model(mode, &bundled_alphabet(mode))));
        }
    }
}
