//! Session configuration, read from TOML.
//!
//! ```toml
//! name = "mock"
//! mode = "Basic"
//! timeout_settings = ["short", "long"]
//! ciphers = ["AES_128"]
//! transport = "udp"
//! out_dir = "out"
//!
//! [target]
//! command = ["./server", "--port", "4433"]
//! port = 4433
//! startup_grace_ms = 500
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use super::OrchestratorError;
use crate::alphabet::{CipherSuite, HandshakeMode, InputKind, InputSymbol, TimeoutClass, TimeoutSetting};
use crate::differ::LtsDiffParams;
use crate::harness::CalibrationParams;
use crate::learner::LearnerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    /// QUIC over UDP.
    #[default]
    Udp,
    /// The symbol pipe of the mock server.
    Pipe,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// A server this process starts, watches and restarts.
    Launch { command: Vec<String>, working_dir: Option<PathBuf>, addr: SocketAddr, startup_grace: Duration },
    /// A server running elsewhere. Crash logging is unavailable.
    Remote { addr: SocketAddr },
}

impl TargetSpec {
    pub fn addr(&self) -> SocketAddr {
        match self {
            TargetSpec::Launch { addr, .. } | TargetSpec::Remote { addr } => *addr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceSources {
    /// Bundled references for the mode, used when their alphabet matches.
    pub bundled: bool,
    /// The compliant model generated over exactly the learned alphabet.
    pub generated: bool,
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// Names the target in the artifact layout.
    pub name: String,
    pub target: TargetSpec,
    pub transport: Transport,
    pub mode: HandshakeMode,
    pub timeout_settings: Vec<TimeoutSetting>,
    pub ciphers: Vec<CipherSuite>,
    /// Kinds to test instead of the mode's full dictionary.
    pub alphabet: Option<Vec<InputKind>>,
    /// Skips calibration when set.
    pub short: Option<Duration>,
    pub calibration: CalibrationParams,
    pub learner: LearnerParams,
    pub differ: LtsDiffParams,
    pub references: ReferenceSources,
    pub out_dir: PathBuf,
    /// Client certificate and key for client authentication.
    pub client_identity: Option<(PathBuf, PathBuf)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    command: Option<Vec<String>>,
    working_dir: Option<PathBuf>,
    host: Option<String>,
    port: Option<u16>,
    startup_grace_ms: Option<u64>,
    remote: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTiming {
    short_ms: Option<u64>,
    calibration_trials: Option<usize>,
    calibration_factor: Option<f64>,
    calibration_floor_ms: Option<u64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawLearner {
    extra_states: Option<usize>,
    nondeterminism_retries: Option<usize>,
    max_rounds: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDiffer {
    attenuation: Option<f64>,
    landmark_ratio: Option<f64>,
    fixpoint_tolerance: Option<f64>,
    max_iterations: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReferences {
    #[serde(default = "yes")]
    bundled: bool,
    #[serde(default)]
    generated: bool,
    #[serde(default)]
    paths: Vec<PathBuf>,
}

fn yes() -> bool {
    true
}

impl Default for RawReferences {
    fn default() -> Self {
        RawReferences { bundled: true, generated: false, paths: Vec::new() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    mode: String,
    #[serde(default)]
    timeout_settings: Vec<String>,
    #[serde(default)]
    ciphers: Vec<String>,
    #[serde(default)]
    transport: Transport,
    out_dir: PathBuf,
    alphabet: Option<Vec<String>>,
    client_cert: Option<PathBuf>,
    client_key: Option<PathBuf>,
    target: RawTarget,
    #[serde(default)]
    timing: RawTiming,
    #[serde(default)]
    learner: RawLearner,
    #[serde(default)]
    differ: RawDiffer,
    #[serde(default)]
    references: RawReferences,
}

fn invalid(msg: impl Into<String>) -> OrchestratorError {
    OrchestratorError::InvalidConfig(msg.into())
}

fn resolve_addr(text: &str) -> Result<SocketAddr, OrchestratorError> {
    text.to_socket_addrs()
        .map_err(|e| invalid(format!("address {text:?}: {e}")))?
        .next()
        .ok_or_else(|| invalid(format!("address {text:?} does not resolve")))
}

fn kind_by_name(name: &str) -> Option<InputKind> {
    let bare = name.trim().trim_start_matches('[').trim_end_matches(']');
    InputKind::STANDARD.iter().find(|k| k.name() == bare).cloned()
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<SessionConfig, OrchestratorError> {
        let text = std::fs::read_to_string(path).map_err(|e| OrchestratorError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        SessionConfig::from_toml(&text, base)
    }

    /// Parses and validates; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<SessionConfig, OrchestratorError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let mode: HandshakeMode = raw.mode.parse().map_err(|_| invalid(format!("unknown mode {:?}", raw.mode)))?;
        let timeout_settings = raw
            .timeout_settings
            .iter()
            .map(|s| s.parse::<TimeoutSetting>().map_err(|e| invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let ciphers = if raw.ciphers.is_empty() {
            vec![CipherSuite::Aes128]
        } else {
            raw.ciphers
                .iter()
                .map(|s| s.parse::<CipherSuite>().map_err(|e| invalid(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?
        };
        let alphabet = raw
            .alphabet
            .map(|names| {
                names
                    .iter()
                    .map(|n| kind_by_name(n).ok_or_else(|| invalid(format!("unknown input kind {n:?}"))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;

        let t = raw.target;
        let target = match (t.remote, t.command) {
            (Some(_), Some(_)) => return Err(invalid("target has both a remote address and a launch command")),
            (Some(remote), None) => TargetSpec::Remote { addr: resolve_addr(&remote)? },
            (None, Some(command)) => {
                if command.is_empty() {
                    return Err(invalid("target command is empty"));
                }
                let port = t.port.ok_or_else(|| invalid("a launched target needs a port"))?;
                let host = t.host.unwrap_or_else(|| "127.0.0.1".to_string());
                TargetSpec::Launch {
                    command,
                    working_dir: t.working_dir.map(rel),
                    addr: resolve_addr(&format!("{host}:{port}"))?,
                    startup_grace: Duration::from_millis(t.startup_grace_ms.unwrap_or(500)),
                }
            }
            (None, None) => return Err(invalid("target needs either command or remote")),
        };

        let mut calibration = CalibrationParams::default();
        if let Some(n) = raw.timing.calibration_trials {
            calibration.trials = n;
        }
        if let Some(f) = raw.timing.calibration_factor {
            calibration.factor = f;
        }
        if let Some(ms) = raw.timing.calibration_floor_ms {
            calibration.floor = Duration::from_millis(ms);
        }
        let mut learner = LearnerParams::default();
        if let Some(v) = raw.learner.extra_states {
            learner.extra_states = v;
        }
        if let Some(v) = raw.learner.nondeterminism_retries {
            learner.nondeterminism_retries = v;
        }
        if let Some(v) = raw.learner.max_rounds {
            learner.max_rounds = v;
        }
        let mut differ = LtsDiffParams::default();
        if let Some(v) = raw.differ.attenuation {
            differ.attenuation = v;
        }
        if let Some(v) = raw.differ.landmark_ratio {
            differ.landmark_ratio = v;
        }
        if let Some(v) = raw.differ.fixpoint_tolerance {
            differ.fixpoint_tolerance = v;
        }
        if let Some(v) = raw.differ.max_iterations {
            differ.max_iterations = v;
        }
        let client_identity = match (raw.client_cert, raw.client_key) {
            (Some(c), Some(k)) => Some((rel(c), rel(k))),
            (None, None) => None,
            _ => return Err(invalid("client_cert and client_key go together")),
        };

        let cfg = SessionConfig {
            name: raw.name.unwrap_or_else(|| "target".to_string()),
            target,
            transport: raw.transport,
            mode,
            timeout_settings,
            ciphers,
            alphabet,
            short: raw.timing.short_ms.map(Duration::from_millis),
            calibration,
            learner,
            differ,
            references: ReferenceSources {
                bundled: raw.references.bundled,
                generated: raw.references.generated,
                paths: raw.references.paths.into_iter().map(rel).collect(),
            },
            out_dir: rel(raw.out_dir),
            client_identity,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked before launching anything.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.timeout_settings.is_empty() {
            return Err(invalid("at least one timeout setting is required"));
        }
        if self.ciphers.is_empty() {
            return Err(invalid("at least one cipher suite is required"));
        }
        if self.alphabet.as_ref().is_some_and(|a| a.is_empty()) {
            return Err(invalid("alphabet override is empty"));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid(format!("target name {:?} is not a plain directory name", self.name)));
        }
        if let Some((c, k)) = &self.client_identity {
            for p in [c, k] {
                if !p.is_file() {
                    return Err(invalid(format!("client identity file {} is missing", p.display())));
                }
            }
        }
        std::fs::create_dir_all(&self.out_dir).map_err(|e| OrchestratorError::io(&self.out_dir, e))?;
        let probe = self.out_dir.join(".write-test");
        std::fs::write(&probe, b"").map_err(|e| invalid(format!("output dir {} is not writable: {e}", self.out_dir.display())))?;
        let _ = std::fs::remove_file(probe);
        Ok(())
    }

    /// The input alphabet learned under one timeout setting.
    pub fn alphabet_for(&self, setting: TimeoutSetting) -> Vec<InputSymbol> {
        let kinds: Vec<InputKind> = match &self.alphabet {
            Some(k) => k.clone(),
            None => InputKind::STANDARD.iter().filter(|k| k.applies_to(self.mode)).cloned().collect(),
        };
        expand_kinds(&kinds, setting.classes(), &self.ciphers)
    }
}

/// Parameterizes kinds with timeout classes and ciphers, in dictionary order.
pub fn expand_kinds(kinds: &[InputKind], classes: &[TimeoutClass], ciphers: &[CipherSuite]) -> Vec<InputSymbol> {
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut out = Vec::new();
    for kind in kinds {
        if kind.is_directive() {
            out.push(InputSymbol::directive(kind));
            continue;
        }
        for &t in classes {
            if kind.is_client_hello() {
                out.extend(ciphers.iter().map(|&c| InputSymbol::client_hello(kind.clone(), t, c)));
            } else {
                out.push(InputSymbol::timed(kind.clone(), t));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::default_alphabet;

    fn parse(extra: &str, dir: &Path) -> Result<SessionConfig, OrchestratorError> {
        let text = format!("mode = \"Basic\"\nout_dir = \"out\"\n{extra}");
        SessionConfig::from_toml(&text, dir)
    }

    #[test]
    fn minimal_launch_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse(
            "timeout_settings = [\"short\", \"mixed\"]\n[target]\ncommand = [\"srv\"]\nport = 4433\n",
            dir.path(),
        )
        .unwrap();
        assert_eq!(cfg.timeout_settings, vec![TimeoutSetting::Short, TimeoutSetting::Mixed]);
        assert_eq!(cfg.ciphers, vec![CipherSuite::Aes128]);
        assert_eq!(cfg.out_dir, dir.path().join("out"));
        assert!(cfg.references.bundled && !cfg.references.generated);
        assert!(matches!(cfg.target, TargetSpec::Launch { startup_grace, .. } if startup_grace == Duration::from_millis(500)));
        assert_eq!(cfg.target.addr().port(), 4433);
    }

    #[test]
    fn no_timeout_setting_is_rejected_before_launch() {
        let dir = tempfile::tempdir().unwrap();
        let err = parse("[target]\ncommand = [\"srv\"]\nport = 1\n", dir.path()).unwrap_err();
        assert!(err.to_string().contains("timeout setting"), "{err}");
    }

    #[test]
    fn target_shape_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let ts = "timeout_settings = [\"short\"]\n";
        assert!(parse(&format!("{ts}[target]\n"), dir.path()).is_err());
        assert!(parse(&format!("{ts}[target]\ncommand = [\"srv\"]\n"), dir.path()).is_err());
        assert!(parse(&format!("{ts}[target]\ncommand = [\"srv\"]\nremote = \"127.0.0.1:1\"\n"), dir.path()).is_err());
        assert!(parse(&format!("{ts}[target]\nremote = \"127.0.0.1:1\"\nbogus = 1\n"), dir.path()).is_err());
        let remote = parse(&format!("{ts}[target]\nremote = \"127.0.0.1:7\"\n"), dir.path()).unwrap();
        assert_eq!(remote.target, TargetSpec::Remote { addr: "127.0.0.1:7".parse().unwrap() });
    }

    #[test]
    fn alphabet_override_and_default() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse(
            "timeout_settings = [\"mixed\"]\nalphabet = [\"hndFin\", \"initPing\", \"[IncRetryTkn]\"]\n[target]\nremote = \"127.0.0.1:7\"\n",
            dir.path(),
        )
        .unwrap();
        let labels: Vec<String> = cfg.alphabet_for(TimeoutSetting::Mixed).iter().map(|s| s.to_string()).collect();
        assert_eq!(labels, ["initPing(short)", "initPing(long)", "hndFin(short)", "hndFin(long)", "[IncRetryTkn]"]);
        assert!(parse("timeout_settings = [\"short\"]\nalphabet = [\"nope\"]\n[target]\nremote = \"127.0.0.1:7\"\n", dir.path()).is_err());

        let full = SessionConfig { alphabet: None, ..cfg };
        for setting in TimeoutSetting::ALL {
            let expected = default_alphabet(HandshakeMode::Basic, setting.classes(), &[CipherSuite::Aes128]).unwrap();
            let mut got = full.alphabet_for(setting);
            let mut want = expected.clone();
            got.sort();
            want.sort();
            assert_eq!(got, want, "{setting}");
        }
    }
}
