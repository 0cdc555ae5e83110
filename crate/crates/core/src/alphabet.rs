//! Symbolic vocabulary shared by the learner, the harness and the mock server.
//!
//! Every symbol has a compact acronym form that is used in DOT labels,
//! witness files and on the command line:
//!
//! ```text
//! NAME | NAME(timeout) | NAME(timeout,cipher) | [NAME]
//! ```
//!
//! Output symbols never carry parameters. Status outputs that reveal the
//! hidden connection state are written in angle brackets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymbolError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("bad parameter in `{symbol}`: {reason}")]
    BadParameter { symbol: String, reason: String },
    #[error("empty parameter set: {0}")]
    EmptyParameterSet(&'static str),
    #[error("registry: {0}")]
    Registry(String),
}

fn bad(symbol: &str, reason: impl Into<String>) -> SymbolError {
    SymbolError::BadParameter {
        symbol: symbol.to_string(),
        reason: reason.into(),
    }
}

/// Which timeout classes a learning run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeoutSetting {
    Short,
    Long,
    Mixed,
}

impl TimeoutSetting {
    pub const ALL: [TimeoutSetting; 3] = [TimeoutSetting::Short, TimeoutSetting::Long, TimeoutSetting::Mixed];

    pub fn classes(self) -> &'static [TimeoutClass] {
        match self {
            TimeoutSetting::Short => &[TimeoutClass::Short],
            TimeoutSetting::Long => &[TimeoutClass::Long],
            TimeoutSetting::Mixed => &TimeoutClass::ALL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeoutSetting::Short => "short",
            TimeoutSetting::Long => "long",
            TimeoutSetting::Mixed => "mixed",
        }
    }
}

impl fmt::Display for TimeoutSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimeoutSetting {
    type Err = SymbolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short" => Ok(TimeoutSetting::Short),
            "long" => Ok(TimeoutSetting::Long),
            "mixed" => Ok(TimeoutSetting::Mixed),
            other => Err(bad(other, "timeout setting must be short, long or mixed")),
        }
    }
}

/// How long the harness waits for responses after sending an input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeoutClass {
    Short,
    Long,
}

impl TimeoutClass {
    pub const ALL: [TimeoutClass; 2] = [TimeoutClass::Short, TimeoutClass::Long];

    /// Ratio between the long and the short wait.
    pub const LONG_FACTOR: u32 = 10;

    pub fn as_str(self) -> &'static str {
        match self {
            TimeoutClass::Short => "short",
            TimeoutClass::Long => "long",
        }
    }
}

impl fmt::Display for TimeoutClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimeoutClass {
    type Err = SymbolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short" => Ok(TimeoutClass::Short),
            "long" => Ok(TimeoutClass::Long),
            other => Err(bad(other, "timeout must be `short` or `long`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CipherSuite {
    Aes128,
    Aes256,
    ChaCha20,
}

impl CipherSuite {
    pub const ALL: [CipherSuite; 3] = [CipherSuite::Aes128, CipherSuite::Aes256, CipherSuite::ChaCha20];

    pub fn as_str(self) -> &'static str {
        match self {
            CipherSuite::Aes128 => "AES_128",
            CipherSuite::Aes256 => "AES_256",
            CipherSuite::ChaCha20 => "ChaCha20",
        }
    }

    /// TLS 1.3 cipher suite code point.
    pub fn tls_id(self) -> u16 {
        match self {
            CipherSuite::Aes128 => 0x1301,
            CipherSuite::Aes256 => 0x1302,
            CipherSuite::ChaCha20 => 0x1303,
        }
    }

    pub fn from_tls_id(id: u16) -> Option<Self> {
        match id {
            0x1301 => Some(CipherSuite::Aes128),
            0x1302 => Some(CipherSuite::Aes256),
            0x1303 => Some(CipherSuite::ChaCha20),
            _ => None,
        }
    }
}

impl fmt::Display for CipherSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CipherSuite {
    type Err = SymbolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AES_128" => Ok(CipherSuite::Aes128),
            "AES_256" => Ok(CipherSuite::Aes256),
            "ChaCha20" => Ok(CipherSuite::ChaCha20),
            other => Err(bad(other, "cipher must be AES_128, AES_256 or ChaCha20")),
        }
    }
}

/// The five handshake security configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HandshakeMode {
    Basic,
    Retry,
    ClientAuth,
    RetryClientAuth,
    Psk,
}

impl HandshakeMode {
    pub const ALL: [HandshakeMode; 5] = [
        HandshakeMode::Basic,
        HandshakeMode::Retry,
        HandshakeMode::ClientAuth,
        HandshakeMode::RetryClientAuth,
        HandshakeMode::Psk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HandshakeMode::Basic => "Basic",
            HandshakeMode::Retry => "Retry",
            HandshakeMode::ClientAuth => "ClientAuth",
            HandshakeMode::RetryClientAuth => "RetryClientAuth",
            HandshakeMode::Psk => "PSK",
        }
    }

    pub fn uses_retry(self) -> bool {
        matches!(self, HandshakeMode::Retry | HandshakeMode::RetryClientAuth)
    }

    pub fn uses_client_auth(self) -> bool {
        matches!(self, HandshakeMode::ClientAuth | HandshakeMode::RetryClientAuth)
    }
}

impl fmt::Display for HandshakeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HandshakeMode {
    type Err = SymbolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HandshakeMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SymbolError::UnknownSymbol(s.to_string()))
    }
}

/// Packet protection level a message is sent at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EncryptionLevel {
    Initial,
    ZeroRtt,
    Handshake,
    OneRtt,
}

impl EncryptionLevel {
    pub const ALL: [EncryptionLevel; 4] = [
        EncryptionLevel::Initial,
        EncryptionLevel::ZeroRtt,
        EncryptionLevel::Handshake,
        EncryptionLevel::OneRtt,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EncryptionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncryptionLevel::Initial => "Initial",
            EncryptionLevel::ZeroRtt => "0-RTT",
            EncryptionLevel::Handshake => "Handshake",
            EncryptionLevel::OneRtt => "1-RTT",
        })
    }
}

macro_rules! input_kinds {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Input message kinds, in dictionary order.
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum InputKind {
            $($variant,)*
            /// A user-registered symbol outside the standard dictionary.
            Extension { name: Arc<str>, directive: bool },
        }

        impl InputKind {
            pub const STANDARD: &'static [InputKind] = &[$(InputKind::$variant,)*];

            pub fn name(&self) -> &str {
                match self {
                    $(InputKind::$variant => $name,)*
                    InputKind::Extension { name, .. } => name,
                }
            }

            fn standard_by_name(name: &str) -> Option<InputKind> {
                match name {
                    $($name => Some(InputKind::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

input_kinds! {
    InitPing => "initPing",
    InitConClose => "initConClose",
    InitNoFr => "initNoFr",
    InitUnxpFrType => "initUnxpFrType",
    InitCltHelloVldAck => "initCltHello-vldACK",
    InitCltHelloInvldAck => "initCltHello-invldACK",
    ZeroRttPing => "0rttPing",
    ZeroRttConClose => "0rttConClose",
    ZeroRttNoFr => "0rttNoFr",
    ZeroRttUnxpFrType => "0rttUnxpFrType",
    ZeroRttFin => "0rttFin",
    ZeroRttAck => "0rttACK",
    HndPing => "hndPing",
    HndConClose => "hndConClose",
    HndNoFr => "hndNoFr",
    HndUnxpFrType => "hndUnxpFrType",
    HndEmpCert => "hndEmpCert",
    HndInvldCert => "hndInvldCert",
    HndCert => "hndCert",
    HndCertVer => "hndCertVer",
    HndFin => "hndFin",
    VldNewConId => "VldNewConID",
    InvldNewConId => "InvldNewConID",
    IncRetryTkn => "IncRetryTkn",
    RmPadFrmInitPkts => "RmPadFrmInitPkts",
    ChgDestConIdOri => "ChgDestConID-Ori",
}

impl InputKind {
    /// Bracketed harness configuration directives.
    pub fn is_directive(&self) -> bool {
        matches!(
            self,
            InputKind::IncRetryTkn
                | InputKind::RmPadFrmInitPkts
                | InputKind::ChgDestConIdOri
                | InputKind::Extension { directive: true, .. }
        )
    }

    pub fn is_client_hello(&self) -> bool {
        matches!(self, InputKind::InitCltHelloVldAck | InputKind::InitCltHelloInvldAck)
    }

    /// Inputs that carry a CONNECTION_CLOSE frame and are followed by a status probe.
    pub fn is_connection_close(&self) -> bool {
        matches!(
            self,
            InputKind::InitConClose | InputKind::HndConClose | InputKind::ZeroRttConClose
        )
    }

    pub fn is_standard(&self) -> bool {
        !matches!(self, InputKind::Extension { .. })
    }

    /// Encryption level the input is sent at; `None` for directives and extensions.
    pub fn level(&self) -> Option<EncryptionLevel> {
        use InputKind::*;
        Some(match self {
            InitPing | InitConClose | InitNoFr | InitUnxpFrType | InitCltHelloVldAck
            | InitCltHelloInvldAck => EncryptionLevel::Initial,
            ZeroRttPing | ZeroRttConClose | ZeroRttNoFr | ZeroRttUnxpFrType | ZeroRttFin
            | ZeroRttAck => EncryptionLevel::ZeroRtt,
            HndPing | HndConClose | HndNoFr | HndUnxpFrType | HndEmpCert | HndInvldCert
            | HndCert | HndCertVer | HndFin => EncryptionLevel::Handshake,
            VldNewConId | InvldNewConId => EncryptionLevel::OneRtt,
            IncRetryTkn | RmPadFrmInitPkts | ChgDestConIdOri | Extension { .. } => return None,
        })
    }

    /// Whether the kind is meaningful in the given handshake mode.
    pub fn applies_to(&self, mode: HandshakeMode) -> bool {
        use InputKind::*;
        match self {
            IncRetryTkn => mode.uses_retry(),
            HndEmpCert | HndInvldCert | HndCert | HndCertVer => mode.uses_client_auth(),
            ZeroRttPing | ZeroRttConClose | ZeroRttNoFr | ZeroRttUnxpFrType | ZeroRttFin
            | ZeroRttAck => mode == HandshakeMode::Psk,
            Extension { .. } => false,
            _ => true,
        }
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One abstract input: a message kind plus its wait class and cipher.
///
/// Learned alphabets always carry a timeout on non-directive kinds. The
/// optimizer produces timeout-erased labels (`timeout == None` on a timed
/// kind) when it merges edges that differ only in their wait class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputSymbol {
    pub kind: InputKind,
    pub timeout: Option<TimeoutClass>,
    pub cipher: Option<CipherSuite>,
}

impl InputSymbol {
    /// A plain timed input. Panics if `kind` is a directive or a ClientHello.
    pub fn timed(kind: InputKind, timeout: TimeoutClass) -> Self {
        assert!(
            !kind.is_directive() && !kind.is_client_hello(),
            "{kind} cannot be built with `timed`"
        );
        InputSymbol { kind, timeout: Some(timeout), cipher: None }
    }

    pub fn client_hello(kind: InputKind, timeout: TimeoutClass, cipher: CipherSuite) -> Self {
        assert!(kind.is_client_hello(), "{kind} is not a ClientHello kind");
        InputSymbol { kind, timeout: Some(timeout), cipher: Some(cipher) }
    }

    pub fn directive(kind: InputKind) -> Self {
        assert!(kind.is_directive(), "{kind} is not a directive");
        InputSymbol { kind, timeout: None, cipher: None }
    }

    /// The same symbol with its timeout removed (optimizer merge label).
    pub fn timeout_erased(&self) -> Self {
        InputSymbol { kind: self.kind.clone(), timeout: None, cipher: self.cipher }
    }

    pub fn is_directive(&self) -> bool {
        self.kind.is_directive()
    }

    /// True for timed kinds whose timeout was erased by merging.
    pub fn is_merged(&self) -> bool {
        !self.is_directive() && self.timeout.is_none()
    }

    pub fn is_standard(&self) -> bool {
        self.kind.is_standard()
    }
}

impl fmt::Display for InputSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.is_directive() {
            return write!(f, "[{}]", self.kind);
        }
        f.write_str(self.kind.name())?;
        match (self.timeout, self.cipher) {
            (Some(t), Some(c)) => write!(f, "({t},{c})"),
            (Some(t), None) => write!(f, "({t})"),
            (None, Some(c)) => write!(f, "({c})"),
            (None, None) => Ok(()),
        }
    }
}

macro_rules! output_symbols {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Observable server responses and framework outputs.
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum OutputSymbol {
            $($variant,)*
            Extension(Arc<str>),
        }

        impl OutputSymbol {
            pub const STANDARD: &'static [OutputSymbol] = &[$(OutputSymbol::$variant,)*];

            pub fn name(&self) -> &str {
                match self {
                    $(OutputSymbol::$variant => $name,)*
                    OutputSymbol::Extension(name) => name,
                }
            }

            fn standard_by_name(name: &str) -> Option<OutputSymbol> {
                match name {
                    $($name => Some(OutputSymbol::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

output_symbols! {
    Retry => "retry",
    InitSvrHello => "initSvrHello",
    HndEncExt => "hndEncExt",
    HndCertReq => "hndCertReq",
    HndCert => "hndCert",
    HndCertVer => "hndCertVer",
    HndFin => "hndFin",
    HndshkDone => "HndshkDone",
    NewTkn => "NewTkn",
    VldNewConId => "VldNewConID",
    PingAck => "PingACK",
    ConClose => "ConClose",
    ConAct => "<ConAct>",
    ConClosed => "<ConClosed>",
    NoResponse => "NoResponse",
    HarnessError => "HarnessError",
}

impl OutputSymbol {
    /// Hidden-status outputs produced by the liveness probe.
    pub fn is_status(&self) -> bool {
        matches!(self, OutputSymbol::ConAct | OutputSymbol::ConClosed)
    }

    pub fn is_standard(&self) -> bool {
        !matches!(self, OutputSymbol::Extension(_))
    }
}

impl fmt::Display for OutputSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    Input(InputSymbol),
    Output(OutputSymbol),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Input(s) => s.fmt(f),
            Symbol::Output(s) => s.fmt(f),
        }
    }
}

pub fn format_symbol(sym: &Symbol) -> String {
    sym.to_string()
}

/// Parses any symbol from the standard dictionary.
///
/// A bare name that is both an input and an output (`hndFin`) is read as the
/// output; a bare input-only name is missing its timeout.
pub fn parse_symbol(text: &str) -> Result<Symbol, SymbolError> {
    SymbolRegistry::standard().parse_symbol(text)
}

pub fn parse_input(text: &str) -> Result<InputSymbol, SymbolError> {
    SymbolRegistry::standard().parse_input(text)
}

pub fn parse_output(text: &str) -> Result<OutputSymbol, SymbolError> {
    SymbolRegistry::standard().parse_output(text)
}

/// Like [`parse_input`] but also accepts timeout-erased labels written by the optimizer.
pub fn parse_input_label(text: &str) -> Result<InputSymbol, SymbolError> {
    SymbolRegistry::standard().parse_input_label(text)
}

impl FromStr for InputSymbol {
    type Err = SymbolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_input(s)
    }
}

impl FromStr for OutputSymbol {
    type Err = SymbolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_output(s)
    }
}

impl Serialize for InputSymbol {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InputSymbol {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_input_label(&text).map_err(serde::de::Error::custom)
    }
}

impl Serialize for OutputSymbol {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OutputSymbol {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_output(&text).map_err(serde::de::Error::custom)
    }
}

/// Splits `NAME(a,b)` into the name and its parameters.
fn split_params(text: &str) -> Result<(&str, Vec<&str>), SymbolError> {
    match text.find('(') {
        None => Ok((text, Vec::new())),
        Some(open) => {
            let rest = &text[open + 1..];
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| bad(text, "unterminated parameter list"))?;
            if inner.contains('(') || inner.contains(')') {
                return Err(bad(text, "nested parentheses"));
            }
            let params: Vec<&str> = inner.split(',').map(str::trim).collect();
            if params.iter().any(|p| p.is_empty()) {
                return Err(bad(text, "empty parameter"));
            }
            Ok((&text[..open], params))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ExtensionShape {
    Plain,
    Timed,
    Directive,
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    input: Vec<RegistryInput>,
    #[serde(default)]
    output: Vec<RegistryOutput>,
}

#[derive(Debug, Deserialize)]
struct RegistryInput {
    name: String,
    #[serde(default = "default_shape")]
    shape: ExtensionShape,
}

fn default_shape() -> ExtensionShape {
    ExtensionShape::Timed
}

#[derive(Debug, Deserialize)]
struct RegistryOutput {
    name: String,
}

/// The standard dictionary plus optional user-registered extension symbols.
///
/// Extensions are loaded from a TOML file:
///
/// ```toml
/// [[input]]
/// name = "hndKeyUpd"
/// shape = "timed"      # timed | directive
///
/// [[output]]
/// name = "KeyUpdAck"
/// ```
#[derive(Debug, Clone, Default)]
pub struct SymbolRegistry {
    inputs: BTreeMap<String, ExtensionShape>,
    outputs: BTreeMap<String, ()>,
}

impl SymbolRegistry {
    pub fn standard() -> Self {
        SymbolRegistry::default()
    }

    pub fn from_toml(text: &str) -> Result<Self, SymbolError> {
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| SymbolError::Registry(e.to_string()))?;
        let mut reg = SymbolRegistry::standard();
        for input in file.input {
            reg.register_input(&input.name, input.shape)?;
        }
        for output in file.output {
            reg.register_output(&output.name)?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, SymbolError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SymbolError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn check_name(name: &str) -> Result<(), SymbolError> {
        let ok = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok {
            return Err(SymbolError::Registry(format!("invalid extension name `{name}`")));
        }
        Ok(())
    }

    fn register_input(&mut self, name: &str, shape: ExtensionShape) -> Result<(), SymbolError> {
        Self::check_name(name)?;
        if shape == ExtensionShape::Plain {
            return Err(SymbolError::Registry(format!(
                "input `{name}` must be `timed` or `directive`"
            )));
        }
        if InputKind::standard_by_name(name).is_some() {
            return Err(SymbolError::Registry(format!("`{name}` is a standard symbol")));
        }
        self.inputs.insert(name.to_string(), shape);
        Ok(())
    }

    fn register_output(&mut self, name: &str) -> Result<(), SymbolError> {
        Self::check_name(name)?;
        if OutputSymbol::standard_by_name(name).is_some() {
            return Err(SymbolError::Registry(format!("`{name}` is a standard symbol")));
        }
        self.outputs.insert(name.to_string(), ());
        Ok(())
    }

    pub fn extension_inputs(&self) -> impl Iterator<Item = &str> {
        self.inputs.keys().map(String::as_str)
    }

    fn input_kind(&self, name: &str) -> Option<(InputKind, ExtensionShape)> {
        if let Some(kind) = InputKind::standard_by_name(name) {
            let shape = if kind.is_directive() {
                ExtensionShape::Directive
            } else {
                ExtensionShape::Timed
            };
            return Some((kind, shape));
        }
        self.inputs
            .get(name)
            .map(|shape| {
                let kind = InputKind::Extension {
                    name: Arc::from(name),
                    directive: *shape == ExtensionShape::Directive,
                };
                (kind, *shape)
            })
    }

    fn output_symbol(&self, name: &str) -> Option<OutputSymbol> {
        OutputSymbol::standard_by_name(name).or_else(|| {
            self.outputs
                .contains_key(name)
                .then(|| OutputSymbol::Extension(Arc::from(name)))
        })
    }

    pub fn parse_symbol(&self, text: &str) -> Result<Symbol, SymbolError> {
        let text = text.trim();
        if text.starts_with('[') || text.contains('(') {
            return self.parse_input(text).map(Symbol::Input);
        }
        if let Some(out) = self.output_symbol(text) {
            return Ok(Symbol::Output(out));
        }
        self.parse_input(text).map(Symbol::Input)
    }

    pub fn parse_output(&self, text: &str) -> Result<OutputSymbol, SymbolError> {
        let text = text.trim();
        if text.contains('(') {
            return Err(bad(text, "output symbols take no parameters"));
        }
        self.output_symbol(text)
            .ok_or_else(|| SymbolError::UnknownSymbol(text.to_string()))
    }

    pub fn parse_input(&self, text: &str) -> Result<InputSymbol, SymbolError> {
        self.parse_input_inner(text, false)
    }

    pub fn parse_input_label(&self, text: &str) -> Result<InputSymbol, SymbolError> {
        self.parse_input_inner(text, true)
    }

    fn parse_input_inner(&self, text: &str, allow_merged: bool) -> Result<InputSymbol, SymbolError> {
        let text = text.trim();
        if let Some(inner) = text.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| bad(text, "unterminated directive"))?;
            if name.contains('(') {
                return Err(bad(text, "directives take no parameters"));
            }
            return match self.input_kind(name) {
                Some((kind, ExtensionShape::Directive)) => {
                    Ok(InputSymbol { kind, timeout: None, cipher: None })
                }
                Some(_) => Err(bad(text, "not a directive; drop the brackets")),
                None => Err(SymbolError::UnknownSymbol(text.to_string())),
            };
        }
        let (name, params) = split_params(text)?;
        let (kind, shape) = self
            .input_kind(name)
            .ok_or_else(|| SymbolError::UnknownSymbol(name.to_string()))?;
        if shape == ExtensionShape::Directive {
            return Err(bad(text, "directives must be written in brackets"));
        }
        let mut timeout = None;
        let mut cipher = None;
        for p in &params {
            if let Ok(t) = p.parse::<TimeoutClass>() {
                if timeout.is_some() || cipher.is_some() {
                    return Err(bad(text, "timeout must come first and only once"));
                }
                timeout = Some(t);
            } else if let Ok(c) = p.parse::<CipherSuite>() {
                if cipher.is_some() {
                    return Err(bad(text, "duplicate cipher"));
                }
                cipher = Some(c);
            } else {
                return Err(bad(text, format!("unrecognised parameter `{p}`")));
            }
        }
        if timeout.is_none() && !allow_merged {
            return Err(bad(text, "missing timeout"));
        }
        if kind.is_client_hello() != cipher.is_some() {
            let reason = if cipher.is_some() {
                "cipher is only allowed on ClientHello inputs"
            } else {
                "ClientHello inputs need a cipher"
            };
            return Err(bad(text, reason));
        }
        Ok(InputSymbol { kind, timeout, cipher })
    }
}

/// Builds the learning alphabet for a handshake mode.
///
/// Ordering is dictionary order, then timeout (short before long), then
/// cipher. Directives appear once, without timeout variants.
pub fn default_alphabet(
    mode: HandshakeMode,
    timeouts: &[TimeoutClass],
    ciphers: &[CipherSuite],
) -> Result<Vec<InputSymbol>, SymbolError> {
    if timeouts.is_empty() {
        return Err(SymbolError::EmptyParameterSet("timeouts"));
    }
    if ciphers.is_empty() {
        return Err(SymbolError::EmptyParameterSet("ciphers"));
    }
    let mut timeouts = timeouts.to_vec();
    timeouts.sort();
    timeouts.dedup();
    let mut ciphers = ciphers.to_vec();
    ciphers.sort();
    ciphers.dedup();

    let mut out = Vec::new();
    for kind in InputKind::STANDARD.iter().filter(|k| k.applies_to(mode)) {
        if kind.is_directive() {
            out.push(InputSymbol::directive(kind.clone()));
            continue;
        }
        for &t in &timeouts {
            if kind.is_client_hello() {
                for &c in &ciphers {
                    out.push(InputSymbol::client_hello(kind.clone(), t, c));
                }
            } else {
                out.push(InputSymbol::timed(kind.clone(), t));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_table_examples() {
        assert_eq!(
            parse_symbol("initPing(short)").unwrap(),
            Symbol::Input(InputSymbol::timed(InputKind::InitPing, TimeoutClass::Short))
        );
        assert_eq!(
            parse_symbol("[IncRetryTkn]").unwrap(),
            Symbol::Input(InputSymbol::directive(InputKind::IncRetryTkn))
        );
        assert_eq!(
            parse_symbol("initCltHello-vldACK(long,AES_128)").unwrap(),
            Symbol::Input(InputSymbol::client_hello(
                InputKind::InitCltHelloVldAck,
                TimeoutClass::Long,
                CipherSuite::Aes128
            ))
        );
        assert!(matches!(
            parse_symbol("initPing"),
            Err(SymbolError::BadParameter { .. })
        ));
        assert_eq!(parse_symbol("<ConClosed>").unwrap(), Symbol::Output(OutputSymbol::ConClosed));
        assert_eq!(parse_symbol("hndFin").unwrap(), Symbol::Output(OutputSymbol::HndFin));
    }

    #[test]
    fn formats_acronyms() {
        let fin = InputSymbol::timed(InputKind::HndFin, TimeoutClass::Short);
        assert_eq!(fin.to_string(), "hndFin(short)");
        assert_eq!(OutputSymbol::ConClosed.to_string(), "<ConClosed>");
        assert_eq!(
            InputSymbol::directive(InputKind::ChgDestConIdOri).to_string(),
            "[ChgDestConID-Ori]"
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        for text in [
            "initPing(medium)",
            "initPing(short,AES_128)",
            "initCltHello-vldACK(short)",
            "[IncRetryTkn(short)]",
            "IncRetryTkn",
            "initPing(short",
            "initPing(short,short)",
            "initCltHello-vldACK(AES_128,short)",
        ] {
            assert!(
                matches!(parse_symbol(text), Err(SymbolError::BadParameter { .. })),
                "{text} should be a bad parameter"
            );
        }
        assert!(matches!(parse_symbol("fooBar(short)"), Err(SymbolError::UnknownSymbol(_))));
        assert!(matches!(parse_output("Other"), Err(SymbolError::UnknownSymbol(_))));
    }

    #[test]
    fn merged_labels_only_parse_leniently() {
        assert!(parse_input("initPing").is_err());
        let merged = parse_input_label("initPing").unwrap();
        assert!(merged.is_merged());
        assert_eq!(merged.to_string(), "initPing");
        let ch = parse_input_label("initCltHello-invldACK(ChaCha20)").unwrap();
        assert_eq!(ch.cipher, Some(CipherSuite::ChaCha20));
        assert_eq!(ch.to_string(), "initCltHello-invldACK(ChaCha20)");
    }

    #[test]
    fn basic_alphabet_excludes_retry_and_zero_rtt() {
        let a = default_alphabet(HandshakeMode::Basic, &[TimeoutClass::Short], &[CipherSuite::Aes128])
            .unwrap();
        assert!(a.iter().all(|s| s.kind != InputKind::IncRetryTkn));
        assert!(a.iter().all(|s| s.kind.level() != Some(EncryptionLevel::ZeroRtt)));
        assert!(a.iter().all(|s| s.kind != InputKind::HndCert));
        // 6 initial + 5 handshake + 2 NEW_CONNECTION_ID + 2 directives
        assert_eq!(a.len(), 15);
    }

    #[test]
    fn retry_client_auth_has_single_retry_directive() {
        let a = default_alphabet(
            HandshakeMode::RetryClientAuth,
            &[TimeoutClass::Short, TimeoutClass::Long],
            &[CipherSuite::Aes128],
        )
        .unwrap();
        assert_eq!(a.iter().filter(|s| s.kind == InputKind::IncRetryTkn).count(), 1);
        assert!(a.iter().any(|s| s.kind == InputKind::HndEmpCert));
    }

    #[test]
    fn psk_alphabet_has_zero_rtt_kinds() {
        let a = default_alphabet(HandshakeMode::Psk, &[TimeoutClass::Short], &[CipherSuite::Aes128])
            .unwrap();
        for kind in [InputKind::ZeroRttPing, InputKind::ZeroRttFin, InputKind::ZeroRttAck] {
            assert!(a.iter().any(|s| s.kind == kind), "{kind} missing");
        }
    }

    #[test]
    fn alphabet_order_is_deterministic() {
        let a = default_alphabet(
            HandshakeMode::Basic,
            &[TimeoutClass::Long, TimeoutClass::Short],
            &[CipherSuite::ChaCha20, CipherSuite::Aes128],
        )
        .unwrap();
        let names: Vec<String> = a.iter().take(4).map(|s| s.to_string()).collect();
        assert_eq!(names, ["initPing(short)", "initPing(long)", "initConClose(short)", "initConClose(long)"]);
        let ch: Vec<String> = a
            .iter()
            .filter(|s| s.kind == InputKind::InitCltHelloVldAck)
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            ch,
            [
                "initCltHello-vldACK(short,AES_128)",
                "initCltHello-vldACK(short,ChaCha20)",
                "initCltHello-vldACK(long,AES_128)",
                "initCltHello-vldACK(long,ChaCha20)"
            ]
        );
        assert_eq!(a.last().unwrap().to_string(), "[ChgDestConID-Ori]");
    }

    #[test]
    fn empty_parameter_sets_are_rejected() {
        assert!(matches!(
            default_alphabet(HandshakeMode::Basic, &[], &[CipherSuite::Aes128]),
            Err(SymbolError::EmptyParameterSet(_))
        ));
        assert!(matches!(
            default_alphabet(HandshakeMode::Basic, &[TimeoutClass::Short], &[]),
            Err(SymbolError::EmptyParameterSet(_))
        ));
    }

    #[test]
    fn doubling_timeouts_doubles_timed_entries() {
        for mode in HandshakeMode::ALL {
            for ciphers in [&CipherSuite::ALL[..1], &CipherSuite::ALL[..]] {
                let one = default_alphabet(mode, &[TimeoutClass::Short], ciphers).unwrap();
                let two = default_alphabet(mode, &TimeoutClass::ALL, ciphers).unwrap();
                let timed = |a: &[InputSymbol]| a.iter().filter(|s| !s.is_directive()).count();
                let directives = |a: &[InputSymbol]| a.iter().filter(|s| s.is_directive()).count();
                assert_eq!(timed(&two), 2 * timed(&one));
                assert_eq!(directives(&two), directives(&one));
            }
        }
    }

    #[test]
    fn every_standard_kind_is_reachable() {
        let mut seen = std::collections::BTreeSet::new();
        for mode in HandshakeMode::ALL {
            for s in default_alphabet(mode, &TimeoutClass::ALL, &CipherSuite::ALL).unwrap() {
                seen.insert(s.kind);
            }
        }
        for kind in InputKind::STANDARD {
            assert!(seen.contains(kind), "{kind} unreachable");
        }
    }

    #[test]
    fn registry_extensions() {
        let reg = SymbolRegistry::from_toml(
            r#"
            [[input]]
            name = "hndKeyUpd"
            [[input]]
            name = "SetFlag"
            shape = "directive"
            [[output]]
            name = "KeyUpdAck"
            "#,
        )
        .unwrap();
        let sym = reg.parse_input("hndKeyUpd(long)").unwrap();
        assert!(!sym.is_standard());
        assert_eq!(sym.to_string(), "hndKeyUpd(long)");
        assert!(reg.parse_input("[SetFlag]").unwrap().is_directive());
        assert!(!reg.parse_output("KeyUpdAck").unwrap().is_standard());
        assert!(parse_input("hndKeyUpd(long)").is_err());
        assert!(SymbolRegistry::from_toml("[[input]]\nname = \"hndFin\"").is_err());
    }

    fn arb_input() -> impl Strategy<Value = InputSymbol> {
        let kinds = InputKind::STANDARD.to_vec();
        (
            proptest::sample::select(kinds),
            proptest::sample::select(TimeoutClass::ALL.to_vec()),
            proptest::sample::select(CipherSuite::ALL.to_vec()),
        )
            .prop_map(|(kind, t, c)| {
                if kind.is_directive() {
                    InputSymbol::directive(kind)
                } else if kind.is_client_hello() {
                    InputSymbol::client_hello(kind, t, c)
                } else {
                    InputSymbol::timed(kind, t)
                }
            })
    }

    proptest! {
        #[test]
        fn input_round_trip(sym in arb_input()) {
            let text = format_symbol(&Symbol::Input(sym.clone()));
            prop_assert_eq!(parse_symbol(&text).unwrap(), Symbol::Input(sym));
        }

        #[test]
        fn output_round_trip(sym in proptest::sample::select(OutputSymbol::STANDARD.to_vec())) {
            prop_assert_eq!(parse_output(&sym.to_string()).unwrap(), sym);
        }
    }
}
