//! One learning and analysis session against one target.
//!
//! Artifacts:
//! `<out>/<target>/<mode>/<timeout>/{raw.dot,optimized.dot,stats.txt,learnlog.tsv}`,
//! `<out>/diffs/*.json` and `<out>/crashes/*.txt`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::config::{SessionConfig, TargetSpec, Transport};
use super::references::bundled_references;
use super::supervisor::{CrashRecord, ProcessTarget, SupervisedOracle, Target};
use super::{OrchestratorError, Phase, EXIT_CLEAN, EXIT_FINDINGS};
use crate::alphabet::{CipherSuite, HandshakeMode, InputSymbol, TimeoutSetting};
use crate::automata::{from_dot, to_dot, MealyBuilder, MealyMachine, ModelMetadata, RenderOptions};
use crate::differ::{reference_check, report, temporal_diff, Deviation, DiffError, TemporalDiff};
use crate::harness::certs::Identity;
use crate::harness::{calibrate_short, Backend, HarnessTimeouts, PipeClient, WireConfig, WireHarness};
use crate::learner::{learn_with, LearnLog, LearnStats};
use crate::mockqut::reference_model;
use crate::optimizer::{optimize, OptimizationStats};

#[derive(Debug, Clone)]
pub struct LearnedModel {
    pub alphabet: Vec<InputSymbol>,
    pub raw: MealyMachine,
    pub optimized: MealyMachine,
    pub learn: LearnStats,
    pub optimization: OptimizationStats,
    pub elapsed: Duration,
    pub dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ReferenceResult {
    pub reference: String,
    pub setting: TimeoutSetting,
    pub deviations: Vec<Deviation>,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub short: Duration,
    pub models: BTreeMap<TimeoutSetting, LearnedModel>,
    pub temporal: Option<TemporalDiff>,
    pub references: Vec<ReferenceResult>,
    pub crashes: Vec<CrashRecord>,
    pub warnings: Vec<String>,
}

impl SessionOutcome {
    pub fn temporal_deviations(&self) -> Vec<&Deviation> {
        self.temporal.iter().flat_map(|t| t.pairs.iter().flat_map(|p| p.deviations.iter())).collect()
    }

    pub fn reference_deviations(&self) -> Vec<&Deviation> {
        self.references.iter().flat_map(|r| r.deviations.iter()).collect()
    }

    pub fn has_findings(&self) -> bool {
        !self.crashes.is_empty() || !self.temporal_deviations().is_empty() || !self.reference_deviations().is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.has_findings() {
            EXIT_FINDINGS
        } else {
            EXIT_CLEAN
        }
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "short wait: {} ms", self.short.as_millis());
        for (setting, m) in &self.models {
            let _ = writeln!(
                out,
                "{setting}: {} states, {} queries, {:.1}s, {}",
                m.raw.num_states(),
                m.learn.total_queries(),
                m.elapsed.as_secs_f64(),
                m.optimization
            );
        }
        let _ = writeln!(out, "temporal deviations: {}", self.temporal_deviations().len());
        for r in &self.references {
            let _ = writeln!(out, "reference {} ({}): {} deviations", r.reference, r.setting, r.deviations.len());
        }
        let _ = writeln!(out, "crashes: {}", self.crashes.len());
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), OrchestratorError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| OrchestratorError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| OrchestratorError::io(path, e))
}

/// A backend for the server at `addr`. `identity` is a (certificate, key) pair of PEM files.
pub fn connect(
    transport: Transport,
    addr: SocketAddr,
    mode: HandshakeMode,
    timeouts: HarnessTimeouts,
    setup_cipher: CipherSuite,
    identity: Option<&(PathBuf, PathBuf)>,
) -> Result<Box<dyn Backend>, OrchestratorError> {
    Ok(match transport {
        Transport::Pipe => Box::new(PipeClient::new(addr, timeouts)),
        Transport::Udp => {
            let mut wc = WireConfig::new(addr, mode);
            wc.timeouts = timeouts;
            wc.setup_cipher = setup_cipher;
            if let Some((cert, key)) = identity {
                wc.client_identity = Some(Identity::load(cert, key).map_err(|e| OrchestratorError::phase(Phase::Config, e))?);
            }
            Box::new(WireHarness::new(wc).map_err(|e| OrchestratorError::phase(Phase::Launch, e))?)
        }
    })
}

/// Builds the target and backend the config describes, then runs the session.
pub fn run_session(cfg: &SessionConfig) -> Result<SessionOutcome, OrchestratorError> {
    cfg.validate()?;
    let addr = cfg.target.addr();
    let mut process = match &cfg.target {
        TargetSpec::Launch { command, working_dir, startup_grace, .. } => {
            let t = ProcessTarget::launch(command.clone(), working_dir.clone(), *startup_grace)?;
            std::thread::sleep(*startup_grace);
            Some(t)
        }
        TargetSpec::Remote { .. } => None,
    };
    let grace = process.as_ref().map_or(Duration::ZERO, |p| p.startup_grace());
    let timeouts = HarnessTimeouts::new(cfg.short.unwrap_or(Duration::from_millis(50)), grace);
    let mut backend = connect(cfg.transport, addr, cfg.mode, timeouts, cfg.ciphers[0], cfg.client_identity.as_ref())?;
    let target = process.as_mut().map(|p| p as &mut dyn Target);
    run_session_with(cfg, backend.as_mut(), target)
}

/// Runs a session over an existing backend; `target` enables crash logging.
pub fn run_session_with(
    cfg: &SessionConfig,
    backend: &mut dyn Backend,
    target: Option<&mut dyn Target>,
) -> Result<SessionOutcome, OrchestratorError> {
    let mut warnings = Vec::new();
    if target.is_none() {
        log::warn!("the target is not launched by this session; crash logging is disabled");
        warnings.push("remote target: crash logging disabled".to_string());
    }
    let grace = target.as_ref().map_or(Duration::ZERO, |t| t.startup_grace());
    if !backend.ready(Duration::from_secs(10)) {
        return Err(OrchestratorError::phase(Phase::Launch, "target did not answer the readiness probe"));
    }

    let short = match cfg.short {
        Some(s) => s,
        None => calibrate_short(backend, &cfg.calibration).map_err(|e| OrchestratorError::phase(Phase::Calibrate, e))?,
    };
    log::info!("short wait {} ms", short.as_millis());
    backend.set_timeouts(HarnessTimeouts::new(short, grace));

    let target_dir = cfg.out_dir.join(&cfg.name).join(cfg.mode.as_str());
    let mut models = BTreeMap::new();
    let mut oracle = SupervisedOracle::new(backend, target);
    for &setting in &cfg.timeout_settings {
        let alphabet = cfg.alphabet_for(setting);
        let dir = target_dir.join(setting.as_str());
        fs::create_dir_all(&dir).map_err(|e| OrchestratorError::io(&dir, e))?;
        let log_path = dir.join("learnlog.tsv");
        let file = File::create(&log_path).map_err(|e| OrchestratorError::io(&log_path, e))?;
        let mut log = LearnLog::new(BufWriter::new(file));
        let started = Instant::now();
        let outcome = learn_with(&alphabet, &mut oracle, &cfg.learner, &mut log)
            .map_err(|e| OrchestratorError::phase(Phase::Learn, format!("{setting}: {e}")))?;
        let elapsed = started.elapsed();
        log.finish().map_err(|e| OrchestratorError::io(&log_path, e))?;
        let (optimized, optimization) = optimize(&outcome.machine);

        let mut metadata = ModelMetadata {
            mode: Some(cfg.mode),
            timeout: Some(setting.to_string()),
            target: Some(cfg.name.clone()),
            harness_version: Some(env!("CARGO_PKG_VERSION").to_string()),
            ..ModelMetadata::default()
        };
        metadata.extra.insert("short_ms".to_string(), short.as_millis().to_string());
        write(&dir.join("raw.dot"), to_dot(&outcome.machine, &RenderOptions::with_metadata(metadata.clone())))?;
        write(&dir.join("optimized.dot"), to_dot(&optimized, &RenderOptions::with_metadata(metadata)))?;
        let stats = format!(
            "states {}\nrounds {}\nmembership_queries {}\nconformance_queries {}\noracle_steps {}\ncache_hits {}\nhypothesis_sizes {:?}\nlearning_seconds {:.3}\n{}\n",
            outcome.machine.num_states(),
            outcome.stats.rounds,
            outcome.stats.membership_queries,
            outcome.stats.conformance_queries,
            outcome.stats.oracle_steps,
            outcome.stats.cache_hits,
            outcome.stats.hypothesis_sizes,
            elapsed.as_secs_f64(),
            optimization,
        );
        write(&dir.join("stats.txt"), stats)?;
        models.insert(
            setting,
            LearnedModel { alphabet, raw: outcome.machine, optimized, learn: outcome.stats, optimization, elapsed, dir },
        );
    }
    let crashes = std::mem::take(&mut oracle.crashes);
    drop(oracle);

    let diffs = cfg.out_dir.join("diffs");
    let temporal = (models.len() > 1).then(|| {
        let optimized: BTreeMap<_, _> = models.iter().map(|(s, m)| (*s, m.optimized.clone())).collect();
        temporal_diff(&optimized, &cfg.differ)
    });
    if let Some(t) = &temporal {
        let all: Vec<Deviation> = t.pairs.iter().flat_map(|p| p.deviations.iter().cloned()).collect();
        write(&diffs.join(format!("temporal-{}-{}.json", cfg.name, cfg.mode)), report::to_json(&all, &cfg.differ))?;
    }

    let mut references = Vec::new();
    for (name, reference) in reference_models(cfg, &models)? {
        for (setting, m) in &models {
            let Some(reference) = reference.get(setting) else { continue };
            match reference_check(&m.optimized, reference, &cfg.differ) {
                Ok(deviations) => {
                    let file = diffs.join(format!("reference-{name}-{}-{setting}.json", cfg.name));
                    write(&file, report::to_json(&deviations, &cfg.differ))?;
                    references.push(ReferenceResult { reference: name.clone(), setting: *setting, deviations });
                }
                Err(DiffError::AlphabetMismatch) => {
                    warnings.push(format!("reference {name} skipped for {setting}: different input alphabet"));
                }
                Err(e) => return Err(OrchestratorError::phase(Phase::Diff, e)),
            }
        }
    }

    for (n, c) in crashes.iter().enumerate() {
        write(&cfg.out_dir.join("crashes").join(format!("{}-{:03}.txt", cfg.name, n + 1)), c.to_text())?;
    }
    let outcome = SessionOutcome { short, models, temporal, references, crashes, warnings };
    write(&cfg.out_dir.join(&cfg.name).join(cfg.mode.as_str()).join("summary.txt"), outcome.summary())?;
    Ok(outcome)
}

type PerSetting = BTreeMap<TimeoutSetting, MealyMachine>;

/// Named references, each possibly specific to a timeout setting.
fn reference_models(
    cfg: &SessionConfig,
    models: &BTreeMap<TimeoutSetting, LearnedModel>,
) -> Result<Vec<(String, PerSetting)>, OrchestratorError> {
    // a reference over a larger alphabet is cut down to each learned alphabet
    let every = |m: &MealyMachine| -> PerSetting {
        models.iter().map(|(s, learned)| (*s, restrict(m, &learned.alphabet).unwrap_or_else(|| m.clone()))).collect()
    };
    let mut out = Vec::new();
    if cfg.references.bundled {
        for r in bundled_references().into_iter().filter(|r| r.mode == cfg.mode) {
            out.push((format!("bundled-{}", r.name), every(&r.machine)));
        }
    }
    if cfg.references.generated {
        let per: PerSetting = models.iter().map(|(s, m)| (*s, reference_model(cfg.mode, &m.alphabet))).collect();
        out.push(("generated".to_string(), per));
    }
    for path in &cfg.references.paths {
        let text = fs::read_to_string(path).map_err(|e| OrchestratorError::io(path, e))?;
        let m = from_dot(&text).map_err(|e| OrchestratorError::phase(Phase::Diff, format!("{}: {e}", path.display())))?;
        let name = path.file_stem().map_or("reference".into(), |s| s.to_string_lossy().into_owned());
        out.push((name, every(&m)));
    }
    Ok(out)
}

/// The part of `m` reachable over `alphabet`, minimized. A symbol whose
/// timeout class `m` lacks uses the variant with the same kind and cipher.
/// None if some symbol has no counterpart or reaches an undefined transition.
fn restrict(m: &MealyMachine, alphabet: &[InputSymbol]) -> Option<MealyMachine> {
    let columns: Vec<usize> = alphabet
        .iter()
        .map(|sym| {
            m.input_index(sym).or_else(|| m.inputs().iter().position(|s| s.kind == sym.kind && s.cipher == sym.cipher))
        })
        .collect::<Option<_>>()?;
    let mut b = MealyBuilder::new(alphabet.to_vec());
    let mut ids = BTreeMap::from([(m.initial(), b.add_state())]);
    let mut queue = VecDeque::from([m.initial()]);
    while let Some(s) = queue.pop_front() {
        for (i, &col) in columns.iter().enumerate() {
            let (out, to) = m.transition(s, col)?;
            let next = *ids.entry(to).or_insert_with(|| {
                queue.push_back(to);
                b.add_state()
            });
            b.set(ids[&s], i, out.clone(), next);
        }
    }
    b.set_initial(0);
    Some(b.build().minimize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{HandshakeMode, InputKind};
    use crate::automata::equivalent;
    use crate::harness::HarnessTimeouts;
    use crate::mockqut::{compact_alphabet, FaultProfile, MockOptions};
    use crate::orchestrator::supervisor::MockTarget;
    use crate::orchestrator::ReferenceSources;

    fn config(out: &Path, addr: std::net::SocketAddr, kinds: Vec<InputKind>, settings: Vec<TimeoutSetting>) -> SessionConfig {
        let text = format!(
            "mode = \"Basic\"\nout_dir = \"{}\"\ntransport = \"pipe\"\ntimeout_settings = [\"short\"]\n[target]\nremote = \"{addr}\"\n",
            out.display()
        );
        let mut cfg = SessionConfig::from_toml(&text, out).unwrap();
        cfg.name = "mock".into();
        cfg.alphabet = Some(kinds);
        cfg.timeout_settings = settings;
        cfg.short = Some(Duration::from_millis(20));
        cfg.references = ReferenceSources { bundled: true, generated: true, paths: Vec::new() };
        cfg.learner.extra_states = 1;
        cfg
    }

    fn kinds(mode: HandshakeMode) -> Vec<InputKind> {
        let mut k: Vec<InputKind> = compact_alphabet(mode).into_iter().map(|s| s.kind).collect();
        k.dedup();
        k
    }

    #[test]
    fn restricted_reference_answers_like_the_full_one() {
        use rand::{Rng, SeedableRng};
        let mode = HandshakeMode::Basic;
        let full = reference_model(mode, &crate::mockqut::bundled_alphabet(mode));
        let subset = compact_alphabet(mode);
        let cut = restrict(&full, &subset).unwrap();
        assert_eq!(cut.inputs(), subset.as_slice());
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        for _ in 0..300 {
            let w: Vec<InputSymbol> = (0..rng.gen_range(0..8)).map(|_| subset[rng.gen_range(0..subset.len())].clone()).collect();
            assert_eq!(cut.run(&w).unwrap(), full.run(&w).unwrap());
        }
        // long variants resolve to the short column
        let long: Vec<InputSymbol> = subset.iter().map(|s| InputSymbol { timeout: s.timeout.map(|_| crate::alphabet::TimeoutClass::Long), ..s.clone() }).collect();
        assert_eq!(restrict(&full, &long).unwrap().num_states(), cut.num_states());
        let unknown = vec![InputSymbol::directive(InputKind::IncRetryTkn)];
        assert!(restrict(&cut, &unknown).is_none());
    }

    #[test]
    fn compliant_mock_session_is_clean() {
        let out = tempfile::tempdir().unwrap();
        let mode = HandshakeMode::Basic;
        let truth = reference_model(mode, &compact_alphabet(mode));
        let mut target = MockTarget::start("127.0.0.1:0".parse().unwrap(), truth.clone(), FaultProfile::None, MockOptions::default()).unwrap();
        let mut client = PipeClient::new(target.addr(), HarnessTimeouts::default());
        let cfg = config(out.path(), target.addr(), kinds(mode), vec![TimeoutSetting::Short, TimeoutSetting::Long]);
        let outcome = run_session_with(&cfg, &mut client, Some(&mut target)).unwrap();

        let learned = &outcome.models[&TimeoutSetting::Short];
        assert_eq!(equivalent(&learned.raw, &truth).unwrap(), None);
        assert!(outcome.temporal_deviations().is_empty(), "{:#?}", outcome.temporal_deviations());
        assert!(outcome.reference_deviations().is_empty());
        assert!(outcome.references.iter().any(|r| r.reference == "generated"));
        // the bundled Basic reference covers the full dictionary and is cut down to this subset
        assert!(outcome.references.iter().any(|r| r.reference == "bundled-basic" && r.deviations.is_empty()));
        assert_eq!(outcome.exit_code(), EXIT_CLEAN);

        for setting in ["short", "long"] {
            let dir = out.path().join("mock/Basic").join(setting);
            for f in ["raw.dot", "optimized.dot", "stats.txt", "learnlog.tsv"] {
                assert!(dir.join(f).is_file(), "{setting}/{f}");
            }
        }
        assert!(out.path().join("diffs/temporal-mock-Basic.json").is_file());
        assert!(out.path().join("diffs/reference-generated-mock-short.json").is_file());
        assert!(!out.path().join("crashes").exists());
    }

    #[test]
    fn key_retention_is_reported_against_the_reference() {
        let out = tempfile::tempdir().unwrap();
        let mode = HandshakeMode::Basic;
        let truth = reference_model(mode, &compact_alphabet(mode));
        let mut target = MockTarget::start("127.0.0.1:0".parse().unwrap(), truth, FaultProfile::KeyRetention, MockOptions::default()).unwrap();
        let mut client = PipeClient::new(target.addr(), HarnessTimeouts::default());
        let cfg = config(out.path(), target.addr(), kinds(mode), vec![TimeoutSetting::Short]);
        let outcome = run_session_with(&cfg, &mut client, Some(&mut target)).unwrap();
        let devs = outcome.reference_deviations();
        assert!(!devs.is_empty());
        assert!(devs.iter().all(|d| d.witness.iter().any(|s| s.kind.is_client_hello())), "{devs:#?}");
        assert_eq!(outcome.exit_code(), EXIT_FINDINGS);
    }
}
