use std::path::Path;
use std::process::{Command, Output};

use quicfsm_core::alphabet::HandshakeMode;
use quicfsm_core::automata::{from_dot, isomorphic, to_dot, ModelMetadata, RenderOptions};
use quicfsm_core::mockqut::scenarios::{three_state_pair, timing_pair};
use quicfsm_core::mockqut::{bundled_alphabet, reference_model, FaultProfile};
use quicfsm_core::optimizer::optimize;
use quicfsm_core::orchestrator::render_reference;

fn quicfsm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quicfsm")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn with_meta(m: &quicfsm_core::automata::MealyMachine, mode: HandshakeMode, timeout: &str) -> String {
    let meta = ModelMetadata { mode: Some(mode), timeout: Some(timeout.into()), ..ModelMetadata::default() };
    to_dot(m, &RenderOptions::with_metadata(meta))
}

#[test]
fn optimize_writes_the_optimized_model() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("basic.dot"), render_reference(HandshakeMode::Basic)).unwrap();
    let out = quicfsm(&["optimize", "--model", "basic.dot", "--out", "opt.dot"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("reduction"));
    let written = from_dot(&std::fs::read_to_string(dir.path().join("opt.dot")).unwrap()).unwrap();
    let expected = optimize(&reference_model(HandshakeMode::Basic, &bundled_alphabet(HandshakeMode::Basic))).0;
    assert!(isomorphic(&written, &expected));
}

#[test]
fn cross_and_temporal_diff_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (one, two) = three_state_pair();
    std::fs::write(dir.path().join("one.dot"), with_meta(&one, HandshakeMode::Basic, "short")).unwrap();
    std::fs::write(dir.path().join("two.dot"), with_meta(&two, HandshakeMode::Basic, "short")).unwrap();
    std::fs::write(dir.path().join("copy.dot"), with_meta(&one, HandshakeMode::Basic, "long")).unwrap();

    let out = quicfsm(&["diff", "one.dot", "two.dot", "--json", "d.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(json["deviations"].as_array().unwrap().len(), 2);

    let out = quicfsm(&["diff", "one.dot", "copy.dot"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "no deviations\n");

    let (short, long) = timing_pair();
    std::fs::write(dir.path().join("s.dot"), with_meta(&short, HandshakeMode::ClientAuth, "short")).unwrap();
    std::fs::write(dir.path().join("l.dot"), with_meta(&long, HandshakeMode::ClientAuth, "long")).unwrap();
    let out = quicfsm(&["diff", "--temporal", "s.dot", "l.dot"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("initCltHello-invldACK"));
    // two models for one setting
    let out = quicfsm(&["diff", "--temporal", "one.dot", "two.dot"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_against_the_bundled_reference() {
    let dir = tempfile::tempdir().unwrap();
    let mode = HandshakeMode::Basic;
    let reference = reference_model(mode, &bundled_alphabet(mode));
    std::fs::write(dir.path().join("good.dot"), with_meta(&reference, mode, "short")).unwrap();
    let faulty = FaultProfile::KeyRetention.apply(&reference).unwrap();
    std::fs::write(dir.path().join("bad.dot"), with_meta(&faulty, mode, "short")).unwrap();

    assert_eq!(quicfsm(&["check", "--model", "good.dot"], dir.path()).status.code(), Some(0));
    let out = quicfsm(&["check", "--model", "bad.dot"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("witness"));
}

#[test]
fn bad_input_is_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.dot"), "digraph {").unwrap();
    assert_eq!(quicfsm(&["check", "--model", "junk.dot"], dir.path()).status.code(), Some(2));
    assert_eq!(quicfsm(&["learn", "--config", "missing.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(quicfsm(&["mock-serve", "--fault", "crash"], dir.path()).status.code(), Some(2));
    // clap usage errors exit with 2 as well
    assert_eq!(quicfsm(&["diff", "only-one.dot"], dir.path()).status.code(), Some(2));
}
