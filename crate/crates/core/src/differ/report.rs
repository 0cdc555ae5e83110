//! Deviation report files.

use std::fmt::Write as _;

use serde::Serialize;

use super::{Deviation, LtsDiffParams, Scenario};
use crate::automata::format_word;

#[derive(Debug, Clone, Serialize)]
struct Record<'a> {
    models: Vec<String>,
    witness: String,
    input: String,
    behaviors: Vec<(&'a str, &'a str)>,
    scenario: Scenario,
    nonstandard: bool,
}

#[derive(Debug, Clone, Serialize)]
struct Document<'a> {
    params: &'a LtsDiffParams,
    deviations: Vec<Record<'a>>,
}

fn models(d: &Deviation) -> Vec<String> {
    d.provenance.iter().map(|(a, b)| format!("{a} vs {b}")).collect()
}

pub fn to_json(deviations: &[Deviation], params: &LtsDiffParams) -> String {
    let records = deviations
        .iter()
        .map(|d| Record {
            models: models(d),
            witness: format_word(&d.witness),
            input: d.input.to_string(),
            behaviors: d.behaviors.iter().map(|b| (b.model.as_str(), b.next.as_str())).collect(),
            scenario: d.scenario,
            nonstandard: d.nonstandard,
        })
        .collect();
    serde_json::to_string_pretty(&Document { params, deviations: records }).expect("report serializes")
}

/// Plain-text table, one block per deviation.
pub fn to_text(deviations: &[Deviation]) -> String {
    let mut out = String::new();
    if deviations.is_empty() {
        out.push_str("no deviations\n");
        return out;
    }
    for (n, d) in deviations.iter().enumerate() {
        let witness = if d.witness.is_empty() { "(empty)".to_string() } else { format_word(&d.witness) };
        let _ = writeln!(out, "#{} [{}]{}", n + 1, d.scenario, if d.nonstandard { " nonstandard" } else { "" });
        let _ = writeln!(out, "  models   {}", models(d).join("; "));
        let _ = writeln!(out, "  witness  {witness}");
        let _ = writeln!(out, "  input    {}", d.input);
        let width = d.behaviors.iter().map(|b| b.model.len()).max().unwrap_or(0);
        for b in &d.behaviors {
            let _ = writeln!(out, "  {:width$}  {}", b.model, b.next);
        }
    }
    out
}
