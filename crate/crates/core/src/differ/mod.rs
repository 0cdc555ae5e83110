//! Differential analysis of learned models.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::alphabet::{InputSymbol, TimeoutSetting};
use crate::automata::{MealyMachine, StateId};

mod ltsdiff;
pub mod report;

pub use ltsdiff::{lts_diff, similarity, DiffReport, Lts, LtsDiffParams, LtsEdge};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("state s{0} is not reachable")]
    Unreachable(StateId),
    #[error("models do not share an input alphabet")]
    AlphabetMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Temporal,
    Cross,
    Reference,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Temporal => "temporal",
            Scenario::Cross => "cross",
            Scenario::Reference => "reference",
        })
    }
}

/// Drops outputs, keeping one input-labelled edge per transition.
pub fn prune_outputs(m: &MealyMachine) -> Lts {
    let edges = m.edges().map(|(from, i, _, to)| LtsEdge { from, label: m.inputs()[i].clone(), to }).collect();
    Lts::new(m.num_states(), m.initial(), edges)
}

/// The output-free system the differ actually compares.
///
/// Learned machines are complete, so a missing edge in an optimized machine
/// means the input leaves the state unchanged; self-loops are therefore
/// omitted in both raw and optimized machines. Timeout variants of one kind
/// that reach the same target share the timeout-free label, and when the
/// tested alphabet has a single timeout class the class is dropped from every
/// label so that models learned with different settings are comparable.
pub fn canonical_lts(m: &MealyMachine) -> Lts {
    let classes: BTreeSet<_> = m.inputs().iter().filter_map(|s| s.timeout).collect();
    let uniform = classes.len() <= 1;
    let mut groups: BTreeMap<(StateId, InputSymbol, StateId), Vec<InputSymbol>> = BTreeMap::new();
    for (s, i, _, t) in m.edges() {
        if s != t {
            let sym = &m.inputs()[i];
            groups.entry((s, sym.timeout_erased(), t)).or_default().push(sym.clone());
        }
    }
    let edges = groups
        .into_iter()
        .map(|((from, erased, to), members)| {
            let label = if uniform || members.len() >= 2 { erased } else { members[0].clone() };
            LtsEdge { from, label, to }
        })
        .collect();
    Lts::new(m.num_states(), m.initial(), edges)
}

/// Breadth-first shortest word from the initial state; ties follow alphabet order.
pub fn shortest_witness(m: &MealyMachine, target: StateId) -> Result<Vec<InputSymbol>, DiffError> {
    if target >= m.num_states() {
        return Err(DiffError::Unreachable(target));
    }
    let access = m.access_sequences();
    if target != m.initial() && access[target].is_empty() {
        return Err(DiffError::Unreachable(target));
    }
    Ok(m.word(&access[target]))
}

/// Finds the machine input that a normalized label stands for.
fn resolve(m: &MealyMachine, label: &InputSymbol) -> Option<usize> {
    m.input_index(label)
        .or_else(|| m.inputs().iter().position(|s| s.timeout_erased() == *label))
        .or_else(|| m.input_index(&label.timeout_erased()))
}

/// How one model reacts to a deviation's witness followed by its input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Behavior {
    pub model: String,
    /// State reached by the witness, if the model can replay it.
    pub state: Option<StateId>,
    /// `outputs -> sN`, `undefined`, or `witness not replayable`.
    pub next: String,
}

fn behavior(name: &str, m: &MealyMachine, witness: &[InputSymbol], input: &InputSymbol) -> Behavior {
    let mut state = Some(m.initial());
    for sym in witness {
        state = state.and_then(|s| resolve(m, sym).and_then(|i| m.transition(s, i)).map(|(_, t)| t));
    }
    let next = match state {
        None => "witness not replayable".to_string(),
        Some(s) => match resolve(m, input).and_then(|i| m.transition(s, i)) {
            Some((o, t)) => format!("{o} -> s{t}"),
            None => "undefined".to_string(),
        },
    };
    Behavior { model: name.to_string(), state, next }
}

/// A shortest input word leading to a transition on which two models disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Deviation {
    pub witness: Vec<InputSymbol>,
    pub input: InputSymbol,
    pub behaviors: Vec<Behavior>,
    /// Every model pair in which this deviation was found.
    pub provenance: Vec<(String, String)>,
    pub scenario: Scenario,
    /// Set when the witness or input uses a registered extension symbol.
    pub nonstandard: bool,
}

impl Deviation {
    pub fn key(&self) -> (Vec<InputSymbol>, InputSymbol) {
        (self.witness.clone(), self.input.clone())
    }
}

fn word_order(w: &[InputSymbol]) -> (usize, &[InputSymbol]) {
    (w.len(), w)
}

/// Compares two models and lists the distinct first points of divergence.
///
/// Only unmatched edges leaving a matched state are reported: everything
/// past an unmatched state is a consequence of an earlier divergence. For a
/// matched source pair the shorter of the two access words is used, so both
/// sides of one disagreement yield the same deviation.
pub fn diff_pair(
    name_a: &str,
    a: &MealyMachine,
    name_b: &str,
    b: &MealyMachine,
    params: &LtsDiffParams,
    scenario: Scenario,
) -> (DiffReport, Vec<Deviation>) {
    let (la, lb) = (canonical_lts(a), canonical_lts(b));
    let report = lts_diff(&la, &lb, params);
    let (wa, wb) = (la.shortest_words(), lb.shortest_words());
    let pair_witness = |x: StateId, y: StateId| -> Vec<InputSymbol> {
        let (u, v) = (wa[x].clone().unwrap_or_default(), wb[y].clone().unwrap_or_default());
        if word_order(&v) < word_order(&u) {
            v
        } else {
            u
        }
    };
    let mut found: BTreeMap<(Vec<InputSymbol>, InputSymbol), ()> = BTreeMap::new();
    for e in &report.removed {
        if let Some(y) = report.matched_in_second(e.from) {
            found.insert((pair_witness(e.from, y), e.label.clone()), ());
        }
    }
    for e in &report.added {
        if let Some(x) = report.matched_in_first(e.from) {
            found.insert((pair_witness(x, e.from), e.label.clone()), ());
        }
    }
    let deviations = found
        .into_keys()
        .map(|(witness, input)| {
            let nonstandard = !input.is_standard() || witness.iter().any(|s| !s.is_standard());
            Deviation {
                behaviors: vec![behavior(name_a, a, &witness, &input), behavior(name_b, b, &witness, &input)],
                witness,
                input,
                provenance: vec![(name_a.to_string(), name_b.to_string())],
                scenario,
                nonstandard,
            }
        })
        .collect();
    (report, deviations)
}

fn merge_deviations(all: &mut Vec<Deviation>, new: Vec<Deviation>) {
    for d in new {
        match all.iter_mut().find(|x| x.key() == d.key()) {
            Some(existing) => {
                for p in d.provenance {
                    if !existing.provenance.contains(&p) {
                        existing.provenance.push(p);
                    }
                }
                for b in d.behaviors {
                    if !existing.behaviors.iter().any(|x| x.model == b.model) {
                        existing.behaviors.push(b);
                    }
                }
            }
            None => all.push(d),
        }
    }
}

/// Kinds (with cipher) a model accepts, ignoring timeouts.
fn kind_set(m: &MealyMachine) -> BTreeSet<InputSymbol> {
    m.inputs().iter().map(InputSymbol::timeout_erased).collect()
}

/// Diffs all unordered pairs and deduplicates deviations by (witness, input).
pub fn cross_diff(models: &[(String, MealyMachine)], params: &LtsDiffParams) -> Vec<Deviation> {
    cross_diff_tagged(models, params, Scenario::Cross)
}

fn cross_diff_tagged(models: &[(String, MealyMachine)], params: &LtsDiffParams, scenario: Scenario) -> Vec<Deviation> {
    let mut all = Vec::new();
    for i in 0..models.len() {
        for j in (i + 1)..models.len() {
            let (_, devs) = diff_pair(&models[i].0, &models[i].1, &models[j].0, &models[j].1, params, scenario);
            merge_deviations(&mut all, devs);
        }
    }
    all.sort_by(|x, y| word_order(&x.witness).cmp(&word_order(&y.witness)).then(x.input.cmp(&y.input)));
    all
}

/// Checks a learned model against a reference model.
pub fn reference_check(
    learned: &MealyMachine,
    reference: &MealyMachine,
    params: &LtsDiffParams,
) -> Result<Vec<Deviation>, DiffError> {
    if kind_set(learned) != kind_set(reference) {
        return Err(DiffError::AlphabetMismatch);
    }
    let models = [("reference".to_string(), reference.clone()), ("learned".to_string(), learned.clone())];
    Ok(cross_diff_tagged(&models, params, Scenario::Reference))
}

#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub first: String,
    pub second: String,
    pub report: DiffReport,
    pub deviations: Vec<Deviation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TemporalDiff {
    /// Groups of settings whose models showed no difference; the first member represents the group.
    pub unique: Vec<Vec<TimeoutSetting>>,
    pub pairs: Vec<PairReport>,
}

/// Compares models of one target learned under different timeout settings.
pub fn temporal_diff(models: &BTreeMap<TimeoutSetting, MealyMachine>, params: &LtsDiffParams) -> TemporalDiff {
    let entries: Vec<(&TimeoutSetting, &MealyMachine)> = models.iter().collect();
    let mut pairs = Vec::new();
    let mut empty = BTreeSet::new();
    for i in 0..entries.len() {
        for j in (i + 1)..entries.len() {
            let (na, nb) = (entries[i].0.to_string(), entries[j].0.to_string());
            let (report, deviations) = diff_pair(&na, entries[i].1, &nb, entries[j].1, params, Scenario::Temporal);
            if report.is_empty() {
                empty.insert((i, j));
            }
            pairs.push(PairReport { first: na, second: nb, report, deviations });
        }
    }
    let mut unique: Vec<Vec<usize>> = Vec::new();
    for i in 0..entries.len() {
        match unique.iter_mut().find(|g| empty.contains(&(g[0], i))) {
            Some(g) => g.push(i),
            None => unique.push(vec![i]),
        }
    }
    TemporalDiff {
        unique: unique.into_iter().map(|g| g.into_iter().map(|i| *entries[i].0).collect()).collect(),
        pairs,
    }
}

/// The breadth-first witness for every state, for diagnostics.
pub fn all_witnesses(m: &MealyMachine) -> Vec<Vec<InputSymbol>> {
    let mut out = vec![Vec::new(); m.num_states()];
    let mut seen = vec![false; m.num_states()];
    seen[m.initial()] = true;
    let mut queue = VecDeque::from([m.initial()]);
    while let Some(s) = queue.pop_front() {
        for i in 0..m.inputs().len() {
            if let Some((_, t)) = m.transition(s, i) {
                if !seen[t] {
                    seen[t] = true;
                    let mut w: Vec<InputSymbol> = out[s].clone();
                    w.push(m.inputs()[i].clone());
                    out[t] = w;
                    queue.push_back(t);
                }
            }
        }
    }
    out
}
