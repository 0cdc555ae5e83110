//! Deterministic Mealy machines over the QUIC symbol alphabet.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alphabet::{InputSymbol, OutputSymbol, SymbolError, SymbolRegistry};

pub mod dot;
pub mod random;

pub use dot::{from_dot, from_dot_with_metadata, to_dot, ModelMetadata, RenderOptions};

pub type StateId = usize;

#[derive(Debug, Error)]
pub enum AutomataError {
    #[error("no transition from s{state} on {input}")]
    UndefinedTransition { state: StateId, input: String },
    #[error("input {0} is not in the machine's alphabet")]
    UnknownInput(String),
    #[error("machines have different input alphabets")]
    AlphabetMismatch,
    #[error("DOT syntax error on line {line}: {message}")]
    DotSyntax { line: usize, message: String },
    #[error("bad label on line {line}: {source}")]
    LabelGrammar {
        line: usize,
        #[source]
        source: SymbolError,
    },
    #[error("state s{0} does not exist")]
    NoSuchState(StateId),
}

/// The outputs elicited by one input.
///
/// Equality, ordering and hashing look only at the set of symbols; the
/// arrival order is kept for rendering.
#[derive(Debug, Clone, Default)]
pub struct ObservationStep {
    arrival: Vec<OutputSymbol>,
    sorted: Vec<OutputSymbol>,
}

impl ObservationStep {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(o: OutputSymbol) -> Self {
        let mut s = Self::new();
        s.push(o);
        s
    }

    pub fn from_outputs<I: IntoIterator<Item = OutputSymbol>>(outputs: I) -> Self {
        let mut s = Self::new();
        for o in outputs {
            s.push(o);
        }
        s
    }

    /// Adds a symbol unless already present. Status symbols stay last.
    pub fn push(&mut self, o: OutputSymbol) {
        if let Err(pos) = self.sorted.binary_search(&o) {
            self.sorted.insert(pos, o.clone());
            if o.is_status() {
                self.arrival.push(o);
            } else {
                let at = self
                    .arrival
                    .iter()
                    .position(|x| x.is_status())
                    .unwrap_or(self.arrival.len());
                self.arrival.insert(at, o);
            }
        }
    }

    pub fn union(&self, other: &ObservationStep) -> ObservationStep {
        let mut out = self.clone();
        for o in &other.arrival {
            out.push(o.clone());
        }
        out
    }

    /// Symbols in arrival order.
    pub fn outputs(&self) -> &[OutputSymbol] {
        &self.arrival
    }

    /// Symbols in canonical order.
    pub fn set(&self) -> &[OutputSymbol] {
        &self.sorted
    }

    pub fn contains(&self, o: &OutputSymbol) -> bool {
        self.sorted.binary_search(o).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    /// The same step without hidden-status symbols.
    pub fn without_status(&self) -> ObservationStep {
        ObservationStep::from_outputs(self.arrival.iter().filter(|o| !o.is_status()).cloned())
    }

    pub fn parse(text: &str) -> Result<Self, SymbolError> {
        Self::parse_with(text, &SymbolRegistry::standard())
    }

    pub fn parse_with(text: &str, registry: &SymbolRegistry) -> Result<Self, SymbolError> {
        let text = text.trim();
        if text == "-" || text.is_empty() {
            return Ok(Self::new());
        }
        let mut step = Self::new();
        for part in text.split(',') {
            step.push(registry.parse_output(part)?);
        }
        Ok(step)
    }
}

impl PartialEq for ObservationStep {
    fn eq(&self, other: &Self) -> bool {
        self.sorted == other.sorted
    }
}

impl Eq for ObservationStep {}

impl Hash for ObservationStep {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.sorted.hash(state);
    }
}

impl PartialOrd for ObservationStep {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ObservationStep {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sorted.cmp(&other.sorted)
    }
}

impl fmt::Display for ObservationStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.arrival.is_empty() {
            return f.write_str("-");
        }
        for (i, o) in self.arrival.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{o}")?;
        }
        Ok(())
    }
}

impl Serialize for ObservationStep {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObservationStep {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        ObservationStep::parse(&text).map_err(serde::de::Error::custom)
    }
}

pub type ObservationWord = Vec<ObservationStep>;

pub fn format_word(word: &[InputSymbol]) -> String {
    word.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

pub fn format_observation(obs: &[ObservationStep]) -> String {
    obs.iter().map(|s| format!("{{{s}}}")).collect::<Vec<_>>().join(" ")
}

/// Splits a comma-separated word, respecting parameter parentheses.
pub fn parse_word(text: &str) -> Result<Vec<InputSymbol>, SymbolError> {
    parse_word_with(text, &SymbolRegistry::standard())
}

pub fn parse_word_with(text: &str, registry: &SymbolRegistry) -> Result<Vec<InputSymbol>, SymbolError> {
    split_word(text).into_iter().map(|s| registry.parse_input(s)).collect()
}

/// Like [`parse_word`] but also accepts the timeout-free labels of optimized
/// models and deviation witnesses.
pub fn parse_label_word(text: &str) -> Result<Vec<InputSymbol>, SymbolError> {
    split_word(text).into_iter().map(crate::alphabet::parse_input_label).collect()
}

fn split_word(text: &str) -> Vec<&str> {
    let text = text.trim();
    if text.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&text[start..]);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub input_word: Vec<InputSymbol>,
    pub expected: ObservationWord,
    pub actual: ObservationWord,
}

type Edge = Option<(ObservationStep, StateId)>;

/// A deterministic Mealy machine with dense state ids.
///
/// All states are reachable from the initial state. Learned machines are
/// input-complete; optimized machines may leave transitions undefined.
#[derive(Debug, Clone)]
pub struct MealyMachine {
    inputs: Vec<InputSymbol>,
    index: HashMap<InputSymbol, usize>,
    initial: StateId,
    delta: Vec<Vec<Edge>>,
}

/// Incremental construction of a [`MealyMachine`].
#[derive(Debug, Clone)]
pub struct MealyBuilder {
    inputs: Vec<InputSymbol>,
    index: HashMap<InputSymbol, usize>,
    delta: Vec<Vec<Edge>>,
    initial: StateId,
}

impl MealyBuilder {
    pub fn new(inputs: Vec<InputSymbol>) -> Self {
        let index = inputs.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        MealyBuilder { inputs, index, delta: Vec::new(), initial: 0 }
    }

    pub fn add_state(&mut self) -> StateId {
        self.delta.push(vec![None; self.inputs.len()]);
        self.delta.len() - 1
    }

    pub fn add_states(&mut self, n: usize) {
        for _ in 0..n {
            self.add_state();
        }
    }

    pub fn set_initial(&mut self, s: StateId) {
        self.initial = s;
    }

    pub fn input_index(&self, input: &InputSymbol) -> Option<usize> {
        self.index.get(input).copied()
    }

    /// Sets (or replaces) the transition from `from` on input number `input`.
    pub fn set(&mut self, from: StateId, input: usize, out: ObservationStep, to: StateId) {
        while self.delta.len() <= from.max(to) {
            self.add_state();
        }
        self.delta[from][input] = Some((out, to));
    }

    pub fn set_symbol(
        &mut self,
        from: StateId,
        input: &InputSymbol,
        out: ObservationStep,
        to: StateId,
    ) -> Result<(), AutomataError> {
        let i = self
            .input_index(input)
            .ok_or_else(|| AutomataError::UnknownInput(input.to_string()))?;
        self.set(from, i, out, to);
        Ok(())
    }

    /// Finishes the machine, dropping unreachable states and renumbering the
    /// rest in ascending id order.
    pub fn build(mut self) -> MealyMachine {
        if self.delta.is_empty() {
            self.add_state();
        }
        let n = self.delta.len();
        let mut reach = vec![false; n];
        let mut queue = VecDeque::from([self.initial]);
        reach[self.initial] = true;
        while let Some(s) = queue.pop_front() {
            for (_, t) in self.delta[s].iter().flatten() {
                if !reach[*t] {
                    reach[*t] = true;
                    queue.push_back(*t);
                }
            }
        }
        let mut renum = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if reach[s] {
                renum[s] = next;
                next += 1;
            }
        }
        let delta = self
            .delta
            .into_iter()
            .enumerate()
            .filter(|(s, _)| reach[*s])
            .map(|(_, row)| {
                row.into_iter()
                    .map(|e| e.map(|(o, t)| (o, renum[t])))
                    .collect()
            })
            .collect();
        MealyMachine {
            inputs: self.inputs,
            index: self.index,
            initial: renum[self.initial],
            delta,
        }
    }
}

impl MealyMachine {
    pub fn builder(inputs: Vec<InputSymbol>) -> MealyBuilder {
        MealyBuilder::new(inputs)
    }

    pub fn num_states(&self) -> usize {
        self.delta.len()
    }

    pub fn states(&self) -> std::ops::Range<StateId> {
        0..self.delta.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn inputs(&self) -> &[InputSymbol] {
        &self.inputs
    }

    pub fn input_index(&self, input: &InputSymbol) -> Option<usize> {
        self.index.get(input).copied()
    }

    pub fn transition(&self, state: StateId, input: usize) -> Option<(&ObservationStep, StateId)> {
        self.delta[state][input].as_ref().map(|(o, t)| (o, *t))
    }

    pub fn transition_for(
        &self,
        state: StateId,
        input: &InputSymbol,
    ) -> Result<Option<(&ObservationStep, StateId)>, AutomataError> {
        let i = self
            .input_index(input)
            .ok_or_else(|| AutomataError::UnknownInput(input.to_string()))?;
        Ok(self.transition(state, i))
    }

    /// All defined transitions as `(source, input index, output, target)`.
    pub fn edges(&self) -> impl Iterator<Item = (StateId, usize, &ObservationStep, StateId)> + '_ {
        self.delta.iter().enumerate().flat_map(|(s, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(i, e)| e.as_ref().map(|(o, t)| (s, i, o, *t)))
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges().count()
    }

    pub fn is_complete(&self) -> bool {
        self.delta.iter().all(|row| row.iter().all(Option::is_some))
    }

    pub fn step(&self, state: StateId, input: &InputSymbol) -> Result<(&ObservationStep, StateId), AutomataError> {
        self.transition_for(state, input)?
            .ok_or_else(|| AutomataError::UndefinedTransition { state, input: input.to_string() })
    }

    /// Simulates `word` from the initial state.
    pub fn run(&self, word: &[InputSymbol]) -> Result<ObservationWord, AutomataError> {
        let mut state = self.initial;
        let mut out = Vec::with_capacity(word.len());
        for sym in word {
            let (o, t) = self.step(state, sym)?;
            out.push(o.clone());
            state = t;
        }
        Ok(out)
    }

    pub fn state_after(&self, word: &[InputSymbol]) -> Result<StateId, AutomataError> {
        self.state_after_from(self.initial, word)
    }

    pub fn state_after_from(&self, from: StateId, word: &[InputSymbol]) -> Result<StateId, AutomataError> {
        let mut state = from;
        for sym in word {
            state = self.step(state, sym)?.1;
        }
        Ok(state)
    }

    /// Shortest word from the initial state to every state, ties broken by input order.
    pub fn access_sequences(&self) -> Vec<Vec<usize>> {
        let mut access: Vec<Option<Vec<usize>>> = vec![None; self.num_states()];
        access[self.initial] = Some(Vec::new());
        let mut queue = VecDeque::from([self.initial]);
        while let Some(s) = queue.pop_front() {
            for i in 0..self.inputs.len() {
                if let Some((_, t)) = self.transition(s, i) {
                    if access[t].is_none() {
                        let mut w = access[s].clone().unwrap();
                        w.push(i);
                        access[t] = Some(w);
                        queue.push_back(t);
                    }
                }
            }
        }
        access.into_iter().map(|a| a.unwrap_or_default()).collect()
    }

    pub fn word(&self, indices: &[usize]) -> Vec<InputSymbol> {
        indices.iter().map(|&i| self.inputs[i].clone()).collect()
    }

    /// Shortest counterexample between `self` and `other`, or `None` if equivalent.
    pub fn equivalent(&self, other: &MealyMachine) -> Result<Option<Counterexample>, AutomataError> {
        equivalent(self, other)
    }

    pub fn minimize(&self) -> MealyMachine {
        minimize(self)
    }

    /// Renumbers states in breadth-first order from the initial state.
    pub fn canonical(&self) -> MealyMachine {
        let mut bfs = vec![usize::MAX; self.num_states()];
        let mut queue = VecDeque::from([self.initial]);
        let mut next = 1;
        bfs[self.initial] = 0;
        while let Some(s) = queue.pop_front() {
            for i in 0..self.inputs.len() {
                if let Some((_, t)) = self.transition(s, i) {
                    if bfs[t] == usize::MAX {
                        bfs[t] = next;
                        next += 1;
                        queue.push_back(t);
                    }
                }
            }
        }
        let mut b = MealyBuilder::new(self.inputs.clone());
        b.add_states(self.num_states());
        for (s, i, o, t) in self.edges() {
            b.set(bfs[s], i, o.clone(), bfs[t]);
        }
        b.set_initial(0);
        b.build()
    }

    /// Same machine with a different (superset or reordered) alphabet.
    pub fn with_inputs(&self, inputs: Vec<InputSymbol>) -> Result<MealyMachine, AutomataError> {
        let mut b = MealyBuilder::new(inputs);
        b.add_states(self.num_states());
        for (s, i, o, t) in self.edges() {
            b.set_symbol(s, &self.inputs[i], o.clone(), t)?;
        }
        b.set_initial(self.initial);
        Ok(b.build())
    }

    /// Returns a copy where `f` may rewrite or drop each edge.
    pub fn map_edges<F>(&self, mut f: F) -> MealyMachine
    where
        F: FnMut(StateId, &InputSymbol, &ObservationStep, StateId) -> Option<(ObservationStep, StateId)>,
    {
        let mut b = MealyBuilder::new(self.inputs.clone());
        b.add_states(self.num_states());
        for (s, i, o, t) in self.edges() {
            if let Some((o2, t2)) = f(s, &self.inputs[i], o, t) {
                b.set(s, i, o2, t2);
            }
        }
        b.set_initial(self.initial);
        b.build()
    }
}

fn same_alphabet(a: &MealyMachine, b: &MealyMachine) -> bool {
    a.inputs.len() == b.inputs.len() && a.inputs.iter().all(|s| b.index.contains_key(s))
}

/// Breadth-first search over the product machine.
///
/// Undefined transitions count as an observable difference from defined ones.
pub fn equivalent(m1: &MealyMachine, m2: &MealyMachine) -> Result<Option<Counterexample>, AutomataError> {
    if !same_alphabet(m1, m2) {
        return Err(AutomataError::AlphabetMismatch);
    }
    let remap: Vec<usize> = m1.inputs.iter().map(|s| m2.index[s]).collect();
    let n2 = m2.num_states();
    let mut parent: HashMap<usize, (usize, usize)> = HashMap::new();
    let start = m1.initial * n2 + m2.initial;
    let mut seen = vec![false; m1.num_states() * n2];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        let (s1, s2) = (p / n2, p % n2);
        for i in 0..m1.inputs.len() {
            let e1 = m1.transition(s1, i);
            let e2 = m2.transition(s2, remap[i]);
            let differs = match (e1, e2) {
                (Some((o1, _)), Some((o2, _))) => o1 != o2,
                (None, None) => false,
                _ => true,
            };
            if differs {
                let mut idx = vec![i];
                let mut cur = p;
                while cur != start {
                    let (prev, inp) = parent[&cur];
                    idx.push(inp);
                    cur = prev;
                }
                idx.reverse();
                let word = m1.word(&idx);
                let expected = partial_run(m1, &word);
                let actual = partial_run(m2, &word);
                return Ok(Some(Counterexample { input_word: word, expected, actual }));
            }
            if let (Some((_, t1)), Some((_, t2))) = (e1, e2) {
                let q = t1 * n2 + t2;
                if !seen[q] {
                    seen[q] = true;
                    parent.insert(q, (p, i));
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(None)
}

/// Runs as far as the machine is defined.
fn partial_run(m: &MealyMachine, word: &[InputSymbol]) -> ObservationWord {
    let mut state = m.initial;
    let mut out = Vec::new();
    for sym in word {
        match m.transition_for(state, sym).ok().flatten() {
            Some((o, t)) => {
                out.push(o.clone());
                state = t;
            }
            None => break,
        }
    }
    out
}

/// Moore-style partition refinement; the result is in canonical BFS numbering.
pub fn minimize(m: &MealyMachine) -> MealyMachine {
    let n = m.num_states();
    let k = m.inputs.len();
    let mut block: Vec<usize> = {
        let mut ids: HashMap<Vec<Option<&ObservationStep>>, usize> = HashMap::new();
        (0..n)
            .map(|s| {
                let sig: Vec<Option<&ObservationStep>> =
                    (0..k).map(|i| m.transition(s, i).map(|(o, _)| o)).collect();
                let next = ids.len();
                *ids.entry(sig).or_insert(next)
            })
            .collect()
    };
    loop {
        let mut ids: HashMap<(usize, Vec<Option<usize>>), usize> = HashMap::new();
        let refined: Vec<usize> = (0..n)
            .map(|s| {
                let sig: Vec<Option<usize>> =
                    (0..k).map(|i| m.transition(s, i).map(|(_, t)| block[t])).collect();
                let next = ids.len();
                *ids.entry((block[s], sig)).or_insert(next)
            })
            .collect();
        let before = block.iter().max().map_or(0, |x| x + 1);
        let after = ids.len();
        block = refined;
        if after == before {
            break;
        }
    }
    let nb = block.iter().max().map_or(0, |x| x + 1);
    let mut b = MealyBuilder::new(m.inputs.clone());
    b.add_states(nb);
    for (s, i, o, t) in m.edges() {
        b.set(block[s], i, o.clone(), block[t]);
    }
    b.set_initial(block[m.initial]);
    b.build().canonical()
}

/// Structural isomorphism preserving the initial state, inputs and outputs.
pub fn isomorphic(a: &MealyMachine, b: &MealyMachine) -> bool {
    if a.num_states() != b.num_states() || !same_alphabet(a, b) {
        return false;
    }
    let remap: Vec<usize> = a.inputs.iter().map(|s| b.index[s]).collect();
    let mut map = vec![usize::MAX; a.num_states()];
    let mut used = vec![false; b.num_states()];
    map[a.initial] = b.initial;
    used[b.initial] = true;
    let mut queue = VecDeque::from([a.initial]);
    while let Some(s) = queue.pop_front() {
        for i in 0..a.inputs.len() {
            match (a.transition(s, i), b.transition(map[s], remap[i])) {
                (None, None) => {}
                (Some((o1, t1)), Some((o2, t2))) => {
                    if o1 != o2 {
                        return false;
                    }
                    if map[t1] == usize::MAX {
                        if used[t2] {
                            return false;
                        }
                        map[t1] = t2;
                        used[t2] = true;
                        queue.push_back(t1);
                    } else if map[t1] != t2 {
                        return false;
                    }
                }
                _ => return false,
            }
        }
    }
    true
}
