use std::collections::HashMap;

use log::warn;

use super::log::QuerySource;
use super::LearnError;
use crate::alphabet::InputSymbol;
use crate::automata::{format_observation, format_word, MealyMachine, ObservationStep, ObservationWord, StateId};

/// Something that answers input symbols: the live harness, the mock server, or a simulation.
pub trait MembershipOracle {
    /// Starts a fresh connection.
    fn reset(&mut self) -> Result<(), LearnError>;

    fn step(&mut self, input: &InputSymbol) -> Result<ObservationStep, LearnError>;

    fn query(&mut self, word: &[InputSymbol]) -> Result<ObservationWord, LearnError> {
        self.reset()?;
        word.iter().map(|s| self.step(s)).collect()
    }
}

impl<T: MembershipOracle + ?Sized> MembershipOracle for &mut T {
    fn reset(&mut self) -> Result<(), LearnError> {
        (**self).reset()
    }

    fn step(&mut self, input: &InputSymbol) -> Result<ObservationStep, LearnError> {
        (**self).step(input)
    }
}

impl<T: MembershipOracle + ?Sized> MembershipOracle for Box<T> {
    fn reset(&mut self) -> Result<(), LearnError> {
        (**self).reset()
    }

    fn step(&mut self, input: &InputSymbol) -> Result<ObservationStep, LearnError> {
        (**self).step(input)
    }
}

/// Answers from a known machine. Counts resets and steps.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    machine: MealyMachine,
    state: StateId,
    pub resets: u64,
    pub steps: u64,
}

impl SimulatedOracle {
    pub fn new(machine: MealyMachine) -> Self {
        let state = machine.initial();
        SimulatedOracle { machine, state, resets: 0, steps: 0 }
    }

    pub fn machine(&self) -> &MealyMachine {
        &self.machine
    }
}

impl MembershipOracle for SimulatedOracle {
    fn reset(&mut self) -> Result<(), LearnError> {
        self.resets += 1;
        self.state = self.machine.initial();
        Ok(())
    }

    fn step(&mut self, input: &InputSymbol) -> Result<ObservationStep, LearnError> {
        self.steps += 1;
        let (o, t) = self
            .machine
            .step(self.state, input)
            .map_err(|e| LearnError::OracleUnavailable(e.to_string()))?;
        let o = o.clone();
        self.state = t;
        Ok(o)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub resets: u64,
    pub steps: u64,
}

/// An observation that lost a majority vote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub word: Vec<InputSymbol>,
    pub kept: ObservationWord,
    pub discarded: Vec<ObservationWord>,
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: HashMap<InputSymbol, (ObservationStep, usize)>,
}

/// Prefix-closed store of everything the oracle has answered.
#[derive(Debug, Clone)]
pub struct QueryCache {
    nodes: Vec<Node>,
    pub stats: CacheStats,
    pub conflicts: Vec<Conflict>,
    generation: u64,
}

impl Default for QueryCache {
    fn default() -> Self {
        QueryCache { nodes: vec![Node::default()], stats: CacheStats::default(), conflicts: Vec::new(), generation: 0 }
    }
}

impl QueryCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bumped whenever a stored answer is overwritten.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Cached outputs for the longest cached prefix of `word`.
    pub fn lookup(&self, word: &[InputSymbol]) -> ObservationWord {
        let mut node = 0;
        let mut out = Vec::new();
        for sym in word {
            match self.nodes[node].children.get(sym) {
                Some((o, next)) => {
                    out.push(o.clone());
                    node = *next;
                }
                None => break,
            }
        }
        out
    }

    pub fn get(&self, word: &[InputSymbol]) -> Option<ObservationWord> {
        let out = self.lookup(word);
        (out.len() == word.len()).then_some(out)
    }

    /// Stores `obs` for `word` and all its prefixes, replacing disagreeing entries.
    pub fn insert(&mut self, word: &[InputSymbol], obs: &[ObservationStep]) {
        debug_assert_eq!(word.len(), obs.len());
        let mut node = 0;
        for (sym, o) in word.iter().zip(obs) {
            let existing = self.nodes[node].children.get(sym).cloned();
            node = match existing {
                Some((old, next)) if old == *o => next,
                Some((_, _)) => {
                    // Forget everything below the overwritten step.
                    self.generation += 1;
                    let fresh = self.nodes.len();
                    self.nodes.push(Node::default());
                    self.nodes[node].children.insert(sym.clone(), (o.clone(), fresh));
                    fresh
                }
                None => {
                    let fresh = self.nodes.len();
                    self.nodes.push(Node::default());
                    self.nodes[node].children.insert(sym.clone(), (o.clone(), fresh));
                    fresh
                }
            };
        }
    }

    /// Number of distinct cached words (trie nodes minus the root).
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Receives one record per word actually executed on the oracle.
pub trait QueryObserver {
    fn executed(&mut self, word: &[InputSymbol], obs: &[ObservationStep]);

    /// Called by the learner when it switches phase.
    fn phase(&mut self, _source: QuerySource, _round: usize) {}
}

impl QueryObserver for () {
    fn executed(&mut self, _: &[InputSymbol], _: &[ObservationStep]) {}
}

fn execute<O: MembershipOracle + ?Sized>(
    oracle: &mut O,
    cache: &mut QueryCache,
    word: &[InputSymbol],
    observer: &mut dyn QueryObserver,
) -> Result<ObservationWord, LearnError> {
    cache.stats.resets += 1;
    cache.stats.steps += word.len() as u64;
    let obs = oracle.query(word)?;
    if obs.len() != word.len() {
        return Err(LearnError::OracleUnavailable(format!(
            "oracle returned {} steps for a {}-symbol word",
            obs.len(),
            word.len()
        )));
    }
    observer.executed(word, &obs);
    Ok(obs)
}

/// Answers `word` through the cache, re-executing on disagreement.
///
/// On a conflict between a fresh run and the cache, the word is run until
/// `retries` fresh samples exist; a strict majority wins and is stored.
pub fn cached_query<O: MembershipOracle + ?Sized>(
    oracle: &mut O,
    cache: &mut QueryCache,
    word: &[InputSymbol],
    retries: usize,
    observer: &mut dyn QueryObserver,
) -> Result<ObservationWord, LearnError> {
    if let Some(hit) = cache.get(word) {
        cache.stats.hits += 1;
        return Ok(hit);
    }
    cache.stats.misses += 1;
    let cached = cache.lookup(word);
    let first = execute(oracle, cache, word, observer)?;
    if first[..cached.len()] == cached[..] {
        cache.insert(word, &first);
        return Ok(first);
    }

    let mut samples = vec![first];
    while samples.len() < retries.max(1) {
        samples.push(execute(oracle, cache, word, observer)?);
    }
    let mut winner = None;
    for s in &samples {
        let votes = samples.iter().filter(|x| *x == s).count();
        if 2 * votes > samples.len() {
            winner = Some(s.clone());
            break;
        }
    }
    let Some(winner) = winner else {
        return Err(LearnError::NondeterminismDetected {
            word: word.to_vec(),
            first: cached,
            second: samples.swap_remove(0),
        });
    };
    let discarded: Vec<ObservationWord> = samples.into_iter().filter(|s| *s != winner).collect();
    warn!(
        "nondeterminism on {} resolved by majority to {} ({} minority samples)",
        format_word(word),
        format_observation(&winner),
        discarded.len()
    );
    cache.conflicts.push(Conflict { word: word.to_vec(), kept: winner.clone(), discarded });
    cache.insert(word, &winner);
    Ok(winner)
}

/// [`cached_query`] with the default retry count of 3 and no logging.
pub fn query<O: MembershipOracle + ?Sized>(
    oracle: &mut O,
    cache: &mut QueryCache,
    word: &[InputSymbol],
) -> Result<ObservationWord, LearnError> {
    cached_query(oracle, cache, word, 3, &mut ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{InputKind, OutputSymbol, TimeoutClass};
    use crate::automata::random;
    use rand::{rngs::StdRng, SeedableRng};

    /// Answers each query with the next scripted observation word.
    struct Scripted {
        answers: Vec<ObservationWord>,
        next: usize,
        pending: ObservationWord,
    }

    impl MembershipOracle for Scripted {
        fn reset(&mut self) -> Result<(), LearnError> {
            self.pending = self.answers[self.next].clone();
            self.next += 1;
            self.pending.reverse();
            Ok(())
        }

        fn step(&mut self, _: &InputSymbol) -> Result<ObservationStep, LearnError> {
            Ok(self.pending.pop().unwrap())
        }
    }

    fn one(o: OutputSymbol) -> ObservationStep {
        ObservationStep::single(o)
    }

    fn ping() -> InputSymbol {
        InputSymbol::timed(InputKind::InitPing, TimeoutClass::Short)
    }

    #[test]
    fn repeated_query_is_a_cache_hit() {
        let mut rng = StdRng::seed_from_u64(2);
        let m = random::random_machine(&mut rng, 4, 3, 3, false);
        let mut oracle = SimulatedOracle::new(m.clone());
        let mut cache = QueryCache::new();
        let w = m.word(&[0, 1, 2, 0]);
        let a = query(&mut oracle, &mut cache, &w).unwrap();
        let steps = oracle.steps;
        let b = query(&mut oracle, &mut cache, &w).unwrap();
        assert_eq!(a, b);
        assert_eq!(oracle.steps, steps);
        assert_eq!(cache.stats.hits, 1);
        query(&mut oracle, &mut cache, &w[..2]).unwrap();
        assert_eq!(oracle.steps, steps, "prefixes are cached too");
    }

    #[test]
    fn majority_resolves_flaky_replay() {
        let a = one(OutputSymbol::PingAck);
        let b = one(OutputSymbol::NoResponse);
        let mut oracle = Scripted {
            answers: vec![
                vec![a.clone()],
                vec![b.clone(), a.clone()],
                vec![a.clone(), a.clone()],
                vec![a.clone(), a.clone()],
            ],
            next: 0,
            pending: Vec::new(),
        };
        let mut cache = QueryCache::new();
        query(&mut oracle, &mut cache, &[ping()]).unwrap();
        let got = query(&mut oracle, &mut cache, &[ping(), ping()]).unwrap();
        assert_eq!(got, vec![a.clone(), a.clone()]);
        assert_eq!(cache.conflicts.len(), 1);
        assert_eq!(cache.conflicts[0].discarded, vec![vec![b, a]]);
        assert_eq!(cache.generation(), 0);
    }

    #[test]
    fn persistent_conflict_is_reported() {
        let a = one(OutputSymbol::PingAck);
        let b = one(OutputSymbol::NoResponse);
        let c = one(OutputSymbol::ConClose);
        let mut oracle = Scripted {
            answers: vec![
                vec![a.clone()],
                vec![b.clone(), a.clone()],
                vec![c.clone(), a.clone()],
                vec![a.clone(), b.clone()],
            ],
            next: 0,
            pending: Vec::new(),
        };
        let mut cache = QueryCache::new();
        query(&mut oracle, &mut cache, &[ping()]).unwrap();
        match query(&mut oracle, &mut cache, &[ping(), ping()]) {
            Err(LearnError::NondeterminismDetected { first, second, .. }) => {
                assert_eq!(first, vec![a.clone()]);
                assert_eq!(second, vec![b, a]);
            }
            other => panic!("expected nondeterminism, got {other:?}"),
        }
    }

    #[test]
    fn majority_against_cache_overwrites_it() {
        let a = one(OutputSymbol::PingAck);
        let b = one(OutputSymbol::NoResponse);
        let mut oracle = Scripted {
            answers: vec![vec![a.clone()], vec![b.clone(), a.clone()], vec![b.clone(), a.clone()], vec![b.clone(), a.clone()]],
            next: 0,
            pending: Vec::new(),
        };
        let mut cache = QueryCache::new();
        query(&mut oracle, &mut cache, &[ping()]).unwrap();
        query(&mut oracle, &mut cache, &[ping(), ping()]).unwrap();
        assert_eq!(cache.get(&[ping()]), Some(vec![b]));
        assert_eq!(cache.generation(), 1);
    }
}
