//! Active learning of Mealy machines against a membership oracle.

use thiserror::Error;

use crate::alphabet::InputSymbol;
use crate::automata::{format_observation, format_word, MealyMachine, ObservationWord};

pub mod log;
mod lstar;
pub mod oracle;
pub mod wp;

pub use self::log::{LearnLog, LogRecord, QuerySource};
pub use oracle::{cached_query, query, CacheStats, MembershipOracle, QueryCache, QueryObserver, SimulatedOracle};
pub use wp::{wp_suite, wp_suite_indices};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("nondeterminism on {}: {} vs {}", format_word(.word), format_observation(.first), format_observation(.second))]
    NondeterminismDetected {
        word: Vec<InputSymbol>,
        first: ObservationWord,
        second: ObservationWord,
    },
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("no convergence after {0} rounds")]
    RoundLimitExceeded(usize),
    #[error("the input alphabet is empty")]
    EmptyAlphabet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LearnerParams {
    /// How many states beyond the hypothesis the conformance suite accounts for.
    pub extra_states: usize,
    /// Fresh samples taken when a replay disagrees with the cache.
    pub nondeterminism_retries: usize,
    pub max_rounds: usize,
}

impl Default for LearnerParams {
    fn default() -> Self {
        LearnerParams { extra_states: 2, nondeterminism_retries: 3, max_rounds: 100 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LearnStats {
    pub rounds: usize,
    /// Words executed on the oracle while filling the observation table.
    pub membership_queries: u64,
    /// Words executed on the oracle by conformance testing.
    pub conformance_queries: u64,
    pub oracle_steps: u64,
    pub cache_hits: u64,
    pub hypothesis_sizes: Vec<usize>,
}

impl LearnStats {
    pub fn total_queries(&self) -> u64 {
        self.membership_queries + self.conformance_queries
    }
}

pub struct LearnOutcome {
    pub machine: MealyMachine,
    pub stats: LearnStats,
    pub cache: QueryCache,
}

pub fn learn<O: MembershipOracle + ?Sized>(
    alphabet: &[InputSymbol],
    oracle: &mut O,
    params: &LearnerParams,
) -> Result<MealyMachine, LearnError> {
    learn_with(alphabet, oracle, params, &mut ()).map(|o| o.machine)
}

/// Learns a machine, reporting every executed oracle word to `observer`.
pub fn learn_with<O: MembershipOracle + ?Sized>(
    alphabet: &[InputSymbol],
    oracle: &mut O,
    params: &LearnerParams,
    observer: &mut dyn QueryObserver,
) -> Result<LearnOutcome, LearnError> {
    if alphabet.is_empty() {
        return Err(LearnError::EmptyAlphabet);
    }
    let retries = params.nondeterminism_retries.max(1);
    let mut cache = QueryCache::new();
    let mut stats = LearnStats::default();
    let mut table = lstar::Table::new(alphabet, oracle, &mut cache, observer, retries);

    for round in 1..=params.max_rounds {
        stats.rounds = round;
        table.observer.phase(QuerySource::Hypothesis, round);
        let before = table.cache.stats.misses;
        table.close()?;
        let hyp = table.hypothesis()?;
        stats.membership_queries += table.cache.stats.misses - before;
        stats.hypothesis_sizes.push(hyp.num_states());
        ::log::debug!("round {round}: hypothesis with {} states", hyp.num_states());

        table.observer.phase(QuerySource::Conformance, round);
        let before = table.cache.stats.misses;
        let suite = wp::maximal_words(&wp::wp_suite_indices(&hyp, params.extra_states));
        let mut counterexample = None;
        for w in suite {
            let obs = table.output_query(&w)?;
            let expected = hyp.run(&hyp.word(&w)).expect("hypothesis is complete");
            if let Some(pos) = obs.iter().zip(&expected).position(|(a, b)| a != b) {
                counterexample = Some(w[..=pos].to_vec());
                break;
            }
        }
        stats.conformance_queries += table.cache.stats.misses - before;

        let Some(cex) = counterexample else {
            stats.oracle_steps = table.cache.stats.steps;
            stats.cache_hits = table.cache.stats.hits;
            let machine = hyp.canonical();
            drop(table);
            return Ok(LearnOutcome { machine, stats, cache });
        };
        ::log::debug!("round {round}: counterexample {}", format_word(&hyp.word(&cex)));
        table.observer.phase(QuerySource::Hypothesis, round);
        let before = table.cache.stats.misses;
        table.process_counterexample(&hyp, &cex)?;
        stats.membership_queries += table.cache.stats.misses - before;
    }
    Err(LearnError::RoundLimitExceeded(params.max_rounds))
}
