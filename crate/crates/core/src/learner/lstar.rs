//! Observation-table learning for Mealy machines.
//!
//! Rows of the short prefixes `S` are kept pairwise distinct, so the table is
//! always consistent and only closedness has to be restored. Counterexamples
//! are reduced to a single distinguishing suffix by binary search and added
//! to the suffix set `E`.

use std::collections::HashMap;

use super::oracle::{cached_query, MembershipOracle, QueryCache, QueryObserver};
use super::LearnError;
use crate::alphabet::InputSymbol;
use crate::automata::{MealyBuilder, MealyMachine, ObservationStep};

type Word = Vec<usize>;
type Row = Vec<Vec<ObservationStep>>;

pub(crate) struct Table<'a, O: MembershipOracle + ?Sized> {
    pub alphabet: &'a [InputSymbol],
    pub oracle: &'a mut O,
    pub cache: &'a mut QueryCache,
    pub observer: &'a mut dyn QueryObserver,
    pub retries: usize,
    pub short: Vec<Word>,
    pub suffixes: Vec<Word>,
    rows: HashMap<Word, Row>,
    generation: u64,
}

impl<'a, O: MembershipOracle + ?Sized> Table<'a, O> {
    pub fn new(
        alphabet: &'a [InputSymbol],
        oracle: &'a mut O,
        cache: &'a mut QueryCache,
        observer: &'a mut dyn QueryObserver,
        retries: usize,
    ) -> Self {
        let generation = cache.generation();
        Table {
            alphabet,
            oracle,
            cache,
            observer,
            retries,
            short: vec![Vec::new()],
            suffixes: (0..alphabet.len()).map(|i| vec![i]).collect(),
            rows: HashMap::new(),
            generation,
        }
    }

    fn symbols(&self, w: &[usize]) -> Vec<InputSymbol> {
        w.iter().map(|&i| self.alphabet[i].clone()).collect()
    }

    pub fn output_query(&mut self, w: &[usize]) -> Result<Vec<ObservationStep>, LearnError> {
        let word = self.symbols(w);
        cached_query(&mut *self.oracle, self.cache, &word, self.retries, self.observer)
    }

    fn row(&mut self, u: &[usize]) -> Result<Row, LearnError> {
        if self.cache.generation() != self.generation {
            self.generation = self.cache.generation();
            self.rows.clear();
        }
        let mut row: Row = self.rows.get(u).cloned().unwrap_or_default();
        for e in self.suffixes[row.len()..].to_vec() {
            let w = [u, e.as_slice()].concat();
            let obs = self.output_query(&w)?;
            row.push(obs[u.len()..].to_vec());
        }
        self.rows.insert(u.to_vec(), row.clone());
        Ok(row)
    }

    /// Adds one-symbol extensions of `S` whose rows are new until none remain.
    ///
    /// If rows of `S` collapse (after the cache overwrote an answer), the
    /// table is rebuilt from scratch.
    pub fn close(&mut self) -> Result<(), LearnError> {
        'outer: loop {
            let mut known: HashMap<Row, usize> = HashMap::new();
            for i in 0..self.short.len() {
                let s = self.short[i].clone();
                let r = self.row(&s)?;
                if known.insert(r, i).is_some() {
                    self.short.truncate(1);
                    continue 'outer;
                }
            }
            for i in 0..self.short.len() {
                for a in 0..self.alphabet.len() {
                    let mut u = self.short[i].clone();
                    u.push(a);
                    let r = self.row(&u)?;
                    if !known.contains_key(&r) {
                        self.short.push(u);
                        continue 'outer;
                    }
                }
            }
            return Ok(());
        }
    }

    /// The hypothesis of a closed table. State `i` is `short[i]`.
    pub fn hypothesis(&mut self) -> Result<MealyMachine, LearnError> {
        let mut states: HashMap<Row, usize> = HashMap::new();
        for i in 0..self.short.len() {
            let s = self.short[i].clone();
            states.insert(self.row(&s)?, i);
        }
        let mut b = MealyBuilder::new(self.alphabet.to_vec());
        b.add_states(self.short.len());
        for i in 0..self.short.len() {
            let s = self.short[i].clone();
            let own = self.row(&s)?;
            for a in 0..self.alphabet.len() {
                let mut u = s.clone();
                u.push(a);
                let r = self.row(&u)?;
                let target = *states.get(&r).ok_or_else(|| {
                    LearnError::OracleUnavailable("observation table is not closed".into())
                })?;
                b.set(i, a, own[a][0].clone(), target);
            }
        }
        b.set_initial(0);
        Ok(b.build())
    }

    /// Rivest–Schapire analysis: adds the suffix that exposes a new state.
    ///
    /// Returns false if the counterexample yields no new suffix.
    pub fn process_counterexample(&mut self, hyp: &MealyMachine, cex: &[usize]) -> Result<bool, LearnError> {
        let hyp_out = hyp
            .run(&self.symbols(cex))
            .map_err(|e| LearnError::OracleUnavailable(e.to_string()))?;
        // Hypothesis state i is short[i], so the short prefixes are its access words.
        let access = self.short.clone();
        let n = cex.len();
        // agrees(i): oracle output of access(cex[..i]) . cex[i..] matches the hypothesis on cex[i..].
        let agrees = |table: &mut Self, i: usize| -> Result<bool, LearnError> {
            let state = hyp
                .state_after(&table.symbols(&cex[..i]))
                .map_err(|e| LearnError::OracleUnavailable(e.to_string()))?;
            let acc = &access[state];
            let w = [acc.as_slice(), &cex[i..]].concat();
            let obs = table.output_query(&w)?;
            Ok(obs[acc.len()..] == hyp_out[i..])
        };
        if agrees(self, 0)? {
            return Ok(false);
        }
        let (mut lo, mut hi) = (0, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if agrees(self, mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let suffix = cex[hi..].to_vec();
        if !suffix.is_empty() && !self.suffixes.contains(&suffix) {
            self.suffixes.push(suffix);
            return Ok(true);
        }
        let mut added = false;
        for i in 1..n {
            let s = cex[i..].to_vec();
            if !self.suffixes.contains(&s) {
                self.suffixes.push(s);
                added = true;
            }
        }
        Ok(added)
    }
}
