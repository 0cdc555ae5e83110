//! Wp-method conformance test suites.

use std::collections::{BTreeSet, VecDeque};

use crate::alphabet::InputSymbol;
use crate::automata::{MealyMachine, StateId};

type Word = Vec<usize>;

/// Shortest word (as input indices) whose outputs differ when run from `a` and from `b`.
fn separating_word(m: &MealyMachine, a: StateId, b: StateId) -> Option<Word> {
    let n = m.num_states();
    let k = m.inputs().len();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n * n];
    let start = a * n + b;
    let mut seen = vec![false; n * n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        let (s, t) = (p / n, p % n);
        for i in 0..k {
            let (e1, e2) = (m.transition(s, i), m.transition(t, i));
            let differs = match (e1, e2) {
                (Some((o1, _)), Some((o2, _))) => o1 != o2,
                (None, None) => false,
                _ => true,
            };
            if differs {
                let mut w = vec![i];
                let mut cur = p;
                while let Some((prev, inp)) = parent[cur] {
                    w.push(inp);
                    cur = prev;
                }
                w.reverse();
                return Some(w);
            }
            if let (Some((_, s2)), Some((_, t2))) = (e1, e2) {
                let q = s2 * n + t2;
                if !seen[q] {
                    seen[q] = true;
                    parent[q] = Some((p, i));
                    queue.push_back(q);
                }
            }
        }
    }
    None
}

/// Per-state identification sets; each contains the empty word.
pub fn identification_sets(m: &MealyMachine) -> Vec<BTreeSet<Word>> {
    let n = m.num_states();
    let mut sets: Vec<BTreeSet<Word>> = vec![BTreeSet::from([Vec::new()]); n];
    for a in 0..n {
        for b in (a + 1)..n {
            if let Some(w) = separating_word(m, a, b) {
                sets[a].insert(w.clone());
                sets[b].insert(w);
            }
        }
    }
    sets
}

/// All words over `k` inputs of length at most `depth`, shortest first.
fn middle_words(k: usize, depth: usize) -> Vec<Word> {
    let mut all = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(layer.len() * k);
        for w in &layer {
            for i in 0..k {
                let mut w2: Word = w.clone();
                w2.push(i);
                next.push(w2);
            }
        }
        all.extend(next.iter().cloned());
        layer = next;
    }
    all
}

fn run_indices(m: &MealyMachine, from: StateId, w: &[usize]) -> Option<StateId> {
    let mut s = from;
    for &i in w {
        s = m.transition(s, i)?.1;
    }
    Some(s)
}

/// Wp-method suite as input-index words, sorted by length then index order.
pub fn wp_suite_indices(m: &MealyMachine, extra_states: usize) -> Vec<Word> {
    let k = m.inputs().len();
    let access = m.access_sequences();
    let ident = identification_sets(m);
    let w_all: BTreeSet<Word> = ident.iter().flatten().cloned().collect();
    let middle = middle_words(k, extra_states);
    let mut suite: BTreeSet<(usize, Word)> = BTreeSet::new();
    let mut add = |w: Word| {
        suite.insert((w.len(), w));
    };

    // Phase 1: state cover, then every middle word, then the full characterization set.
    for p in &access {
        for x in &middle {
            for w in &w_all {
                add([p.as_slice(), x, w].concat());
            }
        }
    }
    // Phase 2: remaining transitions, checked with the identification set of the state reached.
    let cover: BTreeSet<&Word> = access.iter().collect();
    for (s, p) in access.iter().enumerate() {
        for i in 0..k {
            if m.transition(s, i).is_none() {
                continue;
            }
            let mut q = p.clone();
            q.push(i);
            if cover.contains(&q) {
                continue;
            }
            for x in &middle {
                let qx = [q.as_slice(), x].concat();
                let Some(target) = run_indices(m, m.initial(), &qx) else { continue };
                for w in &ident[target] {
                    add([qx.as_slice(), w].concat());
                }
            }
        }
    }
    suite.into_iter().map(|(_, w)| w).filter(|w| !w.is_empty()).collect()
}

/// Wp-method suite over the hypothesis alphabet.
pub fn wp_suite(m: &MealyMachine, extra_states: usize) -> Vec<Vec<InputSymbol>> {
    wp_suite_indices(m, extra_states).iter().map(|w| m.word(w)).collect()
}

/// Drops words that are proper prefixes of other suite words.
pub fn maximal_words(suite: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let set: BTreeSet<&Vec<usize>> = suite.iter().collect();
    let mut prefixes: BTreeSet<&[usize]> = BTreeSet::new();
    for w in &set {
        for l in 0..w.len() {
            prefixes.insert(&w[..l]);
        }
    }
    let mut out: Vec<Vec<usize>> = set
        .into_iter()
        .filter(|w| !prefixes.contains(w.as_slice()))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{random, MealyBuilder, ObservationStep};
    use crate::alphabet::OutputSymbol;
    use rand::{rngs::StdRng, SeedableRng};

    #[test]
    fn one_state_machine_covers_all_transitions() {
        let inputs = random::test_inputs(4);
        let mut b = MealyBuilder::new(inputs);
        b.add_state();
        for i in 0..4 {
            b.set(0, i, ObservationStep::single(OutputSymbol::NoResponse), 0);
        }
        let m = b.build();
        let suite = wp_suite_indices(&m, 0);
        assert_eq!(suite, vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn suite_grows_with_extra_states() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let m = random::random_machine(&mut rng, 4, 3, 2, true);
            let mut prev: BTreeSet<Vec<usize>> = BTreeSet::new();
            for extra in 0..3 {
                let cur: BTreeSet<Vec<usize>> = wp_suite_indices(&m, extra).into_iter().collect();
                assert!(prev.is_subset(&cur));
                prev = cur;
            }
        }
    }

    #[test]
    fn identification_sets_separate_every_pair() {
        let mut rng = StdRng::seed_from_u64(4);
        let m = random::random_machine(&mut rng, 6, 2, 2, true);
        let ident = identification_sets(&m);
        for a in m.states() {
            for b in m.states() {
                if a == b {
                    continue;
                }
                let separated = ident[a].iter().any(|w| {
                    let wa = m.word(w);
                    outputs_from(&m, a, &wa) != outputs_from(&m, b, &wa)
                });
                assert!(separated, "s{a} and s{b} not separated");
            }
        }
    }

    fn outputs_from(m: &MealyMachine, s: StateId, w: &[InputSymbol]) -> Vec<ObservationStep> {
        let mut s = s;
        let mut out = Vec::new();
        for sym in w {
            let (o, t) = m.step(s, sym).unwrap();
            out.push(o.clone());
            s = t;
        }
        out
    }

    #[test]
    fn maximal_words_drop_prefixes() {
        let suite = vec![vec![0], vec![0, 1], vec![1], vec![0, 1, 1], vec![2, 0]];
        assert_eq!(maximal_words(&suite), vec![vec![1], vec![2, 0], vec![0, 1, 1]]);
    }
}
