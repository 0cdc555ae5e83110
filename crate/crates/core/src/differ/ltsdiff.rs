//! LTS_Diff: structural comparison of two labelled transition systems.
//!
//! State pairs are scored by how well their incoming and outgoing labels
//! agree, with the similarity of neighbouring pairs fed back in through an
//! attenuation factor until the scores settle. Clearly best pairs become
//! landmarks, and the matching grows outward from them along equally
//! labelled edges. Edges not explained by the matching are reported as
//! removed (only in the first system) or added (only in the second).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::alphabet::InputSymbol;
use crate::automata::StateId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LtsDiffParams {
    pub attenuation: f64,
    pub landmark_ratio: f64,
    pub fixpoint_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LtsDiffParams {
    fn default() -> Self {
        LtsDiffParams { attenuation: 0.5, landmark_ratio: 1.5, fixpoint_tolerance: 1e-6, max_iterations: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LtsEdge {
    pub from: StateId,
    pub label: InputSymbol,
    pub to: StateId,
}

/// A deterministic transition system labelled by inputs only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lts {
    pub num_states: usize,
    pub initial: StateId,
    /// Sorted by source, then label.
    pub edges: Vec<LtsEdge>,
}

impl Lts {
    pub fn new(num_states: usize, initial: StateId, mut edges: Vec<LtsEdge>) -> Self {
        edges.sort();
        edges.dedup();
        Lts { num_states, initial, edges }
    }

    pub fn labels(&self) -> BTreeSet<&InputSymbol> {
        self.edges.iter().map(|e| &e.label).collect()
    }

    fn out_map(&self) -> Vec<BTreeMap<&InputSymbol, StateId>> {
        let mut out = vec![BTreeMap::new(); self.num_states];
        for e in &self.edges {
            out[e.from].insert(&e.label, e.to);
        }
        out
    }

    fn in_map(&self) -> Vec<BTreeMap<&InputSymbol, Vec<StateId>>> {
        let mut inc: Vec<BTreeMap<&InputSymbol, Vec<StateId>>> = vec![BTreeMap::new(); self.num_states];
        for e in &self.edges {
            inc[e.to].entry(&e.label).or_default().push(e.from);
        }
        inc
    }

    /// Breadth-first shortest label word to every state; ties go to the smaller label.
    pub fn shortest_words(&self) -> Vec<Option<Vec<InputSymbol>>> {
        let out = self.out_map();
        let mut words: Vec<Option<Vec<InputSymbol>>> = vec![None; self.num_states];
        words[self.initial] = Some(Vec::new());
        let mut queue = VecDeque::from([self.initial]);
        while let Some(s) = queue.pop_front() {
            for (label, &t) in &out[s] {
                if words[t].is_none() {
                    let mut w = words[s].clone().unwrap();
                    w.push((*label).clone());
                    words[t] = Some(w);
                    queue.push_back(t);
                }
            }
        }
        words
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffReport {
    /// Matched `(state in first, state in second)` pairs, sorted.
    pub state_matching: Vec<(StateId, StateId)>,
    /// Edges only in the second system.
    pub added: Vec<LtsEdge>,
    /// Edges only in the first system.
    pub removed: Vec<LtsEdge>,
    /// Shortest word reaching each added edge's source in the second system.
    pub added_witnesses: Vec<Vec<InputSymbol>>,
    /// Shortest word reaching each removed edge's source in the first system.
    pub removed_witnesses: Vec<Vec<InputSymbol>>,
    /// True when no landmark was found and only the initial states were paired up front.
    pub landmark_fallback: bool,
    pub iterations: usize,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    pub fn matched_in_second(&self, a: StateId) -> Option<StateId> {
        self.state_matching.iter().find(|(x, _)| *x == a).map(|(_, y)| *y)
    }

    pub fn matched_in_first(&self, b: StateId) -> Option<StateId> {
        self.state_matching.iter().find(|(_, y)| *y == b).map(|(x, _)| *x)
    }
}

/// One half of the similarity score (successor or predecessor side).
fn side_score(
    a_labels: &BTreeSet<&InputSymbol>,
    b_labels: &BTreeSet<&InputSymbol>,
    pairs: &[(StateId, StateId)],
    prev: &[Vec<f64>],
    k: f64,
) -> f64 {
    let only_a = a_labels.difference(b_labels).count();
    let only_b = b_labels.difference(a_labels).count();
    let denom = only_a + only_b + pairs.len();
    if denom == 0 {
        return 0.0;
    }
    let sum: f64 = pairs.iter().map(|&(x, y)| 1.0 + k * prev[x][y]).sum();
    0.5 * sum / denom as f64
}

/// Pairwise similarity scores in `[0, 1]` and the number of iterations used.
pub fn similarity(a: &Lts, b: &Lts, params: &LtsDiffParams) -> (Vec<Vec<f64>>, usize) {
    let (oa, ob) = (a.out_map(), b.out_map());
    let (ia, ib) = (a.in_map(), b.in_map());
    let (na, nb) = (a.num_states, b.num_states);

    let mut succ_pairs = vec![vec![Vec::new(); nb]; na];
    let mut pred_pairs = vec![vec![Vec::new(); nb]; na];
    for x in 0..na {
        for y in 0..nb {
            for (label, &tx) in &oa[x] {
                if let Some(&ty) = ob[y].get(label) {
                    succ_pairs[x][y].push((tx, ty));
                }
            }
            for (label, px) in &ia[x] {
                if let Some(py) = ib[y].get(label) {
                    for &p in px {
                        for &q in py {
                            pred_pairs[x][y].push((p, q));
                        }
                    }
                }
            }
        }
    }
    let out_labels_a: Vec<BTreeSet<&InputSymbol>> = oa.iter().map(|m| m.keys().copied().collect()).collect();
    let out_labels_b: Vec<BTreeSet<&InputSymbol>> = ob.iter().map(|m| m.keys().copied().collect()).collect();
    let in_labels_a: Vec<BTreeSet<&InputSymbol>> = ia.iter().map(|m| m.keys().copied().collect()).collect();
    let in_labels_b: Vec<BTreeSet<&InputSymbol>> = ib.iter().map(|m| m.keys().copied().collect()).collect();

    let k = params.attenuation;
    let mut succ = vec![vec![0.0; nb]; na];
    let mut pred = vec![vec![0.0; nb]; na];
    let mut iterations = 0;
    for _ in 0..params.max_iterations {
        iterations += 1;
        let mut delta: f64 = 0.0;
        let mut next_succ = vec![vec![0.0; nb]; na];
        let mut next_pred = vec![vec![0.0; nb]; na];
        for x in 0..na {
            for y in 0..nb {
                next_succ[x][y] = side_score(&out_labels_a[x], &out_labels_b[y], &succ_pairs[x][y], &succ, k);
                next_pred[x][y] = side_score(&in_labels_a[x], &in_labels_b[y], &pred_pairs[x][y], &pred, k);
                delta = delta
                    .max((next_succ[x][y] - succ[x][y]).abs())
                    .max((next_pred[x][y] - pred[x][y]).abs());
            }
        }
        succ = next_succ;
        pred = next_pred;
        if delta < params.fixpoint_tolerance {
            break;
        }
    }
    let scores = (0..na)
        .map(|x| (0..nb).map(|y| (succ[x][y] + pred[x][y]) / 2.0).collect())
        .collect();
    (scores, iterations)
}

/// Pairs that beat every rival in their row and column by `landmark_ratio`.
fn landmarks(scores: &[Vec<f64>], ratio: f64) -> Vec<(StateId, StateId)> {
    let na = scores.len();
    let nb = scores.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for x in 0..na {
        for y in 0..nb {
            let s = scores[x][y];
            if s <= 0.0 {
                continue;
            }
            let row_rival = (0..nb).filter(|&j| j != y).map(|j| scores[x][j]).fold(0.0, f64::max);
            let col_rival = (0..na).filter(|&i| i != x).map(|i| scores[i][y]).fold(0.0, f64::max);
            if s >= ratio * row_rival && s >= ratio * col_rival && s > row_rival && s > col_rival {
                out.push((x, y));
            }
        }
    }
    out
}

pub fn lts_diff(a: &Lts, b: &Lts, params: &LtsDiffParams) -> DiffReport {
    let (scores, iterations) = similarity(a, b, params);
    let mut in_a: Vec<Option<StateId>> = vec![None; a.num_states];
    let mut in_b: Vec<Option<StateId>> = vec![None; b.num_states];
    let add = |x: StateId, y: StateId, in_a: &mut Vec<Option<StateId>>, in_b: &mut Vec<Option<StateId>>| {
        if in_a[x].is_none() && in_b[y].is_none() {
            in_a[x] = Some(y);
            in_b[y] = Some(x);
        }
    };

    // Both sessions start from a fresh connection, so the initial states always correspond.
    add(a.initial, b.initial, &mut in_a, &mut in_b);
    let found = landmarks(&scores, params.landmark_ratio);
    let landmark_fallback = found.is_empty();
    for (x, y) in found {
        add(x, y, &mut in_a, &mut in_b);
    }

    let (oa, ob) = (a.out_map(), b.out_map());
    let (ia, ib) = (a.in_map(), b.in_map());
    loop {
        let mut best: Option<(f64, StateId, StateId)> = None;
        let mut consider = |x: StateId, y: StateId| {
            if in_a[x].is_some() || in_b[y].is_some() {
                return;
            }
            let s = scores[x][y];
            let better = match best {
                None => true,
                Some((bs, bx, by)) => s > bs || (s == bs && (x, y) < (bx, by)),
            };
            if better {
                best = Some((s, x, y));
            }
        };
        for x in 0..a.num_states {
            let Some(y) = in_a[x] else { continue };
            for (label, &tx) in &oa[x] {
                if let Some(&ty) = ob[y].get(label) {
                    consider(tx, ty);
                }
            }
            for (label, px) in &ia[x] {
                if let Some(py) = ib[y].get(label) {
                    for &p in px {
                        for &q in py {
                            consider(p, q);
                        }
                    }
                }
            }
        }
        match best {
            Some((_, x, y)) => add(x, y, &mut in_a, &mut in_b),
            None => break,
        }
    }

    let b_edges: BTreeSet<(StateId, &InputSymbol, StateId)> = b.edges.iter().map(|e| (e.from, &e.label, e.to)).collect();
    let a_edges: BTreeSet<(StateId, &InputSymbol, StateId)> = a.edges.iter().map(|e| (e.from, &e.label, e.to)).collect();
    let removed: Vec<LtsEdge> = a
        .edges
        .iter()
        .filter(|e| match (in_a[e.from], in_a[e.to]) {
            (Some(x), Some(y)) => !b_edges.contains(&(x, &e.label, y)),
            _ => true,
        })
        .cloned()
        .collect();
    let added: Vec<LtsEdge> = b
        .edges
        .iter()
        .filter(|e| match (in_b[e.from], in_b[e.to]) {
            (Some(x), Some(y)) => !a_edges.contains(&(x, &e.label, y)),
            _ => true,
        })
        .cloned()
        .collect();
    let (wa, wb) = (a.shortest_words(), b.shortest_words());
    let removed_witnesses = removed.iter().map(|e| wa[e.from].clone().unwrap_or_default()).collect();
    let added_witnesses = added.iter().map(|e| wb[e.from].clone().unwrap_or_default()).collect();
    let mut state_matching: Vec<(StateId, StateId)> =
        in_a.iter().enumerate().filter_map(|(x, y)| y.map(|y| (x, y))).collect();
    state_matching.sort();
    DiffReport {
        state_matching,
        added,
        removed,
        added_witnesses,
        removed_witnesses,
        landmark_fallback,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{InputKind, TimeoutClass};

    fn sym(kind: InputKind) -> InputSymbol {
        InputSymbol::timed(kind, TimeoutClass::Short)
    }

    fn edge(from: StateId, label: &InputSymbol, to: StateId) -> LtsEdge {
        LtsEdge { from, label: label.clone(), to }
    }

    #[test]
    fn identical_systems_match_identically() {
        let (x, y) = (sym(InputKind::InitPing), sym(InputKind::HndFin));
        let lts = Lts::new(3, 0, vec![edge(0, &x, 1), edge(1, &y, 2), edge(2, &x, 0), edge(1, &x, 1)]);
        let r = lts_diff(&lts, &lts, &LtsDiffParams::default());
        assert!(r.is_empty());
        assert_eq!(r.state_matching, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let (x, y) = (sym(InputKind::InitPing), sym(InputKind::HndFin));
        let a = Lts::new(2, 0, vec![edge(0, &x, 1), edge(1, &x, 1), edge(1, &y, 0)]);
        let b = Lts::new(3, 0, vec![edge(0, &x, 1), edge(1, &y, 2), edge(2, &y, 2)]);
        let (scores, iterations) = similarity(&a, &b, &LtsDiffParams::default());
        assert!(iterations <= 100);
        for row in scores {
            for s in row {
                assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
