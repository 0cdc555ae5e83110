//! Edge reduction of learned models before analysis.
//!
//! Two rules are applied: self-loops are dropped, and edges that differ only
//! in their timeout class but share source, kind, cipher and target are merged
//! into one edge with a timeout-free label.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::alphabet::InputSymbol;
use crate::automata::{MealyBuilder, MealyMachine, ObservationStep, StateId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OptimizationStats {
    pub edges_before: usize,
    pub edges_after: usize,
    pub removed_self_loops: usize,
    pub merged_timeout_pairs: usize,
}

impl fmt::Display for OptimizationStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "edges_before={} edges_after={} removed_self_loops={} merged_timeout_pairs={} reduction_ratio={:.3}",
            self.edges_before,
            self.edges_after,
            self.removed_self_loops,
            self.merged_timeout_pairs,
            reduction_ratio(self)
        )
    }
}

/// Fraction of edges removed. Zero for an edgeless machine.
pub fn reduction_ratio(stats: &OptimizationStats) -> f64 {
    if stats.edges_before == 0 {
        return 0.0;
    }
    (stats.edges_before - stats.edges_after) as f64 / stats.edges_before as f64
}

pub fn optimize(m: &MealyMachine) -> (MealyMachine, OptimizationStats) {
    let mut stats = OptimizationStats { edges_before: m.num_edges(), ..Default::default() };

    // (source, timeout-free label, target) -> outputs of the merged variants
    let mut groups: BTreeMap<(StateId, InputSymbol, StateId), Vec<(usize, &ObservationStep)>> = BTreeMap::new();
    for (s, i, o, t) in m.edges() {
        if s == t {
            stats.removed_self_loops += 1;
            continue;
        }
        let label = m.inputs()[i].timeout_erased();
        groups.entry((s, label, t)).or_default().push((i, o));
    }

    let mut edges: Vec<(StateId, InputSymbol, ObservationStep, StateId)> = Vec::new();
    for ((s, label, t), members) in groups {
        if members.len() >= 2 {
            stats.merged_timeout_pairs += members.len() - 1;
            let mut union = ObservationStep::new();
            for (_, o) in &members {
                union = union.union(o);
            }
            edges.push((s, label, union, t));
        } else {
            let (i, o) = members[0];
            edges.push((s, m.inputs()[i].clone(), o.clone(), t));
        }
    }
    stats.edges_after = edges.len();

    // The tested alphabet is kept in order; a merged label goes just before its first variant.
    let mut alphabet: Vec<InputSymbol> = Vec::new();
    for sym in m.inputs() {
        let merged = sym.timeout_erased();
        if !alphabet.contains(&merged) && edges.iter().any(|(_, l, _, _)| *l == merged) {
            alphabet.push(merged);
        }
        if !alphabet.contains(sym) {
            alphabet.push(sym.clone());
        }
    }
    let mut b = MealyBuilder::new(alphabet);
    b.add_states(m.num_states());
    for (s, label, o, t) in edges {
        b.set_symbol(s, &label, o, t).expect("label is in the alphabet");
    }
    b.set_initial(m.initial());
    (b.build(), stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{InputKind, OutputSymbol, TimeoutClass};
    use crate::automata::{isomorphic, random};
    use proptest::prelude::*;
    use rand::{rngs::StdRng, SeedableRng};

    fn step(o: OutputSymbol) -> ObservationStep {
        ObservationStep::single(o)
    }

    fn ping(t: TimeoutClass) -> InputSymbol {
        InputSymbol::timed(InputKind::InitPing, t)
    }

    #[test]
    fn all_self_loops_vanish() {
        let inputs = random::test_inputs(4);
        let mut b = MealyBuilder::new(inputs);
        b.add_state();
        for i in 0..4 {
            b.set(0, i, step(OutputSymbol::NoResponse), 0);
        }
        let (opt, stats) = optimize(&b.build());
        assert_eq!(opt.num_edges(), 0);
        assert_eq!(stats.removed_self_loops, 4);
        assert_eq!(reduction_ratio(&stats), 1.0);
    }

    #[test]
    fn timeout_variants_with_same_target_merge() {
        let inputs = vec![ping(TimeoutClass::Short), ping(TimeoutClass::Long)];
        let mut b = MealyBuilder::new(inputs);
        b.add_states(2);
        b.set(0, 0, step(OutputSymbol::PingAck), 1);
        b.set(0, 1, step(OutputSymbol::NoResponse), 1);
        b.set(1, 0, step(OutputSymbol::PingAck), 1);
        b.set(1, 1, step(OutputSymbol::PingAck), 1);
        let (opt, stats) = optimize(&b.build());
        assert_eq!(opt.num_edges(), 1);
        let (_, i, o, t) = opt.edges().next().unwrap();
        assert_eq!(opt.inputs()[i].to_string(), "initPing");
        let labels: Vec<String> = opt.inputs().iter().map(|s| s.to_string()).collect();
        assert_eq!(labels, ["initPing", "initPing(short)", "initPing(long)"]);
        assert_eq!(t, 1);
        assert_eq!(o.len(), 2, "outputs of both variants are kept");
        assert_eq!(stats.merged_timeout_pairs, 1);
        assert_eq!(stats.edges_after, stats.edges_before - stats.removed_self_loops - stats.merged_timeout_pairs);
    }

    #[test]
    fn different_targets_stay_apart() {
        let inputs = vec![ping(TimeoutClass::Short), ping(TimeoutClass::Long)];
        let mut b = MealyBuilder::new(inputs);
        b.add_states(3);
        b.set(0, 0, step(OutputSymbol::PingAck), 1);
        b.set(0, 1, step(OutputSymbol::PingAck), 2);
        for s in 1..3 {
            b.set(s, 0, step(OutputSymbol::PingAck), s);
            b.set(s, 1, step(OutputSymbol::PingAck), s);
        }
        let (opt, stats) = optimize(&b.build());
        assert_eq!(opt.num_edges(), 2);
        assert_eq!(stats.merged_timeout_pairs, 0);
        let labels: Vec<String> = opt.inputs().iter().map(|s| s.to_string()).collect();
        assert_eq!(labels, ["initPing(short)", "initPing(long)"]);
    }

    #[test]
    fn ratio_examples() {
        let s = OptimizationStats { edges_before: 100, edges_after: 10, removed_self_loops: 85, merged_timeout_pairs: 5 };
        assert!((reduction_ratio(&s) - 0.9).abs() < 1e-12);
        let s = OptimizationStats { edges_before: 7, edges_after: 7, ..Default::default() };
        assert_eq!(reduction_ratio(&s), 0.0);
    }

    proptest! {
        #[test]
        fn optimize_invariants(seed in any::<u64>(), n in 1usize..9, k in 1usize..7) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = random::random_machine(&mut rng, n, k, 3, false);
            let (opt, stats) = optimize(&m);
            prop_assert_eq!(stats.edges_after, stats.edges_before - stats.removed_self_loops - stats.merged_timeout_pairs);
            prop_assert_eq!(opt.num_edges(), stats.edges_after);
            let r = reduction_ratio(&stats);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(opt.num_states(), m.num_states());
            prop_assert_eq!(opt.initial(), m.initial());
            // every original distinct-state edge survives, possibly under a merged label
            for (s, i, _, t) in m.edges() {
                if s == t { continue; }
                let sym = &m.inputs()[i];
                let kept = opt.input_index(sym).and_then(|j| opt.transition(s, j)).map(|e| e.1) == Some(t)
                    || opt.input_index(&sym.timeout_erased()).and_then(|j| opt.transition(s, j)).map(|e| e.1) == Some(t);
                prop_assert!(kept);
            }
            for (s, _, _, t) in opt.edges() {
                prop_assert_ne!(s, t);
            }
            let (again, _) = optimize(&opt);
            prop_assert!(isomorphic(&again, &opt));
        }
    }
}
