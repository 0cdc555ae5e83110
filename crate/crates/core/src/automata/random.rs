//! Random machine generation for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{minimize, MealyBuilder, MealyMachine, ObservationStep};
use crate::alphabet::{default_alphabet, CipherSuite, HandshakeMode, InputSymbol, OutputSymbol, TimeoutClass};

/// The first `k` non-directive inputs of the two-timeout Basic alphabet.
pub fn test_inputs(k: usize) -> Vec<InputSymbol> {
    let all = default_alphabet(HandshakeMode::Basic, &TimeoutClass::ALL, &[CipherSuite::Aes128])
        .expect("nonempty parameters");
    let inputs: Vec<InputSymbol> = all.into_iter().filter(|s| !s.is_directive()).take(k).collect();
    assert_eq!(inputs.len(), k, "at most {} test inputs available", inputs.len());
    inputs
}

/// The first `k` non-status output symbols.
pub fn test_outputs(k: usize) -> Vec<OutputSymbol> {
    OutputSymbol::STANDARD
        .iter()
        .filter(|o| !o.is_status())
        .take(k)
        .cloned()
        .collect()
}

/// A random input-complete machine with `n` reachable states.
///
/// With `minimal` set, generation is repeated until the machine is also
/// minimal, so it has exactly `n` distinguishable states.
pub fn random_machine<R: Rng>(rng: &mut R, n: usize, k: usize, outputs: usize, minimal: bool) -> MealyMachine {
    assert!(n >= 1 && k >= 1 && outputs >= 1);
    let inputs = test_inputs(k);
    let outs = test_outputs(outputs);
    loop {
        let mut b = MealyBuilder::new(inputs.clone());
        b.add_states(n);
        let mut filled = vec![vec![false; k]; n];
        for j in 1..n {
            let free: Vec<(usize, usize)> = (0..j)
                .flat_map(|s| (0..k).map(move |i| (s, i)))
                .filter(|&(s, i)| !filled[s][i])
                .collect();
            let &(s, i) = free.choose(rng).expect("a fresh state always has free slots");
            filled[s][i] = true;
            b.set(s, i, ObservationStep::single(outs.choose(rng).unwrap().clone()), j);
        }
        for s in 0..n {
            for i in 0..k {
                if !filled[s][i] {
                    let o = outs.choose(rng).unwrap().clone();
                    b.set(s, i, ObservationStep::single(o), rng.gen_range(0..n));
                }
            }
        }
        let m = b.build();
        if !minimal || minimize(&m).num_states() == n {
            return m;
        }
    }
}

/// A random machine whose outputs may be empty or multi-symbol steps.
pub fn random_rich_machine<R: Rng>(rng: &mut R, n: usize, k: usize) -> MealyMachine {
    let base = random_machine(rng, n, k, 4, false);
    let outs = test_outputs(6);
    base.map_edges(|_, _, _, t| {
        let count = rng.gen_range(0..3);
        let step = ObservationStep::from_outputs((0..count).map(|_| outs.choose(rng).unwrap().clone()));
        Some((step, t))
    })
}
