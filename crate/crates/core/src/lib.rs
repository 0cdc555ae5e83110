pub mod alphabet;
pub mod automata;
pub mod differ;
pub mod harness;
pub mod learner;
pub mod mockqut;
pub mod optimizer;
pub mod orchestrator;
