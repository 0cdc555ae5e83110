//! Append-only learning log: `word TAB observation TAB source TAB round`.

use std::fmt;
use std::io::{self, Write};

use super::oracle::QueryObserver;
use crate::alphabet::{InputSymbol, SymbolError};
use crate::automata::{format_observation, format_word, parse_word, ObservationStep, ObservationWord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySource {
    Hypothesis,
    Conformance,
}

impl fmt::Display for QuerySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuerySource::Hypothesis => "hypothesis",
            QuerySource::Conformance => "conformance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub word: Vec<InputSymbol>,
    pub observation: ObservationWord,
    pub source: QuerySource,
    pub round: usize,
}

impl LogRecord {
    pub fn parse(line: &str) -> Result<LogRecord, SymbolError> {
        let bad = |reason: &str| SymbolError::BadParameter { symbol: line.to_string(), reason: reason.to_string() };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad("expected four tab-separated fields"));
        }
        let word = parse_word(fields[0])?;
        let observation = fields[1]
            .split_whitespace()
            .map(|s| {
                let inner = s.strip_prefix('{').and_then(|s| s.strip_suffix('}')).ok_or_else(|| bad("step not in braces"))?;
                ObservationStep::parse(inner)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let source = match fields[2] {
            "hypothesis" => QuerySource::Hypothesis,
            "conformance" => QuerySource::Conformance,
            _ => return Err(bad("unknown source")),
        };
        let round = fields[3].parse().map_err(|_| bad("round is not a number"))?;
        Ok(LogRecord { word, observation, source, round })
    }
}

/// Writes one line per executed oracle word.
pub struct LearnLog<W: Write> {
    out: W,
    source: QuerySource,
    round: usize,
    pub lines: u64,
    error: Option<io::Error>,
}

impl<W: Write> LearnLog<W> {
    pub fn new(out: W) -> Self {
        LearnLog { out, source: QuerySource::Hypothesis, round: 0, lines: 0, error: None }
    }

    /// Flushes and returns the first write error, if any.
    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> QueryObserver for LearnLog<W> {
    fn executed(&mut self, word: &[InputSymbol], obs: &[ObservationStep]) {
        if self.error.is_some() {
            return;
        }
        let line = format!("{}\t{}\t{}\t{}\n", format_word(word), format_observation(obs), self.source, self.round);
        match self.out.write_all(line.as_bytes()) {
            Ok(()) => self.lines += 1,
            Err(e) => self.error = Some(e),
        }
    }

    fn phase(&mut self, source: QuerySource, round: usize) {
        self.source = source;
        self.round = round;
    }
}
