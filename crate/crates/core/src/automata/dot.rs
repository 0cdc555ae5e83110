//! Graphviz DOT rendering and parsing for Mealy machines.
//!
//! Only a small subset of DOT is understood: one `digraph`, node and edge
//! statements with attribute lists, and `//`, `#` or `/* */` comments. The
//! initial state is the target of an edge leaving a `shape=point` node.
//! Metadata is kept in `// key: value` comment lines ahead of the graph.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::{AutomataError, MealyBuilder, MealyMachine, ObservationStep, StateId};
use crate::alphabet::{HandshakeMode, InputSymbol, SymbolRegistry};

/// Sidecar information stored as comments in DOT files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelMetadata {
    pub mode: Option<HandshakeMode>,
    /// `short`, `long` or `mixed`.
    pub timeout: Option<String>,
    pub target: Option<String>,
    pub harness_version: Option<String>,
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default)]
pub struct RenderOptions {
    /// Collapse all edges into an absorbing connection-closed state into one `Other` edge.
    pub group_close_sink: bool,
    /// Collapse the largest group of same-target edges at each state into one `Other` edge.
    pub group_uniform: bool,
    pub metadata: Option<ModelMetadata>,
}

impl RenderOptions {
    pub fn with_metadata(metadata: ModelMetadata) -> Self {
        RenderOptions { metadata: Some(metadata), ..Default::default() }
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// States other than the initial one whose defined edges are all self-loops.
fn sink_states(m: &MealyMachine) -> Vec<bool> {
    let mut sink = vec![true; m.num_states()];
    let mut has_edge = vec![false; m.num_states()];
    for (s, _, _, t) in m.edges() {
        has_edge[s] = true;
        if s != t {
            sink[s] = false;
        }
    }
    sink[m.initial()] = false;
    for s in m.states() {
        sink[s] &= has_edge[s];
    }
    sink
}

struct RenderedEdge {
    from: StateId,
    to: StateId,
    label: String,
}

fn group_label(outputs: &[&ObservationStep]) -> String {
    let first = outputs[0];
    if outputs.iter().all(|o| *o == first) {
        format!("Other / {first}")
    } else {
        "Other".to_string()
    }
}

pub fn to_dot(m: &MealyMachine, options: &RenderOptions) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "// quicfsm model");
    let alphabet: Vec<String> = m.inputs().iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "// alphabet: {}", alphabet.join(" "));
    if let Some(meta) = &options.metadata {
        if let Some(mode) = meta.mode {
            let _ = writeln!(out, "// mode: {mode}");
        }
        if let Some(t) = &meta.timeout {
            let _ = writeln!(out, "// timeout: {t}");
        }
        if let Some(t) = &meta.target {
            let _ = writeln!(out, "// target: {t}");
        }
        if let Some(v) = &meta.harness_version {
            let _ = writeln!(out, "// harness: {v}");
        }
        for (k, v) in &meta.extra {
            let _ = writeln!(out, "// {k}: {v}");
        }
    }
    out.push_str("digraph model {\n");
    out.push_str("  __start [shape=point, label=\"\"];\n");
    for s in m.states() {
        let _ = writeln!(out, "  s{s} [label=\"s{s}\"];");
    }
    let _ = writeln!(out, "  __start -> s{};", m.initial());

    let sinks = if options.group_close_sink { sink_states(m) } else { vec![false; m.num_states()] };
    let mut rendered = Vec::new();
    for s in m.states() {
        let row: Vec<(usize, &ObservationStep, StateId)> = (0..m.inputs().len())
            .filter_map(|i| m.transition(s, i).map(|(o, t)| (i, o, t)))
            .collect();
        let mut grouped_targets: Vec<StateId> = Vec::new();
        let mut by_target: BTreeMap<StateId, Vec<&ObservationStep>> = BTreeMap::new();
        for &(_, o, t) in &row {
            by_target.entry(t).or_default().push(o);
        }
        for (&t, outs) in &by_target {
            if sinks[t] && outs.len() >= 2 {
                grouped_targets.push(t);
            }
        }
        if options.group_uniform {
            let best = by_target
                .iter()
                .filter(|(t, outs)| outs.len() >= 2 && !grouped_targets.contains(t))
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)));
            if let Some((&t, _)) = best {
                grouped_targets.push(t);
            }
        }
        let mut emitted = Vec::new();
        for &(i, o, t) in &row {
            if grouped_targets.contains(&t) {
                if !emitted.contains(&t) {
                    emitted.push(t);
                    rendered.push(RenderedEdge { from: s, to: t, label: group_label(&by_target[&t]) });
                }
            } else {
                rendered.push(RenderedEdge { from: s, to: t, label: format!("{} / {o}", m.inputs()[i]) });
            }
        }
    }
    for e in rendered {
        let _ = writeln!(out, "  s{} -> s{} [label={}];", e.from, e.to, quote(&e.label));
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    Arrow,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Eq,
    Semi,
    Comma,
}

fn syntax(line: usize, message: impl Into<String>) -> AutomataError {
    AutomataError::DotSyntax { line, message: message.into() }
}

fn tokenize(text: &str) -> Result<(Vec<(Tok, usize)>, Vec<(String, usize)>), AutomataError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut comments = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            '/' if chars.get(i + 1) == Some(&'/') => {
                let start = i + 2;
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                comments.push((chars[start..i].iter().collect(), line));
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                i += 2;
                loop {
                    if i + 1 >= chars.len() {
                        return Err(syntax(line, "unterminated block comment"));
                    }
                    if chars[i] == '*' && chars[i + 1] == '/' {
                        i += 2;
                        break;
                    }
                    if chars[i] == '\n' {
                        line += 1;
                    }
                    i += 1;
                }
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                toks.push((Tok::Arrow, line));
                i += 2;
            }
            '[' => {
                toks.push((Tok::LBracket, line));
                i += 1;
            }
            ']' => {
                toks.push((Tok::RBracket, line));
                i += 1;
            }
            '{' => {
                toks.push((Tok::LBrace, line));
                i += 1;
            }
            '}' => {
                toks.push((Tok::RBrace, line));
                i += 1;
            }
            '=' => {
                toks.push((Tok::Eq, line));
                i += 1;
            }
            ';' => {
                toks.push((Tok::Semi, line));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, line));
                i += 1;
            }
            '"' => {
                let start_line = line;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(syntax(start_line, "unterminated string")),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') if i + 1 < chars.len() => {
                            let n = chars[i + 1];
                            if n != '"' && n != '\\' {
                                s.push('\\');
                            }
                            s.push(n);
                            i += 2;
                        }
                        Some(&ch) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                toks.push((Tok::Id(s), start_line));
            }
            c if c.is_alphanumeric() || c == '_' || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                toks.push((Tok::Id(chars[start..i].iter().collect()), line));
            }
            other => return Err(syntax(line, format!("unexpected character `{other}`"))),
        }
    }
    Ok((toks, comments))
}

type Attrs = HashMap<String, String>;

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map_or(1, |(_, l)| *l)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), AutomataError> {
        let line = self.line();
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(syntax(line, format!("expected {want:?}, found {other:?}"))),
        }
    }

    fn id(&mut self) -> Result<String, AutomataError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Id(s)) => Ok(s),
            other => Err(syntax(line, format!("expected identifier, found {other:?}"))),
        }
    }

    fn attrs(&mut self) -> Result<Attrs, AutomataError> {
        let mut attrs = Attrs::new();
        while self.peek() == Some(&Tok::LBracket) {
            self.next();
            loop {
                match self.peek() {
                    Some(Tok::RBracket) => {
                        self.next();
                        break;
                    }
                    Some(Tok::Comma) | Some(Tok::Semi) => {
                        self.next();
                    }
                    _ => {
                        let k = self.id()?;
                        self.expect(Tok::Eq)?;
                        let v = self.id()?;
                        attrs.insert(k, v);
                    }
                }
            }
        }
        Ok(attrs)
    }
}

struct RawEdge {
    from: String,
    to: String,
    label: Option<String>,
    line: usize,
}

pub fn from_dot(text: &str) -> Result<MealyMachine, AutomataError> {
    from_dot_with(text, &SymbolRegistry::standard()).map(|(m, _)| m)
}

pub fn from_dot_with_metadata(text: &str) -> Result<(MealyMachine, ModelMetadata), AutomataError> {
    from_dot_with(text, &SymbolRegistry::standard())
}

pub fn from_dot_with(
    text: &str,
    registry: &SymbolRegistry,
) -> Result<(MealyMachine, ModelMetadata), AutomataError> {
    let (toks, comments) = tokenize(text)?;
    let mut meta = ModelMetadata::default();
    let mut alphabet: Option<Vec<InputSymbol>> = None;
    for (c, line) in &comments {
        let Some((k, v)) = c.split_once(':') else { continue };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "alphabet" => {
                let syms = v
                    .split_whitespace()
                    .map(|s| registry.parse_input_label(s))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|source| AutomataError::LabelGrammar { line: *line, source })?;
                alphabet = Some(syms);
            }
            "mode" => {
                meta.mode = Some(
                    v.parse()
                        .map_err(|source| AutomataError::LabelGrammar { line: *line, source })?,
                )
            }
            "timeout" => meta.timeout = Some(v.to_string()),
            "target" => meta.target = Some(v.to_string()),
            "harness" => meta.harness_version = Some(v.to_string()),
            k if !k.contains(' ') && !k.is_empty() => {
                meta.extra.insert(k.to_string(), v.to_string());
            }
            _ => {}
        }
    }

    let mut p = Parser { toks, pos: 0 };
    if p.peek() == Some(&Tok::Id("strict".into())) {
        p.next();
    }
    let kw = p.id()?;
    if kw != "digraph" {
        return Err(syntax(p.line(), format!("expected `digraph`, found `{kw}`")));
    }
    if let Some(Tok::Id(_)) = p.peek() {
        p.next();
    }
    p.expect(Tok::LBrace)?;

    let mut node_order: Vec<String> = Vec::new();
    let mut node_attrs: HashMap<String, Attrs> = HashMap::new();
    let mut edges: Vec<RawEdge> = Vec::new();
    loop {
        match p.peek() {
            None => return Err(syntax(p.line(), "missing closing brace")),
            Some(Tok::RBrace) => {
                p.next();
                break;
            }
            Some(Tok::Semi) => {
                p.next();
            }
            _ => {
                let line = p.line();
                let first = p.id()?;
                if matches!(first.as_str(), "graph" | "node" | "edge") && p.peek() == Some(&Tok::LBracket) {
                    p.attrs()?;
                    continue;
                }
                if p.peek() == Some(&Tok::Eq) {
                    p.next();
                    p.id()?;
                    continue;
                }
                if p.peek() == Some(&Tok::Arrow) {
                    let mut chain = vec![first];
                    while p.peek() == Some(&Tok::Arrow) {
                        p.next();
                        chain.push(p.id()?);
                    }
                    let attrs = p.attrs()?;
                    for n in &chain {
                        if !node_attrs.contains_key(n) {
                            node_attrs.insert(n.clone(), Attrs::new());
                            node_order.push(n.clone());
                        }
                    }
                    for w in chain.windows(2) {
                        edges.push(RawEdge {
                            from: w[0].clone(),
                            to: w[1].clone(),
                            label: attrs.get("label").cloned(),
                            line,
                        });
                    }
                } else {
                    let attrs = p.attrs()?;
                    match node_attrs.get_mut(&first) {
                        Some(existing) => existing.extend(attrs),
                        None => {
                            node_attrs.insert(first.clone(), attrs);
                            node_order.push(first);
                        }
                    }
                }
            }
        }
    }
    if p.peek().is_some() {
        return Err(syntax(p.line(), "trailing content after graph"));
    }

    let is_point = |n: &str| {
        node_attrs.get(n).and_then(|a| a.get("shape")).map(String::as_str) == Some("point")
            || n.starts_with("__start")
    };
    let state_nodes: Vec<&String> = node_order.iter().filter(|n| !is_point(n)).collect();
    let state_number = |n: &str| -> Option<usize> {
        let label = node_attrs.get(n).and_then(|a| a.get("label")).map(String::as_str).unwrap_or(n);
        label.strip_prefix('s').and_then(|d| d.parse().ok())
    };
    let mut sorted: Vec<&String> = state_nodes.clone();
    if sorted.iter().all(|n| state_number(n).is_some()) {
        sorted.sort_by_key(|n| state_number(n));
    }
    let ids: HashMap<&str, StateId> = sorted.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let mut initial = None;
    let mut labelled = Vec::new();
    for e in &edges {
        if is_point(&e.from) {
            let t = *ids
                .get(e.to.as_str())
                .ok_or_else(|| syntax(e.line, "entry edge must point at a state"))?;
            if initial.replace(t).is_some_and(|prev| prev != t) {
                return Err(syntax(e.line, "more than one initial state"));
            }
            continue;
        }
        let label = e
            .label
            .as_deref()
            .ok_or_else(|| syntax(e.line, "edge without label"))?;
        let (inp, outp) = match label.split_once(" / ") {
            Some(pair) => pair,
            None => label
                .split_once('/')
                .ok_or_else(|| syntax(e.line, "label must be `<input> / <outputs>`"))?,
        };
        let input = registry
            .parse_input_label(inp)
            .map_err(|source| AutomataError::LabelGrammar { line: e.line, source })?;
        let output = ObservationStep::parse_with(outp, registry)
            .map_err(|source| AutomataError::LabelGrammar { line: e.line, source })?;
        let from = ids[e.from.as_str()];
        let to = *ids.get(e.to.as_str()).ok_or_else(|| syntax(e.line, "edge into point node"))?;
        labelled.push((from, input, output, to, e.line));
    }

    let inputs = match alphabet {
        Some(a) => a,
        None => {
            let mut a: Vec<InputSymbol> = labelled.iter().map(|(_, i, _, _, _)| i.clone()).collect();
            a.sort();
            a.dedup();
            a
        }
    };
    if ids.is_empty() {
        return Err(syntax(1, "graph has no states"));
    }
    let mut b = MealyBuilder::new(inputs);
    b.add_states(ids.len());
    let mut seen = std::collections::HashSet::new();
    for (from, input, output, to, line) in labelled {
        let idx = b
            .input_index(&input)
            .ok_or_else(|| syntax(line, format!("input {input} is not in the declared alphabet")))?;
        if !seen.insert((from, idx)) {
            return Err(syntax(line, format!("second transition from s{from} on {input}")));
        }
        b.set(from, idx, output, to);
    }
    b.set_initial(initial.unwrap_or(0));
    Ok((b.build(), meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::{InputKind, OutputSymbol, TimeoutClass};
    use crate::automata::{isomorphic, random};
    use rand::{rngs::StdRng, SeedableRng};

    #[test]
    fn single_state_without_edges() {
        let m = MealyBuilder::new(Vec::new()).build();
        let text = to_dot(&m, &RenderOptions::default());
        assert_eq!(text.matches("->").count(), 1, "only the entry edge");
        let back = from_dot(&text).unwrap();
        assert_eq!(back.num_states(), 1);
        assert_eq!(back.num_edges(), 0);
    }

    #[test]
    fn round_trip_random_machines() {
        let mut rng = StdRng::seed_from_u64(5);
        for n in 0..50 {
            let m = if n % 2 == 0 {
                random::random_machine(&mut rng, 1 + n % 9, 1 + n % 5, 4, false)
            } else {
                random::random_rich_machine(&mut rng, 1 + n % 9, 1 + n % 5)
            };
            let text = to_dot(&m, &RenderOptions::default());
            let back = from_dot(&text).unwrap();
            assert!(isomorphic(&m, &back), "{text}");
        }
    }

    #[test]
    fn metadata_round_trip() {
        let mut rng = StdRng::seed_from_u64(1);
        let m = random::random_machine(&mut rng, 3, 2, 2, false);
        let meta = ModelMetadata {
            mode: Some(HandshakeMode::ClientAuth),
            timeout: Some("mixed".into()),
            target: Some("mock".into()),
            harness_version: Some("quicfsm 0.1.0".into()),
            extra: BTreeMap::from([("short_ms".to_string(), "40".to_string())]),
        };
        let text = to_dot(&m, &RenderOptions::with_metadata(meta.clone()));
        let (_, back) = from_dot_with_metadata(&text).unwrap();
        assert_eq!(back, meta);
    }

    fn close_sink_machine() -> MealyMachine {
        let inputs: Vec<InputSymbol> = [
            InputKind::InitPing,
            InputKind::InitConClose,
            InputKind::InitNoFr,
            InputKind::InitUnxpFrType,
            InputKind::HndPing,
            InputKind::HndFin,
        ]
        .into_iter()
        .map(|k| InputSymbol::timed(k, TimeoutClass::Short))
        .collect();
        let mut b = MealyBuilder::new(inputs);
        b.add_states(2);
        b.set(0, 0, ObservationStep::single(OutputSymbol::PingAck), 0);
        for i in 1..6 {
            b.set(0, i, ObservationStep::single(OutputSymbol::ConClose), 1);
        }
        for i in 0..6 {
            b.set(1, i, ObservationStep::single(OutputSymbol::NoResponse), 1);
        }
        b.build()
    }

    #[test]
    fn grouped_rendering_collapses_close_sink() {
        let m = close_sink_machine();
        let opts = RenderOptions { group_close_sink: true, ..Default::default() };
        let text = to_dot(&m, &opts);
        let from_s0_to_s1 = text.lines().filter(|l| l.contains("s0 -> s1")).collect::<Vec<_>>();
        assert_eq!(from_s0_to_s1.len(), 1);
        assert!(from_s0_to_s1[0].contains("Other"));
        assert!(matches!(from_dot(&text), Err(AutomataError::LabelGrammar { .. })));
    }

    #[test]
    fn grouped_rendering_uniform_targets() {
        let m = close_sink_machine();
        let opts = RenderOptions { group_uniform: true, ..Default::default() };
        let text = to_dot(&m, &opts);
        assert_eq!(text.matches("Other").count(), 2);
        assert!(text.contains("initPing(short) / PingACK"));
    }

    #[test]
    fn syntax_errors_are_reported() {
        assert!(matches!(from_dot("graph g {}"), Err(AutomataError::DotSyntax { .. })));
        assert!(matches!(from_dot("digraph g { s0 -> s1 [label=\"x"), Err(AutomataError::DotSyntax { .. })));
        assert!(matches!(
            from_dot("digraph g { s0 -> s1 [label=\"initPing / PingACK\"]; }"),
            Ok(_)
        ));
        assert!(matches!(
            from_dot("digraph g { s0 -> s1 [label=\"fooBar(short) / PingACK\"]; }"),
            Err(AutomataError::LabelGrammar { line: 1, .. })
        ));
        assert!(matches!(
            from_dot("digraph g {\n s0 -> s1 [label=\"initPing(short) / Bogus\"];\n}"),
            Err(AutomataError::LabelGrammar { line: 2, .. })
        ));
    }

    #[test]
    fn parses_foreign_layout() {
        let text = r#"
            /* written by hand */
            digraph G {
              rankdir=LR;
              node [shape=circle];
              start [shape=point];
              a [label="s1"]; b [label="s0"];
              start -> b;
              b -> a [label="initPing(short) / PingACK"];
              a -> a [label="initPing(short) / NoResponse"];
              b -> b [label="hndFin(short) / NoResponse"];
              a -> b [label="hndFin(short) / ConClose,<ConClosed>"];
            }
        "#;
        let m = from_dot(text).unwrap();
        assert_eq!(m.num_states(), 2);
        assert_eq!(m.initial(), 0);
        let w = crate::automata::parse_word("initPing(short),hndFin(short)").unwrap();
        let obs = m.run(&w).unwrap();
        assert_eq!(obs[1].to_string(), "ConClose,<ConClosed>");
    }
}
