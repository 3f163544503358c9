//! Annotated context-free grammars and derivation traces.
//!
//! A grammar here is a finite template: a set of named rules, each with one
//! or more alternatives, where an alternative is a sequence of rule
//! references and literal terminals. Rendering a derivation concatenates the
//! terminal literals in order, so spacing lives inside the literals.
//!
//! Beyond the plain CFG, a grammar carries three annotations:
//! * `sensitive`: rules whose terminal choice defines the protected
//!   attribute (the mutation site for discriminatory test cases),
//! * `bias`: optional masks restricting a rule to a subset of its
//!   alternatives, so a campaign can target one bias type at a time,
//! * `prob_rules`: rules whose alternatives are re-weighted from observed
//!   error rates in the directed generation phase.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Hard cap on derivation depth. Grammars that can exceed it are rejected at
/// load time, which also rules out recursion.
pub const MAX_DERIVATION_DEPTH: usize = 64;

/// One item of an alternative: either a reference to another rule or a
/// literal terminal string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Item {
    #[serde(rename = "ref")]
    RuleRef(String),
    #[serde(rename = "t")]
    Terminal(String),
}

/// An ordered sequence of items; one way of expanding a rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alternative {
    pub items: Vec<Item>,
}

impl Alternative {
    /// The literal, if this alternative is exactly one terminal.
    pub fn single_terminal(&self) -> Option<&str> {
        match self.items.as_slice() {
            [Item::Terminal(t)] => Some(t),
            _ => None,
        }
    }
}

/// A validated annotated grammar. Immutable after construction; cheap to
/// share across worker threads.
#[derive(Debug, Clone)]
pub struct Grammar {
    pub start: String,
    pub rules: BTreeMap<String, Vec<Alternative>>,
    pub sensitive: BTreeSet<String>,
    pub bias: BTreeMap<String, Vec<usize>>,
    pub prob_rules: BTreeSet<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum GrammarError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("rule `{referenced}` referenced from `{from}` is not defined")]
    UnresolvedRef { from: String, referenced: String },
    #[error("sensitive rule `{0}` has fewer than 2 alternatives; nothing to mutate")]
    SensitiveArity(String),
    #[error("grammar is recursive or exceeds derivation depth {max}: rule `{rule}`")]
    Recursion { rule: String, max: usize },
    #[error("trace does not replay against the grammar: {0}")]
    TraceMismatch(String),
    #[error("derivation exceeded depth limit {0}")]
    DepthExceeded(usize),
}

/// On-disk grammar document. See the repository README for the format.
#[derive(Debug, Serialize, Deserialize)]
struct GrammarFile {
    start: String,
    rules: BTreeMap<String, Vec<Vec<Item>>>,
    #[serde(default)]
    sensitive: Vec<String>,
    #[serde(default)]
    bias: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    prob_rules: Vec<String>,
}

/// Parse and validate a grammar document.
pub fn parse_grammar(source: &[u8]) -> Result<Grammar, GrammarError> {
    let file: GrammarFile =
        serde_json::from_slice(source).map_err(|e| GrammarError::Schema(e.to_string()))?;
    let rules: BTreeMap<String, Vec<Alternative>> = file
        .rules
        .into_iter()
        .map(|(name, alts)| {
            let alts = alts
                .into_iter()
                .map(|items| Alternative { items })
                .collect();
            (name, alts)
        })
        .collect();
    let grammar = Grammar {
        start: file.start,
        rules,
        sensitive: file.sensitive.into_iter().collect(),
        bias: file.bias,
        prob_rules: file.prob_rules.into_iter().collect(),
    };
    grammar.validate()?;
    Ok(grammar)
}

impl Grammar {
    pub fn validate(&self) -> Result<(), GrammarError> {
        if !self.rules.contains_key(&self.start) {
            return Err(GrammarError::UnresolvedRef {
                from: "<start>".into(),
                referenced: self.start.clone(),
            });
        }
        for (name, alts) in &self.rules {
            if alts.is_empty() {
                return Err(GrammarError::Schema(format!(
                    "rule `{name}` has no alternatives"
                )));
            }
            for alt in alts {
                if alt.items.is_empty() {
                    return Err(GrammarError::Schema(format!(
                        "rule `{name}` has an empty alternative"
                    )));
                }
                for item in &alt.items {
                    match item {
                        Item::RuleRef(r) => {
                            if !self.rules.contains_key(r) {
                                return Err(GrammarError::UnresolvedRef {
                                    from: name.clone(),
                                    referenced: r.clone(),
                                });
                            }
                        }
                        Item::Terminal(t) => {
                            if t.is_empty() {
                                return Err(GrammarError::Schema(format!(
                                    "rule `{name}` has an empty terminal literal"
                                )));
                            }
                        }
                    }
                }
            }
        }
        for s in &self.sensitive {
            let alts = self
                .rules
                .get(s)
                .ok_or_else(|| GrammarError::UnresolvedRef {
                    from: "sensitive".into(),
                    referenced: s.clone(),
                })?;
            if alts.len() < 2 {
                return Err(GrammarError::SensitiveArity(s.clone()));
            }
            if alts.iter().any(|a| a.single_terminal().is_none()) {
                return Err(GrammarError::Schema(format!(
                    "sensitive rule `{s}` must consist of single-terminal alternatives"
                )));
            }
        }
        for p in &self.prob_rules {
            let alts = self
                .rules
                .get(p)
                .ok_or_else(|| GrammarError::UnresolvedRef {
                    from: "prob_rules".into(),
                    referenced: p.clone(),
                })?;
            if alts.iter().any(|a| a.single_terminal().is_none()) {
                return Err(GrammarError::Schema(format!(
                    "prob rule `{p}` must consist of single-terminal alternatives"
                )));
            }
        }
        for (rule, allowed) in &self.bias {
            let alts = self
                .rules
                .get(rule)
                .ok_or_else(|| GrammarError::UnresolvedRef {
                    from: "bias".into(),
                    referenced: rule.clone(),
                })?;
            if allowed.is_empty() {
                return Err(GrammarError::Schema(format!(
                    "bias mask for `{rule}` allows no alternatives"
                )));
            }
            for &idx in allowed {
                if idx >= alts.len() {
                    return Err(GrammarError::Schema(format!(
                        "bias mask for `{rule}` names alternative {idx}, but the rule has {}",
                        alts.len()
                    )));
                }
            }
        }
        self.check_depth()?;
        Ok(())
    }

    /// Longest-path check over the rule graph. Rejects cycles (including
    /// left recursion) and grammars deeper than [`MAX_DERIVATION_DEPTH`].
    fn check_depth(&self) -> Result<(), GrammarError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            InProgress,
            Done(usize),
        }
        fn depth_of(
            g: &Grammar,
            rule: &str,
            marks: &mut BTreeMap<String, Mark>,
        ) -> Result<usize, GrammarError> {
            match marks.get(rule) {
                Some(Mark::Done(d)) => return Ok(*d),
                Some(Mark::InProgress) => {
                    return Err(GrammarError::Recursion {
                        rule: rule.to_string(),
                        max: MAX_DERIVATION_DEPTH,
                    })
                }
                None => {}
            }
            marks.insert(rule.to_string(), Mark::InProgress);
            let mut deepest_child = 0usize;
            for alt in &g.rules[rule] {
                for item in &alt.items {
                    if let Item::RuleRef(r) = item {
                        deepest_child = deepest_child.max(depth_of(g, r, marks)?);
                    }
                }
            }
            let d = 1 + deepest_child;
            marks.insert(rule.to_string(), Mark::Done(d));
            Ok(d)
        }
        let mut marks = BTreeMap::new();
        let d = depth_of(self, &self.start, &mut marks)?;
        if d > MAX_DERIVATION_DEPTH {
            return Err(GrammarError::Recursion {
                rule: self.start.clone(),
                max: MAX_DERIVATION_DEPTH,
            });
        }
        Ok(())
    }

    /// Alternative indices of `rule` permitted by the bias mask (all of them
    /// when the rule is unmasked).
    pub fn allowed_alternatives(&self, rule: &str) -> Vec<usize> {
        match self.bias.get(rule) {
            Some(mask) => {
                let mut m = mask.clone();
                m.sort_unstable();
                m.dedup();
                m
            }
            None => (0..self.rules[rule].len()).collect(),
        }
    }

    /// All `(rule, literal)` terminal identities in the grammar.
    pub fn terminal_identities(&self) -> BTreeSet<(String, String)> {
        let mut out = BTreeSet::new();
        for (rule, alts) in &self.rules {
            for alt in alts {
                for item in &alt.items {
                    if let Item::Terminal(t) = item {
                        out.insert((rule.clone(), t.clone()));
                    }
                }
            }
        }
        out
    }

    /// Number of distinct `(rule, literal)` terminals.
    pub fn terminal_count(&self) -> usize {
        self.terminal_identities().len()
    }

    /// True if every full derivation expands `rule` exactly once.
    ///
    /// Campaigns require this of the sensitive rule: a single mutation site
    /// per sentence. Computed by exact min/max occurrence propagation over
    /// the (acyclic) rule graph.
    pub fn expands_exactly_once(&self, rule: &str) -> bool {
        fn occurrences(
            g: &Grammar,
            current: &str,
            target: &str,
            memo: &mut BTreeMap<String, (u64, u64)>,
        ) -> (u64, u64) {
            if let Some(&v) = memo.get(current) {
                return v;
            }
            let own: u64 = u64::from(current == target);
            let mut rule_min = u64::MAX;
            let mut rule_max = 0u64;
            for alt in &g.rules[current] {
                let mut alt_min = own;
                let mut alt_max = own;
                for item in &alt.items {
                    if let Item::RuleRef(r) = item {
                        let (lo, hi) = occurrences(g, r, target, memo);
                        alt_min += lo;
                        alt_max += hi;
                    }
                }
                rule_min = rule_min.min(alt_min);
                rule_max = rule_max.max(alt_max);
            }
            memo.insert(current.to_string(), (rule_min, rule_max));
            (rule_min, rule_max)
        }
        if !self.rules.contains_key(rule) {
            return false;
        }
        let mut memo = BTreeMap::new();
        occurrences(self, &self.start, rule, &mut memo) == (1, 1)
    }
}

/// Per-rule alternative weights (the selection distribution over each
/// rule's alternatives).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub weights: BTreeMap<String, Vec<f64>>,
}

impl WeightTable {
    pub fn validate(&self, g: &Grammar) -> Result<(), GrammarError> {
        for (rule, ws) in &self.weights {
            let alts = g
                .rules
                .get(rule)
                .ok_or_else(|| GrammarError::UnresolvedRef {
                    from: "weights".into(),
                    referenced: rule.clone(),
                })?;
            if ws.len() != alts.len() {
                return Err(GrammarError::Schema(format!(
                    "weight vector for `{rule}` has length {}, rule has {} alternatives",
                    ws.len(),
                    alts.len()
                )));
            }
            if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                return Err(GrammarError::Schema(format!("negative weight in `{rule}`")));
            }
            let sum: f64 = ws.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(GrammarError::Schema(format!(
                    "weights for `{rule}` sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform weights over each rule's bias-allowed alternatives; zero on
/// masked-out alternatives.
pub fn equal_prob(g: &Grammar) -> WeightTable {
    let mut weights = BTreeMap::new();
    for (rule, alts) in &g.rules {
        let allowed = g.allowed_alternatives(rule);
        let w = 1.0 / allowed.len() as f64;
        let mut ws = vec![0.0; alts.len()];
        for idx in allowed {
            ws[idx] = w;
        }
        weights.insert(rule.clone(), ws);
    }
    WeightTable { weights }
}

/// One expansion decision: `rule` was expanded with alternative `alt`;
/// `literal` is set when that alternative is a single terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub rule: String,
    pub alt: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub literal: Option<String>,
}

/// A derivation: the preorder list of expansion choices plus the rendered
/// sentence. Replaying the choices against the grammar must reproduce the
/// sentence exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationTrace {
    pub choices: Vec<Choice>,
    pub sentence: String,
}

/// A terminal instantiated during a derivation, attributed to the rule whose
/// alternative contained it, in sentence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerminalEvent {
    pub rule: String,
    pub literal: String,
    /// Byte offset of the literal within the rendered sentence.
    pub offset: usize,
}

/// Replay `choices` against `g`, validating every step.
///
/// Returns the rendered sentence and terminal events. Used for trace
/// verification, count-map updates, and coverage.
pub fn replay(
    g: &Grammar,
    choices: &[Choice],
) -> Result<(String, Vec<TerminalEvent>), GrammarError> {
    let mut cursor = 0usize;
    let mut sentence = String::new();
    let mut events = Vec::new();
    expand_replay(
        g,
        &g.start,
        choices,
        &mut cursor,
        &mut sentence,
        &mut events,
        0,
    )?;
    if cursor != choices.len() {
        return Err(GrammarError::TraceMismatch(format!(
            "{} unconsumed choices",
            choices.len() - cursor
        )));
    }
    Ok((sentence, events))
}

fn expand_replay(
    g: &Grammar,
    rule: &str,
    choices: &[Choice],
    cursor: &mut usize,
    sentence: &mut String,
    events: &mut Vec<TerminalEvent>,
    depth: usize,
) -> Result<(), GrammarError> {
    if depth > MAX_DERIVATION_DEPTH {
        return Err(GrammarError::DepthExceeded(MAX_DERIVATION_DEPTH));
    }
    let choice = choices
        .get(*cursor)
        .ok_or_else(|| GrammarError::TraceMismatch("trace ended early".into()))?;
    if choice.rule != rule {
        return Err(GrammarError::TraceMismatch(format!(
            "expected a choice for `{rule}`, found `{}`",
            choice.rule
        )));
    }
    let alts = &g.rules[rule];
    let alt = alts.get(choice.alt).ok_or_else(|| {
        GrammarError::TraceMismatch(format!(
            "alternative {} out of range for `{rule}`",
            choice.alt
        ))
    })?;
    match (&choice.literal, alt.single_terminal()) {
        (Some(lit), Some(t)) if lit == t => {}
        (None, None) => {}
        _ => {
            return Err(GrammarError::TraceMismatch(format!(
                "literal annotation mismatch for `{rule}` alternative {}",
                choice.alt
            )))
        }
    }
    *cursor += 1;
    for item in &alt.items {
        match item {
            Item::Terminal(t) => {
                events.push(TerminalEvent {
                    rule: rule.to_string(),
                    literal: t.clone(),
                    offset: sentence.len(),
                });
                sentence.push_str(t);
            }
            Item::RuleRef(r) => {
                expand_replay(g, r, choices, cursor, sentence, events, depth + 1)?;
            }
        }
    }
    Ok(())
}

/// Verify that a trace's recorded sentence matches its replay, then return
/// the terminal events.
pub fn verify_trace(
    g: &Grammar,
    trace: &DerivationTrace,
) -> Result<Vec<TerminalEvent>, GrammarError> {
    let (sentence, events) = replay(g, &trace.choices)?;
    if sentence != trace.sentence {
        return Err(GrammarError::TraceMismatch(format!(
            "rendered `{sentence}`, trace says `{}`",
            trace.sentence
        )));
    }
    Ok(events)
}

/// Terminal and sensitive-pair coverage of a trace set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub terminals_covered: usize,
    pub terminals_total: usize,
    pub pairs_covered: usize,
    pub pairs_total: usize,
}

impl CoverageReport {
    pub fn terminal_ratio(&self) -> f64 {
        if self.terminals_total == 0 {
            return 0.0;
        }
        self.terminals_covered as f64 / self.terminals_total as f64
    }
    pub fn pair_ratio(&self) -> f64 {
        if self.pairs_total == 0 {
            return 0.0;
        }
        self.pairs_covered as f64 / self.pairs_total as f64
    }
}

/// Coverage over a list of traces.
///
/// A terminal is a `(rule, literal)` identity. A pair combines a
/// sensitive-rule terminal with any other rule's terminal co-occurring in
/// one trace; a test case's mutants each contribute their own trace, so a
/// case covers the pairs of each of its sentences.
pub fn coverage(g: &Grammar, traces: &[DerivationTrace]) -> Result<CoverageReport, GrammarError> {
    let all = g.terminal_identities();
    let sens_terms: BTreeSet<(String, String)> = all
        .iter()
        .filter(|(r, _)| g.sensitive.contains(r))
        .cloned()
        .collect();
    let other_count = all.len() - sens_terms.len();
    let pairs_total = sens_terms.len() * other_count;

    let mut covered: BTreeSet<(String, String)> = BTreeSet::new();
    let mut covered_pairs: BTreeSet<((String, String), (String, String))> = BTreeSet::new();
    for trace in traces {
        let events = verify_trace(g, trace)?;
        let mut sens_in_trace = Vec::new();
        let mut other_in_trace = Vec::new();
        for ev in events {
            let key = (ev.rule.clone(), ev.literal.clone());
            if g.sensitive.contains(&ev.rule) {
                sens_in_trace.push(key.clone());
            } else {
                other_in_trace.push(key.clone());
            }
            covered.insert(key);
        }
        for s in &sens_in_trace {
            for o in &other_in_trace {
                covered_pairs.insert((s.clone(), o.clone()));
            }
        }
    }
    Ok(CoverageReport {
        terminals_covered: covered.len(),
        terminals_total: all.len(),
        pairs_covered: covered_pairs.len(),
        pairs_total,
    })
}
