//! Discriminatory test-case generation and the two-phase campaign driver.
//!
//! A test case is n sentences sharing one derivation, differing only in the
//! terminal chosen for the sensitive rule. The campaign runs a uniform
//! exploration phase (RAND), diagnoses which tokens correlate with
//! violations, then re-weights the sensitive-adjacent rules proportionally
//! to observed per-token error rates and runs a directed phase (PROB).
//!
//! Determinism contract: `(seed, grammar, config, model)` fully determine
//! the campaign result. Each iteration's RNG derives from the campaign seed
//! and the iteration index alone, generation and evaluation are merged in
//! iteration order, and all state containers are ordered, so worker count
//! never changes results.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnosis::{fault_diagnosis, AnomalyReport, DiagnosisError, DEFAULT_THRESHOLD};
use crate::grammar::{
    coverage, equal_prob, verify_trace, Choice, CoverageReport, DerivationTrace, Grammar,
    GrammarError, WeightTable, MAX_DERIVATION_DEPTH,
};
use crate::mut_adapters::{MutError, MutHandle};
use crate::oracles::{Oracle, OracleError};
use crate::rng::{rng_for, streams};

/// Rate floor applied before normalizing directed-phase weights, so tokens
/// with no observed violations keep a small exploration probability.
pub const PROB_RATE_FLOOR: f64 = 0.01;

/// Saturation window length: generation stops early when two consecutive
/// windows of this many iterations add no new unique test case.
pub const SATURATION_WINDOW: u64 = 500;

type EvalResult = Result<Vec<crate::oracles::TaskOutput>, MutError>;

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("sensitive rule `{rule}` has {available} alternatives available, {requested} needed")]
    InsufficientAlternatives {
        rule: String,
        available: usize,
        requested: usize,
    },
    #[error("sensitive rule `{rule}` expanded {found} times in the base derivation; exactly one site is supported")]
    MultipleSensitiveSites { rule: String, found: usize },
    #[error("sensitive rule `{rule}` does not appear in the derivation")]
    SensitiveSiteMissing { rule: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Diagnosis(#[from] DiagnosisError),
}

/// Per-rule, per-terminal tallies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenCountMap {
    map: BTreeMap<String, BTreeMap<String, u64>>,
}

impl TokenCountMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, rule: &str, terminal: &str, n: u64) {
        *self
            .map
            .entry(rule.to_string())
            .or_default()
            .entry(terminal.to_string())
            .or_insert(0) += n;
    }

    pub fn incr(&mut self, rule: &str, terminal: &str) {
        self.add(rule, terminal, 1);
    }

    pub fn get(&self, rule: &str, terminal: &str) -> u64 {
        self.map
            .get(rule)
            .and_then(|terms| terms.get(terminal))
            .copied()
            .unwrap_or(0)
    }

    pub fn per_rule(&self) -> &BTreeMap<String, BTreeMap<String, u64>> {
        &self.map
    }

    pub fn total_for_rule(&self, rule: &str) -> u64 {
        self.map
            .get(rule)
            .map(|terms| terms.values().sum())
            .unwrap_or(0)
    }

    /// True when every entry is bounded by the matching entry of `other`.
    pub fn pointwise_le(&self, other: &TokenCountMap) -> bool {
        self.map
            .iter()
            .all(|(rule, terms)| terms.iter().all(|(t, &n)| n <= other.get(rule, t)))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn uniform_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Pick an index with probability proportional to `ws`. Zero-weight indices
/// are never picked.
fn weighted_pick(ws: &[f64], rng: &mut impl RngCore) -> usize {
    let total: f64 = ws.iter().sum();
    let u = uniform_f64(rng) * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &w) in ws.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = Some(i);
        if u < acc {
            return i;
        }
    }
    last_positive.expect("weight table has a positive entry per rule")
}

/// Expand one derivation from the start rule, choosing alternatives with
/// probability proportional to the weight table.
pub fn build_input(
    g: &Grammar,
    w: &WeightTable,
    rng: &mut ChaCha8Rng,
) -> Result<DerivationTrace, GenError> {
    fn expand(
        g: &Grammar,
        rule: &str,
        w: &WeightTable,
        rng: &mut ChaCha8Rng,
        choices: &mut Vec<Choice>,
        sentence: &mut String,
        depth: usize,
    ) -> Result<(), GenError> {
        if depth > MAX_DERIVATION_DEPTH {
            return Err(GrammarError::DepthExceeded(MAX_DERIVATION_DEPTH).into());
        }
        let ws = w
            .weights
            .get(rule)
            .ok_or_else(|| GenError::InvalidConfig(format!("no weights for rule `{rule}`")))?;
        let alt_idx = weighted_pick(ws, rng);
        let alt = &g.rules[rule][alt_idx];
        choices.push(Choice {
            rule: rule.to_string(),
            alt: alt_idx,
            literal: alt.single_terminal().map(str::to_string),
        });
        for item in &alt.items {
            match item {
                crate::grammar::Item::Terminal(t) => sentence.push_str(t),
                crate::grammar::Item::RuleRef(r) => {
                    expand(g, r, w, rng, choices, sentence, depth + 1)?
                }
            }
        }
        Ok(())
    }
    let mut choices = Vec::new();
    let mut sentence = String::new();
    expand(g, &g.start, w, rng, &mut choices, &mut sentence, 0)?;
    Ok(DerivationTrace { choices, sentence })
}

fn sensitive_site(base: &DerivationTrace, sens: &str) -> Result<usize, GenError> {
    let sites: Vec<usize> = base
        .choices
        .iter()
        .enumerate()
        .filter(|(_, c)| c.rule == sens)
        .map(|(i, _)| i)
        .collect();
    match sites.len() {
        0 => Err(GenError::SensitiveSiteMissing {
            rule: sens.to_string(),
        }),
        1 => Ok(sites[0]),
        n => Err(GenError::MultipleSensitiveSites {
            rule: sens.to_string(),
            found: n,
        }),
    }
}

/// Swap the sensitive choice of `base` and re-render.
fn swap_sensitive(
    g: &Grammar,
    base: &DerivationTrace,
    site: usize,
    alt: usize,
    literal: &str,
) -> Result<DerivationTrace, GenError> {
    let mut choices = base.choices.clone();
    choices[site] = Choice {
        rule: choices[site].rule.clone(),
        alt,
        literal: Some(literal.to_string()),
    };
    let (sentence, _) = crate::grammar::replay(g, &choices)?;
    Ok(DerivationTrace { choices, sentence })
}

/// Create `k` equivalent derivations by resampling the sensitive choice
/// without replacement from the remaining bias-allowed alternatives.
pub fn mutate_input(
    g: &Grammar,
    base: &DerivationTrace,
    sens: &str,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DerivationTrace>, GenError> {
    let site = sensitive_site(base, sens)?;
    let base_alt = base.choices[site].alt;
    let mut pool: Vec<usize> = g
        .allowed_alternatives(sens)
        .into_iter()
        .filter(|&a| a != base_alt)
        .collect();
    if pool.len() < k {
        return Err(GenError::InsufficientAlternatives {
            rule: sens.to_string(),
            available: pool.len(),
            requested: k,
        });
    }
    for i in 0..k {
        let j = i + (rng.next_u64() as usize) % (pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.into_iter()
        .map(|alt| {
            let literal = g.rules[sens][alt]
                .single_terminal()
                .expect("sensitive rules are lexical");
            swap_sensitive(g, base, site, alt, literal)
        })
        .collect()
}

/// The sensitive terminal chosen for one sentence of a test case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensChoice {
    pub alt: usize,
    pub literal: String,
}

/// n equivalent sentences sharing one derivation, differing only at the
/// sensitive slot. Index 0 is the base derivation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub sentences: Vec<String>,
    pub base_trace: DerivationTrace,
    pub sensitive_rule: String,
    pub sensitive_choices: Vec<SensChoice>,
}

impl TestCase {
    /// Dedup key: the unordered set of rendered sentences.
    pub fn key(&self) -> Vec<String> {
        let mut k = self.sentences.clone();
        k.sort();
        k
    }

    /// Sensitive literal for each sentence, indexed like `sentences`.
    pub fn sensitive_spans(&self) -> Vec<String> {
        self.sensitive_choices
            .iter()
            .map(|c| c.literal.clone())
            .collect()
    }

    /// Reconstruct the full trace of each sentence.
    pub fn traces(&self, g: &Grammar) -> Result<Vec<DerivationTrace>, GenError> {
        let site = sensitive_site(&self.base_trace, &self.sensitive_rule)?;
        self.sensitive_choices
            .iter()
            .enumerate()
            .map(|(i, sc)| {
                if i == 0 {
                    Ok(self.base_trace.clone())
                } else {
                    swap_sensitive(g, &self.base_trace, site, sc.alt, &sc.literal)
                }
            })
            .collect()
    }
}

/// Build one discriminatory test case: a base derivation plus n-1 sensitive
/// mutations.
pub fn build_test(
    g: &Grammar,
    n: usize,
    w: &WeightTable,
    sens: &str,
    rng: &mut ChaCha8Rng,
) -> Result<TestCase, GenError> {
    if n < 1 {
        return Err(GenError::InvalidConfig("n must be at least 1".into()));
    }
    let base = build_input(g, w, rng)?;
    let site = sensitive_site(&base, sens)?;
    let base_choice = &base.choices[site];
    let mut sensitive_choices = vec![SensChoice {
        alt: base_choice.alt,
        literal: base_choice
            .literal
            .clone()
            .expect("sensitive rules are lexical"),
    }];
    let mut sentences = vec![base.sentence.clone()];
    for mutant in mutate_input(g, &base, sens, n - 1, rng)? {
        let c = &mutant.choices[site];
        sensitive_choices.push(SensChoice {
            alt: c.alt,
            literal: c.literal.clone().expect("sensitive rules are lexical"),
        });
        sentences.push(mutant.sentence);
    }
    Ok(TestCase {
        sentences,
        base_trace: base,
        sensitive_rule: sens.to_string(),
        sensitive_choices,
    })
}

/// Directed-phase weights: tokens of the re-weighted rules get probability
/// proportional to `max(err/count, floor)`; everything else stays uniform.
/// Bias-masked alternatives keep weight zero.
pub fn get_probabilities(
    g: &Grammar,
    term_count: &TokenCountMap,
    term_err: &TokenCountMap,
    prob_rules: &BTreeSet<String>,
) -> Result<WeightTable, GenError> {
    let mut table = equal_prob(g);
    for rule in prob_rules {
        let alts = g
            .rules
            .get(rule)
            .ok_or_else(|| GenError::InvalidConfig(format!("unknown prob rule `{rule}`")))?;
        let allowed = g.allowed_alternatives(rule);
        let mut ws = vec![0.0; alts.len()];
        let mut sum = 0.0;
        for &idx in &allowed {
            let lit = alts[idx].single_terminal().ok_or_else(|| {
                GenError::InvalidConfig(format!("prob rule `{rule}` is not lexical"))
            })?;
            let c = term_count.get(rule, lit);
            let rate = if c > 0 {
                (term_err.get(rule, lit) as f64 / c as f64).min(1.0)
            } else {
                0.0
            };
            let floored = rate.max(PROB_RATE_FLOOR);
            ws[idx] = floored;
            sum += floored;
        }
        if sum > 0.0 {
            for w in &mut ws {
                *w /= sum;
            }
            table.weights.insert(rule.clone(), ws);
        }
    }
    Ok(table)
}

/// Campaign phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Rand,
    Prob,
}

impl PhaseKind {
    fn stream(self) -> u64 {
        match self {
            PhaseKind::Rand => streams::RAND_PHASE,
            PhaseKind::Prob => streams::PROB_PHASE,
        }
    }
}

impl std::fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PhaseKind::Rand => write!(f, "rand"),
            PhaseKind::Prob => write!(f, "prob"),
        }
    }
}

/// Per-phase outcome statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: PhaseKind,
    pub iterations: u64,
    pub unique_cases: u64,
    pub violations: u64,
    pub duplicates: u64,
    pub mut_failures: u64,
    pub prediction_errors: u64,
    /// violations / unique_cases; 0 when nothing was kept.
    pub error_rate: f64,
    pub coverage: CoverageReport,
    /// Iteration index at which saturation stopped the phase, if it did.
    pub saturated_at: Option<u64>,
}

/// One kept (unique, successfully evaluated) test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptCase {
    pub phase: PhaseKind,
    pub iteration: u64,
    pub violation: bool,
    #[serde(flatten)]
    pub case: TestCase,
}

/// Campaign accumulator across phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub seed: u64,
    pub n: usize,
    pub sensitive_rule: String,
    /// Dedup keys of all kept test cases.
    pub s_count: BTreeSet<Vec<String>>,
    /// Dedup keys of violating test cases.
    pub s_err: BTreeSet<Vec<String>>,
    pub term_count: TokenCountMap,
    pub term_err: TokenCountMap,
    /// Count maps as they stood at the end of the RAND phase.
    pub rand_term_count: Option<TokenCountMap>,
    pub rand_term_err: Option<TokenCountMap>,
    pub phases: Vec<PhaseStats>,
    pub kept: Vec<KeptCase>,
    /// First few adapter failure messages, for the report.
    pub failure_log: Vec<String>,
}

impl CampaignState {
    pub fn new(seed: u64, n: usize, sens: &str) -> Self {
        Self {
            seed,
            n,
            sensitive_rule: sens.to_string(),
            s_count: BTreeSet::new(),
            s_err: BTreeSet::new(),
            term_count: TokenCountMap::new(),
            term_err: TokenCountMap::new(),
            rand_term_count: None,
            rand_term_err: None,
            phases: Vec::new(),
            kept: Vec::new(),
            failure_log: Vec::new(),
        }
    }
}

/// Execution knobs that do not affect results.
#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub workers: usize,
    pub saturation: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            saturation: false,
        }
    }
}

/// Token identities instantiated by each sentence of a case: the base
/// sentence's terminal events with the sensitive literal substituted per
/// sentence.
fn sentence_tokens(g: &Grammar, case: &TestCase) -> Result<Vec<Vec<(String, String)>>, GenError> {
    let events = verify_trace(g, &case.base_trace)?;
    let sens_pos = events
        .iter()
        .position(|e| e.rule == case.sensitive_rule)
        .ok_or_else(|| GenError::SensitiveSiteMissing {
            rule: case.sensitive_rule.clone(),
        })?;
    let base: Vec<(String, String)> = events.into_iter().map(|e| (e.rule, e.literal)).collect();
    Ok(case
        .sensitive_choices
        .iter()
        .map(|sc| {
            let mut tokens = base.clone();
            tokens[sens_pos].1 = sc.literal.clone();
            tokens
        })
        .collect())
}

fn chunk_ranges(start: u64, end: u64, workers: usize) -> Vec<(u64, u64)> {
    let len = end - start;
    let workers = workers.max(1).min(len.max(1) as usize) as u64;
    let base = len / workers;
    let rem = len % workers;
    let mut ranges = Vec::new();
    let mut cursor = start;
    for w in 0..workers {
        let size = base + u64::from(w < rem);
        ranges.push((cursor, cursor + size));
        cursor += size;
    }
    ranges
}

/// Run one generation phase against the model, updating `state` in place.
///
/// Every iteration derives its RNG from `(state.seed, phase, iteration)`;
/// duplicates (by sentence-set identity) are skipped without querying the
/// model; adapter failures discard the test case without counting it.
#[allow(clippy::too_many_arguments)]
pub fn run_phase(
    model: &MutHandle,
    g: &Grammar,
    n: usize,
    w: &WeightTable,
    sens: &str,
    iters: u64,
    state: &mut CampaignState,
    oracle: &Oracle,
    phase: PhaseKind,
    exec: &ExecOptions,
) -> Result<(), GenError> {
    w.validate(g)?;
    let task = oracle.task();
    let mut stats = PhaseStats {
        phase,
        iterations: 0,
        unique_cases: 0,
        violations: 0,
        duplicates: 0,
        mut_failures: 0,
        prediction_errors: 0,
        error_rate: 0.0,
        coverage: CoverageReport {
            terminals_covered: 0,
            terminals_total: 0,
            pairs_covered: 0,
            pairs_total: 0,
        },
        saturated_at: None,
    };
    let mut phase_traces: Vec<DerivationTrace> = Vec::new();
    let mut prev_window_new: Option<u64> = None;
    let seed = state.seed;

    let mut window_start = 0u64;
    while window_start < iters {
        let window_end = (window_start + SATURATION_WINDOW).min(iters);

        // 1. generate the window in parallel; results ordered by iteration
        let mut generated: Vec<(u64, TestCase)> =
            Vec::with_capacity((window_end - window_start) as usize);
        if exec.workers <= 1 {
            for i in window_start..window_end {
                let mut rng = rng_for(seed, phase.stream(), i);
                generated.push((i, build_test(g, n, w, sens, &mut rng)?));
            }
        } else {
            let ranges = chunk_ranges(window_start, window_end, exec.workers);
            let results: Vec<Result<Vec<(u64, TestCase)>, GenError>> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = ranges
                        .iter()
                        .map(|&(a, b)| {
                            scope.spawn(move || {
                                let mut out = Vec::with_capacity((b - a) as usize);
                                for i in a..b {
                                    let mut rng = rng_for(seed, phase.stream(), i);
                                    out.push((i, build_test(g, n, w, sens, &mut rng)?));
                                }
                                Ok(out)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .collect()
                });
            for r in results {
                generated.extend(r?);
            }
        }
        stats.iterations += window_end - window_start;

        // 2. dedup in iteration order
        let mut candidates: Vec<(u64, TestCase)> = Vec::new();
        let mut window_keys: BTreeSet<Vec<String>> = BTreeSet::new();
        for (i, case) in generated {
            let key = case.key();
            if state.s_count.contains(&key) || !window_keys.insert(key) {
                stats.duplicates += 1;
            } else {
                candidates.push((i, case));
            }
        }

        // 3. evaluate candidates against the model, in parallel
        let mut evaluated: Vec<(u64, TestCase, EvalResult)> = Vec::with_capacity(candidates.len());
        if exec.workers <= 1 {
            for (i, case) in candidates {
                let outs = eval_case(model, &case, task);
                evaluated.push((i, case, outs));
            }
        } else {
            let chunks = chunk_ranges(0, candidates.len() as u64, exec.workers);
            let candidates_ref = &candidates;
            let results: Vec<Vec<(u64, EvalResult)>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|&(a, b)| {
                        scope.spawn(move || {
                            (a..b)
                                .map(|idx| {
                                    let (i, case) = &candidates_ref[idx as usize];
                                    (*i, eval_case(model, case, task))
                                })
                                .collect()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            });
            let flat: Vec<(u64, EvalResult)> = results.into_iter().flatten().collect();
            for ((i, case), (j, outs)) in candidates.into_iter().zip(flat) {
                debug_assert_eq!(i, j);
                evaluated.push((i, case, outs));
            }
        }

        // 4. merge in iteration order
        let mut window_new = 0u64;
        for (i, case, outs) in evaluated {
            let outputs = match outs {
                Ok(o) => o,
                Err(e) => {
                    stats.mut_failures += 1;
                    if state.failure_log.len() < 20 {
                        state.failure_log.push(format!("iteration {i}: {e}"));
                    }
                    continue;
                }
            };
            let verdict = oracle.judge(&case.sentences, &case.sensitive_spans(), &outputs)?;
            let tokens = sentence_tokens(g, &case)?;
            for sentence_tokens in &tokens {
                for (rule, literal) in sentence_tokens {
                    state.term_count.incr(rule, literal);
                }
            }
            if verdict.fairness_violation {
                for sentence_tokens in &tokens {
                    for (rule, literal) in sentence_tokens {
                        state.term_err.incr(rule, literal);
                    }
                }
                state.s_err.insert(case.key());
                stats.violations += 1;
            }
            if let Some(errs) = &verdict.prediction_errors {
                stats.prediction_errors += errs.iter().filter(|e| **e).count() as u64;
            }
            state.s_count.insert(case.key());
            phase_traces.extend(case.traces(g)?);
            state.kept.push(KeptCase {
                phase,
                iteration: i,
                violation: verdict.fairness_violation,
                case,
            });
            stats.unique_cases += 1;
            window_new += 1;
        }

        // 5. saturation stop across two consecutive windows
        window_start = window_end;
        if exec.saturation {
            if prev_window_new == Some(0) && window_new == 0 {
                stats.saturated_at = Some(window_end);
                break;
            }
            prev_window_new = Some(window_new);
        }
    }

    stats.error_rate = if stats.unique_cases > 0 {
        stats.violations as f64 / stats.unique_cases as f64
    } else {
        0.0
    };
    stats.coverage = coverage(g, &phase_traces)?;
    state.phases.push(stats);
    Ok(())
}

fn eval_case(model: &MutHandle, case: &TestCase, task: crate::oracles::Task) -> EvalResult {
    model
        .batch_evaluate(&case.sentences, task)
        .into_iter()
        .collect()
}

/// Full individual-fairness campaign: RAND phase, diagnosis on the RAND
/// maps, directed PROB phase with error-proportional weights.
///
/// Returns the final state (per-phase statistics separated) and the
/// diagnosis computed between the phases.
#[allow(clippy::too_many_arguments)]
pub fn run_individual_campaign(
    model: &MutHandle,
    g: &Grammar,
    n: usize,
    sens: &str,
    iters: u64,
    prob_rules: &BTreeSet<String>,
    oracle: &Oracle,
    seed: u64,
    run_prob_phase: bool,
    exec: &ExecOptions,
) -> Result<(CampaignState, AnomalyReport), GenError> {
    if !g.sensitive.contains(sens) {
        return Err(GenError::InvalidConfig(format!(
            "`{sens}` is not declared sensitive in the grammar"
        )));
    }
    if !g.expands_exactly_once(sens) {
        return Err(GenError::InvalidConfig(format!(
            "sensitive rule `{sens}` must expand exactly once in every derivation"
        )));
    }
    let mut state = CampaignState::new(seed, n, sens);
    let uniform = equal_prob(g);
    run_phase(
        model,
        g,
        n,
        &uniform,
        sens,
        iters,
        &mut state,
        oracle,
        PhaseKind::Rand,
        exec,
    )?;
    state.rand_term_count = Some(state.term_count.clone());
    state.rand_term_err = Some(state.term_err.clone());
    let rand_report = fault_diagnosis(&state.term_err, &state.term_count, DEFAULT_THRESHOLD)?;
    if run_prob_phase {
        let directed = get_probabilities(g, &state.term_count, &state.term_err, prob_rules)?;
        run_phase(
            model,
            g,
            n,
            &directed,
            sens,
            iters,
            &mut state,
            oracle,
            PhaseKind::Prob,
            exec,
        )?;
    }
    Ok((state, rand_report))
}
