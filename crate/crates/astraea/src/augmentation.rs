//! Labeled augmentation datasets from diagnosis results.
//!
//! Generation mirrors the directed phase, but each rule holding diagnosed
//! top-k tokens is restricted to exactly those tokens (weighted by their
//! error rates). Every emitted sentence is labeled by the predictive oracle;
//! unlabeled sentences are discarded and regenerated, and sentences never
//! repeat within one set.

use serde::{Deserialize, Serialize};

use crate::diagnosis::{top_k_tokens, AnomalyReport};
use crate::generator::{build_input, GenError};
use crate::grammar::{equal_prob, Grammar};
use crate::oracles::{predictive_label, LabelRule, OracleError};
use crate::rng::{rng_for, streams};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{unlabeled} of {generated} generated sentences had no label; label rules do not cover the grammar")]
    LabelCoverage { unlabeled: u64, generated: u64 },
    #[error("grammar exhausted after {got} distinct labeled sentences; {want} requested")]
    Exhausted { got: usize, want: usize },
}

/// One labeled training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugRecord {
    pub text: String,
    pub label: String,
}

/// A labeled augmentation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSet {
    pub records: Vec<AugRecord>,
    /// The diagnosed (rule, terminal) tokens generation was restricted to.
    pub source_tokens: Vec<(String, String)>,
    pub percent: f64,
    pub base_size: u64,
    pub seed: u64,
}

/// Requested record count: `percent`% of `base_size`, rounded.
pub fn requested_size(percent: f64, base_size: u64) -> usize {
    (percent / 100.0 * base_size as f64).round() as usize
}

/// Build an augmentation set of `percent`% of `base_size` records.
#[allow(clippy::too_many_arguments)]
pub fn build_augmentation(
    g: &Grammar,
    report: &AnomalyReport,
    k: usize,
    percent: f64,
    base_size: u64,
    label_rules: &[LabelRule],
    seed: u64,
) -> Result<AugmentationSet, AugmentError> {
    if k < 1 {
        return Err(AugmentError::InvalidRequest("k must be at least 1".into()));
    }
    if percent < 0.0 {
        return Err(AugmentError::InvalidRequest(
            "percent must be non-negative".into(),
        ));
    }
    if base_size == 0 {
        return Err(AugmentError::InvalidRequest(
            "base_size must be positive".into(),
        ));
    }
    if label_rules.is_empty() {
        return Err(AugmentError::InvalidRequest(
            "no label rules supplied".into(),
        ));
    }
    let size = requested_size(percent, base_size);
    let source_tokens = top_k_tokens(report, k);
    if source_tokens.is_empty() {
        return Err(AugmentError::InvalidRequest(
            "diagnosis report has no tokens".into(),
        ));
    }

    // Restrict each rule that owns top-k tokens to those tokens, weighted by
    // their diagnosed error rates (uniform if all rates are zero).
    let mut weights = equal_prob(g);
    let mut by_rule: std::collections::BTreeMap<&str, Vec<&str>> = Default::default();
    for (rule, term) in &source_tokens {
        by_rule
            .entry(rule.as_str())
            .or_default()
            .push(term.as_str());
    }
    for (rule, terms) in &by_rule {
        let alts = g.rules.get(*rule).ok_or_else(|| {
            AugmentError::InvalidRequest(format!("unknown rule `{rule}` in report"))
        })?;
        let mut ws = vec![0.0; alts.len()];
        let mut sum = 0.0;
        for term in terms {
            let idx = alts
                .iter()
                .position(|a| a.single_terminal() == Some(term))
                .ok_or_else(|| {
                    AugmentError::InvalidRequest(format!("`{term}` is not a terminal of `{rule}`"))
                })?;
            let rate = report
                .tokens
                .iter()
                .find(|t| t.rule == *rule && t.terminal == *term)
                .map(|t| t.error_rate)
                .unwrap_or(0.0);
            ws[idx] = rate;
            sum += rate;
        }
        if sum <= 0.0 {
            for term in terms {
                let idx = alts
                    .iter()
                    .position(|a| a.single_terminal() == Some(term))
                    .expect("checked above");
                ws[idx] = 1.0 / terms.len() as f64;
            }
        } else {
            for w in &mut ws {
                *w /= sum;
            }
        }
        weights.weights.insert((*rule).to_string(), ws);
    }

    let mut records = Vec::with_capacity(size);
    let mut seen = std::collections::BTreeSet::new();
    let mut unlabeled = 0u64;
    let mut generated = 0u64;
    let max_attempts = (size as u64).saturating_mul(50).max(1000);
    let mut attempt = 0u64;
    while records.len() < size && attempt < max_attempts {
        let mut rng = rng_for(seed, streams::AUGMENT, attempt);
        attempt += 1;
        let trace = build_input(g, &weights, &mut rng)?;
        if !seen.insert(trace.sentence.clone()) {
            continue;
        }
        generated += 1;
        debug_assert!(
            source_tokens
                .iter()
                .any(|(_, t)| trace.sentence.contains(t.as_str())),
            "generated sentence misses every source token: {}",
            trace.sentence
        );
        match predictive_label(&trace.sentence, label_rules)? {
            Some(label) => records.push(AugRecord {
                text: trace.sentence,
                label,
            }),
            None => unlabeled += 1,
        }
    }
    if records.len() < size {
        if generated > 0 && unlabeled * 2 > generated {
            return Err(AugmentError::LabelCoverage {
                unlabeled,
                generated,
            });
        }
        return Err(AugmentError::Exhausted {
            got: records.len(),
            want: size,
        });
    }
    Ok(AugmentationSet {
        records,
        source_tokens,
        percent,
        base_size,
        seed,
    })
}

/// Serialize one record per line.
pub fn to_jsonl(set: &AugmentationSet) -> String {
    let mut out = String::new();
    for r in &set.records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}
