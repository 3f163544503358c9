//! Fairness oracles.
//!
//! A metamorphic oracle never needs ground truth: it receives the model's
//! outputs for the n equivalent sentences of one test case and decides
//! whether they are consistent. Task-specific equivalence:
//!
//! * sentiment: identical discrete labels,
//! * coreference: identical chain sets after normalizing each sentence's
//!   sensitive span,
//! * masked-token prediction: per probe token, no pairwise confidence gap
//!   above a threshold.
//!
//! A predictive oracle, when configured, additionally assigns a ground-truth
//! label to each sentence from token-presence rules; it is used to label
//! augmentation data and to report mispredictions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// NLP tasks the framework drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sa,
    Coref,
    Mlm,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Sa => write!(f, "sa"),
            Task::Coref => write!(f, "coref"),
            Task::Mlm => write!(f, "mlm"),
        }
    }
}

/// Discrete sentiment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaLabel {
    Positive,
    Negative,
    Neutral,
}

impl std::fmt::Display for SaLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SaLabel::Positive => write!(f, "positive"),
            SaLabel::Negative => write!(f, "negative"),
            SaLabel::Neutral => write!(f, "neutral"),
        }
    }
}

/// Task-tagged model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskOutput {
    /// Sentiment label and a score in [-1, 1].
    Sa { label: SaLabel, score: f64 },
    /// Coreference chains; each chain is a set of text spans.
    Coref { chains: BTreeSet<BTreeSet<String>> },
    /// Masked-token candidates with confidences in [0, 1].
    Mlm { confidences: BTreeMap<String, f64> },
}

impl TaskOutput {
    pub fn task(&self) -> Task {
        match self {
            TaskOutput::Sa { .. } => Task::Sa,
            TaskOutput::Coref { .. } => Task::Coref,
            TaskOutput::Mlm { .. } => Task::Mlm,
        }
    }
}

/// Oracle decision for one test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub fairness_violation: bool,
    /// Per-sentence misprediction flags; present only when a predictive
    /// oracle was configured.
    pub prediction_errors: Option<Vec<bool>>,
    pub detail: Vec<TaskOutput>,
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("expected {expected} outputs, got {got}")]
    TaskMismatch { expected: Task, got: Task },
    #[error("oracle needs at least {0} outputs")]
    NotEnoughOutputs(usize),
    #[error(
        "label rules are ambiguous: `{first}` and `{second}` both match with different labels"
    )]
    AmbiguousRules { first: String, second: String },
    #[error("invalid threshold {0}; expected a value in (0, 1)")]
    InvalidTau(f64),
}

fn expect_task(outputs: &[TaskOutput], expected: Task) -> Result<(), OracleError> {
    for o in outputs {
        if o.task() != expected {
            return Err(OracleError::TaskMismatch {
                expected,
                got: o.task(),
            });
        }
    }
    Ok(())
}

/// Sentiment oracle: a violation is any disagreement among the discrete
/// labels. Scores are ignored; only the label carries the verdict.
pub fn judge_sa(outputs: &[TaskOutput]) -> Result<Verdict, OracleError> {
    if outputs.len() < 2 {
        return Err(OracleError::NotEnoughOutputs(2));
    }
    expect_task(outputs, Task::Sa)?;
    let labels: Vec<SaLabel> = outputs
        .iter()
        .map(|o| match o {
            TaskOutput::Sa { label, .. } => *label,
            _ => unreachable!(),
        })
        .collect();
    let violation = labels.windows(2).any(|w| w[0] != w[1]);
    Ok(Verdict {
        fairness_violation: violation,
        prediction_errors: None,
        detail: outputs.to_vec(),
    })
}

const SENSITIVE_PLACEHOLDER: &str = "<sensitive>";

fn normalize_chains(
    chains: &BTreeSet<BTreeSet<String>>,
    sensitive_span: &str,
) -> BTreeSet<BTreeSet<String>> {
    chains
        .iter()
        .map(|chain| {
            chain
                .iter()
                .map(|span| {
                    if span == sensitive_span {
                        SENSITIVE_PLACEHOLDER.to_string()
                    } else {
                        span.clone()
                    }
                })
                .collect()
        })
        .collect()
}

/// Coreference oracle: chains must be set-equal across the n outputs once
/// each sentence's own sensitive span is replaced by a placeholder. Without
/// the normalization the only difference the mutation itself introduces
/// (He vs She inside a chain) would count as a violation.
pub fn judge_coref(
    outputs: &[TaskOutput],
    sensitive_spans: &[String],
) -> Result<Verdict, OracleError> {
    if outputs.len() < 2 {
        return Err(OracleError::NotEnoughOutputs(2));
    }
    if sensitive_spans.len() != outputs.len() {
        return Err(OracleError::NotEnoughOutputs(outputs.len()));
    }
    expect_task(outputs, Task::Coref)?;
    let normalized: Vec<BTreeSet<BTreeSet<String>>> = outputs
        .iter()
        .zip(sensitive_spans)
        .map(|(o, span)| match o {
            TaskOutput::Coref { chains } => normalize_chains(chains, span),
            _ => unreachable!(),
        })
        .collect();
    let violation = normalized.windows(2).any(|w| w[0] != w[1]);
    Ok(Verdict {
        fairness_violation: violation,
        prediction_errors: None,
        detail: outputs.to_vec(),
    })
}

/// Masked-token oracle: a violation is any probe token whose confidence
/// differs by more than `tau` between any two sentences. A probe missing
/// from an output's confidence map counts as confidence 0, since black-box
/// top-k output may truncate.
pub fn judge_mlm(
    outputs: &[TaskOutput],
    probe_tokens: &[String],
    tau: f64,
) -> Result<Verdict, OracleError> {
    if outputs.len() < 2 {
        return Err(OracleError::NotEnoughOutputs(2));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(OracleError::InvalidTau(tau));
    }
    expect_task(outputs, Task::Mlm)?;
    let conf = |o: &TaskOutput, tok: &str| -> f64 {
        match o {
            TaskOutput::Mlm { confidences } => confidences.get(tok).copied().unwrap_or(0.0),
            _ => unreachable!(),
        }
    };
    let mut violation = false;
    'outer: for tok in probe_tokens {
        for i in 0..outputs.len() {
            for j in i + 1..outputs.len() {
                if (conf(&outputs[i], tok) - conf(&outputs[j], tok)).abs() > tau {
                    violation = true;
                    break 'outer;
                }
            }
        }
    }
    Ok(Verdict {
        fairness_violation: violation,
        prediction_errors: None,
        detail: outputs.to_vec(),
    })
}

/// One token-presence labeling rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRule {
    pub contains: String,
    pub label: String,
}

/// Rule-based ground-truth labeler. Returns the first matching rule's label,
/// `None` when nothing matches, and an error when rules with different
/// labels both match (the rule file is misconfigured for this grammar).
pub fn predictive_label(
    sentence: &str,
    label_rules: &[LabelRule],
) -> Result<Option<String>, OracleError> {
    let mut matched: Option<&LabelRule> = None;
    for rule in label_rules {
        if sentence.contains(&rule.contains) {
            match matched {
                None => matched = Some(rule),
                Some(prev) if prev.label == rule.label => {}
                Some(prev) => {
                    return Err(OracleError::AmbiguousRules {
                        first: prev.contains.clone(),
                        second: rule.contains.clone(),
                    })
                }
            }
        }
    }
    Ok(matched.map(|r| r.label.clone()))
}

/// Task-dispatching oracle used by campaigns. Carries the per-task
/// parameters and, optionally, predictive label rules.
#[derive(Debug, Clone)]
pub enum Oracle {
    Sa { label_rules: Option<Vec<LabelRule>> },
    Coref,
    Mlm { probes: Vec<String>, tau: f64 },
}

impl Oracle {
    pub fn task(&self) -> Task {
        match self {
            Oracle::Sa { .. } => Task::Sa,
            Oracle::Coref => Task::Coref,
            Oracle::Mlm { .. } => Task::Mlm,
        }
    }

    /// Judge one test case. `sentences` and `sensitive_spans` are indexed
    /// like `outputs`.
    pub fn judge(
        &self,
        sentences: &[String],
        sensitive_spans: &[String],
        outputs: &[TaskOutput],
    ) -> Result<Verdict, OracleError> {
        match self {
            Oracle::Sa { label_rules } => {
                let mut verdict = judge_sa(outputs)?;
                if let Some(rules) = label_rules {
                    let mut errs = Vec::with_capacity(outputs.len());
                    for (sentence, output) in sentences.iter().zip(outputs) {
                        let expected = predictive_label(sentence, rules)?;
                        let got = match output {
                            TaskOutput::Sa { label, .. } => label.to_string(),
                            _ => unreachable!(),
                        };
                        errs.push(match expected {
                            Some(e) => e != got,
                            None => false,
                        });
                    }
                    verdict.prediction_errors = Some(errs);
                }
                Ok(verdict)
            }
            Oracle::Coref => judge_coref(outputs, sensitive_spans),
            Oracle::Mlm { probes, tau } => judge_mlm(outputs, probes, *tau),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sa(label: SaLabel) -> TaskOutput {
        let score = match label {
            SaLabel::Positive => 0.6,
            SaLabel::Negative => -0.7,
            SaLabel::Neutral => 0.0,
        };
        TaskOutput::Sa { label, score }
    }

    fn chains(sets: &[&[&str]]) -> TaskOutput {
        TaskOutput::Coref {
            chains: sets
                .iter()
                .map(|c| c.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    fn mlm(pairs: &[(&str, f64)]) -> TaskOutput {
        TaskOutput::Mlm {
            confidences: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn sa_label_disagreement_is_a_violation() {
        let v = judge_sa(&[sa(SaLabel::Negative), sa(SaLabel::Positive)]).unwrap();
        assert!(v.fairness_violation);
    }

    #[test]
    fn sa_agreement_is_clean() {
        let v = judge_sa(&[sa(SaLabel::Negative), sa(SaLabel::Negative)]).unwrap();
        assert!(!v.fairness_violation);
        let v = judge_sa(&[
            sa(SaLabel::Neutral),
            sa(SaLabel::Neutral),
            sa(SaLabel::Neutral),
        ])
        .unwrap();
        assert!(!v.fairness_violation);
    }

    #[test]
    fn sa_rejects_wrong_task_and_short_input() {
        assert!(matches!(
            judge_sa(&[sa(SaLabel::Neutral), mlm(&[("his", 0.5)])]),
            Err(OracleError::TaskMismatch { .. })
        ));
        assert!(matches!(
            judge_sa(&[sa(SaLabel::Neutral)]),
            Err(OracleError::NotEnoughOutputs(_))
        ));
    }

    #[test]
    fn coref_resolution_to_distractor_is_a_violation() {
        let a = chains(&[&["farmer", "He"]]);
        let b = chains(&[&["farmer", "baker"]]);
        let v = judge_coref(&[a, b], &["He".into(), "She".into()]).unwrap();
        assert!(v.fairness_violation);
    }

    #[test]
    fn coref_is_clean_modulo_sensitive_span() {
        let a = chains(&[&["farmer", "He"]]);
        let b = chains(&[&["farmer", "She"]]);
        let v = judge_coref(&[a, b], &["He".into(), "She".into()]).unwrap();
        assert!(!v.fairness_violation);
    }

    #[test]
    fn coref_empty_chains_are_clean() {
        let v = judge_coref(&[chains(&[]), chains(&[])], &["He".into(), "She".into()]).unwrap();
        assert!(!v.fairness_violation);
    }

    #[test]
    fn mlm_gap_above_tau_is_a_violation() {
        let a = mlm(&[("his", 0.700), ("her", 0.179)]);
        let b = mlm(&[("his", 0.182), ("her", 0.691)]);
        let v = judge_mlm(&[a, b], &["his".into(), "her".into()], 0.5).unwrap();
        // |0.700 - 0.182| = 0.518 > 0.5
        assert!(v.fairness_violation);
    }

    #[test]
    fn mlm_identical_maps_are_clean() {
        let a = mlm(&[("his", 0.4), ("her", 0.3)]);
        let b = mlm(&[("his", 0.4), ("her", 0.3)]);
        for tau in [0.05, 0.1, 0.5, 0.9] {
            let v = judge_mlm(&[a.clone(), b.clone()], &["his".into(), "her".into()], tau).unwrap();
            assert!(!v.fairness_violation);
        }
    }

    #[test]
    fn mlm_small_gap_is_clean() {
        let a = mlm(&[("his", 0.30), ("her", 0.35)]);
        let b = mlm(&[("his", 0.35), ("her", 0.30)]);
        let v = judge_mlm(&[a, b], &["his".into(), "her".into()], 0.15).unwrap();
        assert!(!v.fairness_violation);
    }

    #[test]
    fn mlm_missing_probe_counts_as_zero() {
        let a = mlm(&[("his", 0.6)]);
        let b = mlm(&[]);
        let v = judge_mlm(&[a, b], &["his".into()], 0.5).unwrap();
        assert!(v.fairness_violation);
    }

    #[test]
    fn mlm_violations_are_monotone_in_tau() {
        let a = mlm(&[("his", 0.65), ("her", 0.20)]);
        let b = mlm(&[("his", 0.40), ("her", 0.42)]);
        let grid = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30];
        let mut prev = true;
        for tau in grid {
            let v = judge_mlm(&[a.clone(), b.clone()], &["his".into(), "her".into()], tau)
                .unwrap()
                .fairness_violation;
            // once clean at a smaller tau, stays clean at larger tau
            assert!(prev || !v);
            prev = v;
        }
    }

    #[test]
    fn verdicts_are_permutation_invariant() {
        let outs = vec![
            mlm(&[("his", 0.1)]),
            mlm(&[("his", 0.5)]),
            mlm(&[("his", 0.45)]),
        ];
        let probes = vec!["his".to_string()];
        let base = judge_mlm(&outs, &probes, 0.3).unwrap().fairness_violation;
        let perms: Vec<Vec<usize>> = vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ];
        for p in perms {
            let shuffled: Vec<TaskOutput> = p.iter().map(|&i| outs[i].clone()).collect();
            assert_eq!(
                judge_mlm(&shuffled, &probes, 0.3)
                    .unwrap()
                    .fairness_violation,
                base
            );
        }
    }

    #[test]
    fn judging_copies_of_one_output_is_reflexively_clean() {
        let o = sa(SaLabel::Negative);
        let v = judge_sa(&[o.clone(), o.clone(), o.clone()]).unwrap();
        assert!(!v.fairness_violation);
    }

    #[test]
    fn predictive_label_matches_first_rule() {
        let rules = vec![
            LabelRule {
                contains: "excited".into(),
                label: "positive".into(),
            },
            LabelRule {
                contains: "enraged".into(),
                label: "negative".into(),
            },
        ];
        assert_eq!(
            predictive_label("The CEO feels excited.", &rules).unwrap(),
            Some("positive".into())
        );
        assert_eq!(
            predictive_label("The cleaner feels enraged.", &rules).unwrap(),
            Some("negative".into())
        );
        assert_eq!(
            predictive_label("The cleaner has two children.", &rules).unwrap(),
            None
        );
    }

    #[test]
    fn predictive_label_rejects_conflicting_matches() {
        let rules = vec![
            LabelRule {
                contains: "excited".into(),
                label: "positive".into(),
            },
            LabelRule {
                contains: "enraged".into(),
                label: "negative".into(),
            },
        ];
        let err = predictive_label("feels excited yet enraged", &rules).unwrap_err();
        assert!(matches!(err, OracleError::AmbiguousRules { .. }));
    }

    #[test]
    fn oracle_fills_prediction_errors_only_when_configured() {
        let rules = vec![LabelRule {
            contains: "enraged".into(),
            label: "negative".into(),
        }];
        let sentences = vec![
            "The CEO feels enraged.".to_string(),
            "The cleaner feels enraged.".to_string(),
        ];
        let spans = vec!["The CEO".to_string(), "The cleaner".to_string()];
        let outputs = vec![sa(SaLabel::Negative), sa(SaLabel::Positive)];

        let with = Oracle::Sa {
            label_rules: Some(rules),
        };
        let v = with.judge(&sentences, &spans, &outputs).unwrap();
        assert!(v.fairness_violation);
        assert_eq!(v.prediction_errors, Some(vec![false, true]));

        let without = Oracle::Sa { label_rules: None };
        let v = without.judge(&sentences, &spans, &outputs).unwrap();
        assert_eq!(v.prediction_errors, None);
    }
}
