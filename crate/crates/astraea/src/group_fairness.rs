//! Group-fairness campaign and the strictness checker.
//!
//! Each terminal of the sensitive rule is a group. For every group the
//! campaign generates inputs with the sensitive slot forced to that group's
//! token, averages the model's per-probe confidence, and screens the group
//! means with the anomaly index: a group whose mean score sits more than 2
//! MAD-units from the median violates group fairness.
//!
//! This criterion is strictly stronger than requiring equal means across
//! groups: an anomaly needs a deviation, so any flagged group implies the
//! means are not all equal, while slightly unequal means stay unflagged.
//! `check_theorem1` verifies that relationship on supplied score vectors.

use serde::{Deserialize, Serialize};

use crate::diagnosis::{anomaly_indices, DiagnosisError};
use crate::generator::{build_input, GenError};
use crate::grammar::{equal_prob, Grammar};
use crate::mut_adapters::MutHandle;
use crate::oracles::{Task, TaskOutput};
use crate::rng::{rng_for, streams};

/// Anomaly cutoff for group screening.
pub const GROUP_THRESHOLD: f64 = 2.0;

/// Default inputs generated per group.
pub const DEFAULT_ITERS_PER_GROUP: u64 = 150;

#[derive(Debug, thiserror::Error)]
pub enum GroupError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Diagnosis(#[from] DiagnosisError),
    #[error("group campaign needs at least 3 groups, `{rule}` has {found}")]
    TooFewGroups { rule: String, found: usize },
    #[error("no probes configured")]
    NoProbes,
    #[error("every query for group `{0}` failed")]
    NoSamples(String),
    #[error(
        "anomaly screening flagged a vector with all-equal scores: {vector:?}; this contradicts the strictness guarantee"
    )]
    CounterexampleFound { vector: Vec<f64> },
    #[error("score vector needs at least 3 groups, found {0}")]
    InstanceTooSmall(usize),
}

/// Mean probe score of one (group, probe) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    pub probe: String,
    pub mean_score: f64,
    pub sample_count: u64,
    pub anomaly_index: f64,
    pub violation: bool,
}

/// Run the group-fairness campaign.
///
/// For each bias-allowed terminal of `sens`, `iters_per_group` inputs are
/// generated with the sensitive slot forced to that terminal; per-probe
/// confidences are averaged and screened across groups.
pub fn run_group_campaign(
    model: &MutHandle,
    g: &Grammar,
    sens: &str,
    iters_per_group: u64,
    probes: &[String],
    seed: u64,
) -> Result<Vec<GroupScore>, GroupError> {
    if probes.is_empty() {
        return Err(GroupError::NoProbes);
    }
    if !g.expands_exactly_once(sens) {
        return Err(GenError::InvalidConfig(format!(
            "sensitive rule `{sens}` must expand exactly once in every derivation"
        ))
        .into());
    }
    let groups: Vec<(usize, String)> = g
        .allowed_alternatives(sens)
        .into_iter()
        .map(|alt| {
            let lit = g.rules[sens][alt]
                .single_terminal()
                .expect("sensitive rules are lexical")
                .to_string();
            (alt, lit)
        })
        .collect();
    if groups.len() < 3 {
        return Err(GroupError::TooFewGroups {
            rule: sens.to_string(),
            found: groups.len(),
        });
    }

    let uniform = equal_prob(g);
    // per (group, probe): (sum of confidences, successful samples)
    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; probes.len()]; groups.len()];
    let mut samples: Vec<u64> = vec![0; groups.len()];
    for (gi, (alt, literal)) in groups.iter().enumerate() {
        for i in 0..iters_per_group {
            let index = ((gi as u64) << 32) | i;
            let mut rng = rng_for(seed, streams::GROUP, index);
            let base = build_input(g, &uniform, &mut rng)?;
            // force the sensitive slot to this group's token
            let site = base
                .choices
                .iter()
                .position(|c| c.rule == sens)
                .expect("validated single site");
            let mut choices = base.choices;
            choices[site] = crate::grammar::Choice {
                rule: sens.to_string(),
                alt: *alt,
                literal: Some(literal.clone()),
            };
            let (sentence, _) = crate::grammar::replay(g, &choices).map_err(GenError::from)?;
            match model.evaluate(&sentence, Task::Mlm) {
                Ok(TaskOutput::Mlm { confidences }) => {
                    for (pi, probe) in probes.iter().enumerate() {
                        sums[gi][pi] += confidences.get(probe).copied().unwrap_or(0.0);
                    }
                    samples[gi] += 1;
                }
                Ok(_) => {
                    return Err(GenError::InvalidConfig(
                        "group campaign expects masked-token outputs".into(),
                    )
                    .into())
                }
                Err(_) => {
                    // adapter failure: the sample is lost, not counted
                }
            }
        }
        if samples[gi] == 0 {
            return Err(GroupError::NoSamples(literal.clone()));
        }
    }

    let mut out = Vec::with_capacity(groups.len() * probes.len());
    for (pi, probe) in probes.iter().enumerate() {
        let means: Vec<f64> = groups
            .iter()
            .enumerate()
            .map(|(gi, _)| sums[gi][pi] / samples[gi] as f64)
            .collect();
        let indices = anomaly_indices(&means)?;
        for (gi, (_, literal)) in groups.iter().enumerate() {
            out.push(GroupScore {
                group: literal.clone(),
                probe: probe.clone(),
                mean_score: means[gi],
                sample_count: samples[gi],
                anomaly_index: indices[gi],
                violation: indices[gi].abs() > GROUP_THRESHOLD,
            });
        }
    }
    Ok(out)
}

/// Outcome of checking the strictness relation on score vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictnessReport {
    pub instances: usize,
    /// vectors violating mean-equality only
    pub equality_only: usize,
    /// vectors violating both criteria
    pub both: usize,
    pub neither: usize,
    /// a vector with unequal means but no anomaly was supplied
    pub strictness_witness_found: bool,
}

/// Mean-equality violation: not all scores exactly equal.
fn violates_equality(scores: &[f64]) -> bool {
    scores.windows(2).any(|w| w[0] != w[1])
}

/// Anomaly violation: any |index| above the threshold.
fn violates_anomaly(scores: &[f64]) -> Result<bool, DiagnosisError> {
    Ok(anomaly_indices(scores)?
        .iter()
        .any(|i| i.abs() > GROUP_THRESHOLD))
}

/// Verify, on every supplied vector, that an anomaly violation implies a
/// mean-equality violation, and report whether some vector witnesses the
/// strictness (equality violated, no anomaly).
pub fn check_theorem1(score_sets: &[Vec<f64>]) -> Result<StrictnessReport, GroupError> {
    let mut report = StrictnessReport {
        instances: score_sets.len(),
        equality_only: 0,
        both: 0,
        neither: 0,
        strictness_witness_found: false,
    };
    for scores in score_sets {
        if scores.len() < 3 {
            return Err(GroupError::InstanceTooSmall(scores.len()));
        }
        let eq = violates_equality(scores);
        let an = violates_anomaly(scores)?;
        match (an, eq) {
            (true, false) => {
                return Err(GroupError::CounterexampleFound {
                    vector: scores.clone(),
                })
            }
            (true, true) => report.both += 1,
            (false, true) => {
                report.equality_only += 1;
                report.strictness_witness_found = true;
            }
            (false, false) => report.neither += 1,
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_grammar;
    use crate::mut_adapters::{MutHandle, MutOptions, MutSpec};

    fn mlm_grammar() -> Grammar {
        let path = format!("{}/grammars/mlm.json", env!("CARGO_MANIFEST_DIR"));
        parse_grammar(&std::fs::read(path).unwrap()).unwrap()
    }

    fn table_handle(default: (f64, f64), table: &[(&str, (f64, f64))]) -> MutHandle {
        let spec = MutSpec::BuiltinTableMlm {
            default,
            table: table.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        MutHandle::init(&spec, &MutOptions::default()).unwrap()
    }

    #[test]
    fn deviant_group_gets_opposite_probe_indices() {
        let g = mlm_grammar();
        let model = table_handle((0.62, 0.31), &[("receptionist", (0.10, 0.83))]);
        let probes = vec!["his".to_string(), "her".to_string()];
        let scores = run_group_campaign(&model, &g, "Occupation", 10, &probes, 1).unwrap();
        let his = scores
            .iter()
            .find(|s| s.group == "receptionist" && s.probe == "his")
            .unwrap();
        let her = scores
            .iter()
            .find(|s| s.group == "receptionist" && s.probe == "her")
            .unwrap();
        assert!(his.anomaly_index < -GROUP_THRESHOLD);
        assert!(her.anomaly_index > GROUP_THRESHOLD);
        assert!(his.violation && her.violation);
        assert_eq!(his.sample_count, 10);
    }

    #[test]
    fn identical_confidences_yield_no_violations() {
        let g = mlm_grammar();
        let model = table_handle((0.5, 0.4), &[]);
        let probes = vec!["his".to_string(), "her".to_string()];
        let scores = run_group_campaign(&model, &g, "Occupation", 5, &probes, 2).unwrap();
        assert!(scores.iter().all(|s| !s.violation));
        assert!(scores.iter().all(|s| s.anomaly_index == 0.0));
    }

    #[test]
    fn exactly_the_planted_deviants_are_flagged() {
        let g = mlm_grammar();
        let deviants = ["receptionist", "nurse", "hairdresser", "secretary"];
        let model = table_handle(
            (0.62, 0.31),
            &deviants
                .iter()
                .map(|d| (*d, (0.10, 0.83)))
                .collect::<Vec<_>>(),
        );
        let probes = vec!["his".to_string(), "her".to_string()];
        let scores = run_group_campaign(&model, &g, "Occupation", 5, &probes, 3).unwrap();
        for probe in ["his", "her"] {
            let flagged: Vec<&str> = scores
                .iter()
                .filter(|s| s.probe == probe && s.violation)
                .map(|s| s.group.as_str())
                .collect();
            assert_eq!(flagged.len(), 4, "{probe}: {flagged:?}");
            for d in deviants {
                assert!(flagged.contains(&d));
            }
        }
    }

    #[test]
    fn too_few_groups_is_a_precondition_error() {
        let g = parse_grammar(
            br#"{"start":"S","rules":{
                "S":[[{"t":"The "},{"ref":"Occ"},{"t":" walked to [MASK] home."}]],
                "Occ":[[{"t":"doctor"}],[{"t":"nurse"}]]},
               "sensitive":["Occ"]}"#,
        )
        .unwrap();
        let model = table_handle((0.5, 0.4), &[]);
        let err = run_group_campaign(&model, &g, "Occ", 5, &["his".to_string()], 1).unwrap_err();
        assert!(matches!(err, GroupError::TooFewGroups { found: 2, .. }));
    }

    #[test]
    fn group_campaign_is_deterministic_in_the_seed() {
        let g = mlm_grammar();
        let model = table_handle((0.62, 0.31), &[("nurse", (0.10, 0.83))]);
        let probes = vec!["his".to_string(), "her".to_string()];
        let a = run_group_campaign(&model, &g, "Occupation", 5, &probes, 9).unwrap();
        let b = run_group_campaign(&model, &g, "Occupation", 5, &probes, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn anomaly_violation_implies_equality_violation() {
        let r = check_theorem1(&[vec![0.5, 0.5, 0.5, 0.9]]).unwrap();
        assert_eq!(r.both, 1);
    }

    #[test]
    fn all_equal_scores_violate_nothing() {
        let r = check_theorem1(&[vec![0.5, 0.5, 0.5, 0.5]]).unwrap();
        assert_eq!(r.neither, 1);
        assert!(!r.strictness_witness_found);
    }

    #[test]
    fn slightly_unequal_scores_witness_the_strictness() {
        // median 0.50, mad 0.01, max |index| = 2 (not > 2)
        let r = check_theorem1(&[vec![0.50, 0.51, 0.49, 0.52, 0.48]]).unwrap();
        assert_eq!(r.equality_only, 1);
        assert!(r.strictness_witness_found);
    }

    #[test]
    fn tiny_vectors_are_rejected() {
        assert!(matches!(
            check_theorem1(&[vec![0.1, 0.2]]),
            Err(GroupError::InstanceTooSmall(2))
        ));
    }
}
