//! Campaign reports and on-disk artifacts.
//!
//! The machine-readable JSON forms are the contract; the text tables are
//! derived views. Everything persisted is byte-deterministic for a fixed
//! `(seed, grammar, config, model)`: ordered maps throughout, and no
//! timestamps or timing fields in any artifact (timing is reported on the
//! console only).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnosis::{diagnosis_table, AnomalyReport};
use crate::generator::{CampaignState, KeptCase, PhaseStats, TokenCountMap};
use crate::group_fairness::GroupScore;
use crate::oracles::Task;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt artifact {path}: {detail}")]
    Corrupt { path: String, detail: String },
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    std::fs::write(path, bytes).map_err(|e| ArtifactError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, ArtifactError> {
    std::fs::read(path).map_err(|e| ArtifactError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Aggregate counters over all phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub unique_cases: u64,
    pub violations: u64,
    pub error_rate: f64,
    pub mut_failures: u64,
    pub prediction_errors: u64,
}

impl Totals {
    pub fn from_phases(phases: &[PhaseStats]) -> Self {
        let unique: u64 = phases.iter().map(|p| p.unique_cases).sum();
        let violations: u64 = phases.iter().map(|p| p.violations).sum();
        Totals {
            unique_cases: unique,
            violations,
            error_rate: if unique > 0 {
                violations as f64 / unique as f64
            } else {
                0.0
            },
            mut_failures: phases.iter().map(|p| p.mut_failures).sum(),
            prediction_errors: phases.iter().map(|p| p.prediction_errors).sum(),
        }
    }
}

/// The campaign report: config echo, per-phase statistics, and the final
/// diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    /// Echo of the resolved configuration, as JSON.
    pub config: serde_json::Value,
    pub seed: u64,
    pub task: Task,
    pub sensitive_rule: String,
    pub phases: Vec<PhaseStats>,
    pub totals: Totals,
    pub diagnosis: AnomalyReport,
    pub failure_log: Vec<String>,
}

/// Persisted campaign state: everything diagnosis and augmentation need to
/// run offline, without the kept-case bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub grammar_path: String,
    pub task: Task,
    pub seed: u64,
    pub n: usize,
    pub sensitive_rule: String,
    pub term_count: TokenCountMap,
    pub term_err: TokenCountMap,
    pub rand_term_count: Option<TokenCountMap>,
    pub rand_term_err: Option<TokenCountMap>,
    pub phases: Vec<PhaseStats>,
}

impl StateFile {
    pub fn from_state(state: &CampaignState, grammar_path: &str, task: Task) -> Self {
        Self {
            grammar_path: grammar_path.to_string(),
            task,
            seed: state.seed,
            n: state.n,
            sensitive_rule: state.sensitive_rule.clone(),
            term_count: state.term_count.clone(),
            term_err: state.term_err.clone(),
            rand_term_count: state.rand_term_count.clone(),
            rand_term_err: state.rand_term_err.clone(),
            phases: state.phases.clone(),
        }
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut body = serde_json::to_string_pretty(value).expect("report types serialize");
    body.push('\n');
    write_file(path, body.as_bytes())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArtifactError> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| ArtifactError::Corrupt {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// One kept case per line.
pub fn save_cases_jsonl(path: &Path, cases: &[KeptCase]) -> Result<(), ArtifactError> {
    let mut out = Vec::new();
    for case in cases {
        serde_json::to_writer(&mut out, case).expect("cases serialize");
        out.push(b'\n');
    }
    write_file(path, &out)
}

pub fn load_cases_jsonl(path: &Path) -> Result<Vec<KeptCase>, ArtifactError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| ArtifactError::Corrupt {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).map_err(|e| ArtifactError::Corrupt {
                path: path.display().to_string(),
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Write all campaign artifacts into `out_dir`.
pub fn write_campaign_artifacts(
    out_dir: &Path,
    report: &CampaignReport,
    state: &CampaignState,
    state_file: &StateFile,
) -> Result<(), ArtifactError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ArtifactError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    save_json(&out_dir.join("report.json"), report)?;
    save_json(&out_dir.join("state.json"), state_file)?;
    save_cases_jsonl(&out_dir.join("unique_tests.jsonl"), &state.kept)?;
    let violations: Vec<KeptCase> = state.kept.iter().filter(|k| k.violation).cloned().collect();
    save_cases_jsonl(&out_dir.join("violations.jsonl"), &violations)?;
    write_file(
        &out_dir.join("diagnosis.tsv"),
        diagnosis_table(&report.diagnosis).as_bytes(),
    )?;
    write_file(
        &out_dir.join("report.txt"),
        render_report_text(report, None).as_bytes(),
    )?;
    Ok(())
}

/// Human-readable report. `timing_seconds` is appended when given; it never
/// appears in the JSON artifacts.
pub fn render_report_text(report: &CampaignReport, timing_seconds: Option<f64>) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "campaign  task={} sensitive={} seed={}\n\n",
        report.task, report.sensitive_rule, report.seed
    ));
    s.push_str("phase  iters  unique  violations  error-rate  dup  mut-fail  term-cov  pair-cov\n");
    for p in &report.phases {
        s.push_str(&format!(
            "{:<5}  {:>5}  {:>6}  {:>10}  {:>10.4}  {:>3}  {:>8}  {:>8.4}  {:>8.4}\n",
            p.phase.to_string(),
            p.iterations,
            p.unique_cases,
            p.violations,
            p.error_rate,
            p.duplicates,
            p.mut_failures,
            p.coverage.terminal_ratio(),
            p.coverage.pair_ratio(),
        ));
    }
    s.push_str(&format!(
        "\ntotal  unique={} violations={} error-rate={:.4}\n",
        report.totals.unique_cases, report.totals.violations, report.totals.error_rate
    ));
    let flagged = report.diagnosis.flagged();
    s.push_str(&format!("\nflagged tokens ({}):\n", flagged.len()));
    for t in flagged {
        s.push_str(&format!(
            "  {} / {}  rate={:.4} index={:.2}\n",
            t.rule, t.terminal, t.error_rate, t.anomaly_index
        ));
    }
    if !report.failure_log.is_empty() {
        s.push_str("\nadapter failures (first few):\n");
        for line in &report.failure_log {
            s.push_str(&format!("  {line}\n"));
        }
    }
    if let Some(secs) = timing_seconds {
        s.push_str(&format!("\nelapsed: {secs:.2}s\n"));
    }
    s
}

/// Group campaign report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub config: serde_json::Value,
    pub seed: u64,
    pub mut_kind: String,
    pub groups: u64,
    pub iters_per_group: u64,
    pub scores: Vec<GroupScore>,
    pub summary: Vec<GroupSummaryRow>,
}

/// One row of the per-probe summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummaryRow {
    pub mut_kind: String,
    pub probe: String,
    pub violations: u64,
    pub percent_violation: f64,
}

pub fn summarize_groups(mut_kind: &str, scores: &[GroupScore]) -> Vec<GroupSummaryRow> {
    let mut probes: Vec<String> = scores.iter().map(|s| s.probe.clone()).collect();
    probes.dedup();
    probes.sort();
    probes.dedup();
    probes
        .into_iter()
        .map(|probe| {
            let total = scores.iter().filter(|s| s.probe == probe).count() as u64;
            let violations = scores
                .iter()
                .filter(|s| s.probe == probe && s.violation)
                .count() as u64;
            GroupSummaryRow {
                mut_kind: mut_kind.to_string(),
                probe,
                violations,
                percent_violation: if total > 0 {
                    100.0 * violations as f64 / total as f64
                } else {
                    0.0
                },
            }
        })
        .collect()
}

pub fn render_group_text(report: &GroupReport, timing_seconds: Option<f64>) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "group campaign  groups={} iters-per-group={} seed={}\n\n",
        report.groups, report.iters_per_group, report.seed
    ));
    s.push_str("MUT                  probe  #violations  %violation\n");
    for row in &report.summary {
        s.push_str(&format!(
            "{:<20} {:<6} {:>11}  {:>9.1}\n",
            row.mut_kind, row.probe, row.violations, row.percent_violation
        ));
    }
    s.push_str("\nviolating groups:\n");
    for score in report.scores.iter().filter(|s| s.violation) {
        s.push_str(&format!(
            "  {} / {}  mean={:.4} index={}\n",
            score.group,
            score.probe,
            score.mean_score,
            if score.anomaly_index.is_infinite() {
                if score.anomaly_index > 0.0 {
                    "+inf".to_string()
                } else {
                    "-inf".to_string()
                }
            } else {
                format!("{:.2}", score.anomaly_index)
            }
        ));
    }
    if let Some(secs) = timing_seconds {
        s.push_str(&format!("\nelapsed: {secs:.2}s\n"));
    }
    s
}

pub fn write_group_artifacts(out_dir: &Path, report: &GroupReport) -> Result<(), ArtifactError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ArtifactError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    save_json(&out_dir.join("group_report.json"), report)?;
    write_file(
        &out_dir.join("group_report.txt"),
        render_group_text(report, None).as_bytes(),
    )?;
    Ok(())
}

/// Write any text artifact (e.g. a regenerated diagnosis table).
pub fn write_text(path: &Path, text: &str) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| ArtifactError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{PhaseKind, SensChoice, TestCase};
    use crate::grammar::{Choice, CoverageReport, DerivationTrace};

    fn kept_case() -> KeptCase {
        KeptCase {
            phase: PhaseKind::Rand,
            iteration: 3,
            violation: true,
            case: TestCase {
                sentences: vec!["a x".into(), "b x".into()],
                base_trace: DerivationTrace {
                    choices: vec![Choice {
                        rule: "S".into(),
                        alt: 0,
                        literal: None,
                    }],
                    sentence: "a x".into(),
                },
                sensitive_rule: "P".into(),
                sensitive_choices: vec![
                    SensChoice {
                        alt: 0,
                        literal: "a".into(),
                    },
                    SensChoice {
                        alt: 1,
                        literal: "b".into(),
                    },
                ],
            },
        }
    }

    #[test]
    fn cases_roundtrip_through_jsonl() {
        let dir = std::env::temp_dir().join(format!("astraea-report-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cases.jsonl");
        let cases = vec![kept_case(), kept_case()];
        save_cases_jsonl(&path, &cases).unwrap();
        let loaded = load_cases_jsonl(&path).unwrap();
        assert_eq!(loaded, cases);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn corrupt_artifacts_are_reported() {
        let dir = std::env::temp_dir().join(format!("astraea-corrupt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.json");
        std::fs::write(&path, b"{ truncated").unwrap();
        let err = load_json::<StateFile>(&path).unwrap_err();
        assert!(matches!(err, ArtifactError::Corrupt { .. }));
        let missing = load_json::<StateFile>(&dir.join("missing.json")).unwrap_err();
        assert!(matches!(missing, ArtifactError::Io { .. }));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn totals_aggregate_phases() {
        let phase = |violations: u64, unique: u64| PhaseStats {
            phase: PhaseKind::Rand,
            iterations: unique,
            unique_cases: unique,
            violations,
            duplicates: 0,
            mut_failures: 1,
            prediction_errors: 0,
            error_rate: violations as f64 / unique as f64,
            coverage: CoverageReport {
                terminals_covered: 0,
                terminals_total: 0,
                pairs_covered: 0,
                pairs_total: 0,
            },
            saturated_at: None,
        };
        let totals = Totals::from_phases(&[phase(10, 100), phase(30, 100)]);
        assert_eq!(totals.unique_cases, 200);
        assert_eq!(totals.violations, 40);
        assert!((totals.error_rate - 0.2).abs() < 1e-12);
        assert_eq!(totals.mut_failures, 2);
    }
}
