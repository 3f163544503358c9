//! Operator-facing campaign commands: configuration resolution, execution,
//! and artifact emission. The CLI binary is a thin wrapper over these.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentation::{build_augmentation, to_jsonl, AugmentError};
use crate::diagnosis::{
    diagnosis_table, fault_diagnosis, AnomalyReport, DiagnosisError, DEFAULT_THRESHOLD,
};
use crate::generator::{run_individual_campaign, CampaignState, ExecOptions, GenError, PhaseKind};
use crate::grammar::{coverage, parse_grammar, Grammar, GrammarError};
use crate::group_fairness::{run_group_campaign, GroupError, DEFAULT_ITERS_PER_GROUP};
use crate::mut_adapters::{MutError, MutHandle, MutOptions, MutSpec};
use crate::oracles::{LabelRule, Oracle, OracleError, Task};
use crate::report::{
    load_cases_jsonl, load_json, render_group_text, render_report_text, summarize_groups,
    write_campaign_artifacts, write_group_artifacts, write_text, ArtifactError, CampaignReport,
    GroupReport, StateFile, Totals,
};

/// Environment variable holding the HTTP adapter's bearer token.
pub const MUT_TOKEN_ENV: &str = "ASTRAEA_MUT_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Mut(#[from] MutError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Diagnosis(#[from] DiagnosisError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn read_path(path: &Path) -> Result<Vec<u8>, CampaignError> {
    std::fs::read(path).map_err(|e| CampaignError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn default_n() -> usize {
    2
}

fn default_phases() -> Vec<PhaseKind> {
    vec![PhaseKind::Rand, PhaseKind::Prob]
}

/// Individual-fairness campaign configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub grammar_path: String,
    pub task: Task,
    #[serde(default = "default_n")]
    pub n: usize,
    pub iters: u64,
    #[serde(default)]
    pub seed: u64,
    /// Individual-fairness threshold; masked-token task only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<String>>,
    #[serde(default = "default_phases")]
    pub phases: Vec<PhaseKind>,
    #[serde(rename = "mut")]
    pub mut_spec: MutSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_rules: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive_rule: Option<String>,
    /// Bias-mask override; replaces the grammar file's masks entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BTreeMap<String, Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_rules_path: Option<String>,
    #[serde(default)]
    pub saturation: bool,
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let bytes = read_path(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))
    }
}

/// Group-fairness campaign configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub grammar_path: String,
    #[serde(rename = "mut")]
    pub mut_spec: MutSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive_rule: Option<String>,
    #[serde(default = "default_iters_per_group")]
    pub iters_per_group: u64,
    #[serde(default = "default_probes")]
    pub probes: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BTreeMap<String, Vec<usize>>>,
}

fn default_iters_per_group() -> u64 {
    DEFAULT_ITERS_PER_GROUP
}

fn default_probes() -> Vec<String> {
    vec!["his".to_string(), "her".to_string()]
}

impl GroupConfig {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let bytes = read_path(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))
    }
}

fn load_grammar_with_bias(
    path: &str,
    bias: Option<&BTreeMap<String, Vec<usize>>>,
) -> Result<Grammar, CampaignError> {
    let bytes = read_path(Path::new(path))?;
    let mut g = parse_grammar(&bytes)?;
    if let Some(mask) = bias {
        g.bias = mask.clone();
        g.validate()?;
    }
    Ok(g)
}

fn resolve_sensitive(g: &Grammar, requested: Option<&str>) -> Result<String, CampaignError> {
    match requested {
        Some(rule) => {
            if g.sensitive.contains(rule) {
                Ok(rule.to_string())
            } else {
                Err(CampaignError::Config(format!(
                    "`{rule}` is not declared sensitive in the grammar"
                )))
            }
        }
        None => {
            let mut iter = g.sensitive.iter();
            match (iter.next(), iter.next()) {
                (Some(rule), None) => Ok(rule.clone()),
                (None, _) => Err(CampaignError::Config(
                    "grammar declares no sensitive rule".into(),
                )),
                (Some(_), Some(_)) => Err(CampaignError::Config(
                    "grammar declares several sensitive rules; set `sensitive_rule`".into(),
                )),
            }
        }
    }
}

fn resolve_prob_rules(
    g: &Grammar,
    overridden: Option<&[String]>,
    sens: &str,
) -> Result<BTreeSet<String>, CampaignError> {
    let rules: BTreeSet<String> = match overridden {
        Some(list) => list.iter().cloned().collect(),
        None if !g.prob_rules.is_empty() => g.prob_rules.clone(),
        // fall back to the sensitive rule itself: it is lexical by
        // construction and is where error rates accumulate
        None => [sens.to_string()].into_iter().collect(),
    };
    for rule in &rules {
        let alts = g
            .rules
            .get(rule)
            .ok_or_else(|| CampaignError::Config(format!("unknown prob rule `{rule}`")))?;
        if alts.iter().any(|a| a.single_terminal().is_none()) {
            return Err(CampaignError::Config(format!(
                "prob rule `{rule}` is not lexical"
            )));
        }
    }
    Ok(rules)
}

fn load_label_rules(path: &str) -> Result<Vec<LabelRule>, CampaignError> {
    let bytes = read_path(Path::new(path))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CampaignError::Config(format!("label rules {path}: {e}")))
}

fn build_oracle(config: &CampaignConfig) -> Result<Oracle, CampaignError> {
    match config.task {
        Task::Sa => {
            let label_rules = match &config.label_rules_path {
                Some(p) => Some(load_label_rules(p)?),
                None => None,
            };
            Ok(Oracle::Sa { label_rules })
        }
        Task::Coref => Ok(Oracle::Coref),
        Task::Mlm => {
            let tau = config
                .tau
                .ok_or_else(|| CampaignError::Config("masked-token campaigns need `tau`".into()))?;
            let probes = config.probes.clone().unwrap_or_else(default_probes);
            Ok(Oracle::Mlm { probes, tau })
        }
    }
}

fn mut_options(config_probes: Option<&Vec<String>>) -> MutOptions {
    MutOptions {
        probes: Some(config_probes.cloned().unwrap_or_else(default_probes)),
        bearer_token: std::env::var(MUT_TOKEN_ENV).ok(),
    }
}

#[derive(Debug)]
pub struct TestOutcome {
    pub report: CampaignReport,
    pub state: CampaignState,
    pub violations_found: bool,
}

/// Run a full individual-fairness campaign and write artifacts to
/// `out_dir` when given.
pub fn cmd_test(
    config: &CampaignConfig,
    out_dir: Option<&Path>,
    workers: usize,
) -> Result<TestOutcome, CampaignError> {
    if config.phases.is_empty() {
        return Err(CampaignError::Config("no phases requested".into()));
    }
    if config.phases.first() != Some(&PhaseKind::Rand) {
        return Err(CampaignError::Config(
            "the first phase must be rand; prob weights derive from it".into(),
        ));
    }
    if config.task == Task::Mlm && config.tau.is_none() {
        return Err(CampaignError::Config(
            "masked-token campaigns need `tau`".into(),
        ));
    }
    let g = load_grammar_with_bias(&config.grammar_path, config.bias.as_ref())?;
    let sens = resolve_sensitive(&g, config.sensitive_rule.as_deref())?;
    let prob_rules = resolve_prob_rules(&g, config.prob_rules.as_deref(), &sens)?;
    let oracle = build_oracle(config)?;
    let model = MutHandle::init(&config.mut_spec, &mut_options(config.probes.as_ref()))?;
    let run_prob = config.phases.contains(&PhaseKind::Prob);
    let exec = ExecOptions {
        workers: workers.max(1),
        saturation: config.saturation,
    };

    let (state, _rand_report) = run_individual_campaign(
        &model,
        &g,
        config.n,
        &sens,
        config.iters,
        &prob_rules,
        &oracle,
        config.seed,
        run_prob,
        &exec,
    )?;

    // the persisted diagnosis is over the cumulative maps, so re-running
    // `diagnose` on the state file reproduces it exactly
    let diagnosis = fault_diagnosis(&state.term_err, &state.term_count, DEFAULT_THRESHOLD)?;
    let report = CampaignReport {
        config: serde_json::to_value(config).expect("config serializes"),
        seed: config.seed,
        task: config.task,
        sensitive_rule: sens.clone(),
        phases: state.phases.clone(),
        totals: Totals::from_phases(&state.phases),
        diagnosis,
        failure_log: state.failure_log.clone(),
    };
    if let Some(dir) = out_dir {
        let state_file = StateFile::from_state(&state, &config.grammar_path, config.task);
        write_campaign_artifacts(dir, &report, &state, &state_file)?;
    }
    let violations_found = report.totals.violations > 0;
    Ok(TestOutcome {
        report,
        state,
        violations_found,
    })
}

/// Run a group-fairness campaign.
pub fn cmd_group(
    config: &GroupConfig,
    out_dir: Option<&Path>,
) -> Result<GroupReport, CampaignError> {
    let g = load_grammar_with_bias(&config.grammar_path, config.bias.as_ref())?;
    let sens = resolve_sensitive(&g, config.sensitive_rule.as_deref())?;
    let model = MutHandle::init(&config.mut_spec, &mut_options(Some(&config.probes)))?;
    let scores = run_group_campaign(
        &model,
        &g,
        &sens,
        config.iters_per_group,
        &config.probes,
        config.seed,
    )?;
    let mut_kind = match &config.mut_spec {
        MutSpec::BuiltinLexiconSa { .. } => "builtin-lexicon-sa",
        MutSpec::BuiltinTableMlm { .. } => "builtin-table-mlm",
        MutSpec::BuiltinToyCoref { .. } => "builtin-toy-coref",
        MutSpec::Subprocess { .. } => "subprocess",
        MutSpec::Http { .. } => "http",
    };
    let groups = scores
        .iter()
        .map(|s| s.group.clone())
        .collect::<BTreeSet<_>>()
        .len() as u64;
    let report = GroupReport {
        config: serde_json::to_value(config).expect("config serializes"),
        seed: config.seed,
        mut_kind: mut_kind.to_string(),
        groups,
        iters_per_group: config.iters_per_group,
        summary: summarize_groups(mut_kind, &scores),
        scores,
    };
    if let Some(dir) = out_dir {
        write_group_artifacts(dir, &report)?;
    }
    Ok(report)
}

/// Recompute the diagnosis from a persisted state file.
pub fn cmd_diagnose(
    state_path: &Path,
    threshold: f64,
    out_path: Option<&Path>,
) -> Result<AnomalyReport, CampaignError> {
    let state: StateFile = load_json(state_path)?;
    let report = fault_diagnosis(&state.term_err, &state.term_count, threshold)?;
    if let Some(path) = out_path {
        write_text(path, &diagnosis_table(&report))?;
    }
    Ok(report)
}

pub struct AugmentArgs {
    pub top_k: usize,
    pub percent: f64,
    pub base_size: u64,
    pub seed: u64,
}

/// Build a labeled augmentation dataset from a persisted state file.
pub fn cmd_augment(
    state_path: &Path,
    grammar_override: Option<&str>,
    label_rules_path: &str,
    args: &AugmentArgs,
    out_path: &Path,
) -> Result<crate::augmentation::AugmentationSet, CampaignError> {
    let state: StateFile = load_json(state_path)?;
    let grammar_path = grammar_override.unwrap_or(&state.grammar_path);
    let g = load_grammar_with_bias(grammar_path, None)?;
    let label_rules = load_label_rules(label_rules_path)?;
    let report = fault_diagnosis(&state.term_err, &state.term_count, DEFAULT_THRESHOLD)?;
    let set = build_augmentation(
        &g,
        &report,
        args.top_k,
        args.percent,
        args.base_size,
        &label_rules,
        args.seed,
    )?;
    write_text(out_path, &to_jsonl(&set))?;
    Ok(set)
}

/// Coverage table over persisted kept-case files.
pub struct CoverageOutcome {
    pub per_phase: Vec<(PhaseKind, crate::grammar::CoverageReport)>,
    pub overall: crate::grammar::CoverageReport,
}

pub fn cmd_coverage(
    grammar_path: &str,
    case_files: &[PathBuf],
) -> Result<CoverageOutcome, CampaignError> {
    let g = load_grammar_with_bias(grammar_path, None)?;
    let mut all_cases = Vec::new();
    for path in case_files {
        all_cases.extend(load_cases_jsonl(path)?);
    }
    let mut per_phase = Vec::new();
    for phase in [PhaseKind::Rand, PhaseKind::Prob] {
        let mut traces = Vec::new();
        for kept in all_cases.iter().filter(|c| c.phase == phase) {
            traces.extend(kept.case.traces(&g)?);
        }
        if !traces.is_empty() {
            per_phase.push((phase, coverage(&g, &traces)?));
        }
    }
    let mut traces = Vec::new();
    for kept in &all_cases {
        traces.extend(kept.case.traces(&g)?);
    }
    let overall = coverage(&g, &traces)?;
    Ok(CoverageOutcome { per_phase, overall })
}

pub fn render_coverage_text(outcome: &CoverageOutcome) -> String {
    let mut s = String::from("phase    terminals        pairs\n");
    let row = |name: &str, r: &crate::grammar::CoverageReport| {
        format!(
            "{:<8} {:>5}/{:<5} {:.4}  {:>6}/{:<6} {:.4}\n",
            name,
            r.terminals_covered,
            r.terminals_total,
            r.terminal_ratio(),
            r.pairs_covered,
            r.pairs_total,
            r.pair_ratio()
        )
    };
    for (phase, r) in &outcome.per_phase {
        s.push_str(&row(&phase.to_string(), r));
    }
    s.push_str(&row("overall", &outcome.overall));
    s
}

/// Generate a label-rule file from the terminals of named grammar rules.
pub fn cmd_gen_label_rules(
    grammar_path: &str,
    rule_labels: &[(String, String)],
    out_path: Option<&Path>,
) -> Result<Vec<LabelRule>, CampaignError> {
    let g = load_grammar_with_bias(grammar_path, None)?;
    let mut rules = Vec::new();
    for (rule, label) in rule_labels {
        let alts = g
            .rules
            .get(rule)
            .ok_or_else(|| CampaignError::Config(format!("unknown rule `{rule}`")))?;
        for alt in alts {
            let lit = alt
                .single_terminal()
                .ok_or_else(|| CampaignError::Config(format!("rule `{rule}` is not lexical")))?;
            rules.push(LabelRule {
                contains: lit.trim().to_string(),
                label: label.clone(),
            });
        }
    }
    if let Some(path) = out_path {
        let mut body = serde_json::to_string_pretty(&rules).expect("rules serialize");
        body.push('\n');
        write_text(path, &body)?;
    }
    Ok(rules)
}

/// Console rendering used by the CLI.
pub fn render_test_text(report: &CampaignReport, timing: Option<f64>) -> String {
    render_report_text(report, timing)
}

pub fn render_group_report_text(report: &GroupReport, timing: Option<f64>) -> String {
    render_group_text(report, timing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grammar_path(name: &str) -> String {
        format!("{}/grammars/{name}.json", env!("CARGO_MANIFEST_DIR"))
    }

    fn sa_config(iters: u64, seed: u64) -> CampaignConfig {
        CampaignConfig {
            grammar_path: grammar_path("sentiment"),
            task: Task::Sa,
            n: 2,
            iters,
            seed,
            tau: None,
            probes: None,
            phases: vec![PhaseKind::Rand, PhaseKind::Prob],
            mut_spec: MutSpec::BuiltinLexiconSa {
                plant: [("The CEO".to_string(), 0.9)].into_iter().collect(),
            },
            prob_rules: None,
            sensitive_rule: None,
            bias: None,
            label_rules_path: None,
            saturation: false,
        }
    }

    #[test]
    fn config_parses_from_json() {
        let raw = format!(
            r#"{{
              "grammar_path": "{}",
              "task": "sa",
              "iters": 10,
              "seed": 7,
              "mut": {{"kind": "builtin-lexicon-sa", "plant": {{"The CEO": 0.5}}}}
            }}"#,
            grammar_path("sentiment")
        );
        let cfg: CampaignConfig = serde_json::from_str(&raw).unwrap();
        assert_eq!(cfg.n, 2);
        assert_eq!(cfg.phases, vec![PhaseKind::Rand, PhaseKind::Prob]);
    }

    #[test]
    fn mlm_without_tau_is_rejected() {
        let mut cfg = sa_config(5, 1);
        cfg.task = Task::Mlm;
        cfg.grammar_path = grammar_path("mlm");
        cfg.mut_spec = MutSpec::BuiltinTableMlm {
            default: (0.5, 0.4),
            table: Default::default(),
        };
        let err = cmd_test(&cfg, None, 1).unwrap_err();
        assert!(matches!(err, CampaignError::Config(_)));
    }

    #[test]
    fn prob_only_phases_are_rejected() {
        let mut cfg = sa_config(5, 1);
        cfg.phases = vec![PhaseKind::Prob];
        assert!(matches!(
            cmd_test(&cfg, None, 1),
            Err(CampaignError::Config(_))
        ));
    }

    #[test]
    fn diagnose_is_idempotent_on_saved_state() {
        let dir = std::env::temp_dir().join(format!("astraea-diag-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = sa_config(150, 3);
        let outcome = cmd_test(&cfg, Some(&dir), 1).unwrap();
        let recomputed = cmd_diagnose(&dir.join("state.json"), 2.0, None).unwrap();
        assert_eq!(recomputed, outcome.report.diagnosis);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn truncated_state_file_is_a_corrupt_artifact_error() {
        let dir = std::env::temp_dir().join(format!("astraea-trunc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.json");
        std::fs::write(&path, b"{\"grammar_path\": \"x\"").unwrap();
        let err = cmd_diagnose(&path, 2.0, None).unwrap_err();
        assert!(matches!(
            err,
            CampaignError::Artifact(ArtifactError::Corrupt { .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn group_command_summarizes_per_probe() {
        let cfg = GroupConfig {
            grammar_path: grammar_path("mlm"),
            mut_spec: MutSpec::BuiltinTableMlm {
                default: (0.62, 0.31),
                table: [
                    ("receptionist".to_string(), (0.10, 0.83)),
                    ("nurse".to_string(), (0.10, 0.83)),
                ]
                .into_iter()
                .collect(),
            },
            sensitive_rule: None,
            iters_per_group: 5,
            probes: vec!["his".into(), "her".into()],
            seed: 1,
            bias: None,
        };
        let report = cmd_group(&cfg, None).unwrap();
        assert_eq!(report.groups, 43);
        for row in &report.summary {
            assert_eq!(row.violations, 2);
            assert!((row.percent_violation - 100.0 * 2.0 / 43.0).abs() < 1e-9);
        }
    }

    #[test]
    fn predictive_oracle_counts_mispredictions() {
        let dir = std::env::temp_dir().join(format!("astraea-pred-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let rules_path = dir.join("rules.json");
        cmd_gen_label_rules(
            &grammar_path("sentiment"),
            &[
                ("PosAdjJoy".to_string(), "positive".to_string()),
                ("PosAdjCalm".to_string(), "positive".to_string()),
                ("PosEventAdj".to_string(), "positive".to_string()),
                ("PosSitMood".to_string(), "positive".to_string()),
                ("PosSitOutlook".to_string(), "positive".to_string()),
                ("PosDayAdj".to_string(), "positive".to_string()),
                ("NegAdjAnger".to_string(), "negative".to_string()),
                ("NegAdjSorrow".to_string(), "negative".to_string()),
                ("NegEventAdj".to_string(), "negative".to_string()),
                ("NegSitMood".to_string(), "negative".to_string()),
                ("NegSitOutlook".to_string(), "negative".to_string()),
                ("NegDayAdj".to_string(), "negative".to_string()),
            ],
            Some(&rules_path),
        )
        .unwrap();
        let mut cfg = sa_config(300, 8);
        cfg.label_rules_path = Some(rules_path.display().to_string());
        let outcome = cmd_test(&cfg, None, 1).unwrap();
        // the planted flip makes the model mispredict against the rule-based
        // ground truth
        assert!(outcome.report.totals.prediction_errors > 0);
        assert!(outcome.report.totals.violations > 0);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn gen_label_rules_extracts_trimmed_terminals() {
        let rules = cmd_gen_label_rules(
            &grammar_path("sentiment"),
            &[
                ("PosAdjJoy".to_string(), "positive".to_string()),
                ("NegAdjAnger".to_string(), "negative".to_string()),
            ],
            None,
        )
        .unwrap();
        assert!(rules
            .iter()
            .any(|r| r.contains == "excited" && r.label == "positive"));
        assert!(rules
            .iter()
            .any(|r| r.contains == "enraged" && r.label == "negative"));
        assert!(rules.iter().all(|r| !r.contains.starts_with(' ')));
    }
}
