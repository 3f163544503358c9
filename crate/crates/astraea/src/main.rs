//! Command-line front end for grammar-based fairness campaigns.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use astraea::campaign::{
    cmd_augment, cmd_coverage, cmd_diagnose, cmd_gen_label_rules, cmd_group, cmd_test,
    render_coverage_text, render_group_report_text, render_test_text, AugmentArgs, CampaignConfig,
    GroupConfig,
};
use astraea::diagnosis::diagnosis_table;
use astraea::mut_adapters::MutSpec;

#[derive(Parser)]
#[command(
    name = "astraea",
    version,
    about = "Grammar-based fairness testing for black-box NLP models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Campaign configuration file (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's grammar path
    #[arg(long)]
    grammar: Option<String>,
    /// Override the model-under-test adapter: inline JSON or @path
    #[arg(long = "mut")]
    mut_spec: Option<String>,
    /// Directory for reports and artifacts
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an individual-fairness campaign (uniform phase, diagnosis,
    /// directed phase)
    Test {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Worker threads for generation and model queries
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Exit non-zero when fairness violations are found
        #[arg(long)]
        fail_on_violations: bool,
    },
    /// Run a group-fairness campaign over the sensitive rule's terminals
    Group {
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Recompute the diagnosis table from a saved campaign state
    Diagnose {
        /// state.json written by `test`
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        threshold: f64,
        /// Write the table here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a labeled augmentation dataset from a saved campaign state
    Augment {
        #[arg(long)]
        state: PathBuf,
        /// Override the grammar recorded in the state file
        #[arg(long)]
        grammar: Option<String>,
        /// Label-rule file (JSON list of {contains, label})
        #[arg(long)]
        label_rules: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Dataset size as a percentage of --base-size
        #[arg(long, default_value_t = 1.0)]
        percent: f64,
        /// Declared training-set size the percentage refers to
        #[arg(long)]
        base_size: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (one JSON record per line)
        #[arg(long)]
        out: PathBuf,
    },
    /// Grammar coverage of saved kept-case files
    Coverage {
        #[arg(long)]
        grammar: String,
        /// unique_tests.jsonl files from prior runs
        #[arg(long, required = true, num_args = 1..)]
        tests: Vec<PathBuf>,
    },
    /// Generate a label-rule file from lexical grammar rules
    GenLabelRules {
        #[arg(long)]
        grammar: String,
        /// Rule-to-label assignments, e.g. --map PosAdjJoy=positive
        #[arg(long = "map", required = true, num_args = 1..)]
        maps: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mut_override(raw: &str) -> Result<MutSpec, String> {
    let body = if let Some(path) = raw.strip_prefix('@') {
        std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?
    } else {
        raw.to_string()
    };
    serde_json::from_str(&body).map_err(|e| format!("bad --mut spec: {e}"))
}

fn apply_common(config: &mut CampaignConfig, common: &CommonRunArgs) -> Result<(), String> {
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(grammar) = &common.grammar {
        config.grammar_path = grammar.clone();
    }
    if let Some(raw) = &common.mut_spec {
        config.mut_spec = parse_mut_override(raw)?;
    }
    Ok(())
}

fn apply_common_group(config: &mut GroupConfig, common: &CommonRunArgs) -> Result<(), String> {
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(grammar) = &common.grammar {
        config.grammar_path = grammar.clone();
    }
    if let Some(raw) = &common.mut_spec {
        config.mut_spec = parse_mut_override(raw)?;
    }
    Ok(())
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("astraea: {msg}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Test {
            common,
            workers,
            fail_on_violations,
        } => {
            let mut config = match CampaignConfig::load(&common.config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Err(e) = apply_common(&mut config, &common) {
                return fail(e);
            }
            let started = Instant::now();
            match cmd_test(&config, common.out_dir.as_deref(), workers) {
                Ok(outcome) => {
                    let elapsed = started.elapsed().as_secs_f64();
                    print!("{}", render_test_text(&outcome.report, Some(elapsed)));
                    if fail_on_violations && outcome.violations_found {
                        return ExitCode::from(2);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Group { common } => {
            let mut config = match GroupConfig::load(&common.config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Err(e) = apply_common_group(&mut config, &common) {
                return fail(e);
            }
            let started = Instant::now();
            match cmd_group(&config, common.out_dir.as_deref()) {
                Ok(report) => {
                    let elapsed = started.elapsed().as_secs_f64();
                    print!("{}", render_group_report_text(&report, Some(elapsed)));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Diagnose {
            state,
            threshold,
            out,
        } => match cmd_diagnose(&state, threshold, out.as_deref()) {
            Ok(report) => {
                if out.is_none() {
                    print!("{}", diagnosis_table(&report));
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Augment {
            state,
            grammar,
            label_rules,
            top_k,
            percent,
            base_size,
            seed,
            out,
        } => {
            let args = AugmentArgs {
                top_k,
                percent,
                base_size,
                seed,
            };
            match cmd_augment(
                &state,
                grammar.as_deref(),
                &label_rules.display().to_string(),
                &args,
                &out,
            ) {
                Ok(set) => {
                    println!(
                        "wrote {} labeled records to {} (top-{} tokens: {})",
                        set.records.len(),
                        out.display(),
                        top_k,
                        set.source_tokens
                            .iter()
                            .map(|(_, t)| t.trim().to_string())
                            .collect::<Vec<_>>()
                            .join(", ")
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Coverage { grammar, tests } => match cmd_coverage(&grammar, &tests) {
            Ok(outcome) => {
                print!("{}", render_coverage_text(&outcome));
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::GenLabelRules { grammar, maps, out } => {
            let mut rule_labels = Vec::new();
            for m in &maps {
                match m.split_once('=') {
                    Some((rule, label)) => rule_labels.push((rule.to_string(), label.to_string())),
                    None => return fail(format!("bad --map `{m}`; expected Rule=label")),
                }
            }
            match cmd_gen_label_rules(&grammar, &rule_labels, out.as_deref()) {
                Ok(rules) => {
                    if out.is_none() {
                        match serde_json::to_string_pretty(&rules) {
                            Ok(body) => println!("{body}"),
                            Err(e) => return fail(e),
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
