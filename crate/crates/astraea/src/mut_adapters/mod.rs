//! Uniform handle over models under test.
//!
//! Campaigns see one interface: `evaluate(sentence, task) -> TaskOutput`.
//! Behind it sit three deterministic built-ins with plantable bias (used for
//! reference runs and desk-scale experiments), a subprocess adapter speaking
//! line-delimited JSON, and an HTTP adapter POSTing the same payload.

pub mod builtin;
pub mod http;
pub mod subprocess;
pub mod wire;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::oracles::{SaLabel, Task, TaskOutput};
use crate::rng::{stable_hash, unit_from_hash};

use builtin::{FlipPlant, LexiconSa, MlmTable, TableMlm, ToyCoref};
use http::HttpMut;
use subprocess::SubprocessMut;
use wire::WireRequest;

#[derive(Debug, Clone, thiserror::Error)]
pub enum MutError {
    #[error("model query timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model process exited with status {0}")]
    NonZeroExit(i32),
    #[error("failed to start model process: {0}")]
    Spawn(String),
    #[error("model reported an error: {0}")]
    Remote(String),
    #[error("model handle disabled after repeated failures")]
    Poisoned,
    #[error("invalid adapter spec: {0}")]
    InvalidSpec(String),
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_max_in_flight() -> usize {
    4
}

/// Adapter configuration, read from campaign config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MutSpec {
    #[serde(rename = "builtin-lexicon-sa")]
    BuiltinLexiconSa {
        #[serde(default)]
        plant: BTreeMap<String, f64>,
    },
    #[serde(rename = "builtin-table-mlm")]
    BuiltinTableMlm {
        default: (f64, f64),
        #[serde(default)]
        table: BTreeMap<String, (f64, f64)>,
    },
    #[serde(rename = "builtin-toy-coref")]
    BuiltinToyCoref {
        #[serde(default)]
        plant: BTreeMap<String, f64>,
    },
    #[serde(rename = "subprocess")]
    Subprocess {
        command: Vec<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
    },
    #[serde(rename = "http")]
    Http {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        bearer_token: Option<String>,
    },
}

impl MutSpec {
    /// The task the spec naturally serves, if it is task-specific.
    pub fn native_task(&self) -> Option<Task> {
        match self {
            MutSpec::BuiltinLexiconSa { .. } => Some(Task::Sa),
            MutSpec::BuiltinTableMlm { .. } => Some(Task::Mlm),
            MutSpec::BuiltinToyCoref { .. } => Some(Task::Coref),
            _ => None,
        }
    }
}

enum Backend {
    LexiconSa(LexiconSa),
    TableMlm(TableMlm),
    ToyCoref(ToyCoref),
    Subprocess(SubprocessMut),
    Http(HttpMut),
}

/// An initialized model handle. Shareable across threads; the in-flight
/// limit bounds concurrent queries for remote adapters.
pub struct MutHandle {
    backend: Backend,
    max_in_flight: usize,
}

/// Probe tokens forwarded to remote adapters for masked-token requests.
#[derive(Debug, Clone, Default)]
pub struct MutOptions {
    pub probes: Option<Vec<String>>,
    /// Bearer token override for the HTTP adapter (e.g. from the
    /// environment).
    pub bearer_token: Option<String>,
}

impl MutHandle {
    pub fn init(spec: &MutSpec, opts: &MutOptions) -> Result<Self, MutError> {
        // built-ins answer in-place; batches run serially and concurrency
        // comes from the campaign's workers
        let (backend, max_in_flight) = match spec {
            MutSpec::BuiltinLexiconSa { plant } => (
                Backend::LexiconSa(LexiconSa::new(FlipPlant(plant.clone()))?),
                1,
            ),
            MutSpec::BuiltinTableMlm { default, table } => (
                Backend::TableMlm(TableMlm::new(MlmTable {
                    default: *default,
                    table: table.clone(),
                })?),
                1,
            ),
            MutSpec::BuiltinToyCoref { plant } => (
                Backend::ToyCoref(ToyCoref::new(FlipPlant(plant.clone()))?),
                1,
            ),
            MutSpec::Subprocess {
                command,
                timeout_ms,
                max_in_flight,
            } => {
                if *timeout_ms == 0 {
                    return Err(MutError::InvalidSpec("timeout must be positive".into()));
                }
                if *max_in_flight == 0 {
                    return Err(MutError::InvalidSpec(
                        "max_in_flight must be at least 1".into(),
                    ));
                }
                (
                    Backend::Subprocess(SubprocessMut::new(
                        command.clone(),
                        Duration::from_millis(*timeout_ms),
                        opts.probes.clone(),
                    )?),
                    *max_in_flight,
                )
            }
            MutSpec::Http {
                endpoint,
                timeout_ms,
                max_in_flight,
                bearer_token,
            } => {
                if *timeout_ms == 0 {
                    return Err(MutError::InvalidSpec("timeout must be positive".into()));
                }
                if *max_in_flight == 0 {
                    return Err(MutError::InvalidSpec(
                        "max_in_flight must be at least 1".into(),
                    ));
                }
                let token = opts.bearer_token.clone().or_else(|| bearer_token.clone());
                (
                    Backend::Http(HttpMut::new(
                        endpoint.clone(),
                        Duration::from_millis(*timeout_ms),
                        token,
                        opts.probes.clone(),
                        *max_in_flight,
                    )?),
                    *max_in_flight,
                )
            }
        };
        Ok(Self {
            backend,
            max_in_flight,
        })
    }

    /// Query the model for one sentence.
    pub fn evaluate(&self, sentence: &str, task: Task) -> Result<TaskOutput, MutError> {
        let out = match &self.backend {
            Backend::LexiconSa(m) => {
                if task != Task::Sa {
                    return Err(MutError::InvalidSpec(format!(
                        "lexicon model serves sa, campaign asked for {task}"
                    )));
                }
                m.evaluate(sentence)
            }
            Backend::TableMlm(m) => {
                if task != Task::Mlm {
                    return Err(MutError::InvalidSpec(format!(
                        "table model serves mlm, campaign asked for {task}"
                    )));
                }
                m.evaluate(sentence)
            }
            Backend::ToyCoref(m) => {
                if task != Task::Coref {
                    return Err(MutError::InvalidSpec(format!(
                        "toy coref model serves coref, campaign asked for {task}"
                    )));
                }
                m.evaluate(sentence)
            }
            Backend::Subprocess(m) => m.evaluate(sentence, task)?,
            Backend::Http(m) => m.evaluate(sentence, task)?,
        };
        Ok(out)
    }

    /// Evaluate a batch, preserving order, with per-item error isolation.
    /// Concurrency is bounded by the adapter's in-flight limit.
    pub fn batch_evaluate(
        &self,
        sentences: &[String],
        task: Task,
    ) -> Vec<Result<TaskOutput, MutError>> {
        let lanes = self.max_in_flight.min(sentences.len()).max(1);
        if lanes <= 1 || matches!(self.backend, Backend::Subprocess(_)) {
            return sentences.iter().map(|s| self.evaluate(s, task)).collect();
        }
        let mut results: Vec<Option<Result<TaskOutput, MutError>>> = vec![None; sentences.len()];
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results_mutex = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..lanes {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= sentences.len() {
                        break;
                    }
                    let r = self.evaluate(&sentences[i], task);
                    results_mutex.lock().expect("results lock")[i] = Some(r);
                });
            }
        });
        results
            .into_iter()
            .map(|r| r.expect("all lanes filled"))
            .collect()
    }
}

/// Reference model used by the echo subprocess binary and the adapter tests:
/// a deterministic function of the request text.
pub fn echo_output(req: &WireRequest) -> TaskOutput {
    let h = stable_hash(req.text.as_bytes());
    match req.task {
        Task::Sa => {
            let label = match h % 3 {
                0 => SaLabel::Positive,
                1 => SaLabel::Negative,
                _ => SaLabel::Neutral,
            };
            let score = match label {
                SaLabel::Positive => 0.5,
                SaLabel::Negative => -0.5,
                SaLabel::Neutral => 0.0,
            };
            TaskOutput::Sa { label, score }
        }
        Task::Coref => {
            let mut words = req.text.split_whitespace();
            let chain: std::collections::BTreeSet<String> =
                words.by_ref().take(2).map(|w| w.to_string()).collect();
            TaskOutput::Coref {
                chains: [chain].into_iter().collect(),
            }
        }
        Task::Mlm => {
            let probes = req
                .probes
                .clone()
                .unwrap_or_else(|| vec!["his".to_string(), "her".to_string()]);
            let confidences = probes
                .into_iter()
                .map(|p| {
                    let u = unit_from_hash(stable_hash(format!("{p}\x00{}", req.text).as_bytes()));
                    (p, u)
                })
                .collect();
            TaskOutput::Mlm { confidences }
        }
    }
}
