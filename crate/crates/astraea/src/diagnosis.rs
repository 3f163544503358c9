//! Fault diagnosis: which grammar tokens correlate with violations.
//!
//! Per production rule, each terminal's error rate (violating instantiations
//! over total instantiations) is scored with a median-absolute-deviation
//! anomaly index `(rate - median) / mad`. Raw MAD is used, no 1.4826
//! consistency factor, and the outlier cutoff is an absolute index above 2.
//!
//! When every sampled terminal of a rule sits at the median, `mad` is zero
//! and the ratio is undefined; the index is then 0 for values at the median
//! and a signed infinity otherwise, so a single deviant token in an
//! otherwise unanimous rule is still flagged.

use serde::{Deserialize, Serialize};

use crate::generator::TokenCountMap;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosisError {
    #[error("empty input")]
    EmptyInput,
    #[error("error counts exceed instantiation counts for `{rule}` / `{terminal}`")]
    CountMismatch { rule: String, terminal: String },
}

/// Median of a non-empty list; the mean of the two middle elements when the
/// length is even.
fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN input"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Median absolute deviation from the median.
pub fn mad(xs: &[f64]) -> Result<f64, DiagnosisError> {
    if xs.is_empty() {
        return Err(DiagnosisError::EmptyInput);
    }
    let med = median(xs);
    let devs: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
    Ok(median(&devs))
}

/// Anomaly index of every data point: `(x - median) / mad`, with the
/// zero-mad convention described in the module docs.
pub fn anomaly_indices(xs: &[f64]) -> Result<Vec<f64>, DiagnosisError> {
    if xs.is_empty() {
        return Err(DiagnosisError::EmptyInput);
    }
    let med = median(xs);
    let m = mad(xs)?;
    Ok(xs
        .iter()
        .map(|&x| {
            if m == 0.0 {
                if x == med {
                    0.0
                } else if x > med {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                (x - med) / m
            }
        })
        .collect())
}

/// Diagnosis entry for one `(rule, terminal)` token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDiagnosis {
    pub rule: String,
    pub terminal: String,
    pub count: u64,
    pub err: u64,
    pub error_rate: f64,
    pub anomaly_index: f64,
    pub is_anomalous: bool,
    /// True when the rule had fewer than 3 sampled terminals; no index is
    /// meaningful there and nothing is flagged.
    pub insufficient_data: bool,
}

/// Full diagnosis over the campaign's count maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub threshold: f64,
    pub tokens: Vec<TokenDiagnosis>,
}

impl AnomalyReport {
    /// Tokens flagged as anomalous, in report order.
    pub fn flagged(&self) -> Vec<&TokenDiagnosis> {
        self.tokens.iter().filter(|t| t.is_anomalous).collect()
    }

    /// Flagged tokens restricted to one rule.
    pub fn flagged_in_rule(&self, rule: &str) -> Vec<&TokenDiagnosis> {
        self.tokens
            .iter()
            .filter(|t| t.is_anomalous && t.rule == rule)
            .collect()
    }
}

/// Default anomaly cutoff.
pub const DEFAULT_THRESHOLD: f64 = 2.0;

/// Minimum sampled terminals per rule for indices to be computed.
pub const MIN_SAMPLED_TERMINALS: usize = 3;

/// Compute per-token error rates and anomaly flags.
///
/// Deviation is measured within each rule's sampled terminal set; terminals
/// never sampled (count 0) have no defined rate and are excluded.
pub fn fault_diagnosis(
    term_err: &TokenCountMap,
    term_count: &TokenCountMap,
    threshold: f64,
) -> Result<AnomalyReport, DiagnosisError> {
    for (rule, terms) in term_err.per_rule() {
        for (terminal, err) in terms {
            if *err > term_count.get(rule, terminal) {
                return Err(DiagnosisError::CountMismatch {
                    rule: rule.clone(),
                    terminal: terminal.clone(),
                });
            }
        }
    }
    let mut tokens = Vec::new();
    for (rule, terms) in term_count.per_rule() {
        let sampled: Vec<(&String, u64)> = terms
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(t, &c)| (t, c))
            .collect();
        if sampled.is_empty() {
            continue;
        }
        let rates: Vec<f64> = sampled
            .iter()
            .map(|(t, c)| term_err.get(rule, t) as f64 / *c as f64)
            .collect();
        if sampled.len() < MIN_SAMPLED_TERMINALS {
            for ((terminal, count), rate) in sampled.iter().zip(&rates) {
                tokens.push(TokenDiagnosis {
                    rule: rule.clone(),
                    terminal: (*terminal).clone(),
                    count: *count,
                    err: term_err.get(rule, terminal),
                    error_rate: *rate,
                    anomaly_index: 0.0,
                    is_anomalous: false,
                    insufficient_data: true,
                });
            }
            continue;
        }
        let indices = anomaly_indices(&rates)?;
        for (((terminal, count), rate), index) in sampled.iter().zip(&rates).zip(&indices) {
            tokens.push(TokenDiagnosis {
                rule: rule.clone(),
                terminal: (*terminal).clone(),
                count: *count,
                err: term_err.get(rule, terminal),
                error_rate: *rate,
                anomaly_index: *index,
                is_anomalous: index.abs() > threshold,
                insufficient_data: false,
            });
        }
    }
    Ok(AnomalyReport { threshold, tokens })
}

/// Top error-inducing tokens: error rate descending, count descending, then
/// terminal ascending. Returns at most `k` entries.
pub fn top_k_tokens(report: &AnomalyReport, k: usize) -> Vec<(String, String)> {
    let mut ranked: Vec<&TokenDiagnosis> = report.tokens.iter().collect();
    ranked.sort_by(|a, b| {
        b.error_rate
            .partial_cmp(&a.error_rate)
            .expect("rates are finite")
            .then(b.count.cmp(&a.count))
            .then(a.terminal.cmp(&b.terminal))
            .then(a.rule.cmp(&b.rule))
    });
    ranked
        .into_iter()
        .take(k)
        .map(|t| (t.rule.clone(), t.terminal.clone()))
        .collect()
}

/// Render the diagnosis as a tab-separated table.
pub fn diagnosis_table(report: &AnomalyReport) -> String {
    let mut out = String::from("rule\tterminal\tcount\terr\trate\tindex\tflagged\n");
    for t in &report.tokens {
        let index = if t.insufficient_data {
            "insufficient-data".to_string()
        } else {
            format!("{:.4}", t.anomaly_index)
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\n",
            t.rule, t.terminal, t.count, t.err, t.error_rate, index, t.is_anomalous
        ));
    }
    out
}
