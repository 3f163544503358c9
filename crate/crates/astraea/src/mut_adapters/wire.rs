//! Line-delimited JSON protocol shared by the subprocess and HTTP adapters.
//!
//! Request:  `{"id": 1, "task": "sa", "text": "...", "probes": ["his","her"]}`
//! Response: `{"id": 1, "sa": {"label": "negative", "score": -0.7}}`
//!         | `{"id": 1, "coref": [["span", ...], ...]}`
//!         | `{"id": 1, "mlm": {"his": 0.7, "her": 0.179}}`
//!         | `{"id": 1, "error": "message"}`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::oracles::{SaLabel, Task, TaskOutput};

use super::MutError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub task: Task,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSa {
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sa: Option<WireSa>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coref: Option<Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mlm: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

pub fn encode_request(req: &WireRequest) -> String {
    serde_json::to_string(req).expect("wire request serializes")
}

pub fn decode_request(line: &str) -> Result<WireRequest, MutError> {
    serde_json::from_str(line).map_err(|e| MutError::Protocol(format!("bad request: {e}")))
}

pub fn encode_response(resp: &WireResponse) -> String {
    serde_json::to_string(resp).expect("wire response serializes")
}

pub fn decode_response(line: &str) -> Result<WireResponse, MutError> {
    serde_json::from_str(line).map_err(|e| MutError::Protocol(format!("bad response: {e}")))
}

fn parse_label(s: &str) -> Result<SaLabel, MutError> {
    match s {
        "positive" => Ok(SaLabel::Positive),
        "negative" => Ok(SaLabel::Negative),
        "neutral" => Ok(SaLabel::Neutral),
        other => Err(MutError::Protocol(format!(
            "unknown sentiment label `{other}`"
        ))),
    }
}

/// Validate a response against the task that was requested and convert it to
/// a [`TaskOutput`].
pub fn response_to_output(resp: &WireResponse, task: Task) -> Result<TaskOutput, MutError> {
    if let Some(msg) = &resp.error {
        return Err(MutError::Remote(msg.clone()));
    }
    match task {
        Task::Sa => {
            let sa = resp
                .sa
                .as_ref()
                .ok_or_else(|| MutError::Protocol("missing `sa` payload".into()))?;
            if !(-1.0..=1.0).contains(&sa.score) {
                return Err(MutError::Protocol(format!(
                    "score {} out of [-1, 1]",
                    sa.score
                )));
            }
            Ok(TaskOutput::Sa {
                label: parse_label(&sa.label)?,
                score: sa.score,
            })
        }
        Task::Coref => {
            let chains = resp
                .coref
                .as_ref()
                .ok_or_else(|| MutError::Protocol("missing `coref` payload".into()))?;
            Ok(TaskOutput::Coref {
                chains: chains.iter().map(|c| c.iter().cloned().collect()).collect(),
            })
        }
        Task::Mlm => {
            let mlm = resp
                .mlm
                .as_ref()
                .ok_or_else(|| MutError::Protocol("missing `mlm` payload".into()))?;
            for (tok, conf) in mlm {
                if !(0.0..=1.0).contains(conf) {
                    return Err(MutError::Protocol(format!(
                        "confidence {conf} for `{tok}` out of [0, 1]"
                    )));
                }
            }
            Ok(TaskOutput::Mlm {
                confidences: mlm.clone(),
            })
        }
    }
}

/// Convert a task output into the wire payload for `id`.
pub fn output_to_response(id: u64, output: &TaskOutput) -> WireResponse {
    let mut resp = WireResponse {
        id,
        ..Default::default()
    };
    match output {
        TaskOutput::Sa { label, score } => {
            resp.sa = Some(WireSa {
                label: label.to_string(),
                score: *score,
            });
        }
        TaskOutput::Coref { chains } => {
            resp.coref = Some(chains.iter().map(|c| c.iter().cloned().collect()).collect());
        }
        TaskOutput::Mlm { confidences } => {
            resp.mlm = Some(confidences.clone());
        }
    }
    resp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_roundtrip() {
        let req = WireRequest {
            id: 7,
            task: Task::Mlm,
            text: "The doctor took a plane to [MASK] hometown.".into(),
            probes: Some(vec!["his".into(), "her".into()]),
        };
        assert_eq!(decode_request(&encode_request(&req)).unwrap(), req);
        let no_probes = WireRequest {
            id: 8,
            task: Task::Sa,
            text: "x".into(),
            probes: None,
        };
        let line = encode_request(&no_probes);
        assert!(!line.contains("probes"));
        assert_eq!(decode_request(&line).unwrap(), no_probes);
    }

    #[test]
    fn response_roundtrip() {
        let sa = WireResponse {
            id: 1,
            sa: Some(WireSa {
                label: "negative".into(),
                score: -0.7,
            }),
            ..Default::default()
        };
        assert_eq!(decode_response(&encode_response(&sa)).unwrap(), sa);
        let coref = WireResponse {
            id: 2,
            coref: Some(vec![vec!["The farmer".into(), "He".into()]]),
            ..Default::default()
        };
        assert_eq!(decode_response(&encode_response(&coref)).unwrap(), coref);
    }

    #[test]
    fn error_payload_surfaces_as_remote_error() {
        let resp = WireResponse {
            id: 3,
            error: Some("boom".into()),
            ..Default::default()
        };
        assert!(matches!(
            response_to_output(&resp, Task::Sa),
            Err(MutError::Remote(_))
        ));
    }

    #[test]
    fn out_of_range_values_are_protocol_errors() {
        let resp = WireResponse {
            id: 4,
            sa: Some(WireSa {
                label: "negative".into(),
                score: -3.0,
            }),
            ..Default::default()
        };
        assert!(matches!(
            response_to_output(&resp, Task::Sa),
            Err(MutError::Protocol(_))
        ));
        let resp = WireResponse {
            id: 5,
            mlm: Some([("his".to_string(), 1.5)].into_iter().collect()),
            ..Default::default()
        };
        assert!(matches!(
            response_to_output(&resp, Task::Mlm),
            Err(MutError::Protocol(_))
        ));
    }

    #[test]
    fn missing_payload_for_task_is_a_protocol_error() {
        let resp = WireResponse {
            id: 6,
            sa: Some(WireSa {
                label: "neutral".into(),
                score: 0.0,
            }),
            ..Default::default()
        };
        assert!(matches!(
            response_to_output(&resp, Task::Mlm),
            Err(MutError::Protocol(_))
        ));
    }
}
