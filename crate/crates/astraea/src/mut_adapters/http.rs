//! HTTP adapter: POST /evaluate with the wire-schema payload.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use crate::oracles::{Task, TaskOutput};

use super::wire::{response_to_output, WireRequest, WireResponse};
use super::MutError;

/// Counting semaphore bounding concurrent requests across all threads
/// sharing the handle.
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            available: Mutex::new(limit),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut available = self.available.lock().expect("in-flight lock");
        while *available == 0 {
            available = self.freed.wait(available).expect("in-flight lock");
        }
        *available -= 1;
        InFlightGuard { semaphore: self }
    }
}

struct InFlightGuard<'a> {
    semaphore: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.semaphore.available.lock().expect("in-flight lock") += 1;
        self.semaphore.freed.notify_one();
    }
}

pub struct HttpMut {
    agent: ureq::Agent,
    endpoint: String,
    bearer_token: Option<String>,
    probes: Option<Vec<String>>,
    next_id: std::sync::atomic::AtomicU64,
    in_flight: InFlight,
}

impl HttpMut {
    pub fn new(
        endpoint: String,
        timeout: Duration,
        bearer_token: Option<String>,
        probes: Option<Vec<String>>,
        max_in_flight: usize,
    ) -> Result<Self, MutError> {
        if endpoint.is_empty() {
            return Err(MutError::InvalidSpec("http endpoint is empty".into()));
        }
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Ok(Self {
            agent,
            endpoint,
            bearer_token,
            probes,
            next_id: std::sync::atomic::AtomicU64::new(0),
            in_flight: InFlight::new(max_in_flight.max(1)),
        })
    }

    pub fn evaluate(&self, sentence: &str, task: Task) -> Result<TaskOutput, MutError> {
        let _slot = self.in_flight.acquire();
        let id = self
            .next_id
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let req = WireRequest {
            id,
            task,
            text: sentence.to_string(),
            probes: if task == Task::Mlm {
                self.probes.clone()
            } else {
                None
            },
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(token) = &self.bearer_token {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = match call.send_json(&req) {
            Ok(resp) => resp,
            Err(ureq::Error::Status(code, _)) => {
                return Err(MutError::Protocol(format!("http status {code}")))
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                return if msg.contains("timed out") || msg.contains("timeout") {
                    Err(MutError::Timeout)
                } else {
                    Err(MutError::Protocol(msg))
                };
            }
        };
        let wire: WireResponse = resp
            .into_json()
            .map_err(|e| MutError::Protocol(format!("bad response body: {e}")))?;
        if wire.id != req.id {
            return Err(MutError::Protocol(format!(
                "response id {} does not match request id {}",
                wire.id, req.id
            )));
        }
        response_to_output(&wire, task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mut_adapters::wire::{decode_request, encode_response, output_to_response};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Minimal single-request HTTP server answering with the echo model.
    fn serve_once(listener: TcpListener, expect_bearer: Option<String>) {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        assert!(line.starts_with("POST"), "{line}");
        let mut content_len = 0usize;
        let mut saw_bearer = false;
        loop {
            let mut header = String::new();
            reader.read_line(&mut header).unwrap();
            let h = header.trim();
            if h.is_empty() {
                break;
            }
            let lower = h.to_ascii_lowercase();
            if let Some(rest) = lower.strip_prefix("content-length:") {
                content_len = rest.trim().parse().unwrap();
            }
            if let Some(expected) = &expect_bearer {
                if h == format!("Authorization: Bearer {expected}") {
                    saw_bearer = true;
                }
            }
        }
        if expect_bearer.is_some() {
            assert!(saw_bearer, "bearer header missing");
        }
        let mut body = vec![0u8; content_len];
        reader.read_exact(&mut body).unwrap();
        let req = decode_request(std::str::from_utf8(&body).unwrap()).unwrap();
        let output = crate::mut_adapters::echo_output(&req);
        let body = encode_response(&output_to_response(req.id, &output));
        let response = format!(
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            body.len(),
            body
        );
        stream.write_all(response.as_bytes()).unwrap();
    }

    #[test]
    fn posts_and_parses_a_response() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || serve_once(listener, Some("sekrit".into())));
        let m = HttpMut::new(
            format!("http://{addr}/evaluate"),
            Duration::from_secs(5),
            Some("sekrit".into()),
            None,
            4,
        )
        .unwrap();
        let out = m.evaluate("The cleaner feels enraged.", Task::Sa).unwrap();
        assert!(matches!(out, TaskOutput::Sa { .. }));
        handle.join().unwrap();
    }

    #[test]
    fn non_200_is_a_protocol_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            // drain the request head
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
            }
            stream
                .write_all(b"HTTP/1.1 503 Service Unavailable\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
                .unwrap();
        });
        let m = HttpMut::new(
            format!("http://{addr}/evaluate"),
            Duration::from_secs(5),
            None,
            None,
            4,
        )
        .unwrap();
        let err = m.evaluate("x", Task::Sa).unwrap_err();
        assert!(matches!(err, MutError::Protocol(_)), "{err:?}");
        handle.join().unwrap();
    }
}
