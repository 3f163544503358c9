//! Subprocess adapter: one request/response line pair at a time over the
//! child's stdin/stdout.
//!
//! The child is restarted after a crash, protocol garbage, or a hang, up to
//! 3 times per campaign; after that the handle is poisoned and every further
//! evaluation fails fast.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Duration;

use crate::oracles::{Task, TaskOutput};

use super::wire::{decode_response, encode_request, response_to_output, WireRequest};
use super::MutError;

pub const MAX_RESTARTS: u32 = 3;

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
}

struct ProcState {
    io: Option<ChildIo>,
    next_id: u64,
    restarts: u32,
    poisoned: bool,
}

pub struct SubprocessMut {
    command: Vec<String>,
    timeout: Duration,
    probes: Option<Vec<String>>,
    state: Mutex<ProcState>,
}

impl SubprocessMut {
    pub fn new(
        command: Vec<String>,
        timeout: Duration,
        probes: Option<Vec<String>>,
    ) -> Result<Self, MutError> {
        if command.is_empty() {
            return Err(MutError::InvalidSpec("subprocess command is empty".into()));
        }
        Ok(Self {
            command,
            timeout,
            probes,
            state: Mutex::new(ProcState {
                io: None,
                next_id: 0,
                restarts: 0,
                poisoned: false,
            }),
        })
    }

    fn spawn(&self) -> Result<ChildIo, MutError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| MutError::Spawn(format!("{}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        // Reader thread ends when the pipe closes; the channel then reports
        // a disconnect to the caller.
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(ChildIo {
            child,
            stdin,
            lines: rx,
        })
    }

    fn kill(io: &mut ChildIo) -> Option<i32> {
        let _ = io.child.kill();
        io.child.wait().ok().and_then(|s| s.code())
    }

    /// Send one request and wait for the matching response line.
    fn roundtrip(&self, io: &mut ChildIo, req: &WireRequest) -> Result<TaskOutput, MutError> {
        let line = encode_request(req);
        io.stdin
            .write_all(line.as_bytes())
            .and_then(|_| io.stdin.write_all(b"\n"))
            .and_then(|_| io.stdin.flush())
            .map_err(|e| MutError::Protocol(format!("write failed: {e}")))?;
        loop {
            match io.lines.recv_timeout(self.timeout) {
                Ok(Ok(text)) => {
                    let resp = decode_response(&text)?;
                    if resp.id != req.id {
                        // stale line from a previous exchange; keep reading
                        continue;
                    }
                    return response_to_output(&resp, req.task);
                }
                Ok(Err(e)) => return Err(MutError::Protocol(format!("read failed: {e}"))),
                Err(mpsc::RecvTimeoutError::Timeout) => return Err(MutError::Timeout),
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    let code = io.child.wait().ok().and_then(|s| s.code());
                    return Err(match code {
                        Some(0) | None => MutError::Protocol("model process closed stdout".into()),
                        Some(c) => MutError::NonZeroExit(c),
                    });
                }
            }
        }
    }

    pub fn evaluate(&self, sentence: &str, task: Task) -> Result<TaskOutput, MutError> {
        let mut state = self.state.lock().expect("subprocess state lock");
        if state.poisoned {
            return Err(MutError::Poisoned);
        }
        let id = state.next_id;
        state.next_id += 1;
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
        if state.io.is_none() {
            state.io = Some(self.spawn()?);
        }
        let io = state.io.as_mut().expect("just spawned");
        match self.roundtrip(io, &req) {
            Ok(out) => Ok(out),
            // remote per-item error: the child is healthy, no restart
            Err(MutError::Remote(msg)) => Err(MutError::Remote(msg)),
            Err(err) => {
                // crash, garbage, or hang: the item fails, the next request
                // gets a fresh child, and the restart budget caps respawns
                if let Some(mut io) = state.io.take() {
                    Self::kill(&mut io);
                }
                state.restarts += 1;
                if state.restarts > MAX_RESTARTS {
                    state.poisoned = true;
                }
                Err(err)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_command_is_rejected() {
        assert!(SubprocessMut::new(vec![], Duration::from_secs(1), None).is_err());
    }

    #[test]
    fn missing_binary_is_a_spawn_error() {
        let m = SubprocessMut::new(
            vec!["/nonexistent/model".into()],
            Duration::from_secs(1),
            None,
        )
        .unwrap();
        assert!(matches!(
            m.evaluate("x", Task::Sa).unwrap_err(),
            MutError::Spawn(_)
        ));
    }
}
