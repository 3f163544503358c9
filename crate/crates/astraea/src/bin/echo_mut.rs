//! Reference model-under-test speaking the subprocess wire protocol.
//!
//! Reads one JSON request per line on stdin and answers with a deterministic
//! output derived from the request text. Useful for exercising the
//! subprocess adapter end to end and as a template for wrapping real models.
//!
//! Test hooks: a request text containing `__CRASH__` makes the process exit
//! with a non-zero status; `__SLEEP__` makes it stall for 10 seconds.

use std::io::{BufRead, Write};

use astraea::mut_adapters::echo_output;
use astraea::mut_adapters::wire::{decode_request, encode_response, output_to_response};

fn main() {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = match line {
            Ok(l) => l,
            Err(_) => break,
        };
        if line.trim().is_empty() {
            continue;
        }
        let req = match decode_request(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("echo-mut: {e}");
                std::process::exit(2);
            }
        };
        if req.text.contains("__CRASH__") {
            std::process::exit(3);
        }
        if req.text.contains("__SLEEP__") {
            std::thread::sleep(std::time::Duration::from_secs(10));
        }
        let resp = output_to_response(req.id, &echo_output(&req));
        if writeln!(out, "{}", encode_response(&resp))
            .and_then(|_| out.flush())
            .is_err()
        {
            break;
        }
    }
}
