//! Validator living in a child process, spoken to in line-delimited JSON.
//!
//! Request: `{"id": 3, "state": [0.1, 0.2]}`.
//! Reply: `{"id": 3, "e_imp": [0.01], "e_o": 0.01}` or `{"id": 3, "error": "..."}`.
//! `e_o` may be omitted, in which case the overall error is assembled locally.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::validation::{Oracle, OracleReply};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    state: &'a [f64],
}

#[derive(Deserialize, Debug)]
struct Response {
    id: u64,
    #[serde(default)]
    e_imp: Option<Vec<f64>>,
    #[serde(default)]
    e_o: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

/// Parses one reply line, checking it answers request `id`.
pub fn parse_reply(line: &str, id: u64) -> Result<OracleReply> {
    let r: Response = serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad reply `{line}`: {e}")))?;
    if r.id != id {
        return Err(Error::Protocol(format!("reply id {} does not match request {id}", r.id)));
    }
    if let Some(msg) = r.error {
        return Err(Error::Protocol(format!("validator error: {msg}")));
    }
    let implicit = r
        .e_imp
        .ok_or_else(|| Error::Protocol("reply lacks e_imp".into()))?;
    Ok(OracleReply {
        implicit,
        overall: r.e_o,
    })
}

pub struct ExternalOracle {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
}

impl std::fmt::Debug for ExternalOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalOracle")
            .field("pid", &self.child.id())
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl ExternalOracle {
    /// Starts `program` with `args`; stderr is inherited.
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
            next_id: 0,
            timeout,
        })
    }

    /// Splits a shell-like command line on whitespace.
    pub fn spawn_command_line(cmd: &str, timeout: Duration) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty external validator command".into()))?;
        let args: Vec<String> = parts.collect();
        Self::spawn(&program, &args, timeout)
    }
}

impl Oracle for ExternalOracle {
    fn query(&mut self, state: &[f64]) -> Result<OracleReply> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&Request { id, state }).map_err(|e| Error::Protocol(e.to_string()))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Protocol(format!("validator closed its input: {e}")))?;
        loop {
            let reply = match self.lines.recv_timeout(self.timeout) {
                Ok(Ok(l)) => l,
                Ok(Err(e)) => return Err(Error::Protocol(format!("reading validator output: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Protocol(format!("validator timed out after {:?}", self.timeout)))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Protocol("validator exited".into())),
            };
            if reply.trim().is_empty() {
                continue;
            }
            return parse_reply(&reply, id);
        }
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_parsing() {
        let r = parse_reply(r#"{"id": 4, "e_imp": [0.1, 0.2], "e_o": 0.15}"#, 4).unwrap();
        assert_eq!(r.implicit, vec![0.1, 0.2]);
        assert_eq!(r.overall, Some(0.15));
        let r = parse_reply(r#"{"id": 0, "e_imp": [0.3]}"#, 0).unwrap();
        assert_eq!(r.overall, None);
        assert!(matches!(parse_reply(r#"{"id": 1, "e_imp": [0.3]}"#, 2), Err(Error::Protocol(_))));
        let e = parse_reply(r#"{"id": 2, "error": "diverged"}"#, 2).unwrap_err();
        assert!(e.to_string().contains("diverged"));
        assert!(parse_reply("not json", 0).is_err());
        assert!(parse_reply(r#"{"id": 0}"#, 0).is_err());
    }

    #[test]
    fn missing_program() {
        assert!(ExternalOracle::spawn("/nonexistent/validator", &[], DEFAULT_TIMEOUT).is_err());
        assert!(ExternalOracle::spawn_command_line("   ", DEFAULT_TIMEOUT).is_err());
    }

    #[test]
    fn dead_child_is_a_protocol_error() {
        let mut o = ExternalOracle::spawn("true", &[], Duration::from_secs(5)).unwrap();
        assert!(matches!(o.query(&[0.5]), Err(Error::Protocol(_))));
    }
}
