//! Line protocol client for black-box classifiers running as child processes.
//!
//! ```text
//! -> HELLO cfx/1 <arity>          <- OK <name>
//! -> CLASSIFY <id> v1|v2|...|vn   <- LABEL <id> <0|1>   or   ERR <id> <message>
//! ```
//!
//! Requests are serialized over the single child channel. Answers are memoized
//! per value tuple, so the child sees at most one request per distinct tuple.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::ClassifyError;
use crate::model::{Entity, Label, Value};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(5000);
pub const PROTOCOL: &str = "cfx/1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalEndpoint {
    /// Launch line, run through `sh -c`.
    pub command: String,
    pub timeout: Duration,
    pub arity: usize,
}

impl ExternalEndpoint {
    pub fn new(command: impl Into<String>, arity: usize) -> Self {
        ExternalEndpoint {
            command: command.into(),
            timeout: DEFAULT_TIMEOUT,
            arity,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    /// Set once the stream can no longer be trusted (timeout, bad frame).
    broken: Option<ClassifyError>,
    seq: u64,
}

impl Channel {
    fn send(&mut self, line: &str) -> Result<(), ClassifyError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ClassifyError::ExternalIo("stdin closed".into()))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| ClassifyError::ExternalIo(e.to_string()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, ClassifyError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line.trim_end_matches(['\r', '\n']).to_string()),
            Ok(Err(e)) => Err(ClassifyError::ExternalIo(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(ClassifyError::ExternalTimeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(ClassifyError::ExternalProtocolError("classifier closed its output".into()))
            }
        }
    }

    fn poison(&mut self, err: &ClassifyError) {
        self.broken = Some(err.clone());
        self.stdin = None;
        let _ = self.child.kill();
    }
}

pub struct ExternalClassifier {
    endpoint: ExternalEndpoint,
    name: String,
    channel: Mutex<Channel>,
    memo: Mutex<HashMap<Vec<Value>, Label>>,
    requests: AtomicUsize,
}

impl ExternalClassifier {
    /// Launches the process and performs the handshake.
    pub fn connect(endpoint: ExternalEndpoint) -> Result<Self, ClassifyError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&endpoint.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ClassifyError::ExternalIo(format!("{}: {e}", endpoint.command)))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut channel = Channel {
            child,
            stdin,
            lines: rx,
            broken: None,
            seq: 0,
        };
        let name = match handshake(&mut channel, &endpoint) {
            Ok(name) => name,
            Err(e) => {
                channel.poison(&e);
                let _ = channel.child.wait();
                return Err(e);
            }
        };
        log::debug!("external classifier `{name}` ready");
        Ok(ExternalClassifier {
            endpoint,
            name,
            channel: Mutex::new(channel),
            memo: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
        })
    }

    pub fn endpoint(&self) -> &ExternalEndpoint {
        &self.endpoint
    }

    /// Name announced by the server in its handshake reply.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of CLASSIFY lines sent so far.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn classify_entity(&self, e: &Entity) -> Result<Label, ClassifyError> {
        self.classify(Some(e.id()), e.values())
    }

    /// Sends one CLASSIFY request unless the tuple was answered before.
    pub fn classify(&self, id: Option<&str>, values: &[Value]) -> Result<Label, ClassifyError> {
        if let Some(&label) = self.memo.lock().expect("memo lock").get(values) {
            return Ok(label);
        }
        if values.len() != self.endpoint.arity {
            return Err(ClassifyError::ExternalProtocolError(format!(
                "tuple has {} values, endpoint arity is {}",
                values.len(),
                self.endpoint.arity
            )));
        }
        if let Some(bad) = values.iter().find(|v| v.as_str().contains(['|', '\n', '\r'])) {
            return Err(ClassifyError::ExternalProtocolError(format!(
                "value `{bad}` cannot be sent over the wire"
            )));
        }
        let mut ch = self.channel.lock().expect("channel lock");
        // another caller may have answered this tuple while we waited
        if let Some(&label) = self.memo.lock().expect("memo lock").get(values) {
            return Ok(label);
        }
        if let Some(err) = &ch.broken {
            return Err(err.clone());
        }
        ch.seq += 1;
        let req_id = match id {
            Some(id) if !id.is_empty() && !id.contains(char::is_whitespace) => id.to_string(),
            _ => format!("r{}", ch.seq),
        };
        let joined = values.iter().map(Value::as_str).collect::<Vec<_>>().join("|");
        let result = ch
            .send(&format!("CLASSIFY {req_id} {joined}"))
            .and_then(|_| {
                self.requests.fetch_add(1, Ordering::SeqCst);
                ch.recv(self.endpoint.timeout)
            })
            .and_then(|line| parse_response(&line, &req_id));
        match result {
            Ok(label) => {
                self.memo.lock().expect("memo lock").insert(values.to_vec(), label);
                Ok(label)
            }
            Err(e) => {
                // a remote ERR or bad label leaves the stream in sync
                if !matches!(e, ClassifyError::ExternalRemoteError(_) | ClassifyError::ExternalBadLabel(_)) {
                    ch.poison(&e);
                }
                Err(e)
            }
        }
    }
}

impl Drop for ExternalClassifier {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            ch.stdin = None;
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

fn handshake(ch: &mut Channel, endpoint: &ExternalEndpoint) -> Result<String, ClassifyError> {
    ch.send(&format!("HELLO {PROTOCOL} {}", endpoint.arity))?;
    let line = ch.recv(endpoint.timeout)?;
    let mut parts = line.splitn(2, ' ');
    match (parts.next(), parts.next()) {
        (Some("OK"), name) => Ok(name.unwrap_or("").trim().to_string()),
        _ => Err(ClassifyError::ExternalProtocolError(format!("bad handshake reply `{line}`"))),
    }
}

fn parse_response(line: &str, req_id: &str) -> Result<Label, ClassifyError> {
    let mut parts = line.splitn(3, ' ');
    let (kind, id, rest) = (parts.next(), parts.next(), parts.next());
    if let Some(id) = id {
        if id != req_id {
            return Err(ClassifyError::ExternalProtocolError(format!(
                "response id `{id}` does not match request `{req_id}`"
            )));
        }
    }
    match (kind, id, rest) {
        (Some("LABEL"), Some(_), Some(bit)) => {
            Label::parse(bit).ok_or_else(|| ClassifyError::ExternalBadLabel(bit.trim().to_string()))
        }
        (Some("ERR"), Some(_), msg) => Err(ClassifyError::ExternalRemoteError(msg.unwrap_or("").to_string())),
        _ => Err(ClassifyError::ExternalProtocolError(format!("malformed response `{line}`"))),
    }
}
