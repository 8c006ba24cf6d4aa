//! Black-box models living in a child process.
//!
//! The parent talks NDJSON over the child's stdin/stdout, one object per line:
//!
//! ```text
//! parent -> {"type":"hello","d":20,"task":"classification","k":4}
//! child  -> {"type":"hello","d":20,"task":"classification","k":4}
//! parent -> {"type":"predict","id":7,"inputs":[[...d reals...],...]}
//! child  -> {"type":"result","id":7,"outputs":[[...k reals...],...]}
//! child  -> {"type":"error","id":7,"message":"..."}
//! ```
//!
//! Responses are matched by id and may arrive out of order.
//! [`serve_model`] implements the child side for any in-process model.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{Matrix, Task};
use crate::error::{Error, Result};
use crate::model::{BlackBoxModel, ModelOutput};
use crate::rng::RandomStream;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

const PROBE_ROWS: usize = 8;
const PROBE_SEED: u64 = 0x5eed_cafe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        d: usize,
        task: String,
        k: usize,
    },
    Predict {
        id: u64,
        inputs: Vec<Vec<f64>>,
    },
    Result {
        id: u64,
        outputs: Vec<Vec<f64>>,
    },
    Error {
        id: u64,
        message: String,
    },
}

impl Message {
    fn hello(d: usize, task: Task) -> Self {
        Message::Hello {
            d,
            task: task.name().to_string(),
            k: task.output_width(),
        }
    }
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    parked: HashMap<u64, Message>,
}

impl Connection {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let mut line = serde_json::to_string(msg)?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::External(format!("write to child failed: {e}")))
    }

    fn recv(&mut self, deadline: Instant, timeout: Duration) -> Result<Message> {
        let remaining = deadline.saturating_duration_since(Instant::now());
        let line = match self.lines.recv_timeout(remaining) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::External(format!("read from child failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::External("child closed its output".into()))
            }
        };
        serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("malformed line {line:?}: {e}")))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalModel {
    command: String,
    n_features: usize,
    task: Task,
    timeout: Duration,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel")
            .field("command", &self.command)
            .field("n_features", &self.n_features)
            .field("task", &self.task)
            .field("timeout", &self.timeout)
            .finish()
    }
}

/// Spawns `command` through `sh -c`, performs the handshake and checks purity
/// with a repeated probe batch.
pub fn attach_external(command: &str, d: usize, task: Task) -> Result<ExternalModel> {
    attach_external_with_timeout(command, d, task, DEFAULT_TIMEOUT)
}

pub fn attach_external_with_timeout(
    command: &str,
    d: usize,
    task: Task,
    timeout: Duration,
) -> Result<ExternalModel> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::External(format!("failed to spawn `{command}`: {e}")))?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    let mut conn = Connection {
        child,
        stdin,
        lines: rx,
        next_id: 1,
        parked: HashMap::new(),
    };

    let expected = Message::hello(d, task);
    conn.send(&expected)?;
    let reply = conn.recv(Instant::now() + timeout, timeout)?;
    if reply != expected {
        return Err(Error::Protocol(format!(
            "handshake mismatch: sent {}, got {}",
            serde_json::to_string(&expected)?,
            serde_json::to_string(&reply)?
        )));
    }

    let model = ExternalModel {
        command: command.to_string(),
        n_features: d,
        task,
        timeout,
        conn: Mutex::new(conn),
    };
    let mut rng = RandomStream::new(PROBE_SEED);
    let probe = Matrix::from_vec(PROBE_ROWS, d, rng.draw_gaussian(PROBE_ROWS * d))?;
    let first = model.predict(&probe)?;
    let second = model.predict(&probe)?;
    if first != second {
        return Err(Error::Impure);
    }
    Ok(model)
}

impl ExternalModel {
    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn request(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| Error::External("connection lock poisoned".into()))?;
        let id = conn.next_id;
        conn.next_id += 1;
        conn.send(&Message::Predict {
            id,
            inputs: rows.to_rows(),
        })?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let msg = match conn.parked.remove(&id) {
                Some(m) => m,
                None => conn.recv(deadline, self.timeout)?,
            };
            match msg {
                Message::Result { id: rid, outputs } if rid == id => return Ok(outputs),
                Message::Error { id: rid, message } if rid == id => {
                    return Err(Error::External(format!("request {id}: {message}")))
                }
                Message::Result { id: other, .. } | Message::Error { id: other, .. } => {
                    conn.parked.insert(other, msg);
                }
                other => {
                    return Err(Error::Protocol(format!(
                        "unexpected message {}",
                        serde_json::to_string(&other)?
                    )))
                }
            }
        }
    }
}

impl BlackBoxModel for ExternalModel {
    fn task(&self) -> Task {
        self.task
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, rows: &Matrix) -> Result<ModelOutput> {
        if rows.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: rows.ncols(),
            });
        }
        if rows.is_empty() {
            return Ok(ModelOutput {
                values: Matrix::empty(self.task.output_width()),
            });
        }
        let outputs = self.request(rows)?;
        let k = self.task.output_width();
        if outputs.len() != rows.nrows() || outputs.iter().any(|o| o.len() != k) {
            return Err(Error::Protocol(format!(
                "expected {} outputs of width {k}",
                rows.nrows()
            )));
        }
        let values = Matrix::from_rows(&outputs)?;
        let out = ModelOutput { values };
        out.validate(self.task, rows.nrows())
            .map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(out)
    }
}

/// Child side of the protocol: answers requests with `model` until the input
/// closes. Per-request failures are reported as `error` messages.
pub fn serve_model<R: BufRead, W: Write>(
    model: &dyn BlackBoxModel,
    input: R,
    mut output: W,
) -> Result<()> {
    let hello = Message::hello(model.n_features(), model.task());
    let write = |msg: &Message, out: &mut W| -> Result<()> {
        let line = serde_json::to_string(msg)?;
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| Error::External(format!("write failed: {e}")))
    };
    for line in input.lines() {
        let line = line.map_err(|e| Error::External(format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: Message = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("malformed line {line:?}: {e}")))?;
        match msg {
            Message::Hello { .. } => write(&hello, &mut output)?,
            Message::Predict { id, inputs } => {
                let reply = match Matrix::from_rows(&inputs).and_then(|m| {
                    if inputs.is_empty() {
                        Ok(ModelOutput { values: Matrix::empty(model.task().output_width()) })
                    } else {
                        model.predict(&m)
                    }
                }) {
                    Ok(out) => Message::Result {
                        id,
                        outputs: out.values.to_rows(),
                    },
                    Err(e) => Message::Error {
                        id,
                        message: e.to_string(),
                    },
                };
                write(&reply, &mut output)?;
            }
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected message {}",
                    serde_json::to_string(&other)?
                )))
            }
        }
    }
    Ok(())
}
