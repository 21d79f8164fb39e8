//! Child-process evaluator adapter speaking line-delimited JSON.
//!
//! Protocol over the child's stdin/stdout (stderr passes through):
//!
//! ```text
//! child -> parent on start:  {"hello": {"total_blocks": <int>, "metric": "<name>"}}
//! parent -> child:           {"id": <int>, "retained": [<int>...], "skipped": [<int>...]}
//! child -> parent:           {"id": <int>, "score": <float>}
//!                        or  {"id": <int>, "error": "<msg>"}
//! parent -> child on close:  {"shutdown": true}
//! ```
//!
//! Request ids are strictly increasing. A response with the wrong id, a
//! malformed line, or a closed pipe is a protocol error; a slow child is a
//! timeout. Requests carry both the retained and the skipped list so the
//! adapter can use whichever is cheaper.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::block::BlockSet;
use crate::eval::{EvalError, Evaluator};
use crate::metrics::MetricScore;

/// Default per-request timeout, generous because real adapters run full
/// calibration sweeps per score call.
pub const DEFAULT_ADAPTER_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Deserialize)]
struct HelloLine {
    hello: HelloBody,
}

#[derive(Deserialize)]
struct HelloBody {
    total_blocks: usize,
    metric: String,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    retained: &'a [usize],
    skipped: &'a [usize],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Response {
    id: u64,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

struct AdapterIo {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: mpsc::Receiver<std::io::Result<String>>,
    next_id: u64,
}

/// Evaluator backed by a spawned adapter process. Requests are serialized
/// over the single pipe; concurrent `score` callers simply queue on the
/// internal lock.
pub struct ExternalEvaluator {
    command: String,
    total_blocks: usize,
    metric: String,
    timeout: Duration,
    io: Mutex<AdapterIo>,
}

impl ExternalEvaluator {
    /// Spawn `command` through `sh -c` and perform the hello handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| EvalError::SpawnFailure {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
            // Channel disconnect signals EOF to the parent.
        });

        let mut io = AdapterIo {
            child,
            stdin: Some(stdin),
            lines,
            next_id: 0,
        };

        let line = Self::read_line(&mut io, timeout)?;
        let hello: HelloLine = serde_json::from_str(&line).map_err(|e| EvalError::Protocol {
            line: line.clone(),
            reason: format!("expected hello handshake: {e}"),
        })?;

        Ok(Self {
            command: command.to_string(),
            total_blocks: hello.hello.total_blocks,
            metric: hello.hello.metric,
            timeout,
            io: Mutex::new(io),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn read_line(io: &mut AdapterIo, timeout: Duration) -> Result<String, EvalError> {
        match io.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(EvalError::Protocol {
                line: String::new(),
                reason: format!("failed reading adapter stdout: {e}"),
            }),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(EvalError::AdapterTimeout {
                seconds: timeout.as_secs(),
            }),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(EvalError::Protocol {
                line: String::new(),
                reason: "adapter closed its stdout".to_string(),
            }),
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn total_blocks(&self) -> usize {
        self.total_blocks
    }

    fn metric_name(&self) -> &str {
        &self.metric
    }

    fn model_id(&self) -> String {
        "external".to_string()
    }

    fn score(&self, retained: &BlockSet) -> Result<MetricScore, EvalError> {
        let mut io = self.io.lock().expect("adapter lock");
        io.next_id += 1;
        let id = io.next_id;
        let request = Request {
            id,
            retained: retained.retained(),
            skipped: &retained.skipped(),
        };
        let line = serde_json::to_string(&request).expect("request serializes");
        let stdin = io.stdin.as_mut().expect("stdin open");
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| EvalError::Protocol {
                line,
                reason: format!("failed writing request: {e}"),
            })?;

        let line = Self::read_line(&mut io, self.timeout)?;
        let response: Response = serde_json::from_str(&line).map_err(|e| EvalError::Protocol {
            line: line.clone(),
            reason: format!("malformed response: {e}"),
        })?;
        if response.id != id {
            return Err(EvalError::Protocol {
                line,
                reason: format!("response id {} does not match request id {id}", response.id),
            });
        }
        if let Some(message) = response.error {
            return Err(EvalError::Adapter { id, message });
        }
        let score = response.score.ok_or(EvalError::Protocol {
            line,
            reason: "response has neither score nor error".to_string(),
        })?;
        Ok(MetricScore::new(score, self.metric.clone(), 1))
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Ok(mut io) = self.io.lock() {
            if let Some(mut stdin) = io.stdin.take() {
                let _ = stdin.write_all(b"{\"shutdown\": true}\n");
                let _ = stdin.flush();
                // Dropping stdin closes the pipe.
            }
            for _ in 0..50 {
                match io.child.try_wait() {
                    Ok(Some(_)) => return,
                    Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                    Err(_) => break,
                }
            }
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
