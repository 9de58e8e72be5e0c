//! NDJSON client for out-of-process oracles.
//!
//! Wire format, one UTF-8 JSON object per line:
//!
//! ```text
//! server → {"protocol":"latent-oracle/1","d":512,"feature_dim":9216,"ops":["age","identity"]}
//! client → {"id":1,"op":"age","latent":[...]}
//! server → {"id":1,"ok":true,"value":34.2}
//! client → {"id":2,"op":"identity","latents":[[...],[...]]}
//! server → {"id":2,"ok":true,"features":[[...],[...]]}
//! server → {"id":3,"ok":false,"error":"unsupported_op"}
//! ```
//!
//! Endpoints are `tcp://host:port` or `exec:<program> [args...]` (the child's
//! stdin/stdout carry the protocol). One request is in flight per connection;
//! responses carrying an older id (left over from a timed-out request) are
//! discarded.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FeatureVector, Oracle};
use crate::error::{Error, Result, TransportError};

pub const PROTOCOL_VERSION: &str = "latent-oracle/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub d: usize,
    pub feature_dim: usize,
    pub ops: Vec<String>,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    op: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    latent: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latents: Option<&'a [&'a [f64]]>,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    socket: Option<TcpStream>,
    next_id: u64,
    timeout: Duration,
}

impl Connection {
    fn recv_line(&mut self) -> std::result::Result<String, TransportError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(TransportError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout(self.timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }

    fn call(&mut self, op: &str, latent: Option<&[f64]>, latents: Option<&[&[f64]]>) -> std::result::Result<Value, TransportError> {
        self.next_id += 1;
        let id = self.next_id;
        let req = Request { id, op, latent, latents };
        let mut line = serde_json::to_string(&req).map_err(|e| TransportError::Malformed(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;

        loop {
            let raw = self.recv_line()?;
            let msg: Value = serde_json::from_str(&raw).map_err(|e| TransportError::Malformed(format!("{e}: {raw}")))?;
            let obj = msg
                .as_object()
                .ok_or_else(|| TransportError::Malformed(format!("expected an object: {raw}")))?;
            match obj.get("id").and_then(Value::as_u64) {
                Some(rid) if rid == id => {}
                Some(rid) if rid < id => continue,
                Some(rid) => return Err(TransportError::Protocol(format!("response id {rid} for request {id}"))),
                None => return Err(TransportError::Protocol(format!("response without id: {raw}"))),
            }
            return match obj.get("ok").and_then(Value::as_bool) {
                Some(true) => Ok(msg),
                Some(false) => {
                    let code = obj.get("error").and_then(Value::as_str).unwrap_or("unknown_error");
                    Err(TransportError::Server(code.to_owned()))
                }
                None => Err(TransportError::Malformed(format!("missing `ok`: {raw}"))),
            };
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        // the reader thread holds a clone, so closing our half is not enough
        if let Some(sock) = self.socket.take() {
            let _ = sock.shutdown(std::net::Shutdown::Both);
        }
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader<R: std::io::Read + Send + 'static>(r: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let reader = BufReader::new(r);
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

fn f64_array(v: &Value, what: &str) -> std::result::Result<Vec<f64>, TransportError> {
    v.as_array()
        .ok_or_else(|| TransportError::Malformed(format!("`{what}` is not an array")))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| TransportError::Malformed(format!("non-numeric entry in `{what}`"))))
        .collect()
}

/// Oracle backed by a server speaking the NDJSON protocol.
pub struct RemoteOracle {
    conn: Mutex<Connection>,
    handshake: Handshake,
}

impl RemoteOracle {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self> {
        let mut conn = if let Some(addr) = endpoint.strip_prefix("tcp://") {
            let stream = TcpStream::connect(addr).map_err(|e| TransportError::Connect(format!("{addr}: {e}")))?;
            stream.set_nodelay(true).ok();
            let read_half = stream.try_clone().map_err(TransportError::Io)?;
            Connection {
                writer: Box::new(stream.try_clone().map_err(TransportError::Io)?),
                lines: spawn_reader(read_half),
                child: None,
                socket: Some(stream),
                next_id: 0,
                timeout,
            }
        } else if let Some(cmd) = endpoint.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace();
            let program = parts.next().ok_or_else(|| TransportError::BadEndpoint(endpoint.to_owned()))?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| TransportError::Connect(format!("{program}: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            Connection {
                writer: Box::new(stdin),
                lines: spawn_reader(stdout),
                child: Some(child),
                socket: None,
                next_id: 0,
                timeout,
            }
        } else {
            return Err(TransportError::BadEndpoint(endpoint.to_owned()).into());
        };

        let first = conn.recv_line()?;
        let handshake: Handshake =
            serde_json::from_str(&first).map_err(|e| TransportError::Malformed(format!("handshake: {e}: {first}")))?;
        if handshake.protocol != PROTOCOL_VERSION {
            return Err(TransportError::Protocol(format!(
                "server speaks `{}`, expected `{PROTOCOL_VERSION}`",
                handshake.protocol
            ))
            .into());
        }
        for op in ["age", "identity"] {
            if !handshake.ops.iter().any(|o| o == op) {
                return Err(TransportError::Protocol(format!("server does not advertise required op `{op}`")).into());
            }
        }
        Ok(Self {
            conn: Mutex::new(conn),
            handshake,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn call(&self, op: &str, latent: Option<&[f64]>, latents: Option<&[&[f64]]>) -> Result<Value> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        Ok(conn.call(op, latent, latents)?)
    }

    fn check(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.handshake.d {
            return Err(Error::DimensionMismatch {
                expected: self.handshake.d,
                actual: s.len(),
            });
        }
        Ok(())
    }

    fn check_features(&self, f: Vec<f64>) -> Result<Vec<f64>> {
        if f.len() != self.handshake.feature_dim {
            return Err(TransportError::Protocol(format!(
                "feature vector of length {} (handshake said {})",
                f.len(),
                self.handshake.feature_dim
            ))
            .into());
        }
        Ok(f)
    }

    /// Sends an arbitrary op for a single latent and returns the raw response.
    pub fn raw_call(&self, op: &str, s: &[f64]) -> Result<Value> {
        self.call(op, Some(s), None)
    }
}

impl Oracle for RemoteOracle {
    fn dim(&self) -> usize {
        self.handshake.d
    }

    fn feature_dim(&self) -> usize {
        self.handshake.feature_dim
    }

    fn age(&self, s: &[f64]) -> Result<f64> {
        self.check(s)?;
        let msg = self.call("age", Some(s), None)?;
        let v = msg
            .get("value")
            .and_then(Value::as_f64)
            .ok_or_else(|| TransportError::Malformed("age response without numeric `value`".into()))?;
        if !v.is_finite() {
            return Err(TransportError::Malformed("non-finite age".into()).into());
        }
        Ok(v)
    }

    fn identity(&self, s: &[f64]) -> Result<FeatureVector> {
        self.check(s)?;
        let msg = self.call("identity", Some(s), None)?;
        let f = msg
            .get("features")
            .ok_or_else(|| TransportError::Malformed("identity response without `features`".into()))?;
        self.check_features(f64_array(f, "features")?)
    }

    fn ages(&self, batch: &[&[f64]]) -> Result<Vec<f64>> {
        for s in batch {
            self.check(s)?;
        }
        let msg = self.call("age", None, Some(batch))?;
        let values = f64_array(
            msg.get("values")
                .ok_or_else(|| TransportError::Malformed("batched age response without `values`".into()))?,
            "values",
        )?;
        if values.len() != batch.len() {
            return Err(TransportError::Protocol(format!("{} values for {} latents", values.len(), batch.len())).into());
        }
        Ok(values)
    }

    fn identities(&self, batch: &[&[f64]]) -> Result<Vec<FeatureVector>> {
        for s in batch {
            self.check(s)?;
        }
        let msg = self.call("identity", None, Some(batch))?;
        let rows = msg
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| TransportError::Malformed("batched identity response without `features` rows".into()))?;
        if rows.len() != batch.len() {
            return Err(TransportError::Protocol(format!("{} feature rows for {} latents", rows.len(), batch.len())).into());
        }
        rows.iter()
            .map(|r| self.check_features(f64_array(r, "features")?))
            .collect()
    }
}
