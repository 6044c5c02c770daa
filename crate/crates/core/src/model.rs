//! Binary probabilistic classifiers: a built-in logistic regression and a
//! bridge to external models over a line-delimited JSON protocol.
//!
//! # External model protocol
//!
//! The external process reads requests on stdin and answers on stdout, one
//! JSON object per line:
//!
//! ```text
//! -> {"op":"hello"}
//! <- {"op":"hello","d":4}
//! -> {"op":"predict","x":[[0.1,0.2,0.3,0.4],[1.0,1.0,1.0,1.0]]}
//! <- {"op":"proba","p":[0.73,0.12]}
//! -> {"op":"bye"}
//! ```
//!
//! Probabilities must be finite and in `[0, 1]`, one per input row, in
//! order. Anything else — a malformed line, a wrong-length reply, an
//! out-of-range probability, or the process exiting mid-session — is a
//! [`ModelError::Protocol`] / [`ModelError::ProcessExited`].
//!
//! Floats cross the pipe as shortest-round-trip decimals and are parsed
//! back bit-exactly (serde_json's `float_roundtrip`), so a subprocess that
//! computes the same arithmetic as an in-process model reproduces its
//! output to the bit.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetTable;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("training data contains a single class; need both labels present")]
    SingleClass,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("failed to launch external model {command:?}: {source}")]
    Launch {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("external model protocol violation: {0}")]
    Protocol(String),
    #[error("external model process exited mid-session")]
    ProcessExited,
    #[error("i/o talking to external model: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model file {path}: {reason}")]
    BadModelFile { path: String, reason: String },
}

/// A binary classifier scored through `P(y = 1 | x)`.
///
/// Implementations must be deterministic: the same input row always yields
/// the same probability, and a batched call agrees with row-by-row calls.
pub trait Classifier: Send + Sync {
    /// Input dimensionality.
    fn dim(&self) -> usize;

    /// Probabilities of class 1 for a batch of rows, in input order.
    fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ModelError>;

    fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        let out = self.predict_batch(std::slice::from_ref(&x.to_vec()))?;
        Ok(out[0])
    }

    /// Hard label: 1 iff the probability is at least 0.5 (ties go to 1).
    fn predict_label(&self, x: &[f64]) -> Result<u8, ModelError> {
        Ok(if self.predict_proba(x)? >= 0.5 { 1 } else { 0 })
    }
}

fn check_rows(rows: &[Vec<f64>], d: usize) -> Result<(), ModelError> {
    for row in rows {
        if row.len() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression over optionally standardized inputs.
///
/// `standardizer` holds per-feature `(mean, std)` pairs applied before the
/// linear term; a zero or negative stored std passes the centered value
/// through unscaled. Probabilities are clamped to stay strictly inside
/// (0, 1) even in the saturated tails.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Option<Vec<(f64, f64)>>,
}

const PROBA_CLAMP: f64 = 1e-12;

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64, standardizer: Option<Vec<(f64, f64)>>) -> Self {
        if let Some(ref s) = standardizer {
            assert_eq!(s.len(), weights.len(), "standardizer/weights length mismatch");
        }
        LogisticModel {
            weights,
            bias,
            standardizer,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let model: LogisticModel =
            serde_json::from_str(&text).map_err(|e| ModelError::BadModelFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        if let Some(ref s) = model.standardizer {
            if s.len() != model.weights.len() {
                return Err(ModelError::BadModelFile {
                    path: path.display().to_string(),
                    reason: "standardizer length differs from weights".into(),
                });
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let mut text = serde_json::to_string_pretty(self).expect("model serialization");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn standardized(&self, x: &[f64], j: usize) -> f64 {
        match &self.standardizer {
            Some(s) => {
                let (m, sd) = s[j];
                if sd > 0.0 {
                    (x[j] - m) / sd
                } else {
                    x[j] - m
                }
            }
            None => x[j],
        }
    }

    fn raw_proba(&self, x: &[f64]) -> f64 {
        let mut z = self.bias;
        for j in 0..self.weights.len() {
            z += self.weights[j] * self.standardized(x, j);
        }
        sigmoid(z).clamp(PROBA_CLAMP, 1.0 - PROBA_CLAMP)
    }
}

impl Classifier for LogisticModel {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        check_rows(rows, self.dim())?;
        Ok(rows.iter().map(|r| self.raw_proba(r)).collect())
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_rows(std::slice::from_ref(&x.to_vec()), self.dim())?;
        Ok(self.raw_proba(x))
    }
}

/// Regularized cross-entropy loss and its gradient at `(w, b)`.
///
/// Loss = mean cross-entropy + (l2/2)·‖w‖²; the bias is not regularized.
/// Rows are assumed already standardized.
fn loss_and_grad(
    rows: &[Vec<f64>],
    labels: &[u8],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let d = w.len();
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; d];
    let mut grad_b = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let mut z = b;
        for j in 0..d {
            z += w[j] * row[j];
        }
        let p = sigmoid(z).clamp(PROBA_CLAMP, 1.0 - PROBA_CLAMP);
        let y = y as f64;
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        let resid = p - y;
        for j in 0..d {
            grad_w[j] += resid * row[j];
        }
        grad_b += resid;
    }
    loss /= n;
    grad_b /= n;
    for j in 0..d {
        grad_w[j] = grad_w[j] / n + l2 * w[j];
        loss += 0.5 * l2 * w[j] * w[j];
    }
    (loss, grad_w, grad_b)
}

/// Trains a logistic model by full-batch gradient descent.
///
/// Features are standardized internally with the table's (training-split)
/// statistics, and the fitted model carries that standardizer so raw rows
/// can be fed to it directly. Weights and bias start at zero, so
/// `epochs = 0` returns the 0.5-everywhere model. With full-batch descent
/// from a fixed start the fit is deterministic; `seed` is accepted for
/// interface stability but currently unused.
pub fn train_logistic(
    table: &DatasetTable,
    epochs: usize,
    learning_rate: f64,
    l2: f64,
    seed: u64,
) -> Result<LogisticModel, ModelError> {
    let _ = seed;
    let has0 = table.labels.iter().any(|&y| y == 0);
    let has1 = table.labels.iter().any(|&y| y == 1);
    if !(has0 && has1) {
        return Err(ModelError::SingleClass);
    }

    let d = table.d();
    let standardizer: Vec<(f64, f64)> = table.features.iter().map(|f| (f.mean, f.std)).collect();
    let std_rows: Vec<Vec<f64>> = table
        .rows
        .iter()
        .map(|row| {
            (0..d)
                .map(|j| {
                    let (m, sd) = standardizer[j];
                    if sd > 0.0 {
                        (row[j] - m) / sd
                    } else {
                        row[j] - m
                    }
                })
                .collect()
        })
        .collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for epoch in 0..epochs {
        let (loss, grad_w, grad_b) = loss_and_grad(&std_rows, &table.labels, &w, b, l2);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        for j in 0..d {
            w[j] -= learning_rate * grad_w[j];
        }
        b -= learning_rate * grad_b;
    }

    Ok(LogisticModel::new(w, b, Some(standardizer)))
}

/// Classification accuracy of `model` over a table's rows.
pub fn accuracy(model: &dyn Classifier, table: &DatasetTable) -> Result<f64, ModelError> {
    let probs = model.predict_batch(&table.rows)?;
    let correct = probs
        .iter()
        .zip(&table.labels)
        .filter(|(p, &y)| (if **p >= 0.5 { 1 } else { 0 }) == y)
        .count();
    Ok(correct as f64 / table.n_rows() as f64)
}

#[derive(Serialize)]
struct HelloRequest {
    op: &'static str,
}

#[derive(Serialize)]
struct PredictRequest<'a> {
    op: &'static str,
    x: &'a [Vec<f64>],
}

#[derive(Deserialize)]
struct HelloResponse {
    op: String,
    d: usize,
}

#[derive(Deserialize)]
struct ProbaResponse {
    op: String,
    p: Vec<f64>,
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl Session {
    fn send(&mut self, line: &str) -> Result<(), ModelError> {
        let stdin = self.stdin.as_mut().ok_or(ModelError::ProcessExited)?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<String, ModelError> {
        let mut line = String::new();
        let n = self.stdout.read_line(&mut line)?;
        if n == 0 {
            return Err(ModelError::ProcessExited);
        }
        Ok(line)
    }
}

/// A classifier served by a child process speaking the module-level protocol.
///
/// The session is stateful and serialized behind a mutex, so one
/// `ExternalModel` is safe to share across threads but predictions go one
/// batch at a time. Callers wanting parallel throughput open one session
/// per worker. Dropping the model sends `bye` and reaps the child.
pub struct ExternalModel {
    dim: usize,
    command: Vec<String>,
    session: Mutex<Session>,
}

/// Launches `command` (program + args) and performs the hello handshake.
pub fn connect_external(command: &[String]) -> Result<ExternalModel, ModelError> {
    if command.is_empty() {
        return Err(ModelError::Protocol("empty external command".into()));
    }
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|source| ModelError::Launch {
            command: command.join(" "),
            source,
        })?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
    let mut session = Session {
        child,
        stdin: Some(stdin),
        stdout,
    };

    session.send(&serde_json::to_string(&HelloRequest { op: "hello" }).unwrap())?;
    let line = session.recv()?;
    let hello: HelloResponse = serde_json::from_str(&line)
        .map_err(|e| ModelError::Protocol(format!("bad hello response {line:?}: {e}")))?;
    if hello.op != "hello" {
        return Err(ModelError::Protocol(format!(
            "expected op \"hello\", got {:?}",
            hello.op
        )));
    }
    if hello.d == 0 {
        return Err(ModelError::Protocol("model declared zero dimensions".into()));
    }
    Ok(ExternalModel {
        dim: hello.d,
        command: command.to_vec(),
        session: Mutex::new(session),
    })
}

impl ExternalModel {
    /// The command line this session was launched with.
    pub fn command(&self) -> &[String] {
        &self.command
    }
}

impl Classifier for ExternalModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        check_rows(rows, self.dim)?;
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut session = self.session.lock().expect("external session lock");
        let request = serde_json::to_string(&PredictRequest {
            op: "predict",
            x: rows,
        })
        .unwrap();
        session.send(&request)?;
        let line = session.recv()?;
        let resp: ProbaResponse = serde_json::from_str(&line)
            .map_err(|e| ModelError::Protocol(format!("bad predict response {line:?}: {e}")))?;
        if resp.op != "proba" {
            return Err(ModelError::Protocol(format!(
                "expected op \"proba\", got {:?}",
                resp.op
            )));
        }
        if resp.p.len() != rows.len() {
            return Err(ModelError::Protocol(format!(
                "expected {} probabilities, got {}",
                rows.len(),
                resp.p.len()
            )));
        }
        for &p in &resp.p {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(ModelError::Protocol(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(resp.p)
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Ok(mut session) = self.session.lock() {
            let _ = session.send("{\"op\":\"bye\"}");
            // Closing stdin gives the child an EOF even if it ignores "bye".
            drop(session.stdin.take());
            // Give a well-behaved child a moment to exit, then force it.
            for _ in 0..50 {
                match session.child.try_wait() {
                    Ok(Some(_)) | Err(_) => return,
                    Ok(None) => std::thread::sleep(std::time::Duration::from_millis(2)),
                }
            }
            let _ = session.child.kill();
            let _ = session.child.wait();
        }
    }
}
