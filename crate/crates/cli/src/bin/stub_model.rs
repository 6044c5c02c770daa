//! Minimal external-model server: loads a weight JSON and answers the
//! line protocol on stdin/stdout. Doubles as a reference implementation
//! for wiring real models into `--model external:<command>`.
//!
//! Requests are one JSON object per line:
//!   {"op":"hello"}                 -> {"op":"hello","d":<n_features>}
//!   {"op":"predict","x":[[...]]}   -> {"op":"proba","p":[...]}
//!   {"op":"bye"}                   -> (exits)

use std::io::{self, BufRead, Write};
use std::path::Path;
use std::process::exit;

use cid_core::model::{Classifier, LogisticModel};
use serde::Deserialize;
use serde_json::json;

#[derive(Deserialize)]
struct Request {
    op: String,
    #[serde(default)]
    x: Option<Vec<Vec<f64>>>,
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 2 {
        eprintln!("usage: cid-stub-model <weights.json>");
        exit(2);
    }
    let model = match LogisticModel::load(Path::new(&args[1])) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("loading {}: {e}", args[1]);
            exit(1);
        }
    };

    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = match line {
            Ok(l) => l,
            Err(_) => return,
        };
        if line.trim().is_empty() {
            continue;
        }
        let request: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("bad request: {e}");
                exit(1);
            }
        };
        let reply = match request.op.as_str() {
            "hello" => json!({"op": "hello", "d": model.dim()}),
            "predict" => match model.predict_batch(&request.x.unwrap_or_default()) {
                Ok(p) => json!({"op": "proba", "p": p}),
                Err(e) => {
                    eprintln!("predict: {e}");
                    exit(1);
                }
            },
            "bye" => return,
            other => {
                eprintln!("unknown op {other:?}");
                exit(1);
            }
        };
        if writeln!(stdout, "{reply}").and_then(|_| stdout.flush()).is_err() {
            return;
        }
    }
}
