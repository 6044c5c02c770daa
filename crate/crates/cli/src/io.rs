//! File formats and output plumbing shared by the subcommands.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use cid_core::evaluation::Explanation;
use serde::Serialize;

use crate::error::AppError;

/// Pretty JSON with a trailing newline — the byte-stable primary output
/// form (struct field order is fixed, no maps involved).
pub fn to_json_text<T: Serialize>(value: &T) -> Result<String, AppError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes a primary result to `--out`, or to standard output when absent.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), AppError> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| AppError::data(format!("writing {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| AppError::data(format!("writing stdout: {e}")))
        }
    }
}

/// Renders CSV records with round-trip-exact float formatting.
pub fn csv_text(header: &[String], records: &[Vec<String>]) -> Result<String, AppError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header)
        .map_err(|e| AppError::data(format!("encoding CSV: {e}")))?;
    for record in records {
        writer
            .write_record(record)
            .map_err(|e| AppError::data(format!("encoding CSV: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| AppError::data(format!("encoding CSV: {e}")))?;
    String::from_utf8(bytes).map_err(|e| AppError::data(format!("encoding CSV: {e}")))
}

/// One row per instance: `instance_id,<feature scores...>`.
pub fn explanations_to_csv(names: &[String], rows: &[Explanation]) -> Result<String, AppError> {
    let mut header = Vec::with_capacity(names.len() + 1);
    header.push("instance_id".to_string());
    header.extend(names.iter().cloned());
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut rec = Vec::with_capacity(r.scores.len() + 1);
            rec.push(r.instance_id.to_string());
            rec.extend(r.scores.iter().map(|v| format!("{v}")));
            rec
        })
        .collect();
    csv_text(&header, &records)
}

/// A parsed explanation CSV: header names plus one scored row per instance.
#[derive(Debug)]
pub struct ExplanationFile {
    pub feature_names: Vec<String>,
    pub rows: Vec<Explanation>,
}

pub fn read_explanations(path: &Path) -> Result<ExplanationFile, AppError> {
    let shown = path.display();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AppError::data(format!("reading {shown}: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| AppError::data(format!("{shown}: {e}")))?
        .clone();
    if headers.len() < 2 || &headers[0] != "instance_id" {
        return Err(AppError::data(format!(
            "{shown}: header must be instance_id,<feature names>"
        )));
    }
    let feature_names: Vec<String> = headers.iter().skip(1).map(String::from).collect();

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| AppError::data(format!("{shown} row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(AppError::data(format!(
                "{shown} row {row}: {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        let instance_id: usize = record[0].parse().map_err(|_| {
            AppError::data(format!(
                "{shown} row {row}: bad instance_id {:?}",
                &record[0]
            ))
        })?;
        if !seen.insert(instance_id) {
            return Err(AppError::data(format!(
                "{shown} row {row}: duplicate instance_id {instance_id}"
            )));
        }
        let mut scores = Vec::with_capacity(feature_names.len());
        for value in record.iter().skip(1) {
            let parsed = value.parse::<f64>().ok().filter(|v| v.is_finite());
            match parsed {
                Some(v) => scores.push(v),
                None => {
                    return Err(AppError::data(format!(
                        "{shown} row {row}: bad score {value:?}"
                    )))
                }
            }
        }
        rows.push(Explanation {
            instance_id,
            scores,
        });
    }
    if rows.is_empty() {
        return Err(AppError::data(format!("{shown}: no explanation rows")));
    }
    Ok(ExplanationFile {
        feature_names,
        rows,
    })
}

/// Parses `--instances`: `a..b` (half-open) or a single index. `bound`
/// is the test-split size when one is in play.
pub fn parse_instances(spec: &str, bound: Option<usize>) -> Result<Vec<usize>, AppError> {
    let parse_num = |tok: &str| {
        tok.trim()
            .parse::<usize>()
            .map_err(|_| AppError::usage(format!("bad instance selector {spec:?}")))
    };
    let check = |i: usize| match bound {
        Some(n) if i >= n => Err(AppError::usage(format!(
            "instance {i} exceeds the {n} test rows"
        ))),
        _ => Ok(()),
    };
    if let Some((a, b)) = spec.split_once("..") {
        let a = parse_num(a)?;
        let b = parse_num(b)?;
        if a >= b {
            return Err(AppError::usage(format!("empty instance range {spec:?}")));
        }
        check(b - 1)?;
        Ok((a..b).collect())
    } else {
        let k = parse_num(spec)?;
        check(k)?;
        Ok(vec![k])
    }
}
