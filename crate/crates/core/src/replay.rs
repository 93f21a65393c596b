//! Offline verification of recorded event logs.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::engine::{sha256_hex, SimEvent};
use crate::error::Result;
use crate::report::Report;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    /// 1-based line in the log file.
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub events: usize,
    pub hash: String,
    /// Hash recorded next to the log, if one was found.
    pub expected_hash: Option<String>,
    pub failures: Vec<Failure>,
    /// Recomputed report; absent when a line could not be parsed.
    pub report: Option<Report>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.expected_hash.as_ref().is_none_or(|h| *h == self.hash)
    }

    /// One-line verdict, `PASS ...` or `FAIL ...`.
    pub fn summary(&self) -> String {
        if self.passed() {
            return format!("PASS {} events sha256={}", self.events, self.hash);
        }
        if let Some(f) = self.failures.first() {
            return format!("FAIL {f}");
        }
        format!(
            "FAIL hash mismatch: log {} recorded {}",
            self.hash,
            self.expected_hash.as_deref().unwrap_or("")
        )
    }
}

/// Checks a log's text: every line parses, `seq` counts up from zero without
/// gaps, time never decreases, and each line is in canonical form.
pub fn verify_text(text: &str, expected_hash: Option<&str>) -> Verification {
    let mut failures = Vec::new();
    let mut parse_ok = true;
    let mut prev_time = f64::NEG_INFINITY;
    let mut prev_seq: Option<u64> = None;
    let mut count = 0usize;

    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let e = match SimEvent::parse_line(line) {
            Ok(e) => e,
            Err(err) => {
                parse_ok = false;
                failures.push(Failure {
                    line: n,
                    reason: format!("unparseable record ({err})"),
                });
                continue;
            }
        };
        let expected = count as u64;
        count += 1;
        if let Some(p) = prev_seq.filter(|&p| e.seq <= p) {
            failures.push(Failure {
                line: n,
                reason: format!("seq {} not after {p} (monotonicity)", e.seq),
            });
        } else if e.seq != expected {
            failures.push(Failure {
                line: n,
                reason: format!("seq gap: expected {expected}, found {}", e.seq),
            });
        }
        if e.time < prev_time {
            failures.push(Failure {
                line: n,
                reason: format!("time {} before previous {prev_time} (monotonicity)", e.time),
            });
        }
        if e.to_canonical_line() != line {
            failures.push(Failure {
                line: n,
                reason: "record is not in canonical form".into(),
            });
        }
        prev_seq = Some(e.seq);
        prev_time = e.time;
    }
    if !text.is_empty() && !text.ends_with('\n') {
        failures.push(Failure {
            line: text.lines().count(),
            reason: "missing trailing newline".into(),
        });
    }

    let report = if parse_ok {
        Report::from_ndjson(text).ok()
    } else {
        None
    };
    Verification {
        events: count,
        hash: sha256_hex(text.as_bytes()),
        expected_hash: expected_hash.map(|h| h.trim().to_owned()),
        failures,
        report,
    }
}

/// Verifies a log file, comparing against `<stem>.sha256` beside it when present.
pub fn verify_file(path: &Path) -> Result<Verification> {
    let text = std::fs::read_to_string(path)?;
    let sidecar = path.with_extension("sha256");
    let expected = if sidecar != path && sidecar.exists() {
        Some(std::fs::read_to_string(&sidecar)?)
    } else {
        None
    };
    Ok(verify_text(&text, expected.as_deref()))
}
