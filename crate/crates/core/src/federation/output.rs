//! On-disk formats for a run.
//!
//! `metrics.csv` has one header line ([`METRICS_COLUMNS`]) and one row per
//! round, `round` counting from 1. Floats use Rust's shortest round-trip
//! formatting; an unbounded deadline is written `inf`. `client_times.csv`
//! has one row per selected client per round. `run.json` holds the config,
//! seeds, dataset provenance, model spec and a final summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use super::RunLog;
use crate::{Error, Result};

pub const METRICS_COLUMNS: [&str; 10] = [
    "round",
    "strategy",
    "train_loss",
    "test_loss",
    "test_acc",
    "mean_client_time",
    "max_client_time",
    "tau",
    "dropped",
    "mean_epsilon",
];

pub const CLIENT_TIME_COLUMNS: [&str; 9] = [
    "round",
    "strategy",
    "slot",
    "client_id",
    "path",
    "time",
    "tau",
    "epochs_done",
    "coreset_size",
];

/// Serde adapter that writes non-finite floats as the strings `inf`, `-inf`
/// or `nan`, which JSON cannot represent as numbers.
pub mod float_or_inf {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::fmt_float(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(D::Error::custom(format!("expected a float, got '{other}'"))),
            },
        }
    }
}

pub(crate) fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn metrics_csv(log: &RunLog) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    let strategy = log.config.strategy.as_str();
    let tau = fmt_float(log.config.tau);
    for r in &log.rounds {
        writeln!(
            out,
            "{},{strategy},{},{},{},{},{},{tau},{},{}",
            r.round,
            fmt_float(r.train_loss),
            fmt_float(r.test_loss),
            fmt_float(r.test_acc),
            fmt_float(r.mean_time()),
            fmt_float(r.max_time()),
            r.dropped,
            fmt_float(r.mean_epsilon()),
        )
        .unwrap();
    }
    out
}

pub fn client_times_csv(log: &RunLog) -> String {
    let mut out = CLIENT_TIME_COLUMNS.join(",");
    out.push('\n');
    let strategy = log.config.strategy.as_str();
    let tau = fmt_float(log.config.tau);
    for r in &log.rounds {
        for c in &r.clients {
            let path = serde_json::to_value(c.path).unwrap();
            writeln!(
                out,
                "{},{strategy},{},{},{},{},{tau},{},{}",
                r.round,
                c.slot,
                c.client_id,
                path.as_str().unwrap(),
                fmt_float(c.time),
                c.epochs_done,
                c.coreset_size.map(|k| k.to_string()).unwrap_or_default(),
            )
            .unwrap();
        }
    }
    out
}

pub fn run_json(log: &RunLog) -> serde_json::Value {
    let last = log.rounds.last();
    let tau = log.config.tau;
    let (normalized, max_normalized) = if tau.is_finite() {
        (json!(log.mean_normalized_time(tau)), json!(log.max_normalized_time(tau)))
    } else {
        (serde_json::Value::Null, serde_json::Value::Null)
    };
    let total_dropped: usize = log.rounds.iter().map(|r| r.dropped).sum();
    json!({
        "config": log.config,
        "seeds": log.seeds,
        "provenance": log.provenance,
        "model": log.initial_params.spec(),
        "summary": {
            "rounds": log.rounds.len(),
            "final_train_loss": last.map(|r| r.train_loss),
            "final_test_loss": last.map(|r| r.test_loss),
            "final_test_acc": last.map(|r| r.test_acc),
            "mean_normalized_time": normalized,
            "max_normalized_time": max_normalized,
            "total_dropped": total_dropped,
        },
    })
}

/// Writes through a sibling temporary file and a rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, contents).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(log: &RunLog, path: &Path) -> Result<()> {
    write_atomic(path, metrics_csv(log).as_bytes())
}

pub fn write_client_times_csv(log: &RunLog, path: &Path) -> Result<()> {
    write_atomic(path, client_times_csv(log).as_bytes())
}

pub fn write_run_json(log: &RunLog, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&run_json(log))?;
    write_atomic(path, text.as_bytes())
}
