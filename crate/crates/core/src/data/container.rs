//! Plain-text dataset container.
//!
//! ```text
//! fedcore-dataset v1 d_feat=<d> n_classes=<c> n_clients=<n>
//! provenance <json>
//! client <id> <m>
//! <label> <f_1> ... <f_d>        (m lines)
//! ...
//! test <count>
//! <label> <f_1> ... <f_d>        (count lines)
//! ```
//!
//! Reals are written in shortest round-trip form, so reading a written file
//! reproduces the dataset exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::{ClientDataset, FederatedDataset, Provenance, SampleSet};
use crate::{Error, Result};

const HEADER: &str = "fedcore-dataset v1";

fn write_rows(out: &mut String, set: &SampleSet) {
    for s in set.iter() {
        write!(out, "{}", s.label).unwrap();
        for v in s.features {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
}

pub fn write_container(ds: &FederatedDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "{HEADER} d_feat={} n_classes={} n_clients={}",
        ds.d_feat,
        ds.n_classes,
        ds.n_clients()
    )
    .unwrap();
    writeln!(out, "provenance {}", serde_json::to_string(&ds.provenance)?).unwrap();
    for c in &ds.clients {
        writeln!(out, "client {} {}", c.client_id, c.m()).unwrap();
        write_rows(&mut out, &c.samples);
    }
    writeln!(out, "test {}", ds.test_set.len()).unwrap();
    write_rows(&mut out, &ds.test_set);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Container("unexpected end of file".into()))
    }
}

fn bad(line: usize, what: &str) -> Error {
    Error::Container(format!("line {line}: {what}"))
}

fn keyed(line: usize, tok: Option<&str>, key: &str) -> Result<usize> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(line, &format!("expected {key}<int>")))
}

fn read_rows(lines: &mut Lines, count: usize, d_feat: usize, n_classes: usize) -> Result<SampleSet> {
    let mut set = SampleSet::new(d_feat);
    let mut feats = Vec::with_capacity(d_feat);
    for _ in 0..count {
        let (ln, l) = lines.next()?;
        let mut toks = l.split_ascii_whitespace();
        let label: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(ln, "bad label"))?;
        if label >= n_classes {
            return Err(bad(ln, "label out of range"));
        }
        feats.clear();
        for t in toks {
            feats.push(t.parse::<f64>().map_err(|_| bad(ln, "bad feature"))?);
        }
        if feats.len() != d_feat {
            return Err(bad(ln, "wrong feature count"));
        }
        set.push(&feats, label);
    }
    Ok(set)
}

pub fn read_container(path: &Path) -> Result<FederatedDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (ln, header) = lines.next()?;
    let rest = header
        .strip_prefix(HEADER)
        .ok_or_else(|| bad(ln, "missing header"))?;
    let mut toks = rest.split_ascii_whitespace();
    let d_feat = keyed(ln, toks.next(), "d_feat=")?;
    let n_classes = keyed(ln, toks.next(), "n_classes=")?;
    let n_clients = keyed(ln, toks.next(), "n_clients=")?;

    let (ln, prov) = lines.next()?;
    let provenance: Provenance = prov
        .strip_prefix("provenance ")
        .ok_or_else(|| bad(ln, "missing provenance"))
        .and_then(|j| serde_json::from_str(j).map_err(|e| bad(ln, &e.to_string())))?;

    let mut clients = Vec::with_capacity(n_clients);
    for _ in 0..n_clients {
        let (ln, l) = lines.next()?;
        let mut toks = l.split_ascii_whitespace();
        if toks.next() != Some("client") {
            return Err(bad(ln, "expected client block"));
        }
        let mut num = || -> Result<usize> {
            toks.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad(ln, "bad client header"))
        };
        let (client_id, m) = (num()?, num()?);
        let samples = read_rows(&mut lines, m, d_feat, n_classes)?;
        clients.push(ClientDataset { client_id, samples });
    }
    let (ln, l) = lines.next()?;
    let count: usize = l
        .strip_prefix("test ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad(ln, "expected test block"))?;
    let test_set = read_rows(&mut lines, count, d_feat, n_classes)?;

    let ds = FederatedDataset {
        clients,
        test_set,
        n_classes,
        d_feat,
        provenance,
    };
    ds.validate()?;
    Ok(ds)
}
