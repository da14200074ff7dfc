//! SVMLight / LETOR ranking files.
//!
//! One document per line: `<grade> qid:<id> <index>:<value> ... [# comment]`.
//! Feature indices are 1-based; features absent from a line are 0. Lines of
//! the same `qid` form one query, in order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fultr_core::dataset::{Dataset, Document, Query};

#[derive(Debug, thiserror::Error)]
pub enum SvmlightError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("file contains no documents")]
    Empty,
    #[error(transparent)]
    Dataset(#[from] fultr_core::Error),
}

/// Grade and `(1-based index, value)` pairs of one line.
type SparseDoc = (u8, Vec<(usize, f64)>);

fn parse_err(line: usize, message: impl Into<String>) -> SvmlightError {
    SvmlightError::Parse { line, message: message.into() }
}

pub fn parse_svmlight<R: BufRead>(reader: R) -> Result<Dataset, SvmlightError> {
    let mut queries: Vec<(u64, Vec<SparseDoc>)> = Vec::new();
    let mut by_id: HashMap<u64, usize> = HashMap::new();
    let mut dim = 0usize;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: u8 = label_tok.parse().map_err(|_| parse_err(line_no, format!("invalid grade `{label_tok}`")))?;
        let qid_tok = tokens.next().ok_or_else(|| parse_err(line_no, "missing qid"))?;
        let qid: u64 = qid_tok
            .strip_prefix("qid:")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(line_no, format!("invalid qid `{qid_tok}`")))?;

        let mut features = Vec::new();
        for tok in tokens {
            let (idx, val) =
                tok.split_once(':').ok_or_else(|| parse_err(line_no, format!("invalid feature `{tok}`")))?;
            let idx: usize = idx.parse().map_err(|_| parse_err(line_no, format!("invalid feature index `{idx}`")))?;
            if idx == 0 {
                return Err(parse_err(line_no, "feature indices start at 1"));
            }
            let val: f64 = val.parse().map_err(|_| parse_err(line_no, format!("invalid feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(parse_err(line_no, format!("non-finite feature value `{val}`")));
            }
            dim = dim.max(idx);
            features.push((idx, val));
        }

        let slot = *by_id.entry(qid).or_insert_with(|| {
            queries.push((qid, Vec::new()));
            queries.len() - 1
        });
        queries[slot].1.push((label, features));
    }

    if queries.is_empty() {
        return Err(SvmlightError::Empty);
    }
    let queries = queries
        .into_iter()
        .map(|(id, docs)| Query {
            id,
            docs: docs
                .into_iter()
                .map(|(label, sparse)| {
                    let mut features = vec![0.0; dim];
                    for (idx, val) in sparse {
                        features[idx - 1] = val;
                    }
                    Document { features, label }
                })
                .collect(),
        })
        .collect();
    Ok(Dataset::new(queries, dim)?)
}

pub fn load_svmlight(path: &Path) -> Result<Dataset, SvmlightError> {
    parse_svmlight(BufReader::new(File::open(path)?))
}

/// Writes every feature explicitly so that the dimension survives a round
/// trip even when trailing features are zero.
pub fn write_svmlight<W: Write>(data: &Dataset, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    for q in &data.queries {
        for d in &q.docs {
            write!(out, "{} qid:{}", d.label, q.id)?;
            for (j, v) in d.features.iter().enumerate() {
                write!(out, " {}:{}", j + 1, v)?;
            }
            writeln!(out)?;
        }
    }
    out.flush()
}

pub fn save_svmlight(data: &Dataset, path: &Path) -> io::Result<()> {
    write_svmlight(data, File::create(path)?)
}
