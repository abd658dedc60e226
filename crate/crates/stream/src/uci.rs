//! UCI bag-of-words text format.
//!
//! Three header lines (number of documents `D`, vocabulary size `W`, number
//! of non-zero entries `NNZ`) followed by `docID wordID count` triples with
//! 1-based ids. The writer emits triples sorted by document, then word, so
//! parse → write is byte-stable.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nrm_core::{Corpus, SparseDoc};

#[derive(Debug, thiserror::Error)]
pub enum UciError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Non-fatal observations made while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParseReport {
    /// Declared documents that had no words and were dropped.
    pub dropped_empty: usize,
    pub declared_nnz: u64,
    pub found_nnz: u64,
}

impl ParseReport {
    pub fn nnz_mismatch(&self) -> bool {
        self.declared_nnz != self.found_nnz
    }
}

fn header<R: BufRead>(lines: &mut io::Lines<R>, line: &mut usize, what: &str) -> Result<u64, UciError> {
    loop {
        *line += 1;
        let text = lines
            .next()
            .ok_or_else(|| UciError::Parse { line: *line, msg: format!("missing header line ({what})") })??;
        let t = text.trim();
        if t.is_empty() {
            continue;
        }
        return t
            .parse()
            .map_err(|_| UciError::Parse { line: *line, msg: format!("expected {what}, found {t:?}") });
    }
}

pub fn parse_uci_bow<R: BufRead>(reader: R) -> Result<(Corpus, ParseReport), UciError> {
    let mut lines = reader.lines();
    let mut line = 0;
    let n_docs = header(&mut lines, &mut line, "document count")? as usize;
    let vocab = header(&mut lines, &mut line, "vocabulary size")? as usize;
    let declared_nnz = header(&mut lines, &mut line, "non-zero count")?;
    let mut docs: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); n_docs];
    let mut found_nnz = 0u64;
    for text in lines {
        line += 1;
        let text = text?;
        let t = text.trim();
        if t.is_empty() {
            continue;
        }
        let bad = |msg: String| UciError::Parse { line, msg };
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected `docID wordID count`, found {t:?}")));
        }
        let parse = |s: &str, what: &str| s.parse::<u64>().map_err(|_| bad(format!("invalid {what} {s:?}")));
        let (d, w, c) = (parse(fields[0], "docID")?, parse(fields[1], "wordID")?, parse(fields[2], "count")?);
        if d == 0 || d as usize > n_docs {
            return Err(bad(format!("docID {d} outside 1..={n_docs}")));
        }
        if w == 0 || w as usize > vocab {
            return Err(bad(format!("wordID {w} outside 1..={vocab}")));
        }
        let c = u32::try_from(c).map_err(|_| bad(format!("count {c} too large")))?;
        if c == 0 {
            return Err(bad("count must be positive".into()));
        }
        let slot = docs[d as usize - 1].entry(w as u32 - 1).or_insert(0);
        *slot = slot.checked_add(c).ok_or_else(|| bad("count overflow".into()))?;
        found_nnz += 1;
    }
    let mut out = Vec::with_capacity(n_docs);
    let mut dropped_empty = 0;
    for d in docs {
        if d.is_empty() {
            dropped_empty += 1;
        } else {
            out.push(SparseDoc::new(d.into_iter().collect()).expect("sorted positive entries"));
        }
    }
    let corpus = Corpus { docs: out, vocab_size: vocab, labels: None };
    Ok((corpus, ParseReport { dropped_empty, declared_nnz, found_nnz }))
}

pub fn read_uci_file(path: &Path) -> Result<(Corpus, ParseReport), UciError> {
    parse_uci_bow(BufReader::new(File::open(path)?))
}

pub fn write_uci_bow<W: Write>(corpus: &Corpus, mut w: W) -> io::Result<()> {
    let nnz: usize = corpus.docs.iter().map(|d| d.entries().len()).sum();
    writeln!(w, "{}\n{}\n{}", corpus.docs.len(), corpus.vocab_size, nnz)?;
    for (i, d) in corpus.docs.iter().enumerate() {
        for &(word, count) in d.entries() {
            writeln!(w, "{} {} {}", i + 1, word + 1, count)?;
        }
    }
    w.flush()
}

/// Writes the corpus and, when it carries labels, a sidecar with one label
/// per line.
pub fn write_uci_file(corpus: &Corpus, path: &Path, labels_path: Option<&Path>) -> io::Result<()> {
    write_uci_bow(corpus, BufWriter::new(File::create(path)?))?;
    if let (Some(labels), Some(lp)) = (&corpus.labels, labels_path) {
        write_labels(labels, BufWriter::new(File::create(lp)?))?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(labels: &[u32], mut w: W) -> io::Result<()> {
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>, UciError> {
    let mut out = Vec::new();
    for (i, text) in BufReader::new(File::open(path)?).lines().enumerate() {
        let text = text?;
        let t = text.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|_| UciError::Parse { line: i + 1, msg: format!("invalid label {t:?}") })?);
    }
    Ok(out)
}
