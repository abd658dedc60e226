//! CSV reports. Every file starts with a `# nrm-stream <command> seed=<n>`
//! line; read them back with `#` as the comment character.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nrm_core::eval::{CurvePoint, GridCell};
use nrm_core::gibbs::SweepStats;
use serde::Serialize;

pub fn header_line(command: &str, seed: u64) -> String {
    format!("# nrm-stream {command} seed={seed}")
}

/// Writes `rows` as CSV after the header comment.
pub fn write_csv<T: Serialize>(path: &Path, command: &str, seed: u64, rows: &[T]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header_line(command, seed))?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Reads a report written by [`write_csv`], skipping the header comment.
pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> csv::Result<Vec<T>> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?.deserialize().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CurveRow {
    pub n_seen: u64,
    pub loglik: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "expected_K")]
    pub expected_k: f64,
}

impl From<&CurvePoint> for CurveRow {
    fn from(p: &CurvePoint) -> Self {
        Self { n_seen: p.n_seen, loglik: p.heldout_loglik, k: p.n_clusters, expected_k: p.expected_k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct GridRow {
    pub a: f64,
    /// Empty for the Dirichlet process.
    pub tau: Option<f64>,
    pub loglik: f64,
    pub error: Option<String>,
}

impl From<&GridCell> for GridRow {
    fn from(c: &GridCell) -> Self {
        Self { a: c.a, tau: c.tau, loglik: c.loglik, error: c.error.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub adf_loglik: f64,
    pub ep_loglik: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "expected_K")]
    pub expected_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub delta: f64,
    pub loglik: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub chain: usize,
    pub sweep: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub log_joint: f64,
    pub u: f64,
}

impl SweepRow {
    pub fn new(chain: usize, s: &SweepStats) -> Self {
        Self { chain, sweep: s.sweep, k: s.n_clusters, log_joint: s.log_joint, u: s.u }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ChainRow {
    pub chain: usize,
    pub loglik: f64,
    pub samples: usize,
    pub mean_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SummaryRow {
    pub loglik: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "expected_K")]
    pub expected_k: f64,
    pub test_docs: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let rows = vec![
            GridRow { a: 1.0, tau: None, loglik: -3.5, error: None },
            GridRow { a: 10.0, tau: Some(0.1), loglik: f64::NEG_INFINITY, error: Some("bad, cell".into()) },
        ];
        write_csv(&path, "gridsearch", 7, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# nrm-stream gridsearch seed=7\na,tau,loglik,error\n"));
        assert_eq!(read_csv::<GridRow>(&path).unwrap(), rows);
    }
}
