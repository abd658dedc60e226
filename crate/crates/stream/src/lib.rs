//! File formats, synthetic corpora, configuration and the `nrm-stream`
//! command line built on `nrm-core`.

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod gen;
pub mod report;
pub mod uci;
