//! Run configuration: a TOML file with one table per section. Unknown keys
//! are rejected. Every field has a default, so an empty file is valid.
//!
//! ```toml
//! [prior]
//! a = 10.0
//! sigma = 0.5
//! tau = 1.0
//!
//! [model]
//! merge_every = 0   # 0 disables merge moves
//! ```

use std::path::{Path, PathBuf};

use nrm_core::eval::{Pipeline, DEFAULT_A_GRID, DEFAULT_TAU_GRID};
use nrm_core::gibbs::GibbsConfig;
use nrm_core::{AdfConfig, ExpectedK, NggpParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("override {0:?} must look like section.key=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub a: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self { a: 1.0, sigma: 0.0, tau: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectedKMode {
    Recursion,
    ClusterCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub alpha0: f64,
    /// Defaults to `max(sigma, 0.01)`.
    pub epsilon: Option<f64>,
    pub merge_threshold: f64,
    /// Documents between merge passes; 0 disables merging.
    pub merge_every: u64,
    pub expected_k: ExpectedKMode,
    /// Keep per-document assignments in the checkpoint (needed by `ep`).
    pub record_contributions: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            epsilon: None,
            merge_threshold: 0.98,
            merge_every: 1000,
            expected_k: ExpectedKMode::Recursion,
            record_contributions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpSection {
    pub epochs: usize,
    pub delta_tol: f64,
}

impl Default for EpSection {
    fn default() -> Self {
        Self { epochs: 50, delta_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsSection {
    pub sweeps: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for GibbsSection {
    fn default() -> Self {
        Self { sweeps: 215, burn_in: 165, chains: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Training corpus (UCI format); split with `eval.test_frac` unless
    /// `test` is given.
    pub corpus: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Label sidecar written by `gen`; defaults to `<corpus>.labels`.
    pub labels: Option<PathBuf>,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    /// Directory for CSV reports.
    pub out_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            corpus: None,
            test: None,
            labels: None,
            checkpoint_in: None,
            checkpoint_out: None,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub test_frac: f64,
    /// Held-out probe every this many training documents; 0 probes only at
    /// the end.
    pub probe_cadence: u64,
    pub replicates: usize,
    pub seed: u64,
    /// Fraction of the training set used by `gridsearch`.
    pub grid_frac: f64,
    pub a_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            test_frac: 0.2,
            probe_cadence: 0,
            replicates: 1,
            seed: 0,
            grid_frac: 0.1,
            a_grid: DEFAULT_A_GRID.to_vec(),
            tau_grid: DEFAULT_TAU_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    Bars,
    PitmanYor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub kind: GenKind,
    /// Defaults to 200 for bars and 10000 for Pitman-Yor.
    pub n_docs: Option<usize>,
    pub words_per_doc: usize,
    pub baseline: f64,
    pub discount: f64,
    pub concentration: f64,
    pub vocab_size: usize,
    pub alpha_cluster: f64,
    pub seed: u64,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            kind: GenKind::Bars,
            n_docs: None,
            words_per_doc: 50,
            baseline: 0.1,
            discount: 0.75,
            concentration: 1.0,
            vocab_size: 100,
            alpha_cluster: 0.75,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub prior: PriorSection,
    pub model: ModelSection,
    pub ep: EpSection,
    pub gibbs: GibbsSection,
    pub io: IoSection,
    pub eval: EvalSection,
    pub gen: GenSection,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl Config {
    /// Parses `text` and applies `section.key=value` overrides (values use
    /// TOML syntax; bare words are taken as strings).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let (section, field) = key.trim().split_once('.').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                return Err(ConfigError::Invalid(format!("{section} is not a section")));
            };
            sec.insert(field.to_string(), parse_value(value.trim()));
        }
        let config: Config = toml::Value::Table(table).try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// Sets every seed (generator, split, replicates, chains).
    pub fn set_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.eval.seed = seed;
        self.gibbs.seed = seed;
    }

    pub fn params(&self) -> Result<NggpParams, ConfigError> {
        NggpParams::new(self.prior.a, self.prior.sigma, self.prior.tau).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn gen_n_docs(&self) -> usize {
        self.gen.n_docs.unwrap_or(match self.gen.kind {
            GenKind::Bars => 200,
            GenKind::PitmanYor => 10_000,
        })
    }

    pub fn merge_every(&self) -> Option<u64> {
        (self.model.merge_every > 0).then_some(self.model.merge_every)
    }

    pub fn probe_cadence(&self) -> Option<u64> {
        (self.eval.probe_cadence > 0).then_some(self.eval.probe_cadence)
    }

    pub fn pipeline(&self, vocab_size: usize) -> Pipeline {
        Pipeline {
            alpha0: self.model.alpha0,
            vocab_size,
            epsilon: self.model.epsilon,
            merge_threshold: self.model.merge_threshold,
            merge_every: self.merge_every(),
            expected_k: match self.model.expected_k {
                ExpectedKMode::Recursion => ExpectedK::Recursion,
                ExpectedKMode::ClusterCount => ExpectedK::ClusterCount,
            },
            ep_epochs: 0,
            ep_delta_tol: self.ep.delta_tol,
        }
    }

    pub fn adf_config(&self, vocab_size: usize) -> Result<AdfConfig, ConfigError> {
        let cfg = self.pipeline(vocab_size).adf_config(self.params()?);
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn gibbs_config(&self, vocab_size: usize, chain: usize) -> Result<GibbsConfig, ConfigError> {
        Ok(GibbsConfig {
            params: self.params()?,
            alpha0: self.model.alpha0,
            vocab_size,
            sweeps: self.gibbs.sweeps,
            burn_in: self.gibbs.burn_in,
            seed: self.gibbs.seed.wrapping_add(chain as u64),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.params()?;
        if !(self.model.alpha0 > 0.0) {
            return bad(format!("model.alpha0 must be positive, got {}", self.model.alpha0));
        }
        if let Some(eps) = self.model.epsilon {
            if !(eps >= self.prior.sigma && eps < 1.0) {
                return bad(format!("model.epsilon must lie in [prior.sigma, 1), got {eps}"));
            }
        }
        if !(0.0..=1.0).contains(&self.model.merge_threshold) {
            return bad(format!("model.merge_threshold must lie in [0, 1], got {}", self.model.merge_threshold));
        }
        if !(self.eval.test_frac > 0.0 && self.eval.test_frac < 1.0) {
            return bad(format!("eval.test_frac must lie in (0, 1), got {}", self.eval.test_frac));
        }
        if !(self.eval.grid_frac > 0.0 && self.eval.grid_frac <= 1.0) {
            return bad(format!("eval.grid_frac must lie in (0, 1], got {}", self.eval.grid_frac));
        }
        if self.eval.replicates == 0 {
            return bad("eval.replicates must be at least 1".into());
        }
        if self.eval.a_grid.is_empty() || (self.prior.sigma > 0.0 && self.eval.tau_grid.is_empty()) {
            return bad("grid search needs a non-empty a_grid (and tau_grid when sigma > 0)".into());
        }
        if self.gibbs.burn_in >= self.gibbs.sweeps {
            return bad(format!(
                "gibbs.burn_in ({}) must be smaller than gibbs.sweeps ({})",
                self.gibbs.burn_in, self.gibbs.sweeps
            ));
        }
        if self.gibbs.chains == 0 {
            return bad("gibbs.chains must be at least 1".into());
        }
        Ok(())
    }
}
