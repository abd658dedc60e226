//! The `nrm-stream` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error (unreadable or
//! inconsistent corpus, checkpoint or labels), 4 numerical failure.

use std::convert::Infallible;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nrm_core::adf::StreamEvent;
use nrm_core::corpus::split;
use nrm_core::eval::{
    grid_cells, heldout_loglik, replicate_order, reorder, run_replicate, score_cell, select_best,
    summarize_replicates, CurveProbe, EvalReport, ReplicateOutcome,
};
use nrm_core::gibbs::{gibbs_heldout_loglik, run_chain, ChainResult};
use nrm_core::{ContributionRecorder, Corpus, EpState, ModelState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ckpt::{self, CheckpointFileError};
use crate::config::{Config, ConfigError, GenKind, PriorSection};
use crate::gen::{gen_bars, gen_pitman_yor_mixture};
use crate::report::{self, ChainRow, CurveRow, EpochRow, GridRow, ReplicateRow, SummaryRow, SweepRow};
use crate::uci::{read_uci_file, write_uci_file, UciError};

#[derive(Debug, Parser)]
#[command(name = "nrm-stream", version, about = "Streaming inference for NGGP mixtures of multinomials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sets every seed (generator, split, permutations, chains).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for grid search, replicates and Gibbs chains.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (bars or Pitman-Yor) and its label sidecar.
    Gen(Overrides),
    /// Stream the training corpus once, writing a checkpoint and a curve.
    Fit(Overrides),
    /// Refine a fitted checkpoint with multi-pass EP.
    Ep(Overrides),
    /// Run the collapsed Gibbs baseline.
    Gibbs(Overrides),
    /// Select a and tau on a training subset.
    Gridsearch(Overrides),
    /// Score a checkpoint on a test corpus.
    Eval(Overrides),
}

#[derive(Debug, clap::Args)]
pub struct Overrides {
    /// Config overrides such as `prior.sigma=0.5`.
    #[arg(value_name = "SECTION.KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<nrm_core::Error> for CliError {
    fn from(e: nrm_core::Error) -> Self {
        match e {
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            nrm_core::Error::Config(_) => CliError::Config(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointFileError> for CliError {
    fn from(e: CheckpointFileError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn read_corpus(path: &Path) -> Result<Corpus, CliError> {
    let (corpus, rep) = read_uci_file(path).map_err(|e| match e {
        UciError::Io(e) => io_err(path)(e),
        e => CliError::Data(format!("{}: {e}", path.display())),
    })?;
    if rep.dropped_empty > 0 {
        eprintln!("{}: dropped {} empty documents", path.display(), rep.dropped_empty);
    }
    if rep.nnz_mismatch() {
        eprintln!("{}: header declares {} entries, found {}", path.display(), rep.declared_nnz, rep.found_nnz);
    }
    if corpus.is_empty() {
        return Err(CliError::Data(format!("{}: no documents", path.display())));
    }
    Ok(corpus)
}

/// Training and test sets: `io.test` when given, otherwise a seeded split
/// of `io.corpus`.
pub fn load_data(cfg: &Config) -> Result<(Corpus, Corpus), CliError> {
    let path = cfg.io.corpus.as_deref().ok_or_else(|| CliError::Config("io.corpus is not set".into()))?;
    let corpus = read_corpus(path)?;
    match cfg.io.test.as_deref() {
        Some(tp) => {
            let test = read_corpus(tp)?;
            if test.vocab_size != corpus.vocab_size {
                return Err(CliError::Data(format!(
                    "{} has vocabulary size {}, {} has {}",
                    tp.display(),
                    test.vocab_size,
                    path.display(),
                    corpus.vocab_size
                )));
            }
            Ok((corpus, test))
        }
        None => Ok(split(&corpus, cfg.eval.test_frac, cfg.eval.seed)?),
    }
}

fn out_path(cfg: &Config, file: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.io.out_dir).map_err(io_err(&cfg.io.out_dir))?;
    Ok(cfg.io.out_dir.join(file))
}

fn write_rows<T: serde::Serialize>(cfg: &Config, file: &str, command: &str, rows: &[T]) -> Result<PathBuf, CliError> {
    let path = out_path(cfg, file)?;
    report::write_csv(&path, command, cfg.eval.seed, rows).map_err(io_err(&path))?;
    Ok(path)
}

fn checkpoint_out(cfg: &Config, default: &str) -> Result<PathBuf, CliError> {
    match &cfg.io.checkpoint_out {
        Some(p) => Ok(p.clone()),
        None => out_path(cfg, default),
    }
}

fn require_checkpoint_in(cfg: &Config) -> Result<&Path, CliError> {
    cfg.io.checkpoint_in.as_deref().ok_or_else(|| CliError::Config("io.checkpoint_in is not set".into()))
}

fn check_vocab(model: &ModelState, corpus: &Corpus) -> Result<(), CliError> {
    let v = model.config().vocab_size;
    if v != corpus.vocab_size {
        return Err(CliError::Data(format!("checkpoint vocabulary size {v} differs from corpus ({})", corpus.vocab_size)));
    }
    Ok(())
}

fn summary_line(label: &str, r: &EvalReport) -> String {
    let mut s = format!(
        "{label}: heldout_loglik={:.6} K={} expected_K={:.3}",
        r.heldout_loglik, r.n_clusters, r.expected_k
    );
    if let (Some(m), Some(se)) = (r.mean(), r.std_error()) {
        s.push_str(&format!(" replicates={} mean={m:.6} se={se:.6}", r.replicates.len()));
    }
    s
}

pub fn gen(cfg: &Config) -> Result<String, CliError> {
    let path = cfg.io.corpus.as_deref().ok_or_else(|| CliError::Config("io.corpus (output path) is not set".into()))?;
    let g = &cfg.gen;
    let n = cfg.gen_n_docs();
    let corpus = match g.kind {
        GenKind::Bars => gen_bars(n, g.words_per_doc, g.baseline, g.seed)?,
        GenKind::PitmanYor => gen_pitman_yor_mixture(
            n,
            g.discount,
            g.concentration,
            g.vocab_size,
            g.alpha_cluster,
            g.words_per_doc,
            g.seed,
        )?,
    };
    let labels = cfg.io.labels.clone().unwrap_or_else(|| labels_path(path));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_uci_file(&corpus, path, Some(&labels)).map_err(io_err(path))?;
    let k = corpus.labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |&m| m as usize + 1));
    Ok(format!(
        "gen: wrote {} documents (V={}, {k} components) to {} and {}",
        corpus.len(),
        corpus.vocab_size,
        path.display(),
        labels.display()
    ))
}

/// Default label sidecar next to a corpus file.
pub fn labels_path(corpus: &Path) -> PathBuf {
    let mut s = corpus.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

fn replicate_outcomes(cfg: &Config, train: &Corpus, test: &Corpus, epochs: usize) -> Result<Vec<ReplicateOutcome>, CliError> {
    let mut pipeline = cfg.pipeline(train.vocab_size);
    pipeline.ep_epochs = epochs;
    let params = cfg.params()?;
    let outcomes: Vec<_> = (0..cfg.eval.replicates)
        .into_par_iter()
        .map(|r| {
            let docs = reorder(&train.docs, &replicate_order(train.len(), cfg.eval.seed, r));
            run_replicate(&pipeline, params, &docs, &test.docs)
        })
        .collect();
    Ok(outcomes.into_iter().collect::<nrm_core::Result<Vec<_>>>()?)
}

fn write_replicates(cfg: &Config, command: &str, outcomes: &[ReplicateOutcome]) -> Result<PathBuf, CliError> {
    let rows: Vec<ReplicateRow> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| ReplicateRow {
            replicate: i,
            adf_loglik: o.adf_loglik,
            ep_loglik: o.ep_loglik,
            k: o.n_clusters,
            expected_k: o.expected_k,
        })
        .collect();
    write_rows(cfg, "replicates.csv", command, &rows)
}

pub fn fit(cfg: &Config) -> Result<String, CliError> {
    let (train, test) = load_data(cfg)?;
    let (mut model, mut recorder) = match cfg.io.checkpoint_in.as_deref() {
        Some(p) => {
            let d = ckpt::load(p)?;
            check_vocab(&d.model, &train)?;
            (d.model, d.contributions.map(ContributionRecorder::resume))
        }
        None => {
            let model = ModelState::new(cfg.adf_config(train.vocab_size)?)?;
            (model, cfg.model.record_contributions.then(ContributionRecorder::default))
        }
    };
    let merge_every = cfg.merge_every();
    let mut probe = CurveProbe::new(&test.docs, cfg.probe_cadence(), merge_every);
    let start = model.n_seen();
    model
        .run_stream(train.docs.iter().cloned().map(Ok::<_, Infallible>), merge_every, |m, ev| {
            probe.observe(m, &ev);
            if let Some(r) = recorder.as_mut() {
                r.observe(m, &ev);
            }
            if let StreamEvent::Step { .. } = ev {
                if let Some(c) = cfg.probe_cadence() {
                    if m.n_seen() % c == 0 {
                        eprintln!("n_seen={} K={}", m.n_seen(), m.clusters().len());
                    }
                }
            }
        })
        .map_err(|e| match e {
            nrm_core::adf::StreamError::Model { index, error } => {
                let mut c = CliError::from(error);
                match &mut c {
                    CliError::Config(s) | CliError::Data(s) | CliError::Numerical(s) => {
                        *s = format!("document {}: {s}", start + index as u64 + 1)
                    }
                }
                c
            }
            nrm_core::adf::StreamError::Source { error, .. } => match error {},
        })?;
    let mut report = probe.finish(&model)?;

    let ckpt_path = checkpoint_out(cfg, "model.ckpt")?;
    ckpt::save(&ckpt_path, &model, recorder.as_ref().map(|r| r.contributions()))?;
    let rows: Vec<CurveRow> = report.curve.iter().map(CurveRow::from).collect();
    let curve_path = write_rows(cfg, "curve.csv", "fit", &rows)?;

    let mut out = Vec::new();
    if cfg.eval.replicates > 1 && cfg.io.checkpoint_in.is_none() {
        let outcomes = replicate_outcomes(cfg, &train, &test, 0)?;
        let path = write_replicates(cfg, "fit", &outcomes)?;
        report.replicates = summarize_replicates(&outcomes).replicates;
        out.push(format!("replicates written to {}", path.display()));
    }
    out.insert(0, summary_line("fit", &report));
    out.push(format!("checkpoint {} (n_seen={}), curve {}", ckpt_path.display(), model.n_seen(), curve_path.display()));
    Ok(out.join("\n"))
}

pub fn ep(cfg: &Config) -> Result<String, CliError> {
    let (train, test) = load_data(cfg)?;
    let in_path = require_checkpoint_in(cfg)?;
    let d = ckpt::load(in_path)?;
    check_vocab(&d.model, &train)?;
    let contributions = d.contributions.ok_or_else(|| {
        CliError::Data(format!(
            "{} has no contribution store; refit with `nrm-stream fit` and model.record_contributions = true",
            in_path.display()
        ))
    })?;
    let mut state = EpState::from_adf(d.model, contributions, &train.docs).map_err(|e| {
        CliError::Data(format!(
            "{e}; EP needs the exact training set the checkpoint was fitted on (same io.corpus, eval.test_frac and seed)"
        ))
    })?;
    let adf = heldout_loglik(state.model(), &test.docs)?;
    let order: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::new();
    for epoch in 1..=cfg.ep.epochs {
        let delta = state.sweep(&train.docs, &order)?;
        rows.push(EpochRow {
            epoch,
            delta,
            loglik: heldout_loglik(state.model(), &test.docs)?,
            k: state.model().clusters().len(),
        });
        if delta < cfg.ep.delta_tol {
            break;
        }
    }
    let report = EvalReport {
        heldout_loglik: rows.last().map_or(adf, |r| r.loglik),
        n_clusters: state.model().clusters().len(),
        expected_k: state.model().expected_k(),
        curve: Vec::new(),
        replicates: Vec::new(),
    };
    let ckpt_path = checkpoint_out(cfg, "model_ep.ckpt")?;
    ckpt::save(&ckpt_path, state.model(), Some(state.contributions()))?;
    let csv = write_rows(cfg, "ep.csv", "ep", &rows)?;
    Ok(format!(
        "{}\nadf_loglik={adf:.6} epochs={}\ncheckpoint {}, epochs {}",
        summary_line("ep", &report),
        rows.len(),
        ckpt_path.display(),
        csv.display()
    ))
}

pub fn gibbs(cfg: &Config) -> Result<String, CliError> {
    let (train, test) = load_data(cfg)?;
    let configs = (0..cfg.gibbs.chains)
        .map(|c| cfg.gibbs_config(train.vocab_size, c))
        .collect::<Result<Vec<_>, _>>()?;
    let chains: Vec<nrm_core::Result<ChainResult>> =
        configs.par_iter().map(|gc| run_chain(&train.docs, gc, |_, _| {})).collect();
    let chains = chains.into_iter().collect::<nrm_core::Result<Vec<_>>>()?;
    let params = cfg.params()?;
    let (alpha0, v) = (cfg.model.alpha0, train.vocab_size);

    let mut sweeps = Vec::new();
    let mut per_chain = Vec::new();
    for (i, ch) in chains.iter().enumerate() {
        sweeps.extend(ch.stats.iter().map(|s| SweepRow::new(i, s)));
        let mean_k = ch.samples.iter().map(|s| s.sizes.len() as f64).sum::<f64>() / ch.samples.len() as f64;
        per_chain.push(ChainRow {
            chain: i,
            loglik: gibbs_heldout_loglik(&ch.samples, &test.docs, &params, alpha0, v)?,
            samples: ch.samples.len(),
            mean_k,
        });
    }
    let pooled: Vec<_> = chains.iter().flat_map(|c| c.samples.iter().cloned()).collect();
    let loglik = gibbs_heldout_loglik(&pooled, &test.docs, &params, alpha0, v)?;
    let mean_k = pooled.iter().map(|s| s.sizes.len() as f64).sum::<f64>() / pooled.len() as f64;
    let diag = write_rows(cfg, "gibbs.csv", "gibbs", &sweeps)?;
    let chain_csv = write_rows(cfg, "gibbs_chains.csv", "gibbs", &per_chain)?;
    Ok(format!(
        "gibbs: heldout_loglik={loglik:.6} mean_K={mean_k:.3} chains={} samples={}\ndiagnostics {}, chains {}",
        chains.len(),
        pooled.len(),
        diag.display(),
        chain_csv.display()
    ))
}

/// Grid-search subset: a seeded `eval.grid_frac` share of the training set,
/// split again by `eval.test_frac`.
pub fn grid_subset(cfg: &Config, train: &Corpus) -> Result<(Corpus, Corpus), CliError> {
    let n = train.len();
    let m = ((cfg.eval.grid_frac * n as f64).ceil() as usize).clamp(2.min(n), n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.eval.seed));
    let mut keep = idx[..m].to_vec();
    keep.sort_unstable();
    Ok(split(&train.select(&keep), cfg.eval.test_frac, cfg.eval.seed)?)
}

pub fn gridsearch(cfg: &Config) -> Result<String, CliError> {
    let (train, _) = load_data(cfg)?;
    let (sub_train, sub_test) = grid_subset(cfg, &train)?;
    let pipeline = cfg.pipeline(train.vocab_size);
    let sigma = cfg.prior.sigma;
    let table: Vec<_> = grid_cells(&cfg.eval.a_grid, &cfg.eval.tau_grid, sigma)
        .into_par_iter()
        .map(|(a, tau)| score_cell(&pipeline, a, tau, sigma, &sub_train.docs, &sub_test.docs))
        .collect();
    for c in &table {
        if let Some(e) = &c.error {
            eprintln!("cell a={} tau={:?}: {e}", c.a, c.tau);
        }
    }
    let rows: Vec<GridRow> = table.iter().map(GridRow::from).collect();
    let grid_csv = write_rows(cfg, "grid.csv", "gridsearch", &rows)?;
    let best = select_best(table).map_err(|e| CliError::Numerical(e.to_string()))?;

    #[derive(serde::Serialize)]
    struct Best {
        prior: PriorSection,
    }
    let best_prior = PriorSection { a: best.best_a, sigma, tau: best.best_tau.unwrap_or(cfg.prior.tau) };
    let best_path = out_path(cfg, "best_params.toml")?;
    let body = toml::to_string(&Best { prior: best_prior }).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&best_path, format!("{}\n{body}", report::header_line("gridsearch", cfg.eval.seed)))
        .map_err(io_err(&best_path))?;
    let tau = best.best_tau.map_or("-".to_string(), |t| t.to_string());
    Ok(format!(
        "gridsearch: best a={} tau={tau} over {} cells ({} train / {} test docs)\ntable {}, best params {}",
        best.best_a,
        rows.len(),
        sub_train.len(),
        sub_test.len(),
        grid_csv.display(),
        best_path.display()
    ))
}

pub fn eval(cfg: &Config) -> Result<String, CliError> {
    let in_path = require_checkpoint_in(cfg)?;
    let model = ckpt::load(in_path)?.model;
    let test = match (cfg.io.test.as_deref(), cfg.io.corpus.is_some()) {
        (Some(p), _) => read_corpus(p)?,
        (None, true) => load_data(cfg)?.1,
        (None, false) => return Err(CliError::Config("set io.test (or io.corpus to use its test split)".into())),
    };
    check_vocab(&model, &test)?;
    let row = SummaryRow {
        loglik: heldout_loglik(&model, &test.docs)?,
        k: model.clusters().len(),
        expected_k: model.expected_k(),
        test_docs: test.len(),
    };
    let path = write_rows(cfg, "eval.csv", "eval", std::slice::from_ref(&row))?;
    Ok(format!(
        "eval: heldout_loglik={:.6} K={} expected_K={:.3} test_docs={}\nreport {}",
        row.loglik,
        row.k,
        row.expected_k,
        row.test_docs,
        path.display()
    ))
}

/// Runs a parsed command line and returns the stdout summary.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let overrides = match &cli.command {
        Command::Gen(o) | Command::Fit(o) | Command::Ep(o) | Command::Gibbs(o) | Command::Gridsearch(o) | Command::Eval(o) => {
            &o.sets
        }
    };
    let mut cfg = Config::load(cli.config.as_deref(), overrides)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let seed = cfg.eval.seed;
    let body = match cli.command {
        Command::Gen(_) => gen(&cfg)?,
        Command::Fit(_) => fit(&cfg)?,
        Command::Ep(_) => ep(&cfg)?,
        Command::Gibbs(_) => gibbs(&cfg)?,
        Command::Gridsearch(_) => gridsearch(&cfg)?,
        Command::Eval(_) => eval(&cfg)?,
    };
    Ok(format!("seed={seed}\n{body}"))
}
