//! Held-out predictive log-likelihood, probe curves, permutation replicates
//! and hyperparameter grid search.
//!
//! The held-out score of a test set is
//!
//! ```text
//! Σ_d log Σ_{k=1}^{K+1} w_k · p(x_d | cluster k)
//! ```
//!
//! where `w` is the model's predictive distribution (including the fresh
//! cluster slot, which is scored with the prior predictive) with the
//! auxiliary variable frozen at its final training value. Test documents
//! never update the model. The multinomial coefficient of each document is
//! omitted, so scores are comparable across priors on the same corpus but not
//! across tokenizations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adf::{AdfConfig, ExpectedK, ModelState, StreamError, StreamEvent};
use crate::ep::EpState;
use crate::math::{log_sum_exp, sqrt};
use crate::obs::log_prior_predictive;
use crate::prior::log_predictive_weights;
use crate::{DirichletPosterior, Error, NggpParams, Result, SparseDoc};

/// Log predictive probability of `doc` under a mixture whose clusters carry
/// the given masses and posteriors, plus a fresh-cluster slot.
pub fn log_mixture_predictive(
    doc: &SparseDoc,
    masses: &[f64],
    posteriors: &[DirichletPosterior],
    u_hat: Option<f64>,
    p: &NggpParams,
    alpha0: f64,
    vocab_size: usize,
) -> Result<f64> {
    debug_assert_eq!(masses.len(), posteriors.len());
    doc.check_vocab(vocab_size)?;
    let mut terms = log_predictive_weights(masses, u_hat, p);
    let norm = log_sum_exp(&terms);
    for (t, post) in terms.iter_mut().zip(posteriors) {
        if *t > f64::NEG_INFINITY {
            *t += post.log_predictive_unchecked(doc, vocab_size) - norm;
        }
    }
    let last = terms.len() - 1;
    terms[last] += log_prior_predictive(doc, alpha0, vocab_size)? - norm;
    Ok(log_sum_exp(&terms))
}

/// Held-out log-likelihood of `test` under `model`.
pub fn heldout_loglik(model: &ModelState, test: &[SparseDoc]) -> Result<f64> {
    let aux = model.current_aux()?;
    let u_hat = aux.map(|a| a.u_hat);
    let cfg = model.config();
    let masses = model.cluster_masses();
    let posteriors: Vec<DirichletPosterior> = model.clusters().iter().map(|c| c.posterior.clone()).collect();
    let mut total = 0.0;
    for d in test {
        total += log_mixture_predictive(d, &masses, &posteriors, u_hat, &cfg.params, cfg.alpha0, cfg.vocab_size)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub n_seen: u64,
    pub heldout_loglik: f64,
    pub n_clusters: usize,
    pub expected_k: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub heldout_loglik: f64,
    pub n_clusters: usize,
    pub expected_k: f64,
    pub curve: Vec<CurvePoint>,
    /// Held-out score of each permutation replicate.
    pub replicates: Vec<f64>,
}

impl EvalReport {
    pub fn mean(&self) -> Option<f64> {
        if self.replicates.is_empty() {
            return None;
        }
        Some(self.replicates.iter().sum::<f64>() / self.replicates.len() as f64)
    }

    /// Sample standard deviation over `√R`; absent for fewer than two
    /// replicates.
    pub fn std_error(&self) -> Option<f64> {
        let r = self.replicates.len();
        if r < 2 {
            return None;
        }
        let mean = self.mean()?;
        let var = self.replicates.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1) as f64;
        Some(sqrt(var) / sqrt(r as f64))
    }
}

fn probe(model: &ModelState, test: &[SparseDoc]) -> Result<CurvePoint> {
    Ok(CurvePoint {
        n_seen: model.n_seen(),
        heldout_loglik: heldout_loglik(model, test)?,
        n_clusters: model.clusters().len(),
        expected_k: model.expected_k(),
    })
}

/// Probes the held-out score from [`ModelState::run_stream`] events every
/// `cadence` documents, after any merge due at the same count. The model is
/// never updated with test documents.
#[derive(Debug, Clone)]
pub struct CurveProbe<'t> {
    test: &'t [SparseDoc],
    cadence: Option<u64>,
    merge_every: Option<u64>,
    curve: Vec<CurvePoint>,
    failure: Option<Error>,
}

impl<'t> CurveProbe<'t> {
    pub fn new(test: &'t [SparseDoc], cadence: Option<u64>, merge_every: Option<u64>) -> Self {
        Self { test, cadence, merge_every, curve: Vec::new(), failure: None }
    }

    fn push(&mut self, model: &ModelState) {
        match probe(model, self.test) {
            Ok(point) => match self.curve.last_mut() {
                Some(last) if last.n_seen == point.n_seen => *last = point,
                _ => self.curve.push(point),
            },
            Err(e) => self.failure = Some(e),
        }
    }

    pub fn observe(&mut self, model: &ModelState, event: &StreamEvent<'_>) {
        if self.failure.is_some() {
            return;
        }
        let every = |c: Option<u64>| matches!(c, Some(c) if c > 0 && model.n_seen() % c == 0);
        let take = match event {
            StreamEvent::Step { .. } => every(self.cadence) && !every(self.merge_every),
            StreamEvent::Merged { .. } => every(self.cadence),
        };
        if take {
            self.push(model);
        }
    }

    /// Adds the terminal point and assembles the report.
    pub fn finish(mut self, model: &ModelState) -> Result<EvalReport> {
        if self.failure.is_none() {
            self.push(model);
        }
        if let Some(e) = self.failure {
            return Err(e);
        }
        let last = *self.curve.last().expect("terminal point");
        Ok(EvalReport {
            heldout_loglik: last.heldout_loglik,
            n_clusters: last.n_clusters,
            expected_k: last.expected_k,
            curve: self.curve,
            replicates: Vec::new(),
        })
    }
}

/// Streams `train` into `model`, probing the held-out score every `cadence`
/// documents and once at the end.
pub fn eval_curve(
    model: &mut ModelState,
    train: &[SparseDoc],
    test: &[SparseDoc],
    cadence: Option<u64>,
    merge_every: Option<u64>,
) -> Result<EvalReport> {
    let mut probe = CurveProbe::new(test, cadence, merge_every);
    model
        .run_stream(train.iter().map(|d| Ok::<_, Error>(d.clone())), merge_every, |m, ev| probe.observe(m, &ev))
        .map_err(|e| match e {
            StreamError::Source { error, .. } | StreamError::Model { error, .. } => error,
        })?;
    probe.finish(model)
}

/// Everything besides the prior needed to fit and score one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub alpha0: f64,
    pub vocab_size: usize,
    /// `None` selects `max(σ, 0.01)`.
    pub epsilon: Option<f64>,
    pub merge_threshold: f64,
    pub merge_every: Option<u64>,
    pub expected_k: ExpectedK,
    pub ep_epochs: usize,
    pub ep_delta_tol: f64,
}

impl Pipeline {
    pub fn new(alpha0: f64, vocab_size: usize) -> Self {
        Self {
            alpha0,
            vocab_size,
            epsilon: None,
            merge_threshold: 0.98,
            merge_every: Some(1000),
            expected_k: ExpectedK::Recursion,
            ep_epochs: 0,
            ep_delta_tol: 1e-4,
        }
    }

    pub fn adf_config(&self, params: NggpParams) -> AdfConfig {
        let mut cfg = AdfConfig::new(params, self.alpha0, self.vocab_size);
        if let Some(eps) = self.epsilon {
            cfg.epsilon = eps;
        }
        cfg.merge_threshold = self.merge_threshold;
        cfg.expected_k = self.expected_k;
        cfg
    }
}

/// Scores of one training order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub adf_loglik: f64,
    /// Present when the pipeline runs EP epochs.
    pub ep_loglik: Option<f64>,
    pub n_clusters: usize,
    pub expected_k: f64,
}

impl ReplicateOutcome {
    pub fn final_loglik(&self) -> f64 {
        self.ep_loglik.unwrap_or(self.adf_loglik)
    }
}

/// Fits on `train` in the given order (ADF, then EP if configured) and scores
/// `test`.
pub fn run_replicate(
    pipeline: &Pipeline,
    params: NggpParams,
    train: &[SparseDoc],
    test: &[SparseDoc],
) -> Result<ReplicateOutcome> {
    let cfg = pipeline.adf_config(params);
    if pipeline.ep_epochs == 0 {
        let mut model = ModelState::new(cfg)?;
        model.fit_all(train, pipeline.merge_every)?;
        return Ok(ReplicateOutcome {
            adf_loglik: heldout_loglik(&model, test)?,
            ep_loglik: None,
            n_clusters: model.clusters().len(),
            expected_k: model.expected_k(),
        });
    }
    let mut ep = EpState::fit_adf(cfg, train, pipeline.merge_every)?;
    let adf_loglik = heldout_loglik(ep.model(), test)?;
    ep.run(train, pipeline.ep_epochs, pipeline.ep_delta_tol)?;
    Ok(ReplicateOutcome {
        adf_loglik,
        ep_loglik: Some(heldout_loglik(ep.model(), test)?),
        n_clusters: ep.model().clusters().len(),
        expected_k: ep.model().expected_k(),
    })
}

/// Training order of replicate `r`.
pub fn replicate_order(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64)));
    idx
}

pub fn reorder(docs: &[SparseDoc], order: &[usize]) -> Vec<SparseDoc> {
    order.iter().map(|&i| docs[i].clone()).collect()
}

/// Runs `r` independently permuted training orders. The report's scalar
/// fields are replicate means (cluster count rounded).
pub fn permutation_replicates(
    pipeline: &Pipeline,
    params: NggpParams,
    train: &[SparseDoc],
    test: &[SparseDoc],
    r: usize,
    seed: u64,
) -> Result<EvalReport> {
    let outcomes = (0..r)
        .map(|i| run_replicate(pipeline, params, &reorder(train, &replicate_order(train.len(), seed, i)), test))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_replicates(&outcomes))
}

pub fn summarize_replicates(outcomes: &[ReplicateOutcome]) -> EvalReport {
    let r = outcomes.len().max(1) as f64;
    let replicates: Vec<f64> = outcomes.iter().map(|o| o.final_loglik()).collect();
    let clusters = outcomes.iter().map(|o| o.n_clusters as f64).sum::<f64>() / r;
    EvalReport {
        heldout_loglik: replicates.iter().sum::<f64>() / r,
        n_clusters: libm::round(clusters) as usize,
        expected_k: outcomes.iter().map(|o| o.expected_k).sum::<f64>() / r,
        curve: Vec::new(),
        replicates,
    }
}

pub const DEFAULT_A_GRID: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
pub const DEFAULT_TAU_GRID: [f64; 5] = [0.1, 1.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub a: f64,
    /// `None` for the Dirichlet process, whose predictive rule ignores `τ`.
    pub tau: Option<f64>,
    /// `-inf` when the cell failed.
    pub loglik: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best_a: f64,
    pub best_tau: Option<f64>,
    pub table: Vec<GridCell>,
}

/// Grid cells in table order (`a` major). For `σ = 0` the `τ` column
/// collapses.
pub fn grid_cells(a_grid: &[f64], tau_grid: &[f64], sigma: f64) -> Vec<(f64, Option<f64>)> {
    let mut out = Vec::new();
    for &a in a_grid {
        if sigma == 0.0 {
            out.push((a, None));
        } else {
            for &tau in tau_grid {
                out.push((a, Some(tau)));
            }
        }
    }
    out
}

pub fn cell_params(a: f64, tau: Option<f64>, sigma: f64) -> Result<NggpParams> {
    match tau {
        Some(t) => NggpParams::new(a, sigma, t),
        None => NggpParams::new(a, sigma, 1.0),
    }
}

/// Fits and scores one grid cell; failures score `-inf`.
pub fn score_cell(
    pipeline: &Pipeline,
    a: f64,
    tau: Option<f64>,
    sigma: f64,
    train: &[SparseDoc],
    test: &[SparseDoc],
) -> GridCell {
    let result = cell_params(a, tau, sigma).and_then(|p| run_replicate(pipeline, p, train, test));
    match result {
        Ok(o) if o.final_loglik().is_finite() => GridCell { a, tau, loglik: o.final_loglik(), error: None },
        Ok(o) => GridCell {
            a,
            tau,
            loglik: f64::NEG_INFINITY,
            error: Some(format!("non-finite score {}", o.final_loglik())),
        },
        Err(e) => GridCell { a, tau, loglik: f64::NEG_INFINITY, error: Some(format!("{e}")) },
    }
}

/// Picks the highest-scoring cell (first in table order on ties).
pub fn select_best(table: Vec<GridCell>) -> Result<GridResult> {
    let mut best: Option<&GridCell> = None;
    for c in &table {
        if c.loglik > f64::NEG_INFINITY && best.is_none_or(|b| c.loglik > b.loglik) {
            best = Some(c);
        }
    }
    let best = best.ok_or_else(|| {
        let first = table.iter().find_map(|c| c.error.clone()).unwrap_or_else(|| "empty grid".into());
        Error::Domain(format!("every grid cell failed: {first}"))
    })?;
    Ok(GridResult { best_a: best.a, best_tau: best.tau, table: table.clone() })
}

/// Sequential grid search over `a_grid × tau_grid`.
pub fn grid_search(
    pipeline: &Pipeline,
    sigma: f64,
    a_grid: &[f64],
    tau_grid: &[f64],
    train: &[SparseDoc],
    test: &[SparseDoc],
) -> Result<GridResult> {
    let table = grid_cells(a_grid, tau_grid, sigma)
        .into_iter()
        .map(|(a, tau)| score_cell(pipeline, a, tau, sigma, train, test))
        .collect();
    select_best(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{exp, ln};

    fn doc(pairs: &[(u32, u32)]) -> SparseDoc {
        SparseDoc::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn fitted(sigma: f64) -> (ModelState, Vec<SparseDoc>) {
        let p = NggpParams::new(1.0, sigma, 1.0).unwrap();
        let mut m = ModelState::new(AdfConfig::new(p, 0.5, 4)).unwrap();
        let train = alloc::vec![doc(&[(0, 3)]), doc(&[(0, 2), (1, 1)]), doc(&[(3, 4)]), doc(&[(2, 1), (3, 2)])];
        m.fit_all(&train, None).unwrap();
        (m, train)
    }

    #[test]
    fn single_cluster_expansion() {
        let p = NggpParams::dirichlet(2.0).unwrap();
        let mut m = ModelState::new(AdfConfig::new(p, 0.5, 3)).unwrap();
        let d0 = doc(&[(0, 2), (1, 1)]);
        m.adf_step(&d0).unwrap();
        assert_eq!(m.clusters().len(), 1);
        let t = doc(&[(0, 1), (2, 1)]);
        let post = &m.clusters()[0].posterior;
        let w1 = 1.0 / 3.0;
        let w_new = 2.0 / 3.0;
        let want = ln(w1 * exp(post.log_predictive(&t, 3).unwrap())
            + w_new * exp(log_prior_predictive(&t, 0.5, 3).unwrap()));
        let got = heldout_loglik(&m, &[t]).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn duplicate_test_set_doubles() {
        let (m, _) = fitted(0.5);
        let test = alloc::vec![doc(&[(0, 1), (3, 1)]), doc(&[(1, 2)])];
        let one = heldout_loglik(&m, &test).unwrap();
        let mut twice = test.clone();
        twice.extend(test.iter().cloned());
        let two = heldout_loglik(&m, &twice).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-10 * one.abs());
    }

    #[test]
    fn curve_cadence_points() {
        let (_, train) = fitted(0.0);
        let test = alloc::vec![doc(&[(0, 1)])];
        let p = NggpParams::dirichlet(1.0).unwrap();
        let mut m = ModelState::new(AdfConfig::new(p, 0.5, 4)).unwrap();
        let r = eval_curve(&mut m, &train[..3], &test, Some(1), None).unwrap();
        assert_eq!(r.curve.iter().map(|c| c.n_seen).collect::<Vec<_>>(), alloc::vec![1, 2, 3]);
        let mut m = ModelState::new(AdfConfig::new(p, 0.5, 4)).unwrap();
        let r = eval_curve(&mut m, &train, &test, Some(100), Some(2)).unwrap();
        assert_eq!(r.curve.len(), 1);
        assert_eq!(r.curve[0].n_seen, 4);
    }

    #[test]
    fn single_replicate_has_no_std_error() {
        let (_, train) = fitted(0.0);
        let pipe = Pipeline::new(0.5, 4);
        let p = NggpParams::dirichlet(1.0).unwrap();
        let r = permutation_replicates(&pipe, p, &train, &train[..1], 1, 3).unwrap();
        assert_eq!(r.replicates.len(), 1);
        assert!(r.std_error().is_none());
        let again = permutation_replicates(&pipe, p, &train, &train[..1], 1, 3).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(grid_cells(&DEFAULT_A_GRID, &DEFAULT_TAU_GRID, 0.5).len(), 20);
        assert_eq!(grid_cells(&DEFAULT_A_GRID, &DEFAULT_TAU_GRID, 0.0).len(), 4);
        let (_, train) = fitted(0.5);
        let pipe = Pipeline::new(0.5, 4);
        let g = grid_search(&pipe, 0.5, &[3.0], &[2.0], &train, &train[..2]).unwrap();
        assert_eq!((g.best_a, g.best_tau), (3.0, Some(2.0)));
        assert_eq!(g.table.len(), 1);
    }

    #[test]
    fn failed_cell_scores_neg_inf() {
        let (_, train) = fitted(0.5);
        let pipe = Pipeline::new(0.5, 4);
        let c = score_cell(&pipe, -1.0, Some(1.0), 0.5, &train, &train);
        assert_eq!(c.loglik, f64::NEG_INFINITY);
        assert!(c.error.is_some());
        let g = grid_search(&pipe, 0.5, &[-1.0, 2.0], &[1.0], &train, &train).unwrap();
        assert_eq!(g.best_a, 2.0);
    }
}
