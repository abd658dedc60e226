//! Collapsed Gibbs sampler for NGGP mixtures of multinomials.
//!
//! The sampler targets the joint of the hard partition and the auxiliary
//! variable `U`:
//!
//! ```text
//! p(z, U | x) ∝ U^(n-1) e^(-φ(U)) Π_k κ_{n_k}(U) · Π_k p(x_{z=k})
//! ```
//!
//! Conditioned on `U`, reassigning one document uses the partial urn weights
//! `n_k - σ` (existing) and `a (U + τ)^σ` (new). Conditioned on the
//! partition, `U` has density `∝ U^(n-1) (U+τ)^(σK - n) e^(-φ(U))`, which is
//! sampled by slice sampling on `v = log U` once per sweep.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::log_mixture_predictive;
use crate::math::{exp, ln, normalize_log_weights};
use crate::obs::log_prior_predictive;
use crate::prior::{kappa_log, laplace_exponent};
use crate::{DirichletPosterior, Error, NggpParams, Result, SparseDoc};

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsCluster {
    pub id: u64,
    pub size: usize,
    /// `Dir(α)` updated with the integer counts of the member documents.
    pub posterior: DirichletPosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub params: NggpParams,
    pub alpha0: f64,
    pub vocab_size: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl GibbsConfig {
    /// 215 sweeps of which the last 50 are kept.
    pub fn new(params: NggpParams, alpha0: f64, vocab_size: usize, seed: u64) -> Self {
        Self { params, alpha0, vocab_size, sweeps: 215, burn_in: 165, seed }
    }
}

/// Per-sweep chain diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    pub sweep: usize,
    pub n_clusters: usize,
    pub log_joint: f64,
    pub u: f64,
}

/// Retained state of one post-burn-in sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSample {
    pub sizes: Vec<usize>,
    pub posteriors: Vec<DirichletPosterior>,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub stats: Vec<SweepStats>,
    pub samples: Vec<GibbsSample>,
}

#[derive(Debug, Clone)]
pub struct GibbsState {
    params: NggpParams,
    alpha0: f64,
    vocab_size: usize,
    labels: Vec<usize>,
    clusters: Vec<GibbsCluster>,
    u: f64,
    next_id: u64,
    rng: ChaCha8Rng,
}

impl GibbsState {
    /// All documents start in a single cluster.
    pub fn new(docs: &[SparseDoc], params: NggpParams, alpha0: f64, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut posterior = DirichletPosterior::new(alpha0);
        for d in docs {
            d.check_vocab(vocab_size)?;
            posterior.update(d, 1.0);
        }
        let clusters = if docs.is_empty() {
            Vec::new()
        } else {
            alloc::vec![GibbsCluster { id: 0, size: docs.len(), posterior }]
        };
        Ok(Self {
            params,
            alpha0,
            vocab_size,
            labels: alloc::vec![0; docs.len()],
            clusters,
            u: 1.0,
            next_id: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn clusters(&self) -> &[GibbsCluster] {
        &self.clusters
    }

    /// Cluster id of every document.
    pub fn assignments(&self) -> Vec<u64> {
        self.labels.iter().map(|&k| self.clusters[k].id).collect()
    }

    /// Cluster index of every document (indices into [`Self::clusters`]).
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn remove_doc(&mut self, doc: &SparseDoc, i: usize) -> Result<()> {
        let k = self.labels[i];
        let cluster = &mut self.clusters[k];
        cluster.size -= 1;
        cluster.posterior.downdate(doc, 1.0)?;
        if cluster.size == 0 {
            let last = self.clusters.len() - 1;
            self.clusters.swap_remove(k);
            if k != last {
                for l in self.labels.iter_mut() {
                    if *l == last {
                        *l = k;
                    }
                }
            }
        }
        Ok(())
    }

    /// One systematic scan over all documents, then one update of `U`.
    pub fn sweep(&mut self, docs: &[SparseDoc]) -> Result<()> {
        let p = self.params;
        let new_log_prior = ln(p.a()) + p.sigma() * ln(self.u + p.tau());
        let mut logw = Vec::new();
        for (i, doc) in docs.iter().enumerate() {
            self.remove_doc(doc, i)?;
            logw.clear();
            for c in &self.clusters {
                logw.push(ln(c.size as f64 - p.sigma()) + c.posterior.log_predictive_unchecked(doc, self.vocab_size));
            }
            logw.push(new_log_prior + log_prior_predictive(doc, self.alpha0, self.vocab_size)?);
            normalize_log_weights(&mut logw);
            let r: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut pick = logw.len() - 1;
            for (k, &w) in logw.iter().enumerate() {
                acc += w;
                if r < acc {
                    pick = k;
                    break;
                }
            }
            if pick == self.clusters.len() {
                self.clusters.push(GibbsCluster {
                    id: self.next_id,
                    size: 0,
                    posterior: DirichletPosterior::new(self.alpha0),
                });
                self.next_id += 1;
            }
            let cluster = &mut self.clusters[pick];
            cluster.size += 1;
            cluster.posterior.update(doc, 1.0);
            self.labels[i] = pick;
        }
        if !docs.is_empty() {
            self.u = sample_u(docs.len() as u64, self.clusters.len(), self.u, &p, &mut self.rng)?;
        }
        Ok(())
    }

    /// `log p(z, U, x)` up to a constant.
    pub fn log_joint(&self) -> f64 {
        let n = self.labels.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mut acc = (n - 1.0) * ln(self.u) - laplace_exponent(self.u, &self.params);
        for c in &self.clusters {
            acc += kappa_log(c.size as f64, self.u, &self.params).unwrap_or(f64::NEG_INFINITY);
            acc += c.posterior.log_evidence(self.vocab_size);
        }
        acc
    }

    pub fn snapshot(&self) -> GibbsSample {
        GibbsSample {
            sizes: self.clusters.iter().map(|c| c.size).collect(),
            posteriors: self.clusters.iter().map(|c| c.posterior.clone()).collect(),
            u: self.u,
        }
    }

    /// Checks that every cluster posterior equals α plus the integer counts
    /// of its members.
    pub fn audit(&self, docs: &[SparseDoc]) -> Result<()> {
        let mut rebuilt: Vec<DirichletPosterior> =
            self.clusters.iter().map(|_| DirichletPosterior::new(self.alpha0)).collect();
        let mut sizes = alloc::vec![0usize; self.clusters.len()];
        for (d, &k) in docs.iter().zip(&self.labels) {
            rebuilt[k].update(d, 1.0);
            sizes[k] += 1;
        }
        for (k, c) in self.clusters.iter().enumerate() {
            if c.size != sizes[k] || c.posterior != rebuilt[k] {
                return Err(Error::Ledger(alloc::format!("gibbs cluster {} out of sync", c.id)));
            }
        }
        Ok(())
    }
}

/// `log` density of `v = log U` given `n` observations in `k` clusters.
pub fn log_u_conditional(v: f64, n: u64, k: usize, p: &NggpParams) -> f64 {
    let u = exp(v);
    let n = n as f64;
    n * v - (n - p.sigma() * k as f64) * ln(u + p.tau()) - laplace_exponent(u, p)
}

const SLICE_WIDTH: f64 = 1.0;
const SLICE_MAX_STEPS: usize = 10_000;

/// One slice-sampling update of `U` started from `current`.
pub fn sample_u<R: Rng + ?Sized>(n: u64, k: usize, current: f64, p: &NggpParams, rng: &mut R) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("sample_u requires at least one observation".into()));
    }
    let target = |v: f64| log_u_conditional(v, n, k, p);
    let v0 = ln(current);
    let level = target(v0) + ln(1.0 - rng.random::<f64>());
    let mut lo = v0 - SLICE_WIDTH * rng.random::<f64>();
    let mut hi = lo + SLICE_WIDTH;
    let mut steps = 0;
    while target(lo) > level {
        lo -= SLICE_WIDTH;
        steps += 1;
        if steps > SLICE_MAX_STEPS {
            return Err(Error::SliceOverflow { steps });
        }
    }
    while target(hi) > level {
        hi += SLICE_WIDTH;
        steps += 1;
        if steps > SLICE_MAX_STEPS {
            return Err(Error::SliceOverflow { steps });
        }
    }
    for _ in 0..SLICE_MAX_STEPS {
        let v = lo + (hi - lo) * rng.random::<f64>();
        if target(v) > level {
            return Ok(exp(v));
        }
        if v < v0 {
            lo = v;
        } else {
            hi = v;
        }
    }
    Err(Error::SliceOverflow { steps: SLICE_MAX_STEPS })
}

/// Runs one chain from the single-cluster initialization, keeping a sample
/// after every post-burn-in sweep.
pub fn run_chain<F>(docs: &[SparseDoc], config: &GibbsConfig, mut on_sweep: F) -> Result<ChainResult>
where
    F: FnMut(&GibbsState, &SweepStats),
{
    let mut state = GibbsState::new(docs, config.params, config.alpha0, config.vocab_size, config.seed)?;
    let mut stats = Vec::with_capacity(config.sweeps);
    let mut samples = Vec::new();
    for sweep in 0..config.sweeps {
        state.sweep(docs)?;
        let s = SweepStats { sweep, n_clusters: state.clusters.len(), log_joint: state.log_joint(), u: state.u };
        on_sweep(&state, &s);
        stats.push(s);
        if sweep >= config.burn_in {
            samples.push(state.snapshot());
        }
    }
    Ok(ChainResult { stats, samples })
}

/// Held-out log-likelihood of `test` averaged over retained samples. Each
/// sample scores documents with the urn weights `n_k - σ` and
/// `a (U + τ)^σ` over its clusters plus a fresh one.
pub fn gibbs_heldout_loglik(
    samples: &[GibbsSample],
    test: &[SparseDoc],
    p: &NggpParams,
    alpha0: f64,
    vocab_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("no retained samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let masses: Vec<f64> = s.sizes.iter().map(|&n| n as f64).collect();
        let mut ll = 0.0;
        for d in test {
            ll += log_mixture_predictive(d, &masses, &s.posteriors, Some(s.u), p, alpha0, vocab_size)?;
        }
        total += ll;
    }
    Ok(total / samples.len() as f64)
}
