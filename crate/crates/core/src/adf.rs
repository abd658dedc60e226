//! Single-pass streaming inference.
//!
//! Each document goes through one predictive step (weights from the cluster
//! soft masses and the auxiliary-variable mode), one local update (soft
//! assignment against every cluster posterior plus a fresh component), a
//! threshold test for instantiating the fresh component, and one weighted
//! conjugate update of every cluster.

use alloc::format;
use alloc::vec::Vec;

use crate::math::{cosine, normalize_log_weights};
use crate::obs::log_prior_predictive;
use crate::prior::{expected_k, log_cluster_weight, log_new_cluster_weight, optimize_u, AuxiliaryU};
use crate::{DirichletPosterior, Error, NggpParams, Result, SparseDoc};

/// How `E[K]` in the auxiliary-variable density is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedK {
    /// `K - Σ_k Π_i (1 - q̂_ik)`, maintained incrementally.
    Recursion,
    /// `E[K] ≈ K`.
    ClusterCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdfConfig {
    pub params: NggpParams,
    /// Symmetric Dirichlet concentration of the base measure.
    pub alpha0: f64,
    pub vocab_size: usize,
    /// New clusters are created only when their probability exceeds this.
    pub epsilon: f64,
    /// Cosine similarity above which two clusters are merged.
    pub merge_threshold: f64,
    pub expected_k: ExpectedK,
}

impl AdfConfig {
    pub fn new(params: NggpParams, alpha0: f64, vocab_size: usize) -> Self {
        Self {
            params,
            alpha0,
            vocab_size,
            epsilon: Self::default_epsilon(&params),
            merge_threshold: 0.98,
            expected_k: ExpectedK::Recursion,
        }
    }

    pub fn default_epsilon(params: &NggpParams) -> f64 {
        params.sigma().max(0.01)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::Config(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocabulary must be non-empty".into()));
        }
        if !(self.epsilon >= self.params.sigma() && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in [sigma, 1) = [{}, 1), got {}",
                self.params.sigma(),
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.merge_threshold) {
            return Err(Error::Config(format!(
                "merge threshold must lie in [0, 1], got {}",
                self.merge_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// Stable label, strictly increasing in creation order.
    pub id: u64,
    /// `S_k = Σ_i q̂(z_ik)`.
    pub s_mass: f64,
    pub posterior: DirichletPosterior,
    /// `Π_i (1 - q̂(z_ik))`, used for the expected number of clusters.
    pub unseen_product: f64,
}

/// Result of folding one document into the model.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Soft assignment aligned with [`ModelState::clusters`] after the step.
    pub assignment: Vec<f64>,
    /// Id of the cluster created by this step, if any.
    pub created: Option<u64>,
    /// Normalized probability of a fresh cluster before thresholding.
    pub new_cluster_prob: f64,
    pub u_hat: Option<f64>,
    pub expected_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub(crate) config: AdfConfig,
    pub(crate) clusters: Vec<ClusterState>,
    pub(crate) n_seen: u64,
    pub(crate) next_id: u64,
    pub(crate) aux: Option<AuxiliaryU>,
}

/// Events reported by [`ModelState::run_stream`].
#[derive(Debug, Clone, PartialEq)]
pub enum StreamEvent<'a> {
    Step { index: usize, outcome: &'a StepOutcome },
    Merged { merges: &'a [(u64, u64)] },
}

/// Failure inside [`ModelState::run_stream`], tagged with the record index.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamError<E> {
    Source { index: usize, error: E },
    Model { index: usize, error: Error },
}

impl<E: core::fmt::Display> core::fmt::Display for StreamError<E> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            StreamError::Source { index, error } => write!(f, "record {index}: {error}"),
            StreamError::Model { index, error } => write!(f, "record {index}: {error}"),
        }
    }
}

impl<E: core::fmt::Debug + core::fmt::Display> core::error::Error for StreamError<E> {}

impl ModelState {
    pub fn new(config: AdfConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, clusters: Vec::new(), n_seen: 0, next_id: 0, aux: None })
    }

    pub fn config(&self) -> &AdfConfig {
        &self.config
    }

    pub fn params(&self) -> &NggpParams {
        &self.config.params
    }

    pub fn clusters(&self) -> &[ClusterState] {
        &self.clusters
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Auxiliary-variable mode used by the most recent step.
    pub fn cached_aux(&self) -> Option<&AuxiliaryU> {
        self.aux.as_ref()
    }

    pub fn cluster_masses(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.s_mass).collect()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        // Clusters are kept in increasing id order.
        self.clusters.binary_search_by_key(&id, |c| c.id).ok()
    }

    /// `E[K]` as seen by the next step.
    pub fn expected_k(&self) -> f64 {
        match self.config.expected_k {
            ExpectedK::Recursion => {
                let prods: Vec<f64> = self.clusters.iter().map(|c| c.unseen_product).collect();
                expected_k(&prods)
            }
            ExpectedK::ClusterCount => self.clusters.len() as f64,
        }
    }

    /// Auxiliary-variable mode for `n` summarized observations, or `None` for
    /// the Dirichlet process (whose predictive rule does not use it) and for
    /// an empty summary.
    pub(crate) fn aux_for(&self, n: u64, expected_k: f64) -> Result<Option<AuxiliaryU>> {
        if self.config.params.is_dirichlet() || n == 0 {
            return Ok(None);
        }
        optimize_u(n, expected_k, &self.config.params).map(Some)
    }

    /// Auxiliary-variable mode the next step would use; evaluation freezes
    /// the predictive rule at this value.
    pub fn current_aux(&self) -> Result<Option<AuxiliaryU>> {
        self.aux_for(self.n_seen, self.expected_k())
    }

    /// Normalized soft assignment over the current clusters plus a fresh one.
    pub(crate) fn assignment_probs(&self, doc: &SparseDoc, u_hat: Option<f64>) -> Result<Vec<f64>> {
        doc.check_vocab(self.config.vocab_size)?;
        let p = &self.config.params;
        let v = self.config.vocab_size;
        let mut logw = Vec::with_capacity(self.clusters.len() + 1);
        for c in &self.clusters {
            let prior = log_cluster_weight(c.s_mass, p);
            logw.push(if prior == f64::NEG_INFINITY {
                prior
            } else {
                prior + c.posterior.log_predictive_unchecked(doc, v)
            });
        }
        logw.push(
            log_new_cluster_weight(p, u_hat) + log_prior_predictive(doc, self.config.alpha0, v)?,
        );
        normalize_log_weights(&mut logw);
        Ok(logw)
    }

    /// Applies the threshold rule to `probs` (length `K+1`) and folds the
    /// document into every cluster with its final weight. Returns the final
    /// assignment and the id of a created cluster.
    pub(crate) fn commit(&mut self, doc: &SparseDoc, mut probs: Vec<f64>) -> (Vec<f64>, Option<u64>) {
        let q_new = *probs.last().expect("fresh-cluster slot");
        let kept_mass = 1.0 - q_new;
        let mut created = None;
        if q_new > self.config.epsilon || !(kept_mass > 0.0) {
            let id = self.next_id;
            self.next_id += 1;
            self.clusters.push(ClusterState {
                id,
                s_mass: 0.0,
                posterior: DirichletPosterior::new(self.config.alpha0),
                unseen_product: 1.0,
            });
            created = Some(id);
        } else {
            probs.pop();
            let z: f64 = probs.iter().sum();
            for q in probs.iter_mut() {
                *q /= z;
            }
        }
        for (c, &q) in self.clusters.iter_mut().zip(&probs) {
            if q > 0.0 {
                c.posterior.update(doc, q);
                c.s_mass += q;
            }
        }
        (probs, created)
    }

    /// Folds one document into the model.
    pub fn adf_step(&mut self, doc: &SparseDoc) -> Result<StepOutcome> {
        let ek = self.expected_k();
        let aux = self.aux_for(self.n_seen, ek)?;
        let u_hat = aux.map(|a| a.u_hat);
        let probs = self.assignment_probs(doc, u_hat)?;
        let new_cluster_prob = *probs.last().expect("fresh-cluster slot");
        let (assignment, created) = self.commit(doc, probs);
        for (c, &q) in self.clusters.iter_mut().zip(&assignment) {
            c.unseen_product *= (1.0 - q).max(0.0);
        }
        self.n_seen += 1;
        if aux.is_some() {
            self.aux = aux;
        }
        Ok(StepOutcome { assignment, created, new_cluster_prob, u_hat, expected_k: self.expected_k() })
    }

    /// Folds a stream of documents, merging every `merge_every` documents
    /// (by global count) and once at the end when merging is enabled.
    pub fn run_stream<I, E, F>(
        &mut self,
        docs: I,
        merge_every: Option<u64>,
        mut observe: F,
    ) -> core::result::Result<(), StreamError<E>>
    where
        I: IntoIterator<Item = core::result::Result<SparseDoc, E>>,
        F: FnMut(&ModelState, StreamEvent<'_>),
    {
        let mut processed = 0usize;
        let mut since_merge = false;
        for (index, item) in docs.into_iter().enumerate() {
            let doc = item.map_err(|error| StreamError::Source { index, error })?;
            let outcome = self.adf_step(&doc).map_err(|error| StreamError::Model { index, error })?;
            observe(self, StreamEvent::Step { index, outcome: &outcome });
            processed += 1;
            since_merge = true;
            if let Some(every) = merge_every {
                if every > 0 && self.n_seen % every == 0 {
                    let merges = self.merge_clusters();
                    since_merge = false;
                    observe(self, StreamEvent::Merged { merges: &merges });
                }
            }
        }
        if processed > 0 && since_merge && merge_every.is_some() {
            let merges = self.merge_clusters();
            observe(self, StreamEvent::Merged { merges: &merges });
        }
        Ok(())
    }

    /// Convenience wrapper over [`Self::run_stream`] for in-memory documents.
    pub fn fit_all<'a, I>(&mut self, docs: I, merge_every: Option<u64>) -> Result<()>
    where
        I: IntoIterator<Item = &'a SparseDoc>,
    {
        self.run_stream(docs.into_iter().map(|d| Ok::<_, Error>(d.clone())), merge_every, |_, _| {})
            .map_err(|e| match e {
                StreamError::Source { error, .. } | StreamError::Model { error, .. } => error,
            })
    }

    /// Merges every pair of clusters whose posterior-mean word distributions
    /// have cosine similarity at least `merge_threshold`, greedily in order of
    /// decreasing similarity. The cluster with the larger mass (lower id on
    /// ties) survives and keeps its id. Returns `(survivor, absorbed)` pairs.
    pub fn merge_clusters(&mut self) -> Vec<(u64, u64)> {
        let v = self.config.vocab_size;
        let thetas: Vec<Vec<f64>> = self.clusters.iter().map(|c| c.posterior.expected_theta(v)).collect();
        let mut pairs = Vec::new();
        for i in 0..thetas.len() {
            for j in (i + 1)..thetas.len() {
                let sim = cosine(&thetas[i], &thetas[j]);
                if sim >= self.config.merge_threshold {
                    pairs.push((sim, i, j));
                }
            }
        }
        pairs.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then((self.clusters[x.1].id, self.clusters[x.2].id).cmp(&(self.clusters[y.1].id, self.clusters[y.2].id)))
        });

        let mut alive = alloc::vec![true; self.clusters.len()];
        let mut merges = Vec::new();
        for (_, i, j) in pairs {
            if !(alive[i] && alive[j]) {
                continue;
            }
            let (ci, cj) = (&self.clusters[i], &self.clusters[j]);
            let i_survives = ci.s_mass > cj.s_mass || (ci.s_mass == cj.s_mass && ci.id < cj.id);
            let (keep, gone) = if i_survives { (i, j) } else { (j, i) };
            let absorbed = self.clusters[gone].clone();
            let survivor = &mut self.clusters[keep];
            survivor.s_mass += absorbed.s_mass;
            survivor.unseen_product *= absorbed.unseen_product;
            survivor.posterior.absorb(&absorbed.posterior);
            alive[gone] = false;
            merges.push((survivor.id, absorbed.id));
        }
        let mut flags = alive.into_iter();
        self.clusters.retain(|_| flags.next().unwrap_or(true));
        merges
    }

    /// `|Σ_k S_k - n|`.
    pub fn mass_residual(&self) -> f64 {
        let total: f64 = self.clusters.iter().map(|c| c.s_mass).sum();
        (total - self.n_seen as f64).abs()
    }

    /// Posterior-mean word distribution of every cluster.
    pub fn expected_thetas(&self) -> Vec<Vec<f64>> {
        self.clusters.iter().map(|c| c.posterior.expected_theta(self.config.vocab_size)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(pairs: &[(u32, u32)]) -> SparseDoc {
        SparseDoc::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn ig_state(v: usize) -> ModelState {
        let params = NggpParams::new(1.0, 0.5, 1.0).unwrap();
        ModelState::new(AdfConfig::new(params, 0.5, v)).unwrap()
    }

    #[test]
    fn first_document_opens_a_cluster() {
        let mut s = ig_state(4);
        let out = s.adf_step(&doc(&[(0, 3), (2, 1)])).unwrap();
        assert_eq!(out.assignment, [1.0]);
        assert_eq!(out.created, Some(0));
        assert_eq!(s.clusters()[0].s_mass, 1.0);
        assert_eq!(s.clusters()[0].unseen_product, 0.0);
        assert_eq!(s.n_seen(), 1);
    }

    #[test]
    fn vanishing_innovation_keeps_identical_docs_together() {
        let params = NggpParams::new(1e-9, 0.0, 1.0).unwrap();
        let mut cfg = AdfConfig::new(params, 0.5, 3);
        cfg.epsilon = 0.01;
        let mut s = ModelState::new(cfg).unwrap();
        let d = doc(&[(0, 2), (1, 1)]);
        s.adf_step(&d).unwrap();
        let out = s.adf_step(&d).unwrap();
        assert_eq!(s.clusters().len(), 1);
        assert!(out.assignment[0] > 1.0 - 10.0 * 0.01);
    }

    #[test]
    fn empty_document_and_vocab_rejected() {
        let mut s = ig_state(2);
        assert!(s.adf_step(&doc(&[(5, 1)])).is_err());
        assert_eq!(s.n_seen(), 0);
    }

    #[test]
    fn config_validation() {
        let params = NggpParams::new(1.0, 0.5, 1.0).unwrap();
        let mut cfg = AdfConfig::new(params, 0.5, 4);
        assert_eq!(cfg.epsilon, 0.5);
        cfg.epsilon = 0.3;
        assert!(ModelState::new(cfg.clone()).is_err());
        cfg.epsilon = 1.0;
        assert!(ModelState::new(cfg.clone()).is_err());
        let dp = AdfConfig::new(NggpParams::dirichlet(1.0).unwrap(), 0.5, 4);
        assert_eq!(dp.epsilon, 0.01);
    }

    #[test]
    fn empty_stream_is_noop() {
        let mut s = ig_state(3);
        s.adf_step(&doc(&[(0, 1)])).unwrap();
        let before = s.clone();
        s.run_stream(core::iter::empty::<core::result::Result<SparseDoc, ()>>(), Some(10), |_, _| {})
            .unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn stream_source_errors_carry_index() {
        let mut s = ig_state(3);
        let items = alloc::vec![Ok(doc(&[(0, 1)])), Ok(doc(&[(1, 1)])), Err("bad record")];
        let err = s.run_stream(items, None, |_, _| {}).unwrap_err();
        assert_eq!(err, StreamError::Source { index: 2, error: "bad record" });
        assert_eq!(s.n_seen(), 2);
    }

    fn cluster_with(id: u64, s: f64, counts: &[(u32, u32)]) -> ClusterState {
        let mut posterior = DirichletPosterior::new(0.5);
        posterior.update(&doc(counts), s);
        ClusterState { id, s_mass: s, posterior, unseen_product: 0.5 }
    }

    #[test]
    fn merge_identical_clusters() {
        let mut s = ig_state(4);
        s.clusters = alloc::vec![cluster_with(0, 2.0, &[(0, 3), (1, 1)]), cluster_with(1, 2.0, &[(0, 3), (1, 1)])];
        s.next_id = 2;
        s.n_seen = 4;
        let merges = s.merge_clusters();
        assert_eq!(merges, [(0, 1)]);
        assert_eq!(s.clusters().len(), 1);
        assert_eq!(s.clusters()[0].s_mass, 4.0);
        assert_eq!(s.clusters()[0].unseen_product, 0.25);
        assert!((s.clusters()[0].posterior.count(0) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn merge_keeps_larger_cluster_id() {
        let mut s = ig_state(4);
        s.clusters = alloc::vec![cluster_with(0, 1.0, &[(2, 5)]), cluster_with(1, 3.0, &[(2, 5)])];
        let merges = s.merge_clusters();
        assert_eq!(merges, [(1, 0)]);
        assert_eq!(s.clusters()[0].id, 1);
    }

    #[test]
    fn orthogonal_clusters_stay() {
        let mut s = ig_state(4);
        s.config.alpha0 = 1e-6;
        s.clusters = alloc::vec![cluster_with(0, 5.0, &[(0, 10), (1, 10)]), cluster_with(1, 5.0, &[(2, 10), (3, 10)])];
        for c in s.clusters.iter_mut() {
            c.posterior = DirichletPosterior::from_parts(1e-6, c.posterior.counts().to_vec(), c.posterior.count_total());
        }
        assert!(s.merge_clusters().is_empty());
        assert_eq!(s.clusters().len(), 2);
    }
}
