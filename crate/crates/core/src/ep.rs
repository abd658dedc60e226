//! Multi-pass refinement of a streaming fit.
//!
//! Every training document keeps its latest soft assignment. A refinement
//! removes that contribution from the cluster statistics (the cavity),
//! recomputes the assignment against the cavity, adds it back, and prunes
//! clusters whose mass fell below the creation threshold. For conjugate
//! observations the parameter-side contribution of document `i` is exactly
//! `q̂_ik · x_i` in cluster `k`, so only the assignment is stored.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::adf::{AdfConfig, ModelState, StreamError, StreamEvent};
use crate::{Error, Result, SparseDoc};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalContribution {
    pub doc_index: usize,
    /// `(cluster id, weight)` pairs with positive weights summing to one.
    pub assignment: Vec<(u64, f64)>,
}

impl LocalContribution {
    pub fn weight(&self, id: u64) -> f64 {
        self.assignment.iter().find(|e| e.0 == id).map(|e| e.1).unwrap_or(0.0)
    }

    fn remap(&mut self, survivor: u64, absorbed: u64) {
        let moved: f64 = self.assignment.iter().filter(|e| e.0 == absorbed).map(|e| e.1).sum();
        if moved == 0.0 {
            return;
        }
        self.assignment.retain(|e| e.0 != absorbed);
        match self.assignment.iter_mut().find(|e| e.0 == survivor) {
            Some(e) => e.1 += moved,
            None => self.assignment.push((survivor, moved)),
        }
    }
}

/// Builds the contribution store from [`ModelState::run_stream`] events.
/// Merges are folded into the already-recorded contributions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContributionRecorder {
    contributions: Vec<LocalContribution>,
    offset: usize,
}

impl ContributionRecorder {
    /// Continues a store whose documents precede the next stream.
    pub fn resume(contributions: Vec<LocalContribution>) -> Self {
        let offset = contributions.len();
        Self { contributions, offset }
    }

    pub fn observe(&mut self, model: &ModelState, event: &StreamEvent<'_>) {
        match event {
            StreamEvent::Step { index, outcome } => self.contributions.push(LocalContribution {
                doc_index: self.offset + index,
                assignment: model
                    .clusters()
                    .iter()
                    .zip(&outcome.assignment)
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(c, &w)| (c.id, w))
                    .collect(),
            }),
            StreamEvent::Merged { merges } => {
                for &(survivor, absorbed) in merges.iter() {
                    for c in self.contributions.iter_mut() {
                        c.remap(survivor, absorbed);
                    }
                }
            }
        }
    }

    pub fn contributions(&self) -> &[LocalContribution] {
        &self.contributions
    }

    pub fn into_inner(self) -> Vec<LocalContribution> {
        self.contributions
    }
}

/// What happened while refining one document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineOutcome {
    pub created: Option<u64>,
    pub pruned: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpState {
    model: ModelState,
    contributions: Vec<LocalContribution>,
}

const LEDGER_TOL: f64 = 1e-6;

/// A contribution that has lost at most this much weight to pruning is left
/// short until the end of the sweep (or its next refinement). Cluster
/// statistics always equal the stored contributions either way.
const DEFER_TOL: f64 = 1e-3;

/// Shortfalls up to this size are left as rounding.
const SETTLE_TOL: f64 = 1e-12;

impl EpState {
    /// Streams `docs` once, recording each document's contribution, and
    /// returns the resulting state. Merged clusters are folded into the
    /// recorded contributions.
    pub fn fit_adf(config: AdfConfig, docs: &[SparseDoc], merge_every: Option<u64>) -> Result<Self> {
        let mut model = ModelState::new(config)?;
        let mut recorder = ContributionRecorder::default();
        model
            .run_stream(docs.iter().map(|d| Ok::<_, Error>(d.clone())), merge_every, |m, ev| {
                recorder.observe(m, &ev)
            })
            .map_err(|e| match e {
                StreamError::Source { error, .. } | StreamError::Model { error, .. } => error,
            })?;
        Self::from_adf(model, recorder.into_inner(), docs)
    }

    /// Wraps a streaming fit and the contributions recorded while producing
    /// it. Fails if the contributions do not reproduce the cluster statistics.
    pub fn from_adf(model: ModelState, contributions: Vec<LocalContribution>, docs: &[SparseDoc]) -> Result<Self> {
        if contributions.len() != docs.len() {
            return Err(Error::Ledger(format!(
                "{} contributions for {} documents",
                contributions.len(),
                docs.len()
            )));
        }
        if let Some((i, c)) = contributions.iter().enumerate().find(|(i, c)| c.doc_index != *i) {
            return Err(Error::Ledger(format!("contribution {i} refers to document {}", c.doc_index)));
        }
        if model.n_seen() != docs.len() as u64 {
            return Err(Error::Ledger(format!(
                "model has seen {} documents, corpus has {}",
                model.n_seen(),
                docs.len()
            )));
        }
        let state = Self { model, contributions };
        state.audit(docs)?;
        Ok(state)
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn into_model(self) -> ModelState {
        self.model
    }

    pub fn contributions(&self) -> &[LocalContribution] {
        &self.contributions
    }

    pub fn into_parts(self) -> (ModelState, Vec<LocalContribution>) {
        (self.model, self.contributions)
    }

    /// Checks that cluster masses and pseudocounts equal the sums of stored
    /// contributions (within `1e-6`) and that every contribution is a
    /// probability vector over live clusters.
    pub fn audit(&self, docs: &[SparseDoc]) -> Result<()> {
        let mut mass: BTreeMap<u64, f64> = BTreeMap::new();
        let mut counts: BTreeMap<u64, BTreeMap<u32, f64>> = BTreeMap::new();
        let live: BTreeSet<u64> = self.model.clusters().iter().map(|c| c.id).collect();
        for c in &self.contributions {
            let doc = docs
                .get(c.doc_index)
                .ok_or_else(|| Error::Ledger(format!("document {} missing", c.doc_index)))?;
            let total: f64 = c.assignment.iter().map(|e| e.1).sum();
            if (total - 1.0).abs() > LEDGER_TOL {
                return Err(Error::Ledger(format!("document {} assignment sums to {total}", c.doc_index)));
            }
            for &(id, w) in &c.assignment {
                if !live.contains(&id) {
                    return Err(Error::Ledger(format!("document {} references dead cluster {id}", c.doc_index)));
                }
                if w < 0.0 {
                    return Err(Error::Ledger(format!("negative weight for document {}", c.doc_index)));
                }
                *mass.entry(id).or_insert(0.0) += w;
                let slot = counts.entry(id).or_default();
                for &(word, n) in doc.entries() {
                    *slot.entry(word).or_insert(0.0) += w * f64::from(n);
                }
            }
        }
        let close = |a: f64, b: f64| (a - b).abs() <= LEDGER_TOL * a.abs().max(b.abs()).max(1.0);
        for cluster in self.model.clusters() {
            let m = mass.get(&cluster.id).copied().unwrap_or(0.0);
            if !close(m, cluster.s_mass) {
                return Err(Error::Ledger(format!(
                    "cluster {} mass {} but contributions sum to {m}",
                    cluster.id, cluster.s_mass
                )));
            }
            let empty = BTreeMap::new();
            let expected = counts.get(&cluster.id).unwrap_or(&empty);
            let stored = cluster.posterior.counts();
            for word in expected.keys().copied().chain(stored.iter().map(|e| e.0)) {
                let e = expected.get(&word).copied().unwrap_or(0.0);
                let s = cluster.posterior.count(word);
                if !close(e, s) {
                    return Err(Error::Ledger(format!(
                        "cluster {} word {word}: stored {s}, contributions give {e}",
                        cluster.id
                    )));
                }
            }
        }
        Ok(())
    }

    fn remove_contribution(&mut self, doc: &SparseDoc, i: usize) -> Result<()> {
        let old = core::mem::take(&mut self.contributions[i].assignment);
        for &(id, w) in &old {
            let k = self
                .model
                .index_of(id)
                .ok_or_else(|| Error::Ledger(format!("document {i} references dead cluster {id}")))?;
            let cluster = &mut self.model.clusters[k];
            let left = cluster.s_mass - w;
            if left < -LEDGER_TOL {
                return Err(Error::Ledger(format!("cluster {id} mass would drop to {left}")));
            }
            cluster.s_mass = left.max(0.0);
            cluster.posterior.downdate(doc, w)?;
        }
        Ok(())
    }

    /// Assigns document `i` (whose contribution is absent from the cluster
    /// statistics) against the current clusters and records the result.
    fn assign(&mut self, doc: &SparseDoc, i: usize) -> Result<Option<u64>> {
        let n_cavity = (self.contributions.len() as u64).saturating_sub(1);
        let k_live = self.model.clusters().iter().filter(|c| c.s_mass > 1e-9).count();
        let aux = self.model.aux_for(n_cavity, k_live as f64)?;
        let probs = self.model.assignment_probs(doc, aux.map(|a| a.u_hat))?;
        let (assignment, created) = self.model.commit(doc, probs);
        self.contributions[i].assignment = self
            .model
            .clusters()
            .iter()
            .zip(&assignment)
            .filter(|(_, &w)| w > 0.0)
            .map(|(c, &w)| (c.id, w))
            .collect();
        Ok(created)
    }

    /// Removes clusters with mass below the threshold and drops them from
    /// every contribution. A contribution short by more than `DEFER_TOL` is
    /// renormalized over its remaining clusters at once (the delta is added
    /// to their statistics); smaller shortfalls wait for [`Self::settle`].
    /// Documents left with no cluster are reassigned from scratch.
    fn prune(&mut self, docs: &[SparseDoc]) -> Result<Vec<u64>> {
        let eps = self.model.config().epsilon;
        let pruned: BTreeSet<u64> =
            self.model.clusters().iter().filter(|c| c.s_mass < eps).map(|c| c.id).collect();
        if pruned.is_empty() {
            return Ok(Vec::new());
        }
        let mut orphans = Vec::new();
        for j in 0..self.contributions.len() {
            if !self.contributions[j].assignment.iter().any(|e| pruned.contains(&e.0)) {
                continue;
            }
            let doc = &docs[j];
            let entry = &mut self.contributions[j];
            entry.assignment.retain(|e| !pruned.contains(&e.0));
            let kept: f64 = entry.assignment.iter().map(|e| e.1).sum();
            if !(kept > 0.0) {
                entry.assignment.clear();
                orphans.push(j);
                continue;
            }
            if kept < 1.0 - DEFER_TOL {
                Self::rescale(&mut self.model, entry, doc, kept);
            }
        }
        self.model.clusters.retain(|c| !pruned.contains(&c.id));
        for j in orphans {
            self.assign(&docs[j], j)?;
        }
        Ok(pruned.into_iter().collect())
    }

    /// Divides the weights of `entry` by `kept < 1`.
    fn rescale(model: &mut ModelState, entry: &mut LocalContribution, doc: &SparseDoc, kept: f64) {
        for e in entry.assignment.iter_mut() {
            let renormalized = e.1 / kept;
            let delta = renormalized - e.1;
            if delta <= 0.0 {
                continue;
            }
            e.1 = renormalized;
            let k = model.index_of(e.0).expect("live cluster");
            let cluster = &mut model.clusters[k];
            cluster.s_mass += delta;
            cluster.posterior.update(doc, delta);
        }
    }

    /// Renormalizes every contribution left short by pruning.
    /// [`Self::sweep`] ends with this; call it after driving
    /// [`Self::refine_doc`] directly.
    pub fn settle(&mut self, docs: &[SparseDoc]) {
        for j in 0..self.contributions.len() {
            let kept: f64 = self.contributions[j].assignment.iter().map(|e| e.1).sum();
            if kept > 0.0 && kept < 1.0 - SETTLE_TOL {
                Self::rescale(&mut self.model, &mut self.contributions[j], &docs[j], kept);
            }
        }
    }

    /// Refines the soft assignment of document `i`.
    pub fn refine_doc(&mut self, docs: &[SparseDoc], i: usize) -> Result<RefineOutcome> {
        let doc = docs
            .get(i)
            .ok_or_else(|| Error::Domain(format!("document index {i} out of range")))?;
        if i >= self.contributions.len() {
            return Err(Error::Domain(format!("no contribution stored for document {i}")));
        }
        self.remove_contribution(doc, i)?;
        let created = self.assign(doc, i)?;
        let pruned = self.prune(docs)?;
        Ok(RefineOutcome { created, pruned })
    }

    /// Refines every document in `order` and returns the largest L1 change
    /// of any cluster's posterior-mean word distribution (2 for clusters
    /// created or removed during the sweep).
    pub fn sweep(&mut self, docs: &[SparseDoc], order: &[usize]) -> Result<f64> {
        let before: BTreeMap<u64, Vec<f64>> = self
            .model
            .clusters()
            .iter()
            .zip(self.model.expected_thetas())
            .map(|(c, t)| (c.id, t))
            .collect();
        for &i in order {
            self.refine_doc(docs, i)?;
        }
        self.settle(docs);
        self.refresh_unseen_products();
        let mut delta: f64 = 0.0;
        let mut seen = BTreeSet::new();
        for (c, theta) in self.model.clusters().iter().zip(self.model.expected_thetas()) {
            seen.insert(c.id);
            let d = match before.get(&c.id) {
                Some(old) => old.iter().zip(&theta).map(|(a, b)| (a - b).abs()).sum(),
                None => 2.0,
            };
            delta = delta.max(d);
        }
        if before.keys().any(|id| !seen.contains(id)) {
            delta = delta.max(2.0);
        }
        Ok(delta)
    }

    /// Sweeps in document order until `delta < delta_tol` or `max_epochs`.
    /// Returns the delta of every sweep.
    pub fn run(&mut self, docs: &[SparseDoc], max_epochs: usize, delta_tol: f64) -> Result<Vec<f64>> {
        let order: Vec<usize> = (0..self.contributions.len()).collect();
        let mut deltas = Vec::new();
        for _ in 0..max_epochs {
            let d = self.sweep(docs, &order)?;
            deltas.push(d);
            if d < delta_tol {
                break;
            }
        }
        Ok(deltas)
    }

    /// Recomputes `Π_i (1 - q̂_ik)` from the stored assignments.
    fn refresh_unseen_products(&mut self) {
        let mut prods: BTreeMap<u64, f64> = BTreeMap::new();
        for c in &self.contributions {
            for &(id, w) in &c.assignment {
                *prods.entry(id).or_insert(1.0) *= (1.0 - w).max(0.0);
            }
        }
        for c in self.model.clusters.iter_mut() {
            c.unseen_product = prods.get(&c.id).copied().unwrap_or(1.0);
        }
    }
}
