//! Multinomial observations under a symmetric Dirichlet base measure.
//!
//! The multinomial coefficient `N_d! / Π x_dw!` is omitted from every
//! likelihood: it is identical across clusters, so assignments are unaffected,
//! and held-out scores shift by a model-independent constant.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{ln, ln_gamma};
use crate::{Error, Result};

/// Runs longer than this switch from summed logs to a log-gamma difference.
const DIRECT_SUM_LIMIT: u64 = 32;

/// Bag-of-words document: `(word_id, count)` pairs with strictly increasing
/// word ids and positive counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseDoc {
    entries: Vec<(u32, u32)>,
    total: u64,
}

impl SparseDoc {
    pub fn new(entries: Vec<(u32, u32)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDocument);
        }
        let mut total = 0u64;
        for (i, &(w, c)) in entries.iter().enumerate() {
            if c == 0 {
                return Err(Error::Domain(format!("word {w} has zero count")));
            }
            if i > 0 && entries[i - 1].0 >= w {
                return Err(Error::Domain("word ids must be strictly increasing".into()));
            }
            total += u64::from(c);
        }
        Ok(Self { entries, total })
    }

    /// Builds a document from unordered pairs, merging repeated word ids and
    /// dropping zero counts.
    pub fn from_pairs<I: IntoIterator<Item = (u32, u32)>>(pairs: I) -> Result<Self> {
        let mut merged: BTreeMap<u32, u32> = BTreeMap::new();
        for (w, c) in pairs {
            if c > 0 {
                *merged.entry(w).or_insert(0) += c;
            }
        }
        Self::new(merged.into_iter().collect())
    }

    /// Document from a dense count vector.
    pub fn from_dense(counts: &[u32]) -> Result<Self> {
        Self::new(
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(w, &c)| (w as u32, c))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    /// Total word count `N_d`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max_word(&self) -> u32 {
        self.entries.last().map(|e| e.0).unwrap_or(0)
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        let w = self.max_word();
        if (w as usize) >= vocab_size {
            return Err(Error::Vocabulary { word: w, vocab_size });
        }
        Ok(())
    }
}

/// `Σ_{j<count} log(base + j)`, the log rising factorial.
#[inline]
fn log_rising(base: f64, count: u64) -> f64 {
    if count > DIRECT_SUM_LIMIT {
        return ln_gamma(base + count as f64) - ln_gamma(base);
    }
    // pairs share one log; both factors stay far below overflow here
    let mut acc = 0.0;
    let mut j = 0;
    while j + 1 < count {
        let x = base + j as f64;
        acc += ln(x * (x + 1.0));
        j += 2;
    }
    if j < count {
        acc += ln(base + j as f64);
    }
    acc
}

/// Dirichlet posterior with symmetric base concentration and sparse
/// accumulated (soft) counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPosterior {
    alpha0: f64,
    /// `(word, count)` with strictly increasing words.
    counts: Vec<(u32, f64)>,
    count_total: f64,
}

impl DirichletPosterior {
    pub fn new(alpha0: f64) -> Self {
        Self { alpha0, counts: Vec::new(), count_total: 0.0 }
    }

    /// Rebuilds a posterior from stored counts (used by checkpoint decoding).
    /// `counts` must have strictly increasing words.
    pub fn from_parts(alpha0: f64, counts: Vec<(u32, f64)>, count_total: f64) -> Self {
        debug_assert!(counts.windows(2).all(|w| w[0].0 < w[1].0));
        Self { alpha0, counts, count_total }
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    /// Non-zero counts in increasing word order.
    pub fn counts(&self) -> &[(u32, f64)] {
        &self.counts
    }

    pub fn count(&self, word: u32) -> f64 {
        match self.find_from(0, word) {
            Ok(i) => self.counts[i].1,
            Err(_) => 0.0,
        }
    }

    /// Position of `word` at or after `start`, or where it would be inserted.
    /// Galloping search from `start`; callers walk words in increasing order.
    fn find_from(&self, start: usize, word: u32) -> core::result::Result<usize, usize> {
        let n = self.counts.len();
        let mut lo = start;
        let mut step = 1;
        let mut hi = start;
        while hi < n && self.counts[hi].0 < word {
            lo = hi + 1;
            hi = start + step;
            step *= 2;
        }
        let hi = (hi + 1).min(n);
        match self.counts[lo..hi].binary_search_by_key(&word, |e| e.0) {
            Ok(i) => Ok(lo + i),
            Err(i) => Err(lo + i),
        }
    }

    pub fn count_total(&self) -> f64 {
        self.count_total
    }

    /// Log Pólya predictive of `doc` given this posterior (without the
    /// multinomial coefficient).
    pub fn log_predictive(&self, doc: &SparseDoc, vocab_size: usize) -> Result<f64> {
        doc.check_vocab(vocab_size)?;
        Ok(self.log_predictive_unchecked(doc, vocab_size))
    }

    pub(crate) fn log_predictive_unchecked(&self, doc: &SparseDoc, vocab_size: usize) -> f64 {
        let mut acc = 0.0;
        let mut pos = 0;
        for &(w, c) in doc.entries() {
            let n = match self.find_from(pos, w) {
                Ok(i) => {
                    pos = i + 1;
                    self.counts[i].1
                }
                Err(i) => {
                    pos = i;
                    0.0
                }
            };
            acc += log_rising(self.alpha0 + n, u64::from(c));
        }
        acc - log_rising(vocab_size as f64 * self.alpha0 + self.count_total, doc.total())
    }

    /// Adds `weight · x` to the pseudocounts.
    pub fn update(&mut self, doc: &SparseDoc, weight: f64) {
        if weight == 0.0 {
            return;
        }
        let mut pos = 0;
        for &(w, c) in doc.entries() {
            let add = weight * f64::from(c);
            match self.find_from(pos, w) {
                Ok(i) => {
                    self.counts[i].1 += add;
                    pos = i + 1;
                }
                Err(i) => {
                    self.counts.insert(i, (w, add));
                    pos = i + 1;
                }
            }
        }
        self.count_total += weight * doc.total() as f64;
    }

    /// Removes `weight · x` from the pseudocounts. Small negative drift is
    /// clamped to zero; anything below `-1e-6` is a ledger error and leaves
    /// the posterior untouched.
    pub fn downdate(&mut self, doc: &SparseDoc, weight: f64) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        for &(w, c) in doc.entries() {
            let left = self.count(w) - weight * f64::from(c);
            if left < -1e-6 {
                return Err(Error::Ledger(format!(
                    "removing weight {weight} of word {w} leaves count {left}"
                )));
            }
        }
        let mut pos = 0;
        for &(w, c) in doc.entries() {
            let take = weight * f64::from(c);
            match self.find_from(pos, w) {
                Ok(i) => {
                    let left = self.counts[i].1 - take;
                    if left <= 1e-12 {
                        self.counts.remove(i);
                        pos = i;
                    } else {
                        self.counts[i].1 = left;
                        pos = i + 1;
                    }
                }
                Err(i) => pos = i,
            }
        }
        self.count_total = (self.count_total - weight * doc.total() as f64).max(0.0);
        Ok(())
    }

    /// Adds another posterior's counts into this one.
    pub fn absorb(&mut self, other: &DirichletPosterior) {
        let mut merged = Vec::with_capacity(self.counts.len() + other.counts.len());
        let (mut a, mut b) = (self.counts.iter().peekable(), other.counts.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&(wa, ca)), Some(&&(wb, cb))) => {
                    if wa < wb {
                        merged.push((wa, ca));
                        a.next();
                    } else if wb < wa {
                        merged.push((wb, cb));
                        b.next();
                    } else {
                        merged.push((wa, ca + cb));
                        a.next();
                        b.next();
                    }
                }
                (Some(&&e), None) | (None, Some(&&e)) => {
                    merged.push(e);
                    a.next();
                    b.next();
                }
                (None, None) => break,
            }
        }
        self.counts = merged;
        self.count_total += other.count_total;
    }

    /// Posterior mean `(α + n_w) / (Vα + n)` as a dense vector.
    pub fn expected_theta(&self, vocab_size: usize) -> Vec<f64> {
        let denom = vocab_size as f64 * self.alpha0 + self.count_total;
        let mut out = vec![self.alpha0 / denom; vocab_size];
        for &(w, c) in &self.counts {
            if let Some(slot) = out.get_mut(w as usize) {
                *slot = (self.alpha0 + c) / denom;
            }
        }
        out
    }

    /// Log marginal likelihood of all absorbed counts under the base measure
    /// (the sequential product of Pólya predictives).
    pub fn log_evidence(&self, vocab_size: usize) -> f64 {
        let a = self.alpha0;
        let mut acc = 0.0;
        for &(_, c) in &self.counts {
            acc += ln_gamma(a + c) - ln_gamma(a);
        }
        let va = vocab_size as f64 * a;
        acc - (ln_gamma(va + self.count_total) - ln_gamma(va))
    }
}

/// Log prior predictive of `doc` under a fresh `Dir(α)` component.
pub fn log_prior_predictive(doc: &SparseDoc, alpha0: f64, vocab_size: usize) -> Result<f64> {
    doc.check_vocab(vocab_size)?;
    let mut acc = 0.0;
    for &(_, c) in doc.entries() {
        acc += log_rising(alpha0, u64::from(c));
    }
    Ok(acc - log_rising(vocab_size as f64 * alpha0, doc.total()))
}
