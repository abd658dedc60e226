//! In-memory corpora: vocabulary filtering and train/test splitting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, SparseDoc};

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub docs: Vec<SparseDoc>,
    pub vocab_size: usize,
    /// Ground-truth cluster per document (synthetic corpora only).
    pub labels: Option<Vec<u32>>,
}

impl Corpus {
    pub fn new(docs: Vec<SparseDoc>, vocab_size: usize) -> Result<Self> {
        let corpus = Self { docs, vocab_size, labels: None };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn with_labels(docs: Vec<SparseDoc>, vocab_size: usize, labels: Vec<u32>) -> Result<Self> {
        let corpus = Self { docs, vocab_size, labels: Some(labels) };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        for d in &self.docs {
            d.check_vocab(self.vocab_size)?;
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.docs.len() {
                return Err(Error::Domain(format!(
                    "{} labels for {} documents",
                    labels.len(),
                    self.docs.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Sub-corpus made of the given document indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus {
            docs: indices.iter().map(|&i| self.docs[i].clone()).collect(),
            vocab_size: self.vocab_size,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Copy with documents reordered by a seeded shuffle.
    pub fn permuted(&self, seed: u64) -> Corpus {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.select(&idx)
    }

    /// Number of documents containing each word.
    pub fn doc_freq(&self) -> Vec<usize> {
        let mut df = vec![0usize; self.vocab_size];
        for d in &self.docs {
            for &(w, _) in d.entries() {
                df[w as usize] += 1;
            }
        }
        df
    }
}

/// Keeps words whose document frequency lies in
/// `[min_doc_freq, max_doc_frac · D]`, reindexes the surviving vocabulary
/// densely (preserving order) and drops documents with fewer than
/// `min_doc_len` remaining tokens.
///
/// Returns the filtered corpus and the old word id of every new id.
pub fn filter_vocab(
    corpus: &Corpus,
    min_doc_freq: usize,
    max_doc_frac: f64,
    min_doc_len: u64,
) -> (Corpus, Vec<u32>) {
    let df = corpus.doc_freq();
    let max_df = max_doc_frac * corpus.len() as f64;
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    let mut kept = Vec::new();
    for (w, &f) in df.iter().enumerate() {
        if f >= min_doc_freq && (f as f64) <= max_df {
            remap.insert(w as u32, kept.len() as u32);
            kept.push(w as u32);
        }
    }

    let mut docs = Vec::new();
    let mut labels = corpus.labels.as_ref().map(|_| Vec::new());
    for (i, d) in corpus.docs.iter().enumerate() {
        let entries: Vec<(u32, u32)> = d
            .entries()
            .iter()
            .filter_map(|&(w, c)| remap.get(&w).map(|&nw| (nw, c)))
            .collect();
        let total: u64 = entries.iter().map(|&(_, c)| u64::from(c)).sum();
        if total == 0 || total < min_doc_len {
            continue;
        }
        docs.push(SparseDoc::new(entries).expect("remapping preserves ordering"));
        if let (Some(out), Some(src)) = (labels.as_mut(), corpus.labels.as_ref()) {
            out.push(src[i]);
        }
    }
    (Corpus { docs, vocab_size: kept.len(), labels }, kept)
}

/// Seeded disjoint split: `⌈test_frac · D⌉` documents go to the test set.
/// Both halves keep the original relative document order.
pub fn split(corpus: &Corpus, test_frac: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_frac}")));
    }
    let n = corpus.len();
    let n_test = libm::ceil(test_frac * n as f64) as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = idx[..n_test.min(n)].to_vec();
    let mut train_idx = idx[n_test.min(n)..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((corpus.select(&train_idx), corpus.select(&test_idx)))
}
