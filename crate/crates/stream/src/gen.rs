//! Synthetic corpora: the 8×8 bars images and a Pitman-Yor mixture of
//! multinomials. Both are pure functions of their parameters and seed and
//! record the generating component of every document.

use std::collections::BTreeMap;

use nrm_core::{Corpus, Error, Result, SparseDoc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

pub const BAR_SIDE: usize = 8;
pub const BAR_VOCAB: usize = BAR_SIDE * BAR_SIDE;

/// The 16 bar components (8 rows, then 8 columns) over the 64 pixels. Each
/// puts `1 - baseline` of its mass uniformly on the bar and `baseline`
/// uniformly on the whole image.
pub fn bar_components(baseline: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * BAR_SIDE);
    for horizontal in [true, false] {
        for k in 0..BAR_SIDE {
            let theta = (0..BAR_VOCAB)
                .map(|pix| {
                    let (row, col) = (pix / BAR_SIDE, pix % BAR_SIDE);
                    let on = if horizontal { row == k } else { col == k };
                    let bar = if on { (1.0 - baseline) / BAR_SIDE as f64 } else { 0.0 };
                    bar + baseline / BAR_VOCAB as f64
                })
                .collect();
            out.push(theta);
        }
    }
    out
}

fn draw_doc<R: Rng>(theta: &WeightedIndex<f64>, words: usize, rng: &mut R) -> SparseDoc {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for _ in 0..words {
        *counts.entry(theta.sample(rng) as u32).or_insert(0) += 1;
    }
    SparseDoc::new(counts.into_iter().collect()).expect("positive word count")
}

fn check_words(words_per_doc: usize) -> Result<()> {
    if words_per_doc == 0 {
        return Err(Error::Config("words_per_doc must be positive".into()));
    }
    Ok(())
}

/// Documents pick a bar uniformly and draw `words_per_doc` pixels from it.
pub fn gen_bars(n_docs: usize, words_per_doc: usize, baseline: f64, seed: u64) -> Result<Corpus> {
    check_words(words_per_doc)?;
    if !(0.0..=1.0).contains(&baseline) {
        return Err(Error::Config(format!("baseline must lie in [0, 1], got {baseline}")));
    }
    let comps: Vec<WeightedIndex<f64>> = bar_components(baseline)
        .iter()
        .map(|t| WeightedIndex::new(t).expect("bar weights are positive"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    let mut labels = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let k = rng.random_range(0..comps.len());
        docs.push(draw_doc(&comps[k], words_per_doc, &mut rng));
        labels.push(k as u32);
    }
    Corpus::with_labels(docs, BAR_VOCAB, labels)
}

/// `Dir(alpha, ..., alpha)` draw by normalizing independent gammas.
pub fn sample_dirichlet<R: Rng>(alpha: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("Dirichlet concentration {alpha}: {e}")))?;
    loop {
        let g: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let z: f64 = g.iter().sum();
        if z > 0.0 {
            return Ok(g.into_iter().map(|x| x / z).collect());
        }
    }
}

/// Mixture of multinomials whose partition follows the two-parameter
/// Chinese restaurant process (old table `n_k - discount`, new table
/// `concentration + discount · K`). Each new cluster draws its word
/// distribution from `Dir(alpha_cluster)`.
pub fn gen_pitman_yor_mixture(
    n_docs: usize,
    discount: f64,
    concentration: f64,
    vocab_size: usize,
    alpha_cluster: f64,
    words_per_doc: usize,
    seed: u64,
) -> Result<Corpus> {
    check_words(words_per_doc)?;
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::Config(format!("discount must lie in [0, 1), got {discount}")));
    }
    if !(concentration > -discount) {
        return Err(Error::Config(format!("concentration must exceed -discount, got {concentration}")));
    }
    if vocab_size == 0 {
        return Err(Error::Config("vocabulary must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes: Vec<usize> = Vec::new();
    let mut thetas: Vec<WeightedIndex<f64>> = Vec::new();
    let mut docs = Vec::with_capacity(n_docs);
    let mut labels = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let r = rng.random::<f64>() * (i as f64 + concentration);
        let mut acc = 0.0;
        let mut pick = sizes.len();
        for (k, &n) in sizes.iter().enumerate() {
            acc += n as f64 - discount;
            if r < acc {
                pick = k;
                break;
            }
        }
        if i == 0 || pick == sizes.len() {
            let theta = sample_dirichlet(alpha_cluster, vocab_size, &mut rng)?;
            thetas.push(WeightedIndex::new(&theta).map_err(|e| Error::Domain(format!("cluster weights: {e}")))?);
            sizes.push(0);
            pick = sizes.len() - 1;
        }
        sizes[pick] += 1;
        docs.push(draw_doc(&thetas[pick], words_per_doc, &mut rng));
        labels.push(pick as u32);
    }
    Corpus::with_labels(docs, vocab_size, labels)
}
