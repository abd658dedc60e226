mod support;

use nrm_core::{AdfConfig, ModelState, NggpParams, SparseDoc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::straight_line_adf;

fn dense(doc: &SparseDoc, v: usize) -> Vec<u32> {
    let mut out = vec![0; v];
    for &(w, c) in doc.entries() {
        out[w as usize] = c;
    }
    out
}

fn random_stream(rng: &mut ChaCha8Rng, n: usize, v: usize) -> Vec<SparseDoc> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=20);
            let focus = rng.random_range(0..v as u32);
            SparseDoc::from_pairs((0..len).map(|_| {
                let w = if rng.random::<f64>() < 0.7 { focus } else { rng.random_range(0..v as u32) };
                (w, 1)
            }))
            .unwrap()
        })
        .collect()
}

fn compare_with_trace(docs: &[SparseDoc], v: usize, params: NggpParams, epsilon: f64, tol: f64) {
    let mut cfg = AdfConfig::new(params, 0.5, v);
    cfg.epsilon = epsilon;
    let mut model = ModelState::new(cfg).unwrap();
    let dense_docs: Vec<Vec<u32>> = docs.iter().map(|d| dense(d, v)).collect();
    let trace = straight_line_adf(&dense_docs, 0.5, params.a(), params.sigma(), params.tau(), epsilon);
    for (doc, step) in docs.iter().zip(&trace) {
        let out = model.adf_step(doc).unwrap();
        assert_eq!(out.assignment.len(), step.assignment.len());
        for (x, y) in out.assignment.iter().zip(&step.assignment) {
            assert!((x - y).abs() <= tol, "{:?} vs {:?}", out.assignment, step.assignment);
        }
        for (x, y) in model.cluster_masses().iter().zip(&step.masses) {
            assert!((x - y).abs() <= tol * model.n_seen() as f64);
        }
    }
}

#[test]
fn three_document_trace() {
    let docs = vec![
        SparseDoc::from_pairs([(0, 3)]).unwrap(),
        SparseDoc::from_pairs([(0, 2), (1, 1)]).unwrap(),
        SparseDoc::from_pairs([(1, 3)]).unwrap(),
    ];
    let p = NggpParams::new(1.0, 0.5, 1.0).unwrap();
    compare_with_trace(&docs, 2, p, 0.5, 1e-9);
}

#[test]
fn nggp_streams_follow_straight_line_algorithm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for sigma in [0.25, 0.5, 0.75] {
        let docs = random_stream(&mut rng, 60, 10);
        let p = NggpParams::new(2.0, sigma, 1.0).unwrap();
        compare_with_trace(&docs, 10, p, sigma.max(0.3), 1e-7);
    }
}

#[test]
fn mass_is_conserved_after_every_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for sigma in [0.0, 0.5] {
        let docs = random_stream(&mut rng, 200, 15);
        let p = NggpParams::new(3.0, sigma, 1.0).unwrap();
        let mut model = ModelState::new(AdfConfig::new(p, 0.3, 15)).unwrap();
        for d in &docs {
            model.adf_step(d).unwrap();
            let n = model.n_seen() as f64;
            assert!(model.mass_residual().abs() <= 1e-6 * n);
        }
    }
}

#[test]
fn cluster_ids_strictly_increase_and_never_reappear() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let docs = random_stream(&mut rng, 300, 8);
    let p = NggpParams::new(5.0, 0.5, 1.0).unwrap();
    let mut cfg = AdfConfig::new(p, 0.5, 8);
    cfg.merge_threshold = 0.9;
    let mut model = ModelState::new(cfg).unwrap();
    let mut absorbed = std::collections::BTreeSet::new();
    for (i, d) in docs.iter().enumerate() {
        model.adf_step(d).unwrap();
        if i % 50 == 49 {
            for (_, gone) in model.merge_clusters() {
                absorbed.insert(gone);
            }
        }
        let ids: Vec<u64> = model.clusters().iter().map(|c| c.id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(ids.iter().all(|id| !absorbed.contains(id)));
    }
}
