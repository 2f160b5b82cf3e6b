#![allow(dead_code)]

use gflin::data::{make_split, synth_sbm_with, LabeledDataset, SbmParams, Split, DEFAULT_RATIOS};
use gflin::{Graph, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two weakly coupled blocks: the second eigenvalue of the propagation
/// operator sits near 0.95, so block structure survives 128 steps at a
/// scale of about 1e-3 while the graph stays connected.
pub fn slow_mixing_sbm() -> SbmParams {
    SbmParams::new(100, 2, 0.3, 0.008, 8, 0)
}

/// The spec-scale fixture: 2 blocks of 50, p_in 0.5, p_out 0.05.
pub fn small_sbm() -> SbmParams {
    SbmParams::new(50, 2, 0.5, 0.05, 8, 1)
}

pub fn dataset(params: &SbmParams) -> (LabeledDataset<f64>, Split) {
    let s = synth_sbm_with::<f64>(params).unwrap();
    assert!(s.connectivity.connected_non_bipartite(), "fixture must be connected and non-bipartite");
    let split = make_split(s.dataset.num_nodes(), DEFAULT_RATIOS, 0).unwrap();
    (s.dataset, split)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn triangle(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Graph::new(&[(0, 1), (1, 2), (0, 2)], random_matrix(3, 2, &mut rng)).unwrap()
}

pub fn doubling(from: usize, to: usize) -> Vec<usize> {
    std::iter::successors(Some(from), |k| Some(k * 2)).take_while(|&k| k <= to).collect()
}
