//! Random correctness matrices and a scan-based learned-at oracle.

use std::collections::BTreeSet;

use rand::Rng;

use intervene::selector::CorrectnessMatrix;

pub fn random_matrix(rng: &mut rand_chacha::ChaCha8Rng) -> CorrectnessMatrix {
    let n_steps = rng.random_range(1..9);
    let n_items = rng.random_range(1..30);
    let mut steps: BTreeSet<u64> = BTreeSet::new();
    while steps.len() < n_steps {
        steps.insert(rng.random_range(0..10_000));
    }
    let p = rng.random_range(0.2..0.9);
    let rows = (0..n_items).map(|_| (0..n_steps).map(|_| rng.random_bool(p)).collect()).collect();
    CorrectnessMatrix::new(
        steps.into_iter().collect(),
        (0..n_items).map(|i| format!("q{i:03}")).collect(),
        rows,
    )
    .unwrap()
}

/// Tries every step in order and keeps the first one from which the row is
/// correct through the end.
pub fn oracle_learned(m: &CorrectnessMatrix, i: usize) -> Option<u64> {
    let row = m.row(i);
    (0..row.len()).find(|&j| row[j..].iter().all(|&c| c)).map(|j| m.steps()[j])
}
