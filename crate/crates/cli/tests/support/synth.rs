//! Seeded synthetic models.
#![allow(dead_code)]

use deepcabac::ingest::{Role, TensorEntry, TensorFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Sparse Gaussian matrix: each entry zero with probability `zero_fraction`.
pub fn sparse_gaussian(rng: &mut ChaCha8Rng, len: usize, zero_fraction: f64, std: f32) -> Vec<f32> {
    let normal = Normal::new(0.0f32, std).unwrap();
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < zero_fraction {
                0.0
            } else {
                normal.sample(rng)
            }
        })
        .collect()
}

/// LeNet-300-100 shaped fully connected model, 90% zeros, N(0, 0.1) nonzeros,
/// plus excluded bias vectors.
pub fn lenet_300_100(seed: u64) -> TensorFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (name, rows, cols) in [("fc1", 300usize, 784usize), ("fc2", 100, 300), ("fc3", 10, 100)] {
        let w = sparse_gaussian(&mut rng, rows * cols, 0.9, 0.1);
        entries.push(TensorEntry::new(
            format!("{name}.weight"),
            Role::Weight,
            vec![rows, cols],
            w,
        ));
        let b = sparse_gaussian(&mut rng, rows, 0.0, 0.01);
        entries.push(TensorEntry::new(format!("{name}.bias"), Role::Excluded, vec![rows], b));
    }
    TensorFile::new(entries)
}

/// Two-layer toy model: a 3x3 convolution with a sigma map and a small
/// fully connected layer without one.
pub fn toy(seed: u64) -> TensorFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = sparse_gaussian(&mut rng, 8 * 3 * 3 * 3, 0.5, 0.2);
    let conv_sigma: Vec<f32> = (0..conv.len()).map(|_| rng.random_range(0.02f32..0.1)).collect();
    let fc = sparse_gaussian(&mut rng, 10 * 72, 0.8, 0.1);
    TensorFile::new(vec![
        TensorEntry::new("conv1.weight", Role::Weight, vec![8, 3, 3, 3], conv),
        TensorEntry::new("conv1.weight", Role::Sigma, vec![8, 3, 3, 3], conv_sigma),
        TensorEntry::new("conv1.bias", Role::Excluded, vec![8], vec![0.01; 8]),
        TensorEntry::new("fc.weight", Role::Weight, vec![10, 72], fc),
        TensorEntry::new("fc.bias", Role::Excluded, vec![10], vec![0.0; 10]),
    ])
}
