//! Fixtures shared by the benchmarks.

use rand::Rng;

use sentidial_core::simenv::synth_sample_bank;
use sentidial_core::stats::rng_from;
use sentidial_core::{BankConfig, ForestConfig, Network, RandomForest, SampleBank, SimConfig};

/// An LSTM-32 policy network and a random input sequence for it.
pub fn lstm_fixture(input: usize, actions: usize, len: usize) -> (Network, Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng_from(1, 0xBE, 0);
    let net = Network::random(input, 32, actions, &mut rng);
    let xs = (0..len).map(|_| (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys = (0..len).map(|_| rng.gen_range(0..actions)).collect();
    (net, xs, ys)
}

/// A forest trained on `n` noisy points with `d` features and three classes,
/// plus the points themselves as queries.
pub fn forest_fixture(n: usize, d: usize, n_trees: usize) -> (RandomForest, Vec<Vec<f64>>) {
    let mut rng = rng_from(2, 0xBE, 0);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.gen_range(0..3usize);
        x.push((0..d).map(|j| if j < 3 && j == label { 1.0 } else { 0.0 } + rng.gen_range(-0.8..0.8)).collect());
        y.push(label);
    }
    let cfg = ForestConfig {
        n_trees,
        ..ForestConfig::default()
    };
    (RandomForest::train(&x, &y, &cfg, 2).unwrap(), x)
}

pub fn bank_fixture() -> SampleBank {
    synth_sample_bank(3, &BankConfig::default(), &SimConfig::default(), 15).unwrap()
}
