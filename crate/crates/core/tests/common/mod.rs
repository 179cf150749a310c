#![allow(dead_code)]

use gobert::masking::MaskedBatch;
use gobert::model::{ModelConfig, ModelParameters, NeighborTargets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// d=8, one layer, one head, vocabulary 12, 12 neighbourhood labels.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        layers: 1,
        heads: 1,
        ffn_dim: 16,
        vocab_size: 12,
        label_size: 12,
        neg_downsample: 1.0,
        ..Default::default()
    }
}

/// Parameters with every block (biases and norms included) randomised so no
/// gradient path is trivially zero.
pub fn random_params(config: ModelConfig, seed: u64) -> ModelParameters<f64> {
    let mut p = ModelParameters::<f64>::init_random(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for b in p.blocks_mut() {
        let gamma = b.name.ends_with("gamma");
        let input = b.name.starts_with("embeddings.");
        for v in b.data.iter_mut() {
            let noise = rng.random_range(-0.1..0.1);
            *v = if gamma {
                1.0 + noise
            } else if b.name.ends_with("ffn.b1") {
                // Pre-activations stay clear of the ReLU kink, half of the
                // units live and half dead, so finite differences never
                // straddle it.
                if rng.random::<bool>() { 2.5 + noise } else { -2.5 + noise }
            } else if input {
                // Unit-scale inputs keep the first normalisation well away
                // from its high-curvature regime.
                rng.random_range(-1.5..1.5)
            } else {
                *v + noise
            };
        }
    }
    p
}

/// Random positive label rows for every non-special vocabulary id.
pub fn random_targets(vocab: usize, labels: usize, seed: u64) -> NeighborTargets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..vocab)
        .map(|t| {
            if t < 3 {
                Vec::new()
            } else {
                (0..labels as u32).filter(|_| rng.random::<f64>() < 0.3).collect()
            }
        })
        .collect();
    NeighborTargets::from_rows(rows, labels).unwrap()
}

/// Two examples of different lengths with a few labelled positions.
pub fn micro_batch() -> MaskedBatch {
    let mut b = MaskedBatch::from_rows(&[vec![3, 5, 7, 4], vec![9, 1, 11]]);
    // Position 1 of example 1 is a [MASK] over term 6; position 2 of
    // example 0 keeps its token but is supervised.
    b.original_ids[b.seq + 1] = 6;
    b.labels[b.seq + 1] = Some(6);
    b.labels[2] = Some(7);
    b.labels[3] = Some(4);
    b
}
