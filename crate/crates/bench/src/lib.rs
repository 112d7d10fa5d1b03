//! Shared inputs for the criterion benches.

use oafa_core::data::{batch_iterator, Dataset, SynthConfig};
use oafa_core::losses::StepBatch;
use oafa_core::trainer::TrainConfig;
use oafa_core::{Shape, Tensor};

/// Deterministic pseudo-random tensor in `[-1, 1)`.
pub fn filled(shape: Shape, seed: u32) -> Tensor {
    let mut state = seed.wrapping_mul(2_654_435_761).wrapping_add(1);
    let data = (0..shape.numel())
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            (state as f32 / u32::MAX as f32) * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Desk-scale configuration, its synthetic data, and the first batch.
pub fn desk_setup() -> (TrainConfig, Dataset, StepBatch) {
    let config = TrainConfig::default();
    let data = Dataset::from_synth(&SynthConfig {
        young: 4,
        aged_per_occupation: 4,
        ..config.data.synth.clone()
    })
    .expect("synthetic data");
    let t = &config.trainer;
    let batch = batch_iterator(&data, t.batch_size, t.seed, t.q_mode)
        .and_then(|s| s.batch(0, 0))
        .expect("first batch");
    (config, data, batch)
}
