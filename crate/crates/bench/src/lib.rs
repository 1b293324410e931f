//! Shared fixtures for the benchmarks.

use crowding_core::data::{synthesize_dataset, CrowdDataset, SynthConfig};
use crowding_core::trainer::TrainConfig;

/// The default synthetic benchmark with `num_instances` training instances.
pub fn dataset(num_instances: usize, seed: u64) -> CrowdDataset {
    let cfg = SynthConfig {
        num_instances,
        difficulty_sensitivity: 0.6,
        ..SynthConfig::default()
    };
    synthesize_dataset(&cfg, seed).expect("valid synthetic config").dataset
}

/// A short schedule for timing whole runs.
pub fn short_schedule() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        pretrain_epochs: 5,
        generator_pretrain_epochs: 3,
        discriminator_pretrain_epochs: 1,
        ..TrainConfig::default()
    }
}
