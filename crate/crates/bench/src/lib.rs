//! Fixtures shared by the criterion benches.

use alsim_core::{generate_pool, ClassifierModel, Pool, SynthConfig};

pub fn pool(frames_per_class: usize, crowd_annotators: u32) -> Pool {
    generate_pool(&SynthConfig {
        frames_per_class,
        auto_label_noise: 0.2,
        crowd_annotators,
        crowd_confusion: 0.3,
        seed: 11,
        ..SynthConfig::default()
    })
    .expect("bench config is valid")
}

pub fn model(pool: &Pool, hidden_units: usize) -> ClassifierModel {
    ClassifierModel::new(pool.class_count(), pool.feature_dim(), hidden_units, Default::default(), 3)
        .expect("bench shapes are valid")
}
