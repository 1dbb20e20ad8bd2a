//! Room simulation and training-data synthesis.

pub mod dataset;
mod mixture;
mod noise;
mod rir;
pub mod speech;

pub use dataset::{
    build_dataset, derive_seed, read_source_list, write_synthetic_corpus, Manifest, ManifestRecord, OverlapCondition,
    SimulationConfig, SourceEntry, WavFormat,
};
pub use mixture::{place_array, synthesize_mixture, MixtureExample, MixtureSpec};
pub use noise::{fibonacci_sphere, generate_isotropic_noise, NOISE_DIRECTIONS};
pub use rir::{schroeder_decay_db, simulate_rir, RirTruncation, RoomSpec};
