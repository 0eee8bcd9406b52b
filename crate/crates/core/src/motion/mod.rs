//! Synthetic movement corpus: scripted shoulder trajectories, corpus files
//! and windowed training data.

pub mod corpus;
pub mod dataset;
mod script;

pub use corpus::{build_corpus, generate_corpus, Corpus, CorpusConfig, CorpusManifest, TrajectoryRecord};
pub use dataset::{assign_split, window_and_normalize, Dataset, Scaler, Split, SplitSpec, Windowed, OUTPUTS};
pub use script::{
    generate_script, minimum_jerk, MovementKind, MovementScript, RandomParams, Trajectory, TrajectorySample,
    AZIMUTH_RANGE_DEG, ELEVATION_RANGE_DEG, SAMPLE_RATE_HZ,
};
