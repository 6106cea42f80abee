//! File formats, synthetic data and the command pipeline behind the CLI.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod gradcheck;
pub mod io;
pub mod pipeline;
pub mod synth;

pub use config::ConfigFile;
pub use container::FeatureContainer;
pub use synth::{generate as generate_synthetic, write_corpus, SyntheticCorpusSpec};
