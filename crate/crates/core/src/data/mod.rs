//! Dataset files, splitting and the synthetic fault-injection generator.

mod io;
mod split;
mod synth;

pub use io::{load_dataset, parse_dataset, read_manifest, write_dataset, DatasetFiles, DatasetManifest, MANIFEST_FILE};
pub use split::{split_counts, split_dataset};
pub use synth::{generate_synthetic, SynthConfig, TopologyMode, FAULT_TYPES};
