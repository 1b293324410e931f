//! Crowd datasets: model, file formats, synthesis, co-occurrence, and
//! annotation-level utilities.

mod cooc;
mod dataset;
pub mod io;
mod ops;
mod synth;

pub use cooc::{build_cooccurrence, CoocAdjacency};
pub use dataset::{Annotation, CrowdDataset, Split};
pub use io::{load_dataset, load_dataset_dir, save_dataset_dir, DatasetFiles};
pub use ops::{majority_vote, plurality, remove_annotations};
pub use synth::{
    class_centroids, instance_difficulty, synthesize_dataset, AnnotatorModel, SynthConfig,
    SyntheticCrowd,
};

pub(crate) use synth::sample_categorical;
