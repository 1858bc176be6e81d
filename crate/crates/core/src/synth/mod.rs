//! Synthetic fingerprints, distortion prototypes, training pairs and the
//! eight-fold augmentation.

pub mod augment;
pub mod dataset;
pub mod distortion;
pub mod fingerprint;
pub mod pair;

pub use augment::{augment, Symmetry};
pub use dataset::{generate_sample, generate_samples, read_dataset, write_dataset};
pub use distortion::{synth_distortion, DistortionKind, DistortionPrototype, PrototypeSampler};
pub use fingerprint::synth_fingerprint;
pub use pair::{make_pair, reconstruct_gt, TrainingSample};
