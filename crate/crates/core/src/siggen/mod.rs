//! Synthetic power-quality-disturbance waveforms with exact disturbance
//! components and ε-threshold ground-truth masks.

mod dataset;
mod disturbance;
mod mask;
mod signal;

pub use dataset::{
    export_jsonl, generate_dataset, read_split, synthesize, write_split, DatasetPlan, Split, SplitSpec, Waveform,
    DATASET_FORMAT_VERSION, EXTERNAL_CLASS_ID,
};
pub use disturbance::{
    Component, ComponentKind, DisturbanceParams, PqdClass, PulseKind, StepKind, N_CLASSES, PARAM_WIDTH,
};
pub use mask::GroundTruthMask;
pub use signal::{reference_signal, SignalConfig};
