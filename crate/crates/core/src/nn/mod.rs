//! Forward inference for the learned transition kernels and two-stage
//! sampling from their outputs.

mod layers;
mod model;
mod predict;

use std::io;

use thiserror::Error;

pub use layers::{gelu, softplus, tag, ForwardFlags, Layer, Tensor};
pub use model::{
    face_layers, model_input, reference_layers, selector_layers, stack_slices, Init, Model, ModelBundle, ModelKind,
    Probe, FACE_CHANNELS, FACE_DILATIONS, NORMAL_CHANNELS, NORMAL_DILATIONS, NO_FACE, PROBES_PER_MODEL,
    WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
pub use predict::{
    derive_axis_view, sample_categorical, sample_gradient_transition, sample_poisson_transition, AxisView,
    KernelPredictor, OraclePredictor, PixelDist, SampledTransition,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported weights version {0}")]
    BadVersion(u32),
    #[error("weights file truncated in {0}")]
    Truncated(String),
    #[error("malformed weights: {0}")]
    Format(String),
    #[error("model {model} layer {layer}: {message}")]
    Shape { model: String, layer: usize, message: String },
    #[error("weights file lacks model {0}")]
    MissingModel(String),
    #[error("grid size mismatch: engine uses {expected}, weights use {found}")]
    GridMismatch { expected: usize, found: usize },
    #[error("probe {probe} of {model} deviates by {error}")]
    ProbeMismatch { model: String, probe: usize, error: f32 },
    #[error("degenerate kernel")]
    Degenerate,
    #[error("tensor: {0}")]
    Tensor(String),
    #[error("oracle solve failed: {0}")]
    Oracle(String),
}
