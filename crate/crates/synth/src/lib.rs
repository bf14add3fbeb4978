//! Synthetic distorted documents with ground-truth control points.
//!
//! A regular lattice is laid over a flat scan, pushed around by folds, curves
//! and a similarity transform, and fitted onto the output canvas. The same
//! analytic warp renders the distorted image, so the emitted control points,
//! reference lattice and dense backward map are exact.
//!
//! Each sample draws from its own ChaCha stream keyed by the master seed and
//! the sample index, so datasets do not depend on thread count or order.

mod config;
mod dataset;
mod render;
mod scan;
mod warp;

pub use config::{CountRange, DistortionConfig, PhotometricConfig, Range, SynthConfig};
pub use dataset::{
    generate_sample, list_images, sample_seed, synthesize_dataset, ManifestEntry, SynthSample, MANIFEST_FILE,
};
pub use render::{augment, check_fold_over, render_distorted, Rendered};
pub use scan::{procedural_background, procedural_scan};
pub use warp::{
    apply_affine, curve_for, make_base_grid, perturb_curve, perturb_fold, resize_with_padding, Padding, Perturbation,
    Similarity, Warp,
};

use std::path::PathBuf;

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no readable scans in {}", .0.display())]
    NoScans(PathBuf),
    /// The drawn warp is unusable; retrying with a fresh stream may succeed.
    #[error("degenerate warp: {0}")]
    Degenerate(String),
    #[error("sample {index}: no usable warp after {attempts} attempts ({last})")]
    Exhausted { index: u64, attempts: u32, last: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] cpdewarp_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SynthError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SynthError::Io {
            path: path.into(),
            source,
        }
    }

    /// IO failures as opposed to bad inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, SynthError::Io { .. } | SynthError::Core(cpdewarp_core::Error::Io { .. }))
    }
}
