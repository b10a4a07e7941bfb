//! Synthetic grasp-sequence dataset and the evaluation harness: run-wise
//! k-fold cross-validation with per-finger, per-quartile and per-class
//! accuracy.

mod dataset;
mod experiment;
mod kfold;
mod metrics;
mod scene;

pub use dataset::{
    allocate_frames, generate_dataset, load_dataset, save_dataset, Dataset, DatasetConfig, GraspFrame, GraspRun, GraspScene,
    SubImage, MANIFEST,
};
pub use experiment::{
    evaluate_fold, run_experiment, sample_of, EvalReport, ExperimentConfig, FoldResult, FrameResult,
};
pub use kfold::{kfold_by_run, Split};
pub use metrics::{iou, pixel_accuracy, quartile_accuracy, quartile_of, QuartileStat, QUARTILES};
pub use scene::{
    derive_seed, gain_distortion, hsv_to_rgb, random_object, render_qcif, render_view, Environment, ObjectClass, ObjectView,
    RenderedView, ViewSpec, GAIN_DISTORTION_ONSET,
};

use crate::datapath::DatapathError;
use crate::hand::HandError;
use crate::segnet::SegnetError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("at least one object class is required")]
    NoClasses,
    #[error("{class} has {runs} runs, k-fold needs exactly {k}")]
    FoldCount { class: ObjectClass, runs: usize, k: usize },
    #[error("mask shapes differ: {a} vs {b} pixels")]
    ShapeMismatch { a: usize, b: usize },
    #[error("mask values must be 0 or 1")]
    NonBinaryMask,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Datapath(#[from] DatapathError),
    #[error(transparent)]
    Segnet(#[from] SegnetError),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
