//! Fall classification from 17-keypoint COCO poses.
//!
//! Two classifiers share the [`PoseDetection`] input: the geometric rule in
//! [`rules_fall`] and the small MLP behind [`mlp_forward`].

mod mlp;
mod pose;
mod rules;
mod synthetic;

pub use mlp::{
    accuracy, features, mlp_forward, mlp_train, softmax, train_features, DenseLayer, FallProbabilities, FeatureConfig,
    Mlp, TrainConfig, TrainReport, FALL_CLASS, FALL_CLASSIFIER_SIZES, NOT_FALL_CLASS,
};
pub use pose::{
    read_detections, read_detections_file, write_detections, BoundingBox, Keypoint, KeypointName, LabeledDetection,
    PoseDetection, KEYPOINT_COUNT,
};
pub use rules::{rules_fall, RulesVerdict, DEFAULT_KEYPOINT_THRESHOLD};
pub use synthetic::synthetic_dataset;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FallDetError {
    #[error("malformed detection: {0}")]
    MalformedDetection(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("training data has no examples of class {0}")]
    EmptyClass(usize),
    #[error("training diverged in epoch {epoch}; lower the learning rate")]
    NonfiniteLoss { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
