//! Core data types: dense prediction matrices, sparse label sets, frame
//! sequences, and the classifier records that ensembles are built from.
//!
//! Matrices are row-major `Vec<f32>`; class counts always travel with the
//! data rather than being assumed.

use crate::error::{Error, Result};

/// Dense per-video class confidences, row-major, every entry in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    num_videos: usize,
    num_classes: usize,
    values: Vec<f32>,
}

impl PredictionMatrix {
    /// Validates shape and that every entry is finite and within [0, 1].
    pub fn new(num_videos: usize, num_classes: usize, values: Vec<f32>) -> Result<Self> {
        if num_videos == 0 || num_classes == 0 {
            return Err(Error::param("prediction matrix must be non-empty"));
        }
        let expected = num_videos
            .checked_mul(num_classes)
            .ok_or_else(|| Error::param("prediction matrix size overflows"))?;
        if values.len() != expected {
            return Err(Error::dim(format!(
                "prediction matrix has {} values, expected {num_videos}x{num_classes}={expected}",
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            // NaN fails the range test, so no separate finiteness check.
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!(
                    "confidence {v} at video {} class {} is outside [0, 1]",
                    i / num_classes,
                    i % num_classes
                )));
            }
        }
        Ok(PredictionMatrix {
            num_videos,
            num_classes,
            values,
        })
    }

    /// Skips entry validation. For callers that construct values already
    /// known to lie in [0, 1], e.g. large benchmark matrices.
    pub fn from_raw_unchecked(num_videos: usize, num_classes: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), num_videos * num_classes);
        PredictionMatrix {
            num_videos,
            num_classes,
            values,
        }
    }

    pub fn num_videos(&self) -> usize {
        self.num_videos
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, video: usize) -> &[f32] {
        &self.values[video * self.num_classes..(video + 1) * self.num_classes]
    }

    pub fn get(&self, video: usize, class: usize) -> f32 {
        self.values[video * self.num_classes + class]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn subset_rows(&self, videos: &[usize]) -> Result<PredictionMatrix> {
        let mut values = Vec::with_capacity(videos.len() * self.num_classes);
        for &v in videos {
            if v >= self.num_videos {
                return Err(Error::param(format!(
                    "row index {v} out of range for {} videos",
                    self.num_videos
                )));
            }
            values.extend_from_slice(self.row(v));
        }
        PredictionMatrix::new(videos.len(), self.num_classes, values)
    }
}

/// Sparse positive labels: one strictly ascending class-id list per video.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    num_videos: usize,
    num_classes: usize,
    positives: Vec<Vec<u32>>,
}

impl LabelSet {
    /// Validates that each list is strictly ascending (sorted, no
    /// duplicates) and that every id is below `num_classes`.
    pub fn new(num_classes: usize, positives: Vec<Vec<u32>>) -> Result<Self> {
        if num_classes == 0 || positives.is_empty() {
            return Err(Error::param("label set must be non-empty"));
        }
        for (video, list) in positives.iter().enumerate() {
            for (i, &c) in list.iter().enumerate() {
                if c as usize >= num_classes {
                    return Err(Error::param(format!(
                        "label {c} at video {video} exceeds class count {num_classes}"
                    )));
                }
                if i > 0 && list[i - 1] >= c {
                    return Err(Error::param(format!(
                        "labels for video {video} are not strictly ascending"
                    )));
                }
            }
        }
        Ok(LabelSet {
            num_videos: positives.len(),
            num_classes,
            positives,
        })
    }

    pub fn num_videos(&self) -> usize {
        self.num_videos
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn positives(&self, video: usize) -> &[u32] {
        &self.positives[video]
    }

    pub fn num_positives(&self, video: usize) -> usize {
        self.positives[video].len()
    }

    pub fn contains(&self, video: usize, class: u32) -> bool {
        self.positives[video].binary_search(&class).is_ok()
    }

    pub fn total_positives(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    /// Restriction to the given videos, in the given order.
    pub fn subset(&self, videos: &[usize]) -> Result<LabelSet> {
        let mut positives = Vec::with_capacity(videos.len());
        for &v in videos {
            if v >= self.num_videos {
                return Err(Error::param(format!(
                    "video index {v} out of range for {} videos",
                    self.num_videos
                )));
            }
            positives.push(self.positives[v].clone());
        }
        LabelSet::new(self.num_classes, positives)
    }
}

/// Variable-length sequence of fixed-dimension frame features for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    video_id: String,
    dim: usize,
    values: Vec<f32>,
}

impl FrameSequence {
    /// Requires at least one frame and all-finite values.
    pub fn new(video_id: impl Into<String>, dim: usize, values: Vec<f32>) -> Result<Self> {
        let video_id = video_id.into();
        if dim == 0 {
            return Err(Error::param(format!(
                "frame dimension for video {video_id} must be positive"
            )));
        }
        if values.is_empty() || values.len() % dim != 0 {
            return Err(Error::dim(format!(
                "video {video_id} has {} values, not a positive multiple of dim {dim}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "frame value at index {pos} of video {video_id}"
            )));
        }
        Ok(FrameSequence {
            video_id,
            dim,
            values,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_frames(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// General dense row-major matrix for pooled features and model tables.
/// Entries must be finite but are otherwise unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("matrix must be non-empty"));
        }
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::param("matrix size overflows"))?;
        if values.len() != expected {
            return Err(Error::dim(format!(
                "matrix has {} values, expected {rows}x{cols}={expected}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix value at row {} col {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        let mut values = Vec::with_capacity(n * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dim(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Matrix::new(n, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn subset_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::param(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Matrix::new(indices.len(), self.cols, values)
    }
}

/// Which pooled representation a classifier was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTag {
    Mean,
    MeanStd,
    Roi,
    Bow,
    /// Features produced outside this crate's pooling pipeline.
    External,
}

/// Which point of a training run a prediction matrix was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointTag {
    /// The epoch with the best validation score.
    Peak,
    /// The last trained epoch.
    Final,
    Epoch(usize),
}

/// One trained classifier: identity, provenance, and its predictions on a
/// fixed evaluation set.
#[derive(Debug, Clone)]
pub struct ClassifierRecord {
    pub id: String,
    pub feature_tag: FeatureTag,
    pub hidden_sizes: Vec<usize>,
    pub dropout: f64,
    pub checkpoint_tag: CheckpointTag,
    pub predictions: PredictionMatrix,
}

/// One problem found by [`validate_aligned`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    VideoCountMismatch {
        predictions: usize,
        labels: usize,
    },
    ClassCountMismatch {
        predictions: usize,
        labels: usize,
    },
    ConfidenceOutOfRange {
        video: usize,
        class: usize,
        value: f32,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::VideoCountMismatch {
                predictions,
                labels,
            } => write!(
                f,
                "video count mismatch: predictions {predictions}, labels {labels}"
            ),
            Violation::ClassCountMismatch {
                predictions,
                labels,
            } => write!(
                f,
                "class count mismatch: predictions {predictions}, labels {labels}"
            ),
            Violation::ConfidenceOutOfRange {
                video,
                class,
                value,
            } => write!(
                f,
                "confidence {value} at video {video} class {class} is outside [0, 1]"
            ),
        }
    }
}

/// Outcome of checking a prediction matrix against a label set. Collects
/// every violation instead of stopping at the first.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that predictions and labels describe the same videos and classes
/// and that every confidence is in range. Never fails; problems are
/// reported, not raised, so callers can show all of them at once.
pub fn validate_aligned(predictions: &PredictionMatrix, labels: &LabelSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    if predictions.num_videos() != labels.num_videos() {
        report.violations.push(Violation::VideoCountMismatch {
            predictions: predictions.num_videos(),
            labels: labels.num_videos(),
        });
    }
    if predictions.num_classes() != labels.num_classes() {
        report.violations.push(Violation::ClassCountMismatch {
            predictions: predictions.num_classes(),
            labels: labels.num_classes(),
        });
    }
    let cols = predictions.num_classes();
    for (i, &v) in predictions.values().iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            report.violations.push(Violation::ConfidenceOutOfRange {
                video: i / cols,
                class: i % cols,
                value: v,
            });
        }
    }
    report
}
