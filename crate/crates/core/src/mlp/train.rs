//! Mini-batch training loop: shuffled batches, Adam updates, per-epoch
//! validation scoring, and parameter checkpoints for later reconstruction.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::gap_at_k;
use crate::mlp::{
    batch_loss, init_network, ForwardMode, LayerParams, LossKind, Network, NetworkConfig,
};
use crate::types::{LabelSet, Matrix, PredictionMatrix};
use crate::util::derive_seed;

/// Metrics recorded after one epoch. `train_loss` is the mean per-entry
/// loss over the epoch's batches (computed as training progresses, not
/// re-evaluated afterwards).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_gap: f64,
}

/// A parameter snapshot taken at the end of an epoch.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub val_gap: f64,
    pub layers: Vec<LayerParams>,
}

/// The record of one training run. Serializes to per-epoch metrics plus
/// the peak/final markers; parameter snapshots stay in memory only and
/// are persisted separately as checkpoint directories.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainingHistory {
    pub config: NetworkConfig,
    pub epochs: Vec<EpochRecord>,
    #[serde(skip)]
    pub checkpoints: Vec<Checkpoint>,
    /// Epoch with the highest validation score; earliest on ties.
    pub peak_epoch: usize,
    /// Last trained epoch.
    pub final_epoch: usize,
}

impl TrainingHistory {
    pub fn checkpoint_at(&self, epoch: usize) -> Result<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| c.epoch == epoch)
            .ok_or(Error::MissingCheckpoint(epoch))
    }

    pub fn peak_checkpoint(&self) -> Result<&Checkpoint> {
        self.checkpoint_at(self.peak_epoch)
    }

    pub fn final_checkpoint(&self) -> Result<&Checkpoint> {
        self.checkpoint_at(self.final_epoch)
    }

    /// The run as it looked after `max_epoch`: later records and
    /// checkpoints dropped, peak and final markers recomputed.
    pub fn truncated(&self, max_epoch: usize) -> TrainingHistory {
        let epochs: Vec<EpochRecord> = self
            .epochs
            .iter()
            .filter(|r| r.epoch <= max_epoch)
            .cloned()
            .collect();
        let checkpoints: Vec<Checkpoint> = self
            .checkpoints
            .iter()
            .filter(|c| c.epoch <= max_epoch)
            .cloned()
            .collect();
        let (peak_epoch, final_epoch) = markers(&epochs);
        TrainingHistory {
            config: self.config.clone(),
            epochs,
            checkpoints,
            peak_epoch,
            final_epoch,
        }
    }
}

fn markers(epochs: &[EpochRecord]) -> (usize, usize) {
    let mut peak = 0usize;
    let mut best = f64::NEG_INFINITY;
    for r in epochs {
        if r.val_gap > best {
            best = r.val_gap;
            peak = r.epoch;
        }
    }
    let last = epochs.last().map(|r| r.epoch).unwrap_or(0);
    (peak, last)
}

/// Ensemble confidences to repel from during training, row-aligned with
/// the training set.
#[derive(Debug, Clone, Copy)]
pub struct DiversityTarget<'a> {
    pub ensemble: &'a PredictionMatrix,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions<'a> {
    pub diversity: Option<DiversityTarget<'a>>,
    /// Snapshot parameters every this many epochs; the last epoch is
    /// always snapshotted. 1 keeps every epoch reachable.
    pub checkpoint_stride: usize,
    /// k for the per-epoch validation score.
    pub val_k: usize,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions {
            diversity: None,
            checkpoint_stride: 1,
            val_k: 20,
        }
    }
}

fn dense_labels(labels: &LabelSet) -> Vec<f32> {
    let c = labels.num_classes();
    let mut out = vec![0.0f32; labels.num_videos() * c];
    for v in 0..labels.num_videos() {
        for &cls in labels.positives(v) {
            out[v * c + cls as usize] = 1.0;
        }
    }
    out
}

struct AlignedSet<'a> {
    features: &'a Matrix,
    labels: &'a LabelSet,
}

fn check_aligned(name: &str, set: &AlignedSet, config: &NetworkConfig) -> Result<()> {
    if set.features.cols() != config.input_dim {
        return Err(Error::dim(format!(
            "{name} features have {} columns, network expects {}",
            set.features.cols(),
            config.input_dim
        )));
    }
    if set.features.rows() != set.labels.num_videos() {
        return Err(Error::dim(format!(
            "{name} has {} feature rows but {} labeled videos",
            set.features.rows(),
            set.labels.num_videos()
        )));
    }
    if set.labels.num_classes() != config.num_classes {
        return Err(Error::dim(format!(
            "{name} labels have {} classes, network expects {}",
            set.labels.num_classes(),
            config.num_classes
        )));
    }
    Ok(())
}

/// Trains a fresh network. Deterministic for a given config: shuffling
/// and dropout run on independent streams derived from `config.seed`.
/// Validation GAP is computed after every epoch; divergence (non-finite
/// loss, gradient, or parameter) aborts with the history collected so far.
pub fn train(
    config: &NetworkConfig,
    train_features: &Matrix,
    train_labels: &LabelSet,
    val_features: &Matrix,
    val_labels: &LabelSet,
    options: &TrainOptions,
) -> Result<(Network, TrainingHistory)> {
    config.validate()?;
    check_aligned(
        "train",
        &AlignedSet {
            features: train_features,
            labels: train_labels,
        },
        config,
    )?;
    check_aligned(
        "val",
        &AlignedSet {
            features: val_features,
            labels: val_labels,
        },
        config,
    )?;
    if options.checkpoint_stride == 0 || options.val_k == 0 {
        return Err(Error::param("checkpoint_stride and val_k must be positive"));
    }
    if let Some(t) = &options.diversity {
        if t.ensemble.num_videos() != train_features.rows()
            || t.ensemble.num_classes() != config.num_classes
        {
            return Err(Error::dim(format!(
                "diversity target is {}x{}, training set is {}x{}",
                t.ensemble.num_videos(),
                t.ensemble.num_classes(),
                train_features.rows(),
                config.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&t.lambda) {
            return Err(Error::param(format!(
                "lambda {} must be in [0, 1]",
                t.lambda
            )));
        }
    }

    let num_videos = train_features.rows();
    let num_classes = config.num_classes;
    let dim = config.input_dim;
    let labels_dense = dense_labels(train_labels);

    let mut net = init_network(config)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));

    let mut indices: Vec<usize> = (0..num_videos).collect();
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(config.max_epochs);
    let mut checkpoints: Vec<Checkpoint> = Vec::new();

    let diverged = |epoch: usize, epochs: &[EpochRecord]| -> Error {
        let (peak_epoch, final_epoch) = markers(epochs);
        Error::Diverged {
            epoch,
            history: Box::new(TrainingHistory {
                config: config.clone(),
                epochs: epochs.to_vec(),
                checkpoints: Vec::new(),
                peak_epoch,
                final_epoch,
            }),
        }
    };

    for epoch in 0..config.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for chunk in indices.chunks(config.batch_size) {
            let b = chunk.len();
            let mut x = Vec::with_capacity(b * dim);
            let mut y = Vec::with_capacity(b * num_classes);
            for &v in chunk {
                x.extend_from_slice(train_features.row(v));
                y.extend_from_slice(&labels_dense[v * num_classes..(v + 1) * num_classes]);
            }
            let target: Option<Vec<f32>> = options.diversity.as_ref().map(|t| {
                let mut q = Vec::with_capacity(b * num_classes);
                for &v in chunk {
                    q.extend_from_slice(t.ensemble.row(v));
                }
                q
            });
            let loss_kind = match (&target, &options.diversity) {
                (Some(q), Some(t)) => LossKind::DiversityAware {
                    ensemble: q,
                    lambda: t.lambda,
                },
                _ => LossKind::Bce,
            };

            let batch = Matrix::new(b, dim, x)?;
            let step_seed = dropout_rng.random::<u64>();
            let trace = net.forward_trace(&batch, ForwardMode::Train { seed: step_seed })?;
            let loss = batch_loss(trace.predictions(), &y, &loss_kind)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, &epochs));
            }
            loss_sum += loss * b as f64;
            let grads = net.backward(&trace, &y, &loss_kind)?;
            match net.adam_step(&grads) {
                Ok(()) => {}
                Err(Error::DivergedGradient) => return Err(diverged(epoch, &epochs)),
                Err(e) => return Err(e),
            }
        }

        let val_preds = net.predict(val_features)?;
        let val_gap = gap_at_k(&val_preds, val_labels, options.val_k)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / num_videos as f64,
            val_gap,
        });
        if epoch % options.checkpoint_stride == 0 || epoch == config.max_epochs - 1 {
            checkpoints.push(Checkpoint {
                epoch,
                val_gap,
                layers: net.snapshot(),
            });
        }
    }

    let (peak_epoch, final_epoch) = markers(&epochs);
    Ok((
        net,
        TrainingHistory {
            config: config.clone(),
            epochs,
            checkpoints,
            peak_epoch,
            final_epoch,
        },
    ))
}
