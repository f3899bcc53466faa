use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use divens_core::mlp::{self, TrainOptions, TrainingHistory};
use divens_core::types::{LabelSet, Matrix};
use divens_core::{io, Error, Result};
use serde_json::json;

#[derive(ClapArgs)]
pub struct Args {
    /// Pooled feature matrix for the whole corpus.
    #[arg(long)]
    features: PathBuf,
    /// Label file for the whole corpus.
    #[arg(long)]
    labels: PathBuf,
    /// Network recipe (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Receives history.json plus peak/ and final/ checkpoints.
    #[arg(long)]
    out_dir: PathBuf,
    /// Train/validation row split; without it the run validates on its
    /// own training rows.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Keep parameter snapshots every this many epochs.
    #[arg(long, default_value_t = 1)]
    checkpoint_stride: usize,
    /// Top-k depth for the per-epoch validation score.
    #[arg(long, default_value_t = 20)]
    k: usize,
}

/// Splits corpus-level features/labels into (train, val) views; a
/// missing split means both views are the full corpus.
pub fn split_corpus(
    features: &Matrix,
    labels: &LabelSet,
    split: Option<&Path>,
) -> Result<(Matrix, LabelSet, Matrix, LabelSet)> {
    if features.rows() != labels.num_videos() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows vs {} labelled videos",
            features.rows(),
            labels.num_videos()
        )));
    }
    match split {
        Some(path) => {
            let split = io::read_split(path)?;
            for &i in split.train.iter().chain(&split.val) {
                if i >= features.rows() {
                    return Err(Error::DimensionMismatch(format!(
                        "split row {i} exceeds corpus size {}",
                        features.rows()
                    )));
                }
            }
            Ok((
                features.subset_rows(&split.train)?,
                labels.subset(&split.train)?,
                features.subset_rows(&split.val)?,
                labels.subset(&split.val)?,
            ))
        }
        None => Ok((
            features.clone(),
            labels.clone(),
            features.clone(),
            labels.clone(),
        )),
    }
}

pub fn write_run_artifacts(
    out_dir: &Path,
    config: &mlp::NetworkConfig,
    history: &TrainingHistory,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    io::write_history(out_dir.join("history.json"), history)?;
    let peak = history.peak_checkpoint()?;
    io::save_checkpoint(
        out_dir.join("peak"),
        config,
        peak.epoch,
        peak.val_gap,
        &peak.layers,
    )?;
    let fin = history.final_checkpoint()?;
    io::save_checkpoint(
        out_dir.join("final"),
        config,
        fin.epoch,
        fin.val_gap,
        &fin.layers,
    )?;
    Ok(())
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let features = io::read_matrix(&args.features)?;
    let (labels, _ids) = io::read_labels(&args.labels)?;
    let config = io::read_network_config(&args.config)?;
    let (tf, tl, vf, vl) = split_corpus(&features, &labels, args.split.as_deref())?;
    let options = TrainOptions {
        checkpoint_stride: args.checkpoint_stride,
        val_k: args.k,
        ..TrainOptions::default()
    };
    let (_net, history) = mlp::train(&config, &tf, &tl, &vf, &vl, &options)?;
    write_run_artifacts(&args.out_dir, &config, &history)?;
    let peak = history.peak_checkpoint()?;
    let fin = history.final_checkpoint()?;
    Ok(json!({
        "epochs": history.epochs.len(),
        "peak_epoch": peak.epoch,
        "peak_gap": peak.val_gap,
        "final_epoch": fin.epoch,
        "final_gap": fin.val_gap,
        "out_dir": args.out_dir.display().to_string(),
    }))
}
