use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::mlp::Network;
use divens_core::{io, Result};
use serde_json::json;

#[derive(ClapArgs)]
pub struct Args {
    /// Checkpoint directory written by `train` or `seqbuild`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let ckpt = io::load_checkpoint(&args.checkpoint)?;
    let features = io::read_matrix(&args.features)?;
    let net = Network::from_parts(ckpt.config, ckpt.layers)?;
    let preds = net.predict(&features)?;
    io::write_predictions(&args.out, &preds)?;
    Ok(json!({
        "videos": preds.num_videos(),
        "classes": preds.num_classes(),
        "checkpoint_epoch": ckpt.epoch,
        "out": args.out.display().to_string(),
    }))
}
