use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::{ensemble, io, Result};
use serde_json::json;

#[derive(ClapArgs)]
pub struct Args {
    /// Prediction matrices to average, entrywise.
    #[arg(long, num_args = 1.., required = true)]
    preds: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let members = super::load_prediction_set(&args.preds)?;
    let refs: Vec<_> = members.iter().collect();
    let combined = ensemble::average(&refs)?;
    io::write_predictions(&args.out, &combined)?;
    Ok(json!({
        "members": members.len(),
        "videos": combined.num_videos(),
        "classes": combined.num_classes(),
        "out": args.out.display().to_string(),
    }))
}
