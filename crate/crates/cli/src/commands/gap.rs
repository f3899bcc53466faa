use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::{io, metrics, Result};
use serde_json::json;

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Candidates kept per video before global ranking.
    #[arg(long, default_value_t = 20)]
    k: usize,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let preds = io::read_predictions(&args.pred)?;
    let (labels, _ids) = io::read_labels(&args.labels)?;
    let gap = metrics::gap_at_k(&preds, &labels, args.k)?;
    Ok(json!({ "gap": gap }))
}
