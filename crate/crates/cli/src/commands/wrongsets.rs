use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::{diversity, io, Error, Result};

#[derive(ClapArgs)]
pub struct Args {
    /// Member predictions in accumulation order.
    #[arg(long, num_args = 1.., required = true)]
    preds: Vec<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    /// Confidence margin that makes an example count as wrong.
    #[arg(long, default_value_t = 0.9)]
    theta: f64,
    /// Also write `members,intersection,union` CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let members = super::load_prediction_set(&args.preds)?;
    let (labels, _ids) = io::read_labels(&args.labels)?;
    let refs: Vec<_> = members.iter().collect();
    let steps = diversity::wrongset_trajectory(&refs, &labels, args.theta)?;
    if let Some(path) = &args.out_csv {
        let csv = super::csv_table(
            "members,intersection,union",
            steps
                .iter()
                .map(|s| vec![s.members as f64, s.intersection as f64, s.union as f64]),
        );
        io::write_text(path, &csv)?;
    }
    serde_json::to_value(&steps).map_err(|e| Error::InvalidParameter(e.to_string()))
}
