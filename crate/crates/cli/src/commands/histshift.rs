use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::{diversity, io, Error, Result};

#[derive(ClapArgs)]
pub struct Args {
    /// Combined predictions of the base ensemble.
    #[arg(long)]
    base: PathBuf,
    /// Combined predictions of the extended ensemble.
    #[arg(long)]
    extended: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Confidence margin defining the base wrong set being tracked.
    #[arg(long, default_value_t = 0.9)]
    theta: f64,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Also write `bin_low,bin_high,base,extended` CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let base = io::read_predictions(&args.base)?;
    let extended = io::read_predictions(&args.extended)?;
    let (labels, _ids) = io::read_labels(&args.labels)?;
    let shift =
        diversity::histogram_shift_of_matrices(&base, &extended, &labels, args.theta, args.bins)?;
    if let Some(path) = &args.out_csv {
        let width = 1.0 / args.bins as f64;
        let csv = super::csv_table(
            "bin_low,bin_high,base,extended",
            (0..args.bins).map(|i| {
                vec![
                    i as f64 * width,
                    (i + 1) as f64 * width,
                    shift.base_hist[i] as f64,
                    shift.extended_hist[i] as f64,
                ]
            }),
        );
        io::write_text(path, &csv)?;
    }
    serde_json::to_value(&shift).map_err(|e| Error::InvalidParameter(e.to_string()))
}
