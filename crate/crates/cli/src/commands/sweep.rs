use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::{ensemble, io, Error, Result};

#[derive(ClapArgs)]
pub struct Args {
    /// Blended as alpha*a + (1-alpha)*b.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Also write the curve as `alpha,gap` CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let a = io::read_predictions(&args.a)?;
    let b = io::read_predictions(&args.b)?;
    let (labels, _ids) = io::read_labels(&args.labels)?;
    let sweep = ensemble::alpha_sweep(&a, &b, &labels, args.step, args.k)?;
    if let Some(path) = &args.out_csv {
        let csv = super::csv_table("alpha,gap", sweep.grid.iter().map(|&(x, g)| vec![x, g]));
        io::write_text(path, &csv)?;
    }
    serde_json::to_value(&sweep).map_err(|e| Error::InvalidParameter(e.to_string()))
}
