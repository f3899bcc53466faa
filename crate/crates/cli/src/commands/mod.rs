pub mod diversity;
pub mod ensemble;
pub mod gap;
pub mod histshift;
pub mod pool;
pub mod predict;
pub mod seqbuild;
pub mod sweep;
pub mod synth;
pub mod train;
pub mod wrongsets;

use std::path::{Path, PathBuf};

use divens_core::types::PredictionMatrix;
use divens_core::{Error, Result};

/// Loads every matrix and checks they share one shape.
pub fn load_prediction_set(paths: &[PathBuf]) -> Result<Vec<PredictionMatrix>> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let m = divens_core::io::read_predictions(p)?;
        if let Some(first) = out.first() {
            let f: &PredictionMatrix = first;
            if m.num_videos() != f.num_videos() || m.num_classes() != f.num_classes() {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}x{}, expected {}x{} like the first input",
                    p.display(),
                    m.num_videos(),
                    m.num_classes(),
                    f.num_videos(),
                    f.num_classes()
                )));
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// File stem used as the member id in reports.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Renders rows of f64 cells as CSV with a header line.
pub fn csv_table(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
