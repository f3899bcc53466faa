use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::types::{CheckpointTag, ClassifierRecord, FeatureTag};
use divens_core::{diversity, io, Error, Result};
use serde_json::json;

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, num_args = 2.., required = true)]
    preds: Vec<PathBuf>,
    /// With labels, also report pair ensembling gains and the
    /// diversity-gain correlation (needs at least 3 inputs).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Directory receiving diversity.csv plus, with labels, gain.csv and
    /// scatter.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let members = super::load_prediction_set(&args.preds)?;
    let refs: Vec<_> = members.iter().collect();
    let matrix = diversity::diversity_matrix(&refs)?;
    let mean = diversity::mean_pairwise_diversity(&refs)?;
    let names: Vec<String> = args.preds.iter().map(|p| super::stem(p)).collect();
    let header = names.join(",");
    let mut summary = json!({
        "members": names,
        "diversity": matrix,
        "mean_diversity": mean,
    });

    let mut gain_csv = None;
    let mut scatter_csv = None;
    if let Some(labels_path) = &args.labels {
        let (labels, _ids) = io::read_labels(labels_path)?;
        let records: Vec<ClassifierRecord> = members
            .iter()
            .zip(&args.preds)
            .map(|(m, p)| ClassifierRecord {
                id: super::stem(p),
                feature_tag: FeatureTag::External,
                hidden_sizes: Vec::new(),
                dropout: 0.0,
                checkpoint_tag: CheckpointTag::Final,
                predictions: m.clone(),
            })
            .collect();
        let gain = diversity::pair_gain_matrix(&records, &labels, args.k)?;
        let corr = diversity::diversity_gain_correlation(&records, &labels, args.k)?;
        summary["gain"] = json!(gain);
        summary["correlation"] =
            serde_json::to_value(&corr).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        gain_csv = Some(super::csv_table(&header, gain.iter().cloned()));
        scatter_csv = Some(super::csv_table(
            "diversity,gain",
            corr.points.iter().map(|&(d, g)| vec![d, g]),
        ));
    }

    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        let csv = super::csv_table(&header, matrix.iter().cloned());
        io::write_text(dir.join("diversity.csv"), &csv)?;
        if let Some(csv) = gain_csv {
            io::write_text(dir.join("gain.csv"), &csv)?;
        }
        if let Some(csv) = scatter_csv {
            io::write_text(dir.join("scatter.csv"), &csv)?;
        }
    }
    Ok(summary)
}
