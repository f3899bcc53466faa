use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::{ensemble, io, metrics, Result};
use serde_json::json;

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Network recipe shared by all members (seeds are derived per
    /// member).
    #[arg(long)]
    config: PathBuf,
    /// Number of members to build.
    #[arg(long)]
    size: usize,
    /// Diversity pressure for members after the first.
    #[arg(long)]
    lambda: f64,
    /// Receives member-<i>.divm, history-<i>.json, and combined.divm.
    #[arg(long)]
    out_dir: PathBuf,
    /// Train/validation row split; without it the build validates on its
    /// own training rows.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    k: usize,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let features = io::read_matrix(&args.features)?;
    let (labels, _ids) = io::read_labels(&args.labels)?;
    let config = io::read_network_config(&args.config)?;
    let (tf, tl, vf, vl) = super::train::split_corpus(&features, &labels, args.split.as_deref())?;
    let (built, histories) =
        ensemble::sequential_diverse_build(&config, &tf, &tl, &vf, &vl, args.size, args.lambda)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut member_gaps = Vec::with_capacity(built.len());
    for (i, member) in built.members().iter().enumerate() {
        io::write_predictions(
            args.out_dir.join(format!("member-{i}.divm")),
            &member.predictions,
        )?;
        io::write_history(
            args.out_dir.join(format!("history-{i}.json")),
            &histories[i],
        )?;
        member_gaps.push(metrics::gap_at_k(&member.predictions, &vl, args.k)?);
    }
    io::write_predictions(args.out_dir.join("combined.divm"), built.combined())?;

    let ensemble_gap = built.gap(&vl, args.k)?;
    let diversity = if built.len() >= 2 {
        Some(built.mean_pairwise_diversity()?)
    } else {
        None
    };
    Ok(json!({
        "members": built.len(),
        "lambda": args.lambda,
        "member_gaps": member_gaps,
        "ensemble_gap": ensemble_gap,
        "mean_diversity": diversity,
        "out_dir": args.out_dir.display().to_string(),
    }))
}
