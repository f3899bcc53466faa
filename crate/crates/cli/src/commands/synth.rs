use std::path::PathBuf;

use clap::Args as ClapArgs;
use divens_core::{io, synth, Result};
use serde_json::json;

#[derive(ClapArgs)]
pub struct Args {
    /// Corpus recipe (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving frames.divf, labels.txt, and split.json.
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let config = io::read_synth_config(&args.config)?;
    let data = synth::generate(&config)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let ids: Vec<String> = data
        .frames
        .iter()
        .map(|f| f.video_id().to_string())
        .collect();
    io::write_frames(args.out_dir.join("frames.divf"), &data.frames)?;
    io::write_labels(args.out_dir.join("labels.txt"), &data.labels, &ids)?;
    io::write_split(args.out_dir.join("split.json"), &data.split)?;
    Ok(json!({
        "videos": config.num_videos,
        "classes": config.num_classes,
        "positives": data.labels.total_positives(),
        "train": data.split.train.len(),
        "val": data.split.val.len(),
        "out_dir": args.out_dir.display().to_string(),
    }))
}
