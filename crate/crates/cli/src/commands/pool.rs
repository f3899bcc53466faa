use std::path::PathBuf;

use clap::{Args as ClapArgs, ValueEnum};
use divens_core::pooling;
use divens_core::types::Matrix;
use divens_core::{io, Error, Result};
use serde_json::json;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mean,
    Meanstd,
    Roi,
    Bow,
}

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, value_enum)]
    method: Method,
    /// Frame archive to pool.
    #[arg(long)]
    frames: PathBuf,
    /// Output feature matrix, one row per video in archive order.
    #[arg(long)]
    out: PathBuf,
    /// Codebook to reuse for --method bow; fitted from the frames when
    /// absent.
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Whitening model to reuse for --method roi; fitted from the frames
    /// when absent.
    #[arg(long)]
    pca: Option<PathBuf>,
    /// Codebook size when fitting for bow.
    #[arg(long, default_value_t = 64)]
    clusters: usize,
    /// Lloyd iteration cap when fitting for bow.
    #[arg(long, default_value_t = 20)]
    kmeans_iters: usize,
    /// Seed for codebook fitting.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Variance floor when fitting the whitening model for roi.
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Persist a freshly fitted codebook here.
    #[arg(long)]
    save_codebook: Option<PathBuf>,
    /// Persist a freshly fitted whitening model here.
    #[arg(long)]
    save_pca: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<serde_json::Value> {
    let frames = io::read_frames(&args.frames)?;
    if frames.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} holds no frame sequences",
            args.frames.display()
        )));
    }
    let mut fitted = Vec::new();
    let rows: Vec<Vec<f32>> = match args.method {
        Method::Mean => frames.iter().map(pooling::mean_pool).collect(),
        Method::Meanstd => frames.iter().map(pooling::mean_std_pool).collect(),
        Method::Roi => {
            let model = match &args.pca {
                Some(p) => io::load_pca_model(p)?,
                None => {
                    let model = pooling::fit_roi_pca(&frames, args.eps)?;
                    if let Some(p) = &args.save_pca {
                        io::save_pca_model(p, &model)?;
                        fitted.push(("pca", p.display().to_string()));
                    }
                    model
                }
            };
            frames
                .iter()
                .map(|f| pooling::roi_pool(f, &model))
                .collect::<Result<_>>()?
        }
        Method::Bow => {
            let codebook = match &args.codebook {
                Some(p) => io::load_codebook(p)?,
                None => {
                    let stacked: Vec<Vec<f32>> = frames
                        .iter()
                        .flat_map(|f| (0..f.num_frames()).map(|t| f.frame(t).to_vec()))
                        .collect();
                    let data = Matrix::from_rows(stacked)?;
                    let codebook =
                        pooling::kmeans_fit(&data, args.clusters, args.seed, args.kmeans_iters)?;
                    if let Some(p) = &args.save_codebook {
                        io::save_codebook(p, &codebook)?;
                        fitted.push(("codebook", p.display().to_string()));
                    }
                    codebook
                }
            };
            frames
                .iter()
                .map(|f| pooling::bow_pool(f, &codebook))
                .collect::<Result<_>>()?
        }
    };
    let features = Matrix::from_rows(rows)?;
    io::write_matrix(&args.out, &features)?;
    let mut summary = json!({
        "videos": features.rows(),
        "dim": features.cols(),
        "out": args.out.display().to_string(),
    });
    for (kind, path) in fitted {
        summary[kind] = json!(path);
    }
    Ok(summary)
}
