//! Synthetic labelled video corpus. Each video gets a latent topic
//! vector; labels come from thresholding topic affinities globally, and
//! frames are noisy embeddings of the same latent vector, so pooled
//! frame features genuinely predict the labels.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::types::{FrameSequence, LabelSet};

fn default_val_fraction() -> f64 {
    0.2
}

/// Recipe for one corpus. Identical configs generate identical corpora;
/// `seed` drives the data, `split_seed` only the train/validation split,
/// so re-splitting never changes the videos themselves.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_classes: usize,
    /// Frame feature dimension.
    pub feature_dim: usize,
    /// Rank of the latent topic space; smaller means more correlated
    /// labels.
    pub latent_rank: usize,
    /// Average positive labels per video.
    pub label_density: f64,
    /// Frame noise around the video's embedded latent vector.
    pub noise_sigma: f64,
    pub frames_min: usize,
    pub frames_max: usize,
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 3000,
            num_classes: 50,
            feature_dim: 64,
            latent_rank: 8,
            label_density: 3.0,
            noise_sigma: 0.5,
            frames_min: 5,
            frames_max: 30,
            seed: 7,
            val_fraction: 0.2,
            split_seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos < 2 || self.num_classes == 0 || self.feature_dim == 0 {
            return Err(Error::param(
                "need at least 2 videos and positive class/feature counts",
            ));
        }
        if self.latent_rank == 0 {
            return Err(Error::param("latent_rank must be positive"));
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(Error::param(format!(
                "frame count range [{}, {}] is invalid",
                self.frames_min, self.frames_max
            )));
        }
        if !(self.label_density > 0.0) || !self.label_density.is_finite() {
            return Err(Error::param("label_density must be positive"));
        }
        let target = (self.num_videos as f64 * self.label_density).round();
        if target < 1.0 || target > (self.num_videos * self.num_classes) as f64 {
            return Err(Error::param(format!(
                "label_density {} yields {target} positives for {} slots",
                self.label_density,
                self.num_videos * self.num_classes
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::param("noise_sigma must be non-negative"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::param("val_fraction must be in (0, 1)"));
        }
        Ok(())
    }

    /// Exact number of positive labels the corpus will have.
    pub fn total_positives(&self) -> usize {
        ((self.num_videos as f64 * self.label_density).round() as usize)
            .clamp(1, self.num_videos * self.num_classes)
    }
}

/// Row indices of the train/validation partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// A generated corpus. Frames, labels, and split share row order.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub frames: Vec<FrameSequence>,
    pub labels: LabelSet,
    pub split: Split,
}

/// Generates the corpus described by `config`, deterministically.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let v = config.num_videos;
    let c = config.num_classes;
    let d = config.feature_dim;
    let r = config.latent_rank;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = StandardNormal;
    let draw = |rng: &mut ChaCha8Rng| -> f64 { normal.sample(rng) };

    // Topic matrix (class affinities per latent axis) and the embedding
    // from latent space into frame space.
    let topics: Vec<f64> = (0..c * r).map(|_| draw(&mut rng)).collect();
    let embed_scale = 1.0 / (r as f64).sqrt();
    let embed: Vec<f64> = (0..d * r).map(|_| draw(&mut rng) * embed_scale).collect();

    let mut affinities = vec![0.0f64; v * c];
    let mut frames = Vec::with_capacity(v);
    for video in 0..v {
        let z: Vec<f64> = (0..r).map(|_| draw(&mut rng)).collect();
        for class in 0..c {
            affinities[video * c + class] = topics[class * r..(class + 1) * r]
                .iter()
                .zip(&z)
                .map(|(&t, &zi)| t * zi)
                .sum();
        }
        let base: Vec<f64> = (0..d)
            .map(|i| {
                embed[i * r..(i + 1) * r]
                    .iter()
                    .zip(&z)
                    .map(|(&e, &zi)| e * zi)
                    .sum()
            })
            .collect();
        let t = rng.random_range(config.frames_min..=config.frames_max);
        let mut values = Vec::with_capacity(t * d);
        for _ in 0..t {
            for &b in &base {
                values.push((b + config.noise_sigma * draw(&mut rng)) as f32);
            }
        }
        frames.push(FrameSequence::new(format!("v{video:05}"), d, values)?);
    }

    // Global affinity ranking: exactly the top `total_positives` slots
    // become positive labels, ties broken by slot index.
    let target = config.total_positives();
    let mut order: Vec<usize> = (0..v * c).collect();
    order.sort_by(|&a, &b| affinities[b].total_cmp(&affinities[a]).then(a.cmp(&b)));
    let mut positives: Vec<Vec<u32>> = vec![Vec::new(); v];
    for &slot in order.iter().take(target) {
        positives[slot / c].push((slot % c) as u32);
    }
    for p in &mut positives {
        p.sort_unstable();
    }
    let labels = LabelSet::new(c, positives)?;

    // Split on its own stream so re-splitting leaves the data alone.
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.split_seed);
    let mut idx: Vec<usize> = (0..v).collect();
    use rand::seq::SliceRandom;
    idx.shuffle(&mut split_rng);
    let val_count = ((v as f64 * config.val_fraction).round() as usize).clamp(1, v - 1);
    let mut val: Vec<usize> = idx[..val_count].to_vec();
    let mut train: Vec<usize> = idx[val_count..].to_vec();
    val.sort_unstable();
    train.sort_unstable();

    Ok(SynthDataset {
        config: config.clone(),
        frames,
        labels,
        split: Split { train, val },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_videos: 40,
            num_classes: 6,
            feature_dim: 5,
            latent_rank: 3,
            label_density: 2.0,
            noise_sigma: 0.3,
            frames_min: 2,
            frames_max: 7,
            seed: 9,
            val_fraction: 0.25,
            split_seed: 4,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.split, b.split);
        let mut other = small();
        other.seed = 10;
        let c = generate(&other).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn label_count_is_exact() {
        let data = generate(&small()).unwrap();
        assert_eq!(data.labels.total_positives(), 80);
        assert_eq!(small().total_positives(), 80);
    }

    #[test]
    fn frame_counts_respect_bounds() {
        let data = generate(&small()).unwrap();
        assert_eq!(data.frames.len(), 40);
        for f in &data.frames {
            assert!(f.num_frames() >= 2 && f.num_frames() <= 7);
            assert_eq!(f.dim(), 5);
        }
        // Ids are unique and aligned with row order.
        assert_eq!(data.frames[3].video_id(), "v00003");
    }

    #[test]
    fn split_partitions_all_videos() {
        let data = generate(&small()).unwrap();
        assert_eq!(data.split.val.len(), 10);
        let mut all: Vec<usize> = data
            .split
            .train
            .iter()
            .chain(&data.split.val)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn split_seed_only_moves_the_split() {
        let mut cfg = small();
        cfg.split_seed = 99;
        let a = generate(&small()).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.split, b.split);
    }

    #[test]
    fn labels_correlate_with_latents_not_noise() {
        // With zero noise and one frame, mean-pooled features determine
        // the latent exactly; sanity-check that some video has a
        // positive label at all and none exceed the class range.
        let mut cfg = small();
        cfg.noise_sigma = 0.0;
        cfg.frames_min = 1;
        cfg.frames_max = 1;
        let data = generate(&cfg).unwrap();
        assert!(data.labels.total_positives() > 0);
        assert!((0..40).any(|v| data.labels.num_positives(v) > 0));
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut c = small();
        c.frames_min = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.frames_min = 9;
        c.frames_max = 3;
        assert!(c.validate().is_err());
        let mut c = small();
        c.label_density = 0.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.label_density = 100.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.val_fraction = 1.0;
        assert!(c.validate().is_err());
        assert!(small().validate().is_ok());
    }
}
