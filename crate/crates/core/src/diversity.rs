//! How differently do two classifiers behave, and does that difference
//! buy anything when they are averaged? Diversity here is one minus the
//! Pearson correlation of two prediction matrices; error analysis tracks
//! the examples each classifier gets badly wrong.

use rayon::prelude::*;

use crate::ensemble;
use crate::error::{Error, Result};
use crate::metrics::gap_at_k;
use crate::types::{ClassifierRecord, LabelSet, PredictionMatrix};

/// `1 - R` where R is the Pearson correlation between the flattened
/// matrices (population statistics, f64 two-pass). 0 for identical
/// predictions, up to 2 for perfectly anti-correlated ones. Either input
/// being constant is an error: its correlation is undefined.
pub fn pearson_diversity(a: &PredictionMatrix, b: &PredictionMatrix) -> Result<f64> {
    if a.num_videos() != b.num_videos() || a.num_classes() != b.num_classes() {
        return Err(Error::dim(format!(
            "correlating {}x{} with {}x{}",
            a.num_videos(),
            a.num_classes(),
            b.num_videos(),
            b.num_classes()
        )));
    }
    let n = a.values().len() as f64;
    let mean_a: f64 = a.values().iter().map(|&x| x as f64).sum::<f64>() / n;
    let mean_b: f64 = b.values().iter().map(|&x| x as f64).sum::<f64>() / n;
    let mut cov = 0.0f64;
    let mut var_a = 0.0f64;
    let mut var_b = 0.0f64;
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let dx = x as f64 - mean_a;
        let dy = y as f64 - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::ConstantPredictions);
    }
    Ok(1.0 - cov / (var_a.sqrt() * var_b.sqrt()))
}

fn member_predictions<'a>(members: &'a [ClassifierRecord]) -> Vec<&'a PredictionMatrix> {
    members.iter().map(|m| &m.predictions).collect()
}

/// Pairwise diversity for every member pair: symmetric with a zero
/// diagonal. Entry (i, j) is `pearson_diversity(members[i], members[j])`.
pub fn diversity_matrix(members: &[&PredictionMatrix]) -> Result<Vec<Vec<f64>>> {
    let m = members.len();
    if m < 2 {
        return Err(Error::param("diversity matrix needs at least 2 members"));
    }
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let computed: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| Ok(((i, j), pearson_diversity(members[i], members[j])?)))
        .collect::<Result<_>>()?;
    let mut out = vec![vec![0.0f64; m]; m];
    for ((i, j), d) in computed {
        out[i][j] = d;
        out[j][i] = d;
    }
    Ok(out)
}

/// Mean of the off-diagonal upper triangle of the diversity matrix: one
/// number for how spread out a member set is.
pub fn mean_pairwise_diversity(members: &[&PredictionMatrix]) -> Result<f64> {
    let matrix = diversity_matrix(members)?;
    let m = members.len();
    let mut sum = 0.0f64;
    for i in 0..m {
        for j in i + 1..m {
            sum += matrix[i][j];
        }
    }
    Ok(sum / (m * (m - 1) / 2) as f64)
}

/// Entry (i, j) for i != j: GAP of the pair's average minus the mean of
/// the two individual GAPs, i.e. what averaging those two buys. Diagonal
/// entries are zero.
pub fn pair_gain_matrix(
    members: &[ClassifierRecord],
    labels: &LabelSet,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    let m = members.len();
    if m < 2 {
        return Err(Error::param("pair gain matrix needs at least 2 members"));
    }
    let preds = member_predictions(members);
    let solo: Vec<f64> = preds
        .par_iter()
        .map(|p| gap_at_k(p, labels, k))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let computed: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let avg = ensemble::average(&[preds[i], preds[j]])?;
            let gap = gap_at_k(&avg, labels, k)?;
            Ok(((i, j), gap - (solo[i] + solo[j]) / 2.0))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![vec![0.0f64; m]; m];
    for ((i, j), g) in computed {
        out[i][j] = g;
        out[j][i] = g;
    }
    Ok(out)
}

/// One (diversity, pair gain) point per member pair plus rank and linear
/// correlations across those points.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiversityGainCorrelation {
    /// (pearson diversity, ensembling gain) per unordered pair, ordered
    /// by (i, j).
    pub points: Vec<(f64, f64)>,
    /// Spearman rank correlation; None when either coordinate is
    /// constant across pairs, which leaves ranks undefined.
    pub spearman: Option<f64>,
    /// Pearson correlation of the raw points; None when degenerate.
    pub pearson: Option<f64>,
}

/// Correlates pairwise diversity against pairwise ensembling gain over
/// all member pairs. Needs at least 3 members (3 points).
pub fn diversity_gain_correlation(
    members: &[ClassifierRecord],
    labels: &LabelSet,
    k: usize,
) -> Result<DiversityGainCorrelation> {
    if members.len() < 3 {
        return Err(Error::param(
            "diversity/gain correlation needs at least 3 members",
        ));
    }
    let preds = member_predictions(members);
    let div = diversity_matrix(&preds)?;
    let gain = pair_gain_matrix(members, labels, k)?;
    let mut points = Vec::new();
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            points.push((div[i][j], gain[i][j]));
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(DiversityGainCorrelation {
        pearson: pearson(&xs, &ys),
        spearman: spearman(&xs, &ys),
        points,
    })
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

/// Average ranks for ties, e.g. two values tied for ranks 2 and 3 both
/// get 2.5.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tied block i..=j shares the mean rank.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// The examples a classifier gets badly wrong at threshold `theta`:
/// positives predicted at or below `1 - theta` (confidently missed) and
/// negatives predicted at or above `theta` (confidently asserted).
/// Stored as sorted (video, class) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct WrongSet {
    theta: f64,
    pairs: Vec<(u32, u32)>,
}

impl WrongSet {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn contains(&self, video: u32, class: u32) -> bool {
        self.pairs.binary_search(&(video, class)).is_ok()
    }

    pub fn intersection(&self, other: &WrongSet) -> WrongSet {
        let mut pairs = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.pairs.len() && j < other.pairs.len() {
            match self.pairs[i].cmp(&other.pairs[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    pairs.push(self.pairs[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        WrongSet {
            theta: self.theta,
            pairs,
        }
    }

    pub fn union(&self, other: &WrongSet) -> WrongSet {
        let mut pairs = Vec::with_capacity(self.pairs.len() + other.pairs.len());
        let (mut i, mut j) = (0, 0);
        while i < self.pairs.len() || j < other.pairs.len() {
            let take_left = match (self.pairs.get(i), other.pairs.get(j)) {
                (Some(a), Some(b)) => {
                    if a == b {
                        j += 1;
                    }
                    a <= b
                }
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => unreachable!(),
            };
            if take_left {
                pairs.push(self.pairs[i]);
                i += 1;
            } else {
                pairs.push(other.pairs[j]);
                j += 1;
            }
        }
        WrongSet {
            theta: self.theta,
            pairs,
        }
    }

    pub fn is_subset(&self, other: &WrongSet) -> bool {
        self.pairs.iter().all(|&(v, c)| other.contains(v, c))
    }
}

/// Collects the wrong set of one prediction matrix. `theta` must lie in
/// (0, 1); 0.9 means "badly wrong with 90% confidence".
pub fn wrong_set(
    predictions: &PredictionMatrix,
    labels: &LabelSet,
    theta: f64,
) -> Result<WrongSet> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param(format!("theta {theta} must be in (0, 1)")));
    }
    if predictions.num_videos() != labels.num_videos()
        || predictions.num_classes() != labels.num_classes()
    {
        return Err(Error::dim(format!(
            "predictions are {}x{}, labels are {}x{}",
            predictions.num_videos(),
            predictions.num_classes(),
            labels.num_videos(),
            labels.num_classes()
        )));
    }
    let mut pairs = Vec::new();
    for v in 0..predictions.num_videos() {
        let row = predictions.row(v);
        let positives = labels.positives(v);
        let mut p_at = 0usize;
        for (c, &conf) in row.iter().enumerate() {
            let is_positive = p_at < positives.len() && positives[p_at] == c as u32;
            if is_positive {
                p_at += 1;
                if 1.0 - conf as f64 >= theta {
                    pairs.push((v as u32, c as u32));
                }
            } else if conf as f64 >= theta {
                pairs.push((v as u32, c as u32));
            }
        }
    }
    Ok(WrongSet { theta, pairs })
}

/// Sizes after each member joins a growing ensemble.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrajectoryStep {
    pub members: usize,
    /// Examples every member so far gets wrong.
    pub intersection: usize,
    /// Examples at least one member so far gets wrong.
    pub union: usize,
}

/// Intersection and union of member wrong sets as members accumulate in
/// the given order. The intersection can only shrink or hold and the
/// union can only grow or hold as members join.
pub fn wrongset_trajectory(
    members: &[&PredictionMatrix],
    labels: &LabelSet,
    theta: f64,
) -> Result<Vec<TrajectoryStep>> {
    if members.is_empty() {
        return Err(Error::param("trajectory needs at least 1 member"));
    }
    let mut steps = Vec::with_capacity(members.len());
    let first = wrong_set(members[0], labels, theta)?;
    let mut inter = first.clone();
    let mut uni = first;
    steps.push(TrajectoryStep {
        members: 1,
        intersection: inter.len(),
        union: uni.len(),
    });
    for (i, member) in members.iter().enumerate().skip(1) {
        let ws = wrong_set(member, labels, theta)?;
        inter = inter.intersection(&ws);
        uni = uni.union(&ws);
        steps.push(TrajectoryStep {
            members: i + 1,
            intersection: inter.len(),
            union: uni.len(),
        });
    }
    Ok(steps)
}

/// Where the tracked examples' errors moved between a base ensemble and
/// an extended one.
#[derive(Debug, Clone, serde::Serialize)]
pub struct HistogramShift {
    /// Number of histogram bins; bin b covers [b/bins, (b+1)/bins) with
    /// the last bin closed on the right.
    pub bins: usize,
    pub theta: f64,
    /// Count of tracked examples per error bin under the base ensemble.
    pub base_hist: Vec<u64>,
    /// The same examples binned under the extended ensemble.
    pub extended_hist: Vec<u64>,
    pub tracked_examples: usize,
    pub base_mean_error: f64,
    pub extended_mean_error: f64,
}

/// Per-example error: distance from the ideal confidence (1 for a
/// positive label, 0 for a negative).
fn example_error(conf: f32, positive: bool) -> f64 {
    if positive {
        1.0 - conf as f64
    } else {
        conf as f64
    }
}

/// Tracks the examples the base ensemble gets badly wrong (its wrong set
/// at `theta`) and histograms their errors under base and extended
/// combined predictions. Callers assert base is actually contained in
/// extended; see [`crate::ensemble::Ensemble::histogram_shift`] for the
/// checked form.
pub fn histogram_shift_of_matrices(
    base: &PredictionMatrix,
    extended: &PredictionMatrix,
    labels: &LabelSet,
    theta: f64,
    bins: usize,
) -> Result<HistogramShift> {
    if bins == 0 {
        return Err(Error::param("histogram needs at least 1 bin"));
    }
    if base.num_videos() != extended.num_videos() || base.num_classes() != extended.num_classes() {
        return Err(Error::dim(format!(
            "base is {}x{}, extended is {}x{}",
            base.num_videos(),
            base.num_classes(),
            extended.num_videos(),
            extended.num_classes()
        )));
    }
    let tracked = wrong_set(base, labels, theta)?;
    let mut base_hist = vec![0u64; bins];
    let mut extended_hist = vec![0u64; bins];
    let mut base_sum = 0.0f64;
    let mut ext_sum = 0.0f64;
    for &(v, c) in tracked.pairs() {
        let positive = labels.contains(v as usize, c);
        let be = example_error(base.get(v as usize, c as usize), positive);
        let ee = example_error(extended.get(v as usize, c as usize), positive);
        base_hist[bin_of(be, bins)] += 1;
        extended_hist[bin_of(ee, bins)] += 1;
        base_sum += be;
        ext_sum += ee;
    }
    let n = tracked.len();
    Ok(HistogramShift {
        bins,
        theta,
        base_hist,
        extended_hist,
        tracked_examples: n,
        base_mean_error: if n > 0 { base_sum / n as f64 } else { 0.0 },
        extended_mean_error: if n > 0 { ext_sum / n as f64 } else { 0.0 },
    })
}

fn bin_of(err: f64, bins: usize) -> usize {
    // err = 1.0 lands in the last bin rather than one past it.
    ((err * bins as f64) as usize).min(bins - 1)
}
