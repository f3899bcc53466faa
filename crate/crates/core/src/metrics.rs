//! Ranking metrics for multi-label prediction. The headline score is
//! global average precision over each video's top-k predictions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{LabelSet, PredictionMatrix};

/// One (class, confidence) candidate, ordered worst-first so a max-heap
/// keeps the best k: lower confidence is greater, and among equal
/// confidences the larger class id is greater. Consequently the lowest
/// class id wins the last slot and ascending order is best-first.
#[derive(Clone, Copy)]
struct Candidate {
    confidence: f32,
    class: u32,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .confidence
            .total_cmp(&self.confidence)
            .then(self.class.cmp(&other.class))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Single pass over `row` keeping the k best candidates in a bounded
/// min-heap; O(len log k), never a full sort. Results land in `out`
/// best-first. Buffers are caller-owned so per-video calls don't allocate.
fn select_into(row: &[f32], k: usize, heap: &mut BinaryHeap<Candidate>, out: &mut Vec<Candidate>) {
    heap.clear();
    for (class, &confidence) in row.iter().enumerate() {
        let cand = Candidate {
            confidence,
            class: class as u32,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(&worst) = heap.peek() {
            if cand < worst {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    out.clear();
    out.extend(heap.iter().copied());
    out.sort_unstable();
}

/// Top-k entries of one confidence row as (class id, confidence), sorted
/// by confidence descending and class id ascending among ties. `k` larger
/// than the row returns the whole row sorted.
pub fn top_k_select(row: &[f32], k: usize) -> Result<Vec<(u32, f32)>> {
    if row.is_empty() {
        return Err(Error::EmptyPredictionRow);
    }
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let cap = k.min(row.len());
    let mut heap = BinaryHeap::with_capacity(cap);
    let mut out = Vec::with_capacity(cap);
    select_into(row, k, &mut heap, &mut out);
    Ok(out.iter().map(|c| (c.class, c.confidence)).collect())
}

fn check_gap_args(predictions: &PredictionMatrix, labels: &LabelSet, k: usize) -> Result<u64> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
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
    let denominator: u64 = (0..labels.num_videos())
        .map(|v| labels.num_positives(v).min(k) as u64)
        .sum();
    if denominator == 0 {
        return Err(Error::NoPositiveLabels);
    }
    Ok(denominator)
}

/// Global average precision at k.
///
/// Every video contributes its top-k (confidence, relevant) pairs; the
/// pairs from all videos are sorted together by confidence descending with
/// relevant pairs first among exact ties, and average precision of that
/// single ranked list is taken with denominator
/// `sum over videos of min(positives, k)`.
///
/// Scores are in [0, 1]. Accumulation is f64 throughout.
pub fn gap_at_k(predictions: &PredictionMatrix, labels: &LabelSet, k: usize) -> Result<f64> {
    let denominator = check_gap_args(predictions, labels, k)?;
    let num_videos = predictions.num_videos();
    let kept = k.min(predictions.num_classes());

    // Top-k runs per chunk of videos; chunk outputs are concatenated in
    // video order so the pair list is deterministic under any thread count.
    let videos: Vec<usize> = (0..num_videos).collect();
    let per_chunk: Vec<Vec<(f32, bool)>> = videos
        .par_chunks(512)
        .map(|chunk| {
            let mut heap = BinaryHeap::with_capacity(kept);
            let mut scratch = Vec::with_capacity(kept);
            let mut out = Vec::with_capacity(chunk.len() * kept);
            for &v in chunk {
                select_into(predictions.row(v), k, &mut heap, &mut scratch);
                let positives = labels.positives(v);
                for c in &scratch {
                    out.push((c.confidence, positives.binary_search(&c.class).is_ok()));
                }
            }
            out
        })
        .collect();

    let mut pairs: Vec<(f32, bool)> = Vec::with_capacity(num_videos * kept);
    for chunk in &per_chunk {
        pairs.extend_from_slice(chunk);
    }
    drop(per_chunk);

    // Total order (bitwise confidence, then relevance), so the unstable
    // sort has a unique result.
    pairs.par_sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));

    let mut cum_relevant = 0u64;
    let mut sum = 0.0f64;
    for (i, &(_, relevant)) in pairs.iter().enumerate() {
        if relevant {
            cum_relevant += 1;
            sum += cum_relevant as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / denominator as f64)
}

/// Reference implementation of [`gap_at_k`] by fully sorting every row.
/// Deliberately shares no selection or sorting helpers with the fast
/// route so the two can check each other.
pub fn gap_oracle(predictions: &PredictionMatrix, labels: &LabelSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if predictions.num_videos() != labels.num_videos()
        || predictions.num_classes() != labels.num_classes()
    {
        return Err(Error::dim("oracle input shapes differ".to_string()));
    }

    let num_videos = predictions.num_videos();
    let num_classes = predictions.num_classes();

    let mut denominator = 0u64;
    for v in 0..num_videos {
        denominator += labels.num_positives(v).min(k) as u64;
    }
    if denominator == 0 {
        return Err(Error::NoPositiveLabels);
    }

    let mut pairs: Vec<(f32, bool)> = Vec::new();
    for v in 0..num_videos {
        let row = predictions.row(v);
        let mut order: Vec<usize> = (0..num_classes).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        order.truncate(k);
        for class in order {
            pairs.push((row[class], labels.contains(v, class as u32)));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));

    let mut cum_relevant = 0u64;
    let mut sum = 0.0f64;
    for (i, &(_, relevant)) in pairs.iter().enumerate() {
        if relevant {
            cum_relevant += 1;
            sum += cum_relevant as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / denominator as f64)
}
