//! Frame pooling: collapse a variable-length frame sequence into one
//! fixed-size feature vector. Four families are provided: mean, mean with
//! normalized standard deviation, multi-scale temporal region max pooling
//! with PCA whitening, and bag-of-words over a k-means codebook.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{FrameSequence, Matrix};

/// Per-dimension mean over frames, accumulated in f64.
pub fn mean_pool(seq: &FrameSequence) -> Vec<f32> {
    let d = seq.dim();
    let t = seq.num_frames();
    let mut acc = vec![0.0f64; d];
    for i in 0..t {
        for (a, &x) in acc.iter_mut().zip(seq.frame(i)) {
            *a += x as f64;
        }
    }
    acc.iter().map(|&a| (a / t as f64) as f32).collect()
}

/// Mean concatenated with the per-dimension population standard deviation
/// (divide by T, not T-1). The deviation half is L2-normalized as a block;
/// an all-zero deviation (identical frames) stays zero.
pub fn mean_std_pool(seq: &FrameSequence) -> Vec<f32> {
    let d = seq.dim();
    let t = seq.num_frames() as f64;
    let mut mean = vec![0.0f64; d];
    for i in 0..seq.num_frames() {
        for (a, &x) in mean.iter_mut().zip(seq.frame(i)) {
            *a += x as f64;
        }
    }
    for a in &mut mean {
        *a /= t;
    }
    let mut var = vec![0.0f64; d];
    for i in 0..seq.num_frames() {
        for ((a, &m), &x) in var.iter_mut().zip(&mean).zip(seq.frame(i)) {
            let c = x as f64 - m;
            *a += c * c;
        }
    }
    let mut std: Vec<f64> = var.iter().map(|&v| (v / t).sqrt()).collect();
    l2_normalize(&mut std);
    let mut out = Vec::with_capacity(2 * d);
    out.extend(mean.iter().map(|&m| m as f32));
    out.extend(std.iter().map(|&s| s as f32));
    out
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// The ten multi-scale temporal windows over a sequence of length `t`:
/// scale s contributes s windows of width `ceil(2t / (s + 1))` (clamped to
/// [1, t]) with start offsets spread evenly as `floor(i * (t - w) / (s - 1))`.
/// Ordered by scale, then by start. Windows overlap by design and short
/// sequences yield duplicate windows.
pub fn temporal_regions(t: usize) -> Result<Vec<Range<usize>>> {
    if t == 0 {
        return Err(Error::param("sequence length must be at least 1"));
    }
    let mut regions = Vec::with_capacity(10);
    for s in 1..=4usize {
        let w = ((2 * t + s) / (s + 1)).clamp(1, t);
        if s == 1 {
            regions.push(0..w);
        } else {
            for i in 0..s {
                let start = i * (t - w) / (s - 1);
                regions.push(start..start + w);
            }
        }
    }
    Ok(regions)
}

/// The ten region descriptors for one sequence: per-dimension max over
/// each temporal window, L2-normalized. An all-zero max stays zero.
pub fn roi_region_vectors(seq: &FrameSequence) -> Result<Vec<Vec<f32>>> {
    let d = seq.dim();
    let regions = temporal_regions(seq.num_frames())?;
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(regions.len());
    for r in regions {
        let mut m = seq.frame(r.start).to_vec();
        for i in r.start + 1..r.end {
            for (a, &x) in m.iter_mut().zip(seq.frame(i)) {
                *a = a.max(x);
            }
        }
        let mut v: Vec<f64> = m.iter().map(|&x| x as f64).collect();
        l2_normalize(&mut v);
        out.push(v.iter().map(|&x| x as f32).collect());
        debug_assert_eq!(out.last().unwrap().len(), d);
    }
    Ok(out)
}

/// A fitted PCA whitening transform: subtract `mean`, rotate onto the
/// orthonormal `basis` columns (principal axes, leading variance first),
/// multiply by per-axis `scale`.
#[derive(Debug, Clone)]
pub struct PcaWhitenModel {
    dim: usize,
    mean: Vec<f64>,
    /// Row-major dim x dim; column j is the j-th principal axis.
    basis: Vec<f64>,
    scale: Vec<f64>,
}

impl PcaWhitenModel {
    /// Validates shapes, finiteness, strictly positive scales, and that
    /// the basis columns are orthonormal within 1e-5.
    pub fn new(mean: Vec<f64>, basis: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || basis.len() != d * d || scale.len() != d {
            return Err(Error::dim(format!(
                "whitening model with mean {}, basis {}, scale {} is inconsistent",
                mean.len(),
                basis.len(),
                scale.len()
            )));
        }
        if mean.iter().chain(&basis).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("whitening model entries".to_string()));
        }
        if scale.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::param(
                "whitening scales must be finite and positive".to_string(),
            ));
        }
        for a in 0..d {
            for b in a..d {
                let dot: f64 = (0..d).map(|i| basis[i * d + a] * basis[i * d + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-5 {
                    return Err(Error::param(format!(
                        "basis columns {a} and {b} are not orthonormal (dot {dot})"
                    )));
                }
            }
        }
        Ok(PcaWhitenModel {
            dim: d,
            mean,
            basis,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Whitened coordinates of `x`.
    pub fn apply(&self, x: &[f32]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "whitening input dimension");
        let d = self.dim;
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .map(|(&v, &m)| v as f64 - m)
            .collect();
        (0..d)
            .map(|j| {
                let dot: f64 = (0..d).map(|i| self.basis[i * d + j] * centered[i]).sum();
                self.scale[j] * dot
            })
            .collect()
    }
}

/// Fits PCA whitening on the rows of `data` using the population
/// covariance (divide by N). Axis j gets scale `1 / sqrt(max(lambda_j, 0)
/// + eps)`; `eps` guards rank-deficient data, and too small a guard for
/// the data's conditioning is reported as an error rather than producing
/// non-finite scales. Each axis is oriented so its largest-magnitude
/// entry is positive, which makes the fit deterministic.
pub fn fit_pca_whitening(data: &Matrix, eps: f64) -> Result<PcaWhitenModel> {
    let n = data.rows();
    let d = data.cols();
    if n < 2 {
        return Err(Error::param("PCA needs at least 2 rows"));
    }
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::param("eps must be finite and non-negative"));
    }

    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (a, &x) in mean.iter_mut().zip(data.row(i)) {
            *a += x as f64;
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }

    let mut cov = vec![0.0f64; d * d];
    let mut centered = vec![0.0f64; d];
    for i in 0..n {
        for ((c, &x), &m) in centered.iter_mut().zip(data.row(i)).zip(&mean) {
            *c = x as f64 - m;
        }
        for a in 0..d {
            let ca = centered[a];
            for b in a..d {
                cov[a * d + b] += ca * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / n as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }

    let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[i * d + j]).symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        sym.eigenvalues[b]
            .total_cmp(&sym.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut basis = vec![0.0f64; d * d];
    let mut scale = vec![0.0f64; d];
    for (j, &src) in order.iter().enumerate() {
        let col = sym.eigenvectors.column(src);
        let mut lead = 0usize;
        for i in 1..d {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        let flip = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[i * d + j] = flip * col[i];
        }
        let lambda = sym.eigenvalues[src].max(0.0);
        let s = 1.0 / (lambda + eps).sqrt();
        if !s.is_finite() {
            return Err(Error::NonFinite(format!(
                "whitening scale for axis {j}: eps {eps} too small for eigenvalue {lambda}"
            )));
        }
        scale[j] = s;
    }
    PcaWhitenModel::new(mean, basis, scale)
}

/// Fits the whitening transform for [`roi_pool`] on the pooled region
/// descriptors of `seqs` (ten per sequence, zero descriptors included).
pub fn fit_roi_pca(seqs: &[FrameSequence], eps: f64) -> Result<PcaWhitenModel> {
    if seqs.is_empty() {
        return Err(Error::param("no sequences to fit on"));
    }
    let d = seqs[0].dim();
    let mut rows = Vec::with_capacity(seqs.len() * 10);
    for seq in seqs {
        if seq.dim() != d {
            return Err(Error::dim(format!(
                "sequence {} has dim {}, expected {d}",
                seq.video_id(),
                seq.dim()
            )));
        }
        rows.extend(roi_region_vectors(seq)?);
    }
    fit_pca_whitening(&Matrix::from_rows(rows)?, eps)
}

/// Region max pooling: each of the ten normalized region descriptors is
/// whitened independently, the results are summed, and the sum is
/// L2-normalized. All-zero descriptors pass through as zero (they skip
/// whitening and contribute nothing); if every descriptor is zero the
/// output is the zero vector.
pub fn roi_pool(seq: &FrameSequence, model: &PcaWhitenModel) -> Result<Vec<f32>> {
    if seq.dim() != model.dim() {
        return Err(Error::dim(format!(
            "sequence dim {} does not match whitening model dim {}",
            seq.dim(),
            model.dim()
        )));
    }
    let mut sum = vec![0.0f64; seq.dim()];
    for region in roi_region_vectors(seq)? {
        if region.iter().all(|&x| x == 0.0) {
            continue;
        }
        for (a, w) in sum.iter_mut().zip(model.apply(&region)) {
            *a += w;
        }
    }
    l2_normalize(&mut sum);
    Ok(sum.iter().map(|&x| x as f32).collect())
}

/// A k-means codebook. Centroids are pairwise distinct.
#[derive(Debug, Clone)]
pub struct Codebook {
    centroids: Matrix,
}

impl Codebook {
    pub fn new(centroids: Matrix) -> Result<Self> {
        // Sort row views lexicographically so duplicates become adjacent;
        // avoids the quadratic all-pairs check at large k.
        let k = centroids.rows();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (centroids.row(a), centroids.row(b));
            ra.iter()
                .zip(rb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != std::cmp::Ordering::Equal)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            if centroids.row(w[0]) == centroids.row(w[1]) {
                return Err(Error::param(format!(
                    "centroids {} and {} are identical",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }
        Ok(Codebook { centroids })
    }

    pub fn len(&self) -> usize {
        self.centroids.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        self.centroids.row(i)
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    /// Index of the nearest centroid by squared Euclidean distance;
    /// ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for i in 0..self.len() {
            let d = dist2(x, self.centroid(i));
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let c = x as f64 - y as f64;
            c * c
        })
        .sum()
}

/// Lloyd's k-means with k-means++ seeding. Deterministic for a given
/// seed: sequential scans, ties to the lowest index, and an empty cluster
/// is re-seeded to the point farthest from its assigned centroid. Stops
/// when assignments repeat or after `max_iters` assign/update rounds.
pub fn kmeans_fit(samples: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    let n = samples.rows();
    let d = samples.cols();
    if k == 0 || k > n {
        return Err(Error::param(format!(
            "k must be in [1, {n}] for {n} samples, got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++: each next seed is drawn with probability proportional to
    // squared distance from the chosen set.
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut seeds = vec![first];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist2(samples.row(i), samples.row(first)))
        .collect();
    while seeds.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                cum += w;
                if u < cum {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave u just above the final cum; fall back to
            // the last point with positive weight.
            pick.unwrap_or_else(|| {
                d2.iter()
                    .rposition(|&w| w > 0.0)
                    .expect("total > 0 implies a positive weight")
            })
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        seeds.push(pick);
        for i in 0..n {
            d2[i] = d2[i].min(dist2(samples.row(i), samples.row(pick)));
        }
    }

    let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
    for &s in &seeds {
        centroids.extend(samples.row(s).iter().map(|&x| x as f64));
    }

    let mut assign = vec![usize::MAX; n];
    let mut assign_d2 = vec![0.0f64; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for i in 0..n {
            let row = samples.row(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd: f64 = row
                    .iter()
                    .zip(&centroids[c * d..(c + 1) * d])
                    .map(|(&x, &m)| {
                        let v = x as f64 - m;
                        v * v
                    })
                    .sum();
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
            assign_d2[i] = best_d;
        }
        if !changed {
            break;
        }

        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (a, &x) in sums[c * d..(c + 1) * d].iter_mut().zip(samples.row(i)) {
                *a += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (m, &s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..]) {
                    *m = s / counts[c] as f64;
                }
            } else {
                // Re-seed to the point currently worst served; zeroing its
                // distance stops a second empty cluster from taking it too.
                let mut far = 0usize;
                for i in 1..n {
                    if assign_d2[i] > assign_d2[far] {
                        far = i;
                    }
                }
                assign_d2[far] = 0.0;
                for (m, &x) in centroids[c * d..(c + 1) * d]
                    .iter_mut()
                    .zip(samples.row(far))
                {
                    *m = x as f64;
                }
            }
        }
    }

    let values: Vec<f32> = centroids.iter().map(|&m| m as f32).collect();
    Codebook::new(Matrix::new(k, d, values)?)
}

/// Sum of squared distances from each sample to its nearest centroid.
pub fn kmeans_inertia(samples: &Matrix, codebook: &Codebook) -> Result<f64> {
    if samples.cols() != codebook.dim() {
        return Err(Error::dim(format!(
            "samples have dim {}, codebook {}",
            samples.cols(),
            codebook.dim()
        )));
    }
    Ok((0..samples.rows())
        .map(|i| {
            let row = samples.row(i);
            (0..codebook.len())
                .map(|c| dist2(row, codebook.centroid(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .sum())
}

/// Bag-of-words pooling: histogram of nearest-centroid assignments over
/// frames, divided by the frame count. Entries are non-negative and sum
/// to 1 up to rounding.
pub fn bow_pool(seq: &FrameSequence, codebook: &Codebook) -> Result<Vec<f32>> {
    if seq.dim() != codebook.dim() {
        return Err(Error::dim(format!(
            "sequence dim {} does not match codebook dim {}",
            seq.dim(),
            codebook.dim()
        )));
    }
    let t = seq.num_frames();
    let mut counts = vec![0u32; codebook.len()];
    for i in 0..t {
        counts[codebook.nearest(seq.frame(i))] += 1;
    }
    Ok(counts
        .iter()
        .map(|&c| (c as f64 / t as f64) as f32)
        .collect())
}
