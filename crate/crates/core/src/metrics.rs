//! Layout quality metrics: Overlap, Alignment, MaxIoU and FID.
//!
//! Overlap and Alignment are reported on a x100 scale. The Alignment here is
//! the plain six-axis nearest-line distance without logarithmic warping, so
//! it is not numerically comparable to published Align columns.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::layout::{BBox, Layout};

/// Diagonal jitter added to feature covariances before the matrix root.
pub const FID_JITTER: f64 = 1e-6;

/// Pairwise intersection area over total element area, for one layout.
/// `None` when the layout has zero total area.
pub fn layout_overlap(layout: &Layout) -> Option<f64> {
    let total: f64 = layout.elements.iter().map(|e| e.bbox.area()).sum();
    if total <= 0.0 {
        return None;
    }
    let mut inter = 0.0;
    for (i, a) in layout.elements.iter().enumerate() {
        for b in &layout.elements[i + 1..] {
            inter += a.bbox.intersection(&b.bbox);
        }
    }
    Some(inter / total)
}

/// Mean [`layout_overlap`] over the corpus, x100. Layouts with zero total
/// area are skipped with a warning.
pub fn overlap(corpus: &[Layout]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Metric("overlap of an empty corpus".into()));
    }
    let scores: Vec<f64> = corpus.iter().filter_map(layout_overlap).collect();
    let skipped = corpus.len() - scores.len();
    if skipped > 0 {
        warn!(skipped, "overlap: layouts with zero total area excluded");
    }
    if scores.is_empty() {
        return Err(Error::Metric("overlap: every layout has zero area".into()));
    }
    Ok(100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
}

/// The six alignment lines of a box: left, x-center, right, top, y-center,
/// bottom.
pub fn alignment_axes(b: &BBox) -> [f64; 6] {
    [b.left(), b.cx, b.right(), b.top(), b.cy, b.bottom()]
}

/// Mean over elements of the distance to the nearest line (on any axis) of
/// any other element. Uses a sorted sweep per axis.
pub fn layout_alignment(layout: &Layout) -> f64 {
    let m = layout.len();
    if m < 2 {
        return 0.0;
    }
    let axes: Vec<[f64; 6]> = layout.elements.iter().map(|e| alignment_axes(&e.bbox)).collect();
    let mut nearest = vec![f64::INFINITY; m];
    let mut order: Vec<usize> = (0..m).collect();
    for k in 0..6 {
        order.sort_by(|&a, &b| axes[a][k].total_cmp(&axes[b][k]));
        for (pos, &i) in order.iter().enumerate() {
            let neighbours = [pos.checked_sub(1), (pos + 1 < m).then_some(pos + 1)];
            for j in neighbours.into_iter().flatten().map(|p| order[p]) {
                nearest[i] = nearest[i].min((axes[i][k] - axes[j][k]).abs());
            }
        }
    }
    nearest.iter().sum::<f64>() / m as f64
}

/// Mean [`layout_alignment`] over the corpus, x100.
pub fn alignment(corpus: &[Layout]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Metric("alignment of an empty corpus".into()));
    }
    Ok(100.0 * corpus.iter().map(layout_alignment).sum::<f64>() / corpus.len() as f64)
}

/// Maximum-weight assignment on a dense `rows x cols` matrix. Returns
/// `(row, col)` pairs covering `min(rows, cols)` matches.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| -> f64 {
        if transpose {
            -weights[j][i]
        } else {
            -weights[i][j]
        }
    };
    // Hungarian method with potentials, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| if transpose { (j - 1, owner[j] - 1) } else { (owner[j] - 1, j - 1) })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Mean IoU of the optimal same-label matching between two layouts, over
/// the number of matched pairs. `None` when no label is shared.
pub fn layout_max_iou(gen: &Layout, reference: &Layout) -> Option<f64> {
    let mut labels: Vec<usize> = gen.elements.iter().map(|e| e.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut total = 0.0;
    let mut matched = 0usize;
    for label in labels {
        let g: Vec<&BBox> = gen.elements.iter().filter(|e| e.label == label).map(|e| &e.bbox).collect();
        let r: Vec<&BBox> = reference.elements.iter().filter(|e| e.label == label).map(|e| &e.bbox).collect();
        if r.is_empty() {
            continue;
        }
        let w: Vec<Vec<f64>> = g.iter().map(|a| r.iter().map(|b| a.iou(b)).collect()).collect();
        for (i, j) in max_weight_assignment(&w) {
            total += w[i][j];
            matched += 1;
        }
    }
    (matched > 0).then(|| total / matched as f64)
}

/// Corpus mean of [`layout_max_iou`] over index-paired layouts. Pairs with
/// no shared label score 0 with a warning.
pub fn max_iou(gen: &[Layout], reference: &[Layout]) -> Result<f64> {
    if gen.is_empty() || gen.len() != reference.len() {
        return Err(Error::Metric(format!(
            "max_iou needs equally sized non-empty corpora, got {} and {}",
            gen.len(),
            reference.len()
        )));
    }
    let mut disjoint = 0usize;
    let sum: f64 = gen
        .iter()
        .zip(reference)
        .map(|(g, r)| {
            layout_max_iou(g, r).unwrap_or_else(|| {
                disjoint += 1;
                0.0
            })
        })
        .sum();
    if disjoint > 0 {
        warn!(disjoint, "max_iou: pairs without a shared label scored 0");
    }
    Ok(sum / gen.len() as f64)
}

fn moments(feats: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.nrows() as f64;
    let mean = feats.row_mean().transpose();
    let centered = DMatrix::from_fn(feats.nrows(), feats.ncols(), |i, j| feats[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n - 1.0).max(1.0);
    for i in 0..cov.nrows() {
        cov[(i, i)] += FID_JITTER;
    }
    (mean, cov)
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) / 2.0);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussians fitted to two feature sets, one
/// feature vector per row.
pub fn fid(real: &DMatrix<f64>, gen: &DMatrix<f64>) -> Result<f64> {
    if real.ncols() != gen.ncols() {
        return Err(Error::Metric(format!("feature widths {} vs {}", real.ncols(), gen.ncols())));
    }
    if real.nrows() < 2 || gen.nrows() < 2 {
        return Err(Error::Metric("fid needs at least two samples per set".into()));
    }
    let (mu_r, cov_r) = moments(real);
    let (mu_g, cov_g) = moments(gen);
    let root_r = symmetric_sqrt(&cov_r);
    let inner = &root_r * &cov_g * &root_r;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) / 2.0);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, l| a.max(l.abs()));
    if eig.eigenvalues.iter().any(|&l| l < -1e-9 * scale) {
        return Err(Error::Metric("covariance product is not positive semi-definite".into()));
    }
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = (&mu_r - &mu_g).norm_squared();
    Ok((diff + cov_r.trace() + cov_g.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Converts row vectors into a feature matrix.
pub fn feature_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Metric("ragged feature rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid: Option<f64>,
    pub alignment: f64,
    pub overlap: f64,
    pub maxiou: Option<f64>,
    pub t_per_sample_ms: Option<f64>,
}
