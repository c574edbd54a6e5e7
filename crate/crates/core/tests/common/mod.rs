//! Independent reference implementations used by the oracle and acceptance
//! tests. Nothing here calls into the metric or posterior code under test.

#![allow(dead_code)]

use diffgan_core::diffusion::Schedule;
use diffgan_core::layout::{BBox, Canvas, Element, Layout};
use nalgebra::DMatrix;
use rand::Rng;

/// Mean and variance of `q(x_{t-1} | x_t, x_0)` for a scalar, by Riemann
/// quadrature of `q(x_t | x_{t-1}) q(x_{t-1} | x_0)` on a fine grid.
pub fn posterior_quadrature(x0: f64, xt: f64, t: usize, s: &Schedule) -> (f64, f64) {
    let ab_prev = if t == 1 { 1.0 } else { s.alpha_bar(t - 1) };
    let prior_mean = ab_prev.sqrt() * x0;
    let prior_var = 1.0 - ab_prev;
    if prior_var <= 0.0 {
        return (prior_mean, 0.0);
    }
    let (a, beta) = (s.alpha(t).sqrt(), s.beta(t));
    let log_density = |x: f64| {
        let lik = (xt - a * x).powi(2) / beta;
        let prior = (x - prior_mean).powi(2) / prior_var;
        -0.5 * (lik + prior)
    };
    let like_center = xt / a;
    let spread = prior_var.sqrt().max((beta / (a * a)).sqrt());
    let lo = prior_mean.min(like_center) - 12.0 * spread;
    let hi = prior_mean.max(like_center) + 12.0 * spread;
    let n = 200_001;
    let dx = (hi - lo) / (n - 1) as f64;
    let peak = (0..n).map(|i| log_density(lo + i as f64 * dx)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = lo + i as f64 * dx;
        let w = (log_density(x) - peak).exp();
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Overlap (x100) by counting, for each pixel centre of a `res x res` grid,
/// how many boxes cover it: pairs contribute `k (k - 1) / 2`, areas `k`.
pub fn raster_overlap(corpus: &[Layout], res: usize) -> f64 {
    let mut scores = Vec::new();
    let mut diff = vec![0i32; res + 1];
    for layout in corpus {
        let (mut pairs, mut cover) = (0u64, 0u64);
        for py in 0..res {
            let y = (py as f64 + 0.5) / res as f64;
            diff.iter_mut().for_each(|d| *d = 0);
            for e in &layout.elements {
                let b = &e.bbox;
                if y < b.top() || y > b.bottom() {
                    continue;
                }
                let first = ((b.left() * res as f64 - 0.5).ceil().max(0.0)) as usize;
                let last = ((b.right() * res as f64 - 0.5).floor()) as i64;
                if last < first as i64 {
                    continue;
                }
                let last = (last as usize).min(res - 1);
                diff[first] += 1;
                diff[last + 1] -= 1;
            }
            let mut k = 0i64;
            for d in &diff[..res] {
                k += *d as i64;
                pairs += (k * (k - 1) / 2) as u64;
                cover += k as u64;
            }
        }
        if cover > 0 {
            scores.push(pairs as f64 / cover as f64);
        }
    }
    100.0 * scores.iter().sum::<f64>() / scores.len() as f64
}

fn lines(b: &BBox) -> [f64; 6] {
    [b.cx - b.w / 2.0, b.cx, b.cx + b.w / 2.0, b.cy - b.h / 2.0, b.cy, b.cy + b.h / 2.0]
}

/// Alignment (x100) by comparing every axis of every element pair.
pub fn brute_alignment(corpus: &[Layout]) -> f64 {
    let per_layout: Vec<f64> = corpus
        .iter()
        .map(|l| {
            let m = l.elements.len();
            if m < 2 {
                return 0.0;
            }
            let mut total = 0.0;
            for i in 0..m {
                let li = lines(&l.elements[i].bbox);
                let mut best = f64::INFINITY;
                for (j, other) in l.elements.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let lj = lines(&other.bbox);
                    for k in 0..6 {
                        best = best.min((li[k] - lj[k]).abs());
                    }
                }
                total += best;
            }
            total / m as f64
        })
        .collect();
    100.0 * per_layout.iter().sum::<f64>() / per_layout.len() as f64
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.cx + a.w / 2.0).min(b.cx + b.w / 2.0) - (a.cx - a.w / 2.0).max(b.cx - b.w / 2.0);
    let iy = (a.cy + a.h / 2.0).min(b.cy + b.h / 2.0) - (a.cy - a.h / 2.0).max(b.cy - b.h / 2.0);
    let inter = ix.max(0.0) * iy.max(0.0);
    let extent = |c: &BBox| ((c.cx + c.w / 2.0) - (c.cx - c.w / 2.0)) * ((c.cy + c.h / 2.0) - (c.cy - c.h / 2.0));
    let union = extent(a) + extent(b) - inter;
    if union > 0.0 { inter / union } else { 0.0 }
}

/// Best same-label matching by trying every injective assignment of
/// generated to reference elements. Returns the mean IoU over matched pairs,
/// summed label by label in ascending generated order.
pub fn brute_max_iou(gen: &Layout, reference: &Layout) -> Option<f64> {
    let max_label = gen.elements.iter().chain(&reference.elements).map(|e| e.label).max()?;
    let mut total = 0.0;
    let mut matched = 0usize;
    for label in 0..=max_label {
        let g: Vec<&BBox> = gen.elements.iter().filter(|e| e.label == label).map(|e| &e.bbox).collect();
        let r: Vec<&BBox> = reference.elements.iter().filter(|e| e.label == label).map(|e| &e.bbox).collect();
        let k = g.len().min(r.len());
        if k == 0 {
            continue;
        }
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        for_each_injection(g.len(), r.len(), k, &mut |pairs| {
            let v: f64 = pairs.iter().map(|&(i, j)| iou(g[i], r[j])).sum();
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, pairs.to_vec()));
            }
        });
        let (_, mut pairs) = best.expect("at least one matching");
        pairs.sort();
        for (i, j) in pairs {
            total += iou(g[i], r[j]);
        }
        matched += k;
    }
    (matched > 0).then(|| total / matched as f64)
}

/// Calls `f` with every set of `k` disjoint pairs `(i < n, j < m)` having
/// distinct `i` and distinct `j`.
fn for_each_injection(n: usize, m: usize, k: usize, f: &mut dyn FnMut(&[(usize, usize)])) {
    fn rec(
        i: usize,
        n: usize,
        m: usize,
        k: usize,
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        f: &mut dyn FnMut(&[(usize, usize)]),
    ) {
        if pairs.len() == k {
            f(pairs);
            return;
        }
        if i == n || n - i < k - pairs.len() {
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                pairs.push((i, j));
                rec(i + 1, n, m, k, used, pairs, f);
                pairs.pop();
                used[j] = false;
            }
        }
        rec(i + 1, n, m, k, used, pairs, f);
    }
    rec(0, n, m, k, &mut vec![false; m], &mut Vec::new(), f);
}

fn covariance(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut c = DMatrix::zeros(d, d);
    for r in 0..n {
        for a in 0..d {
            for b in 0..d {
                c[(a, b)] += (x[(r, a)] - mean[a]) * (x[(r, b)] - mean[b]);
            }
        }
    }
    c /= (n - 1) as f64;
    for a in 0..d {
        c[(a, a)] += diffgan_core::metrics::FID_JITTER;
    }
    (mean, c)
}

/// FID through the general (non-symmetric) eigenvalues of `Σr Σg`, whose
/// square roots sum to `Tr sqrt(Σr Σg)`.
pub fn fid_oracle(real: &DMatrix<f64>, gen: &DMatrix<f64>) -> f64 {
    let (mr, cr) = covariance(real);
    let (mg, cg) = covariance(gen);
    let dist: f64 = mr.iter().zip(&mg).map(|(a, b)| (a - b).powi(2)).sum();
    let product = &cr * &cg;
    let root: f64 = product.complex_eigenvalues().iter().map(|z| z.sqrt().re).sum();
    dist + cr.trace() + cg.trace() - 2.0 * root
}

/// A layout of `lo..=hi` elements with boxes inside the unit canvas.
pub fn random_layout<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize, num_labels: usize) -> Layout {
    let m = rng.random_range(lo..=hi);
    let elements = (0..m)
        .map(|_| {
            let w = rng.random_range(0.05..0.6);
            let h = rng.random_range(0.05..0.6);
            let cx = rng.random_range(w / 2.0..=1.0 - w / 2.0);
            let cy = rng.random_range(h / 2.0..=1.0 - h / 2.0);
            Element::new(rng.random_range(0..num_labels), BBox::new(cx, cy, w, h))
        })
        .collect();
    Layout::new(elements, Canvas::default())
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, shift: &[f64]) -> DMatrix<f64> {
    let z = diffgan_core::diffusion::standard_normal(n * d, rng);
    DMatrix::from_fn(n, d, |r, c| z[r * d + c] + shift.get(c).copied().unwrap_or(0.0))
}
