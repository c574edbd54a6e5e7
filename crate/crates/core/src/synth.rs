//! Synthetic layout corpora for desk-scale training and tests.
//!
//! Every profile draws 1..=8 elements over the five classes in [`LABELS`].
//! The pooled label marginal (fraction of all elements carrying each label)
//! is known in closed form and exposed by [`Profile::label_marginal`].
//!
//! * `columns`: a full-width header (label 0, height in [0.05, 0.15]) at the
//!   top, a left column of 1..=3 `text` blocks, a right column of 1..=3
//!   blocks each `figure` or `table` with probability 1/2, and a `footer`
//!   with probability 1/2. No two elements overlap.
//!   Expected counts per layout: `[1, 2, 1, 1, 0.5]`.
//! * `grid`: header, an r x c grid (r in 1..=2, c in 1..=3) of `figure` or
//!   `table` cells (1/2 each), footer with probability 1/2.
//!   Expected counts: `[1, 0, 1.5, 1.5, 0.5]`.
//! * `banner_mix`: optional title (1/2), one `figure` banner, 1..=4 `text`
//!   elements placed on top of the banner, optional footer button (1/2).
//!   Overlap is intended. Expected counts: `[0.5, 2.5, 1, 0, 0.5]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layout::{BBox, Canvas, Element, LabelMap, Layout};

pub const LABELS: [&str; 5] = ["header", "text", "figure", "table", "footer"];

pub const HEADER: usize = 0;
pub const TEXT: usize = 1;
pub const FIGURE: usize = 2;
pub const TABLE: usize = 3;
pub const FOOTER: usize = 4;

const MARGIN: f64 = 0.05;
const GAP: f64 = 0.02;
const BODY_BOTTOM: f64 = 0.87;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Profile {
    Columns,
    Grid,
    BannerMix,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Columns, Profile::Grid, Profile::BannerMix];

    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Columns => "columns",
            Profile::Grid => "grid",
            Profile::BannerMix => "banner_mix",
        }
    }

    /// Expected number of elements of each label per layout.
    pub fn expected_counts(&self) -> [f64; 5] {
        match self {
            Profile::Columns => [1.0, 2.0, 1.0, 1.0, 0.5],
            Profile::Grid => [1.0, 0.0, 1.5, 1.5, 0.5],
            Profile::BannerMix => [0.5, 2.5, 1.0, 0.0, 0.5],
        }
    }

    pub fn expected_elements(&self) -> f64 {
        self.expected_counts().iter().sum()
    }

    /// Pooled label distribution over all generated elements.
    pub fn label_marginal(&self) -> [f64; 5] {
        let total = self.expected_elements();
        self.expected_counts().map(|c| c / total)
    }

    pub fn canvas(&self) -> Canvas {
        match self {
            Profile::BannerMix => Canvas { width: 1440, height: 2560 },
            _ => Canvas { width: 1000, height: 1414 },
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown profile {s:?}")))
    }
}

pub fn label_map() -> LabelMap {
    LabelMap::new(LABELS).expect("static labels are unique")
}

pub fn synth_corpus<R: Rng + ?Sized>(n: usize, profile: Profile, rng: &mut R) -> Vec<Layout> {
    (0..n).map(|_| synth_layout(profile, rng)).collect()
}

pub fn synth_layout<R: Rng + ?Sized>(profile: Profile, rng: &mut R) -> Layout {
    let elements = match profile {
        Profile::Columns => columns(rng),
        Profile::Grid => grid(rng),
        Profile::BannerMix => banner_mix(rng),
    };
    Layout::new(elements, profile.canvas())
}

fn from_edges(label: usize, left: f64, top: f64, w: f64, h: f64) -> Element {
    Element::new(label, BBox::new(left + w / 2.0, top + h / 2.0, w, h))
}

fn header<R: Rng + ?Sized>(rng: &mut R) -> (Element, f64) {
    let h = rng.random_range(0.05..=0.15);
    (from_edges(HEADER, MARGIN, MARGIN, 1.0 - 2.0 * MARGIN, h), MARGIN + h)
}

fn footer<R: Rng + ?Sized>(rng: &mut R) -> Option<Element> {
    rng.random_bool(0.5)
        .then(|| from_edges(FOOTER, MARGIN, 0.895, 1.0 - 2.0 * MARGIN, 0.05))
}

/// Splits `[top, bottom]` into `k` stacked spans separated by [`GAP`], with
/// random relative heights.
fn stack<R: Rng + ?Sized>(k: usize, top: f64, bottom: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let avail = bottom - top - GAP * (k - 1) as f64;
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let mut y = top;
    weights
        .iter()
        .map(|wt| {
            let h = avail * wt / total;
            let span = (y, h);
            y += h + GAP;
            span
        })
        .collect()
}

fn columns<R: Rng + ?Sized>(rng: &mut R) -> Vec<Element> {
    let (head, head_bottom) = header(rng);
    let mut out = vec![head];
    let top = head_bottom + 0.03;
    let col_left = [MARGIN, 0.525];
    for (side, left) in col_left.into_iter().enumerate() {
        let w = rng.random_range(0.35..=0.425);
        let k = rng.random_range(1..=3);
        for (y, h) in stack(k, top, BODY_BOTTOM, rng) {
            let label = match side {
                0 => TEXT,
                _ if rng.random_bool(0.5) => FIGURE,
                _ => TABLE,
            };
            out.push(from_edges(label, left, y, w, h));
        }
    }
    out.extend(footer(rng));
    out
}

fn grid<R: Rng + ?Sized>(rng: &mut R) -> Vec<Element> {
    let (head, head_bottom) = header(rng);
    let mut out = vec![head];
    let rows = rng.random_range(1..=2);
    let cols = rng.random_range(1..=3);
    let top = head_bottom + 0.03;
    let cell_h = (BODY_BOTTOM - top - GAP * (rows - 1) as f64) / rows as f64;
    let cell_w = (1.0 - 2.0 * MARGIN - GAP * (cols - 1) as f64) / cols as f64;
    for r in 0..rows {
        for c in 0..cols {
            let sx = rng.random_range(0.7..=1.0);
            let sy = rng.random_range(0.7..=1.0);
            let cx = MARGIN + c as f64 * (cell_w + GAP) + cell_w / 2.0;
            let cy = top + r as f64 * (cell_h + GAP) + cell_h / 2.0;
            let label = if rng.random_bool(0.5) { FIGURE } else { TABLE };
            out.push(Element::new(label, BBox::new(cx, cy, cell_w * sx, cell_h * sy)));
        }
    }
    out.extend(footer(rng));
    out
}

fn banner_mix<R: Rng + ?Sized>(rng: &mut R) -> Vec<Element> {
    let mut out = Vec::new();
    if rng.random_bool(0.5) {
        let w = rng.random_range(0.4..=0.9);
        let h = rng.random_range(0.05..=0.1);
        out.push(from_edges(HEADER, 0.5 - w / 2.0, MARGIN, w, h));
    }
    let bw = rng.random_range(0.6..=1.0);
    let bh = rng.random_range(0.2..=0.5);
    let banner = BBox::new(0.5, rng.random_range(0.35..=0.6), bw, bh);
    out.push(Element::new(FIGURE, banner));
    for _ in 0..rng.random_range(1..=4) {
        let w = bw * rng.random_range(0.2..=0.8);
        let h = bh * rng.random_range(0.05..=0.2);
        let left = rng.random_range(banner.left()..=banner.right() - w);
        let top = rng.random_range(banner.top()..=banner.bottom() - h);
        out.push(from_edges(TEXT, left, top, w, h));
    }
    if rng.random_bool(0.5) {
        out.push(Element::new(FOOTER, BBox::new(0.5, 0.92, 0.3, 0.06)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_profile_yields_valid_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in Profile::ALL {
            for l in synth_corpus(500, p, &mut rng) {
                l.validate(LABELS.len()).unwrap();
                assert!((1..=8).contains(&l.len()), "{p}: {}", l.len());
            }
        }
    }

    #[test]
    fn columns_never_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for l in synth_corpus(1000, Profile::Columns, &mut rng) {
            for (i, a) in l.elements.iter().enumerate() {
                for b in &l.elements[i + 1..] {
                    assert_eq!(a.bbox.intersection(&b.bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn marginals_sum_to_one() {
        for p in Profile::ALL {
            let s: f64 = p.label_marginal().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_corpus(20, Profile::Grid, &mut ChaCha8Rng::seed_from_u64(9));
        let b = synth_corpus(20, Profile::Grid, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
