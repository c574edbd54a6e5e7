//! Layout data model and the fixed-size continuous encoding the diffusion
//! process operates on.
//!
//! Each row of a [`LayoutArray`] is `[label block | box block]`. The label
//! block is a one-hot over `N + 1` classes (the extra class marks padding)
//! scaled to `{-1, +1}`; the box block is `(cx, cy, w, h)` mapped from
//! `[0, 1]` to `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default maximum number of elements per layout.
pub const DEFAULT_MAX_ELEMENTS: usize = 25;

/// Width of the box block in an encoded row.
pub const BOX_DIM: usize = 4;

/// Sizes that collapse to zero during decoding are lifted to this value so
/// every decoded element stays a valid (positive-area) element.
pub const MIN_EXTENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.right().min(other.right()) - self.left().max(other.left())).max(0.0);
        let h = (self.bottom().min(other.bottom()) - self.top().max(other.top())).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        // Areas from the same corner arithmetic as the intersection, so identical boxes give exactly 1.
        let extent = |b: &BBox| (b.right() - b.left()) * (b.bottom() - b.top());
        let union = extent(self) + extent(other) - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub label: usize,
    pub bbox: BBox,
}

impl Element {
    pub fn new(label: usize, bbox: BBox) -> Self {
        Self { label, bbox }
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if self.label >= num_labels {
            return Err(Error::Vocabulary { label: self.label, num_labels });
        }
        for (name, v) in ["cx", "cy", "w", "h"].iter().zip(self.bbox.as_array()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Geometry(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.bbox.w <= 0.0 || self.bbox.h <= 0.0 {
            return Err(Error::Geometry(format!(
                "non-positive size ({}, {})",
                self.bbox.w, self.bbox.h
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Default for Canvas {
    fn default() -> Self {
        Self { width: 1000, height: 1414 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub elements: Vec<Element>,
    pub canvas: Canvas,
}

impl Layout {
    pub fn new(elements: Vec<Element>, canvas: Canvas) -> Self {
        Self { elements, canvas }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if self.canvas.width == 0 || self.canvas.height == 0 {
            return Err(Error::Geometry("canvas size must be positive".into()));
        }
        self.elements.iter().try_for_each(|e| e.validate(num_labels))
    }

    /// Sorted label ids; two layouts with equal multisets compare equal.
    pub fn label_multiset(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.elements.iter().map(|e| e.label).collect();
        labels.sort_unstable();
        labels
    }
}

/// Bidirectional map between label strings and class ids. Its length fixes
/// the vocabulary size `N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Parameter(format!("duplicate label {n:?}")));
            }
        }
        if names.is_empty() {
            return Err(Error::Parameter("empty label vocabulary".into()));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Shape of the encoded representation: `rows` element slots over a
/// vocabulary of `num_labels` real classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayShape {
    pub rows: usize,
    pub num_labels: usize,
}

impl ArrayShape {
    pub fn new(rows: usize, num_labels: usize) -> Self {
        Self { rows, num_labels }
    }

    /// Width of a row: `N + 1` label logits plus four box coordinates.
    pub fn dim(&self) -> usize {
        self.num_labels + 1 + BOX_DIM
    }

    pub fn label_width(&self) -> usize {
        self.num_labels + 1
    }

    pub fn padding_label(&self) -> usize {
        self.num_labels
    }

    pub fn len(&self) -> usize {
        self.rows * self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major `E x D` array of a single encoded layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutArray {
    shape: ArrayShape,
    data: Vec<f64>,
}

impl LayoutArray {
    pub fn zeros(shape: ArrayShape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn from_vec(shape: ArrayShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "expected {} values for {}x{}, got {}",
                shape.len(),
                shape.rows,
                shape.dim(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> ArrayShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.shape.dim();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let d = self.shape.dim();
        &mut self.data[r * d..(r + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Maps a unit-interval coordinate to `[-1, 1]`.
pub fn to_signed(u: f64) -> f64 {
    2.0 * u - 1.0
}

/// Inverse of [`to_signed`].
pub fn from_signed(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

pub fn encode_box(b: &BBox) -> [f64; 4] {
    b.as_array().map(to_signed)
}

fn write_row(row: &mut [f64], label: usize, bbox: [f64; 4], label_width: usize) {
    for (i, v) in row[..label_width].iter_mut().enumerate() {
        *v = if i == label { 1.0 } else { -1.0 };
    }
    row[label_width..].copy_from_slice(&bbox.map(to_signed));
}

/// Encodes a layout into `rows` slots, padding the tail with the padding
/// class and a zero box.
pub fn encode(layout: &Layout, shape: ArrayShape) -> Result<LayoutArray> {
    if layout.len() > shape.rows {
        return Err(Error::Capacity { elements: layout.len(), capacity: shape.rows });
    }
    let mut arr = LayoutArray::zeros(shape);
    let lw = shape.label_width();
    for r in 0..shape.rows {
        match layout.elements.get(r) {
            Some(e) => {
                if e.label >= shape.num_labels {
                    return Err(Error::Vocabulary { label: e.label, num_labels: shape.num_labels });
                }
                write_row(arr.row_mut(r), e.label, e.bbox.as_array(), lw);
            }
            None => write_row(arr.row_mut(r), shape.padding_label(), [0.0; 4], lw),
        }
    }
    Ok(arr)
}

/// Index of the largest label logit; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn decode_box(block: &[f64]) -> BBox {
    let c = |v: f64| from_signed(v).clamp(0.0, 1.0);
    let lift = |v: f64| if v <= 0.0 { MIN_EXTENT } else { v };
    BBox::new(c(block[0]), c(block[1]), lift(c(block[2])), lift(c(block[3])))
}

/// Decodes one row into an element, or `None` when the padding class wins.
pub fn decode_row(row: &[f64], shape: ArrayShape) -> Option<Element> {
    let lw = shape.label_width();
    let label = argmax(&row[..lw]);
    (label != shape.padding_label()).then(|| Element::new(label, decode_box(&row[lw..])))
}

/// Decodes an array back into a layout. Total on finite input.
pub fn decode(arr: &LayoutArray, canvas: Canvas) -> Layout {
    let shape = arr.shape();
    let elements = (0..shape.rows).filter_map(|r| decode_row(arr.row(r), shape)).collect();
    Layout::new(elements, canvas)
}
