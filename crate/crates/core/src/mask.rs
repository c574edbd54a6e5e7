//! Per-attribute condition masks for the four generation tasks.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{decode_row, encode, ArrayShape, Canvas, Element, Layout, LayoutArray};

/// Upper end of the fraction of real elements revealed in completion.
pub const COMPLETION_MAX_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Labels given; sizes and positions generated.
    CToSp,
    /// Labels and sizes given; positions generated.
    CsToP,
    /// A random subset of elements given in full.
    Completion,
    Uncond,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::CToSp, Task::CsToP, Task::Completion, Task::Uncond];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::CToSp => "c_to_sp",
            Task::CsToP => "cs_to_p",
            Task::Completion => "completion",
            Task::Uncond => "uncond",
        }
    }

    pub fn is_conditional(&self) -> bool {
        !matches!(self, Task::Uncond)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown task {s:?}")))
    }
}

/// Attribute groups within a row. The one-hot label block is always
/// masked as a unit; the box block splits into position and size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Label,
    Position,
    Size,
}

impl Block {
    fn columns(self, shape: ArrayShape) -> std::ops::Range<usize> {
        let lw = shape.label_width();
        match self {
            Block::Label => 0..lw,
            Block::Position => lw..lw + 2,
            Block::Size => lw + 2..lw + 4,
        }
    }
}

/// Binary mask `m` over an encoded layout plus the clean known values `x_p`.
///
/// `source` keeps the layout the known values came from, so decoding can
/// restore known attributes exactly instead of through the affine round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMask {
    shape: ArrayShape,
    known: Vec<bool>,
    values: LayoutArray,
    source: Option<Layout>,
}

impl ConditionMask {
    /// The empty condition: nothing known.
    pub fn unconditional(shape: ArrayShape) -> Self {
        Self {
            shape,
            known: vec![false; shape.len()],
            values: LayoutArray::zeros(shape),
            source: None,
        }
    }

    fn from_layout(layout: &Layout, shape: ArrayShape) -> Result<Self> {
        Ok(Self {
            shape,
            known: vec![false; shape.len()],
            values: encode(layout, shape)?,
            source: Some(layout.clone()),
        })
    }

    pub fn shape(&self) -> ArrayShape {
        self.shape
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn values(&self) -> &LayoutArray {
        &self.values
    }

    pub fn source(&self) -> Option<&Layout> {
        self.source.as_ref()
    }

    /// Mask as 0/1 reals, for array arithmetic.
    pub fn mask_values(&self) -> Vec<f64> {
        self.known.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.known.iter().any(|&k| k)
    }

    pub fn set_block(&mut self, row: usize, block: Block, known: bool) {
        let d = self.shape.dim();
        for c in block.columns(self.shape) {
            self.known[row * d + c] = known;
        }
    }

    pub fn block_known(&self, row: usize, block: Block) -> bool {
        let d = self.shape.dim();
        block.columns(self.shape).all(|c| self.known[row * d + c])
    }

    /// `(1 - m) * x + m * x_p`, in place. Known entries are copied, so they
    /// match `x_p` bit for bit.
    pub fn apply(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.known.len());
        for ((v, &k), &p) in x.iter_mut().zip(&self.known).zip(self.values.as_slice()) {
            if k {
                *v = p;
            }
        }
    }

    /// True when every known block in each row is all-known or all-unknown.
    pub fn is_block_structured(&self) -> bool {
        let d = self.shape.dim();
        (0..self.shape.rows).all(|r| {
            [Block::Label, Block::Position, Block::Size].into_iter().all(|b| {
                let mut it = b.columns(self.shape).map(|c| self.known[r * d + c]);
                let first = it.next().unwrap_or(false);
                it.all(|k| k == first)
            })
        })
    }

    /// Decodes `arr`, restoring known attributes of real source elements to
    /// their exact source values.
    pub fn decode(&self, arr: &LayoutArray) -> Layout {
        let canvas = self.source.as_ref().map(|s| s.canvas).unwrap_or_default();
        let mut elements = Vec::new();
        for r in 0..self.shape.rows {
            let Some(mut e) = decode_row(arr.row(r), self.shape) else {
                continue;
            };
            if let Some(src) = self.source.as_ref().and_then(|s| s.elements.get(r)) {
                if self.block_known(r, Block::Label) {
                    e.label = src.label;
                }
                if self.block_known(r, Block::Position) {
                    e.bbox.cx = src.bbox.cx;
                    e.bbox.cy = src.bbox.cy;
                }
                if self.block_known(r, Block::Size) {
                    e.bbox.w = src.bbox.w;
                    e.bbox.h = src.bbox.h;
                }
            }
            elements.push(e);
        }
        Layout::new(elements, canvas)
    }
}

/// Builds the mask for `task` from a real layout. Completion draws its
/// revealed fraction uniformly from `[0, 0.2]`.
pub fn make_mask<R: Rng + ?Sized>(
    task: Task,
    layout: &Layout,
    shape: ArrayShape,
    rng: &mut R,
) -> Result<ConditionMask> {
    let fraction = match task {
        Task::Completion => rng.random_range(0.0..=COMPLETION_MAX_FRACTION),
        _ => 0.0,
    };
    make_mask_with_fraction(task, layout, shape, fraction, rng)
}

/// As [`make_mask`] but with an explicit completion fraction.
pub fn make_mask_with_fraction<R: Rng + ?Sized>(
    task: Task,
    layout: &Layout,
    shape: ArrayShape,
    fraction: f64,
    rng: &mut R,
) -> Result<ConditionMask> {
    if task == Task::Uncond {
        return Ok(ConditionMask::unconditional(shape));
    }
    if layout.is_empty() {
        return Err(Error::Condition(format!("task {task} needs a non-empty layout")));
    }
    let mut mask = ConditionMask::from_layout(layout, shape)?;
    match task {
        Task::CToSp => (0..shape.rows).for_each(|r| mask.set_block(r, Block::Label, true)),
        Task::CsToP => (0..shape.rows).for_each(|r| {
            mask.set_block(r, Block::Label, true);
            mask.set_block(r, Block::Size, true);
        }),
        Task::Completion => {
            let m = layout.len();
            let k = ((fraction.clamp(0.0, 1.0) * m as f64).round() as usize).min(m);
            for r in sample_indices(rng, m, k) {
                lock_row(&mut mask, r);
            }
        }
        Task::Uncond => unreachable!(),
    }
    Ok(mask)
}

fn lock_row(mask: &mut ConditionMask, row: usize) {
    for b in [Block::Label, Block::Position, Block::Size] {
        mask.set_block(row, b, true);
    }
}

/// Completion mask where the given elements are placed in the leading rows
/// and fully known; every other attribute is generated.
pub fn locked_mask(locked: &[Element], shape: ArrayShape, canvas: Canvas) -> Result<ConditionMask> {
    if locked.is_empty() {
        return Ok(ConditionMask::unconditional(shape));
    }
    let layout = Layout::new(locked.to_vec(), canvas);
    let mut mask = ConditionMask::from_layout(&layout, shape)?;
    (0..locked.len()).for_each(|r| lock_row(&mut mask, r));
    Ok(mask)
}
