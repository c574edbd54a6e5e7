//! JSON-lines corpus files with a `labels.json` sidecar.
//!
//! One layout per line:
//! `{"canvas": {"w": 1440, "h": 2560}, "elements": [{"label": "text", "center": [0.5, 0.1], "size": [0.9, 0.05]}]}`

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{BBox, Canvas, Element, LabelMap, Layout};

pub const LABELS_FILE: &str = "labels.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanvasRecord {
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub label: String,
    pub center: [f64; 2],
    pub size: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub canvas: CanvasRecord,
    pub elements: Vec<ElementRecord>,
}

impl ElementRecord {
    pub fn from_element(e: &Element, labels: &LabelMap) -> Result<Self> {
        let label = labels
            .name(e.label)
            .ok_or(Error::Vocabulary { label: e.label, num_labels: labels.len() })?;
        Ok(Self {
            label: label.to_string(),
            center: [e.bbox.cx, e.bbox.cy],
            size: [e.bbox.w, e.bbox.h],
        })
    }

    /// Converts to an element, reporting the first offending field by name.
    pub fn to_element(&self, labels: &LabelMap) -> std::result::Result<Element, String> {
        let label = labels.id(&self.label).map_err(|_| format!("label: unknown label {:?}", self.label))?;
        let fields = [
            ("center[0]", self.center[0]),
            ("center[1]", self.center[1]),
            ("size[0]", self.size[0]),
            ("size[1]", self.size[1]),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name}: {v} outside [0, 1]"));
            }
        }
        for (name, v) in &fields[2..] {
            if *v <= 0.0 {
                return Err(format!("{name}: size must be positive, got {v}"));
            }
        }
        Ok(Element::new(
            label,
            BBox::new(self.center[0], self.center[1], self.size[0], self.size[1]),
        ))
    }
}

impl LayoutRecord {
    pub fn from_layout(layout: &Layout, labels: &LabelMap) -> Result<Self> {
        Ok(Self {
            canvas: CanvasRecord { w: layout.canvas.width, h: layout.canvas.height },
            elements: layout
                .elements
                .iter()
                .map(|e| ElementRecord::from_element(e, labels))
                .collect::<Result<_>>()?,
        })
    }

    pub fn to_layout(&self, labels: &LabelMap) -> std::result::Result<Layout, String> {
        if self.canvas.w == 0 || self.canvas.h == 0 {
            return Err("canvas: width and height must be positive".into());
        }
        let elements = self
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| e.to_element(labels).map_err(|m| format!("elements[{i}].{m}")))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Layout::new(elements, Canvas { width: self.canvas.w, height: self.canvas.h }))
    }
}

pub fn labels_path(corpus: &Path) -> PathBuf {
    corpus.parent().unwrap_or(Path::new(".")).join(LABELS_FILE)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let map: BTreeMap<String, usize> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut names = vec![None; map.len()];
    for (name, id) in map {
        match names.get_mut(id) {
            Some(slot @ None) => *slot = Some(name),
            _ => {
                return Err(Error::Parameter(format!(
                    "{}: label ids must be a permutation of 0..N",
                    path.display()
                )))
            }
        }
    }
    LabelMap::new(names.into_iter().map(Option::unwrap))
}

pub fn write_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let map: BTreeMap<&str, usize> =
        labels.names().iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    fs::write(path, serde_json::to_string_pretty(&map)? + "\n")?;
    Ok(())
}

/// Parses a JSON-lines stream. Blank lines are skipped; line numbers are
/// 1-based.
pub fn read_corpus<R: Read>(reader: R, labels: &LabelMap) -> Result<Vec<Layout>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LayoutRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Record { line: i + 1, msg: format!("malformed JSON: {e}") })?;
        let layout = record.to_layout(labels).map_err(|msg| Error::Record { line: i + 1, msg })?;
        out.push(layout);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(writer: W, layouts: &[Layout], labels: &LabelMap) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for l in layouts {
        serde_json::to_writer(&mut w, &LayoutRecord::from_layout(l, labels)?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a corpus and the `labels.json` next to it.
pub fn load_corpus(path: &Path) -> Result<(Vec<Layout>, LabelMap)> {
    let labels = read_labels(&labels_path(path))?;
    let layouts = load_corpus_with(path, &labels)?;
    Ok((layouts, labels))
}

pub fn load_corpus_with(path: &Path, labels: &LabelMap) -> Result<Vec<Layout>> {
    read_corpus(fs::File::open(path)?, labels)
}

/// Writes a corpus and its `labels.json` sidecar.
pub fn save_corpus(layouts: &[Layout], labels: &LabelMap, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_corpus(fs::File::create(path)?, layouts, labels)?;
    write_labels(labels, &labels_path(path))
}
