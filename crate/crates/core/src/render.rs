//! SVG rendering of layouts.

use std::fmt::Write;

use sha2::{Digest, Sha256};

use crate::layout::{LabelMap, Layout};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderStyle {
    pub opacity: f64,
    pub stroke_width: f64,
    pub background: String,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self { opacity: 0.6, stroke_width: 1.0, background: "#ffffff".into() }
    }
}

/// Fill colour for a label name, stable across runs.
pub fn label_color(name: &str) -> String {
    let d = Sha256::digest(name.as_bytes());
    // Keep channels away from white so boxes stay visible on the background.
    format!("#{:02x}{:02x}{:02x}", d[0] % 200 + 30, d[1] % 200 + 30, d[2] % 200 + 30)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn num(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    if r == r.trunc() {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// Renders a standalone SVG document: a background rect, then one rect and
/// one centred text label per element.
pub fn render_svg(layout: &Layout, labels: &LabelMap, style: &RenderStyle) -> String {
    let (cw, ch) = (layout.canvas.width as f64, layout.canvas.height as f64);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = layout.canvas.width,
        h = layout.canvas.height
    );
    let _ = writeln!(
        svg,
        r#"  <rect class="background" x="0" y="0" width="{}" height="{}" fill="{}"/>"#,
        layout.canvas.width,
        layout.canvas.height,
        escape(&style.background)
    );
    let font = (ch.min(cw) / 40.0).max(6.0);
    for e in &layout.elements {
        let name = labels.name(e.label).map_or_else(|| format!("label{}", e.label), str::to_string);
        let color = label_color(&name);
        let b = &e.bbox;
        let _ = writeln!(
            svg,
            r#"  <rect x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="{}" stroke="{color}" stroke-width="{}"/>"#,
            num(b.left() * cw),
            num(b.top() * ch),
            num(b.w * cw),
            num(b.h * ch),
            num(style.opacity),
            num(style.stroke_width),
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{}" font-size="{}" text-anchor="middle" dominant-baseline="middle">{}</text>"#,
            num(b.cx * cw),
            num(b.cy * ch),
            num(font),
            escape(&name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
