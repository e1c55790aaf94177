//! Report artifacts: JSON report, text summary and two PNG charts.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::font::{draw_text, text_width, GLYPH_H};
use crate::imageio::encode_rgb_png;
use crate::metrics::{EvalReport, MacroMetrics};

const WHITE: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [30, 30, 30];
const GRID: [u8; 3] = [210, 210, 210];
pub const BAR: [u8; 3] = [46, 104, 170];

/// A plain RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            rgb: WHITE.repeat(width * height),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, color: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.rgb[i..i + 3].copy_from_slice(&color);
        }
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, color: [u8; 3]) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.put(x, y, color);
            }
        }
    }

    pub fn text(&mut self, text: &str, x: usize, y: usize, scale: usize, color: [u8; 3]) {
        let mut points = Vec::new();
        draw_text(text, x, y, scale, |px, py| points.push((px, py)));
        for (px, py) in points {
            self.put(px, py, color);
        }
    }

    /// Draws `text` horizontally centred on `cx`.
    pub fn text_centered(&mut self, text: &str, cx: usize, y: usize, scale: usize, color: [u8; 3]) {
        let w = text_width(text, scale);
        self.text(text, cx.saturating_sub(w / 2), y, scale, color);
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        encode_rgb_png(
            BufWriter::new(file),
            self.width as u32,
            self.height as u32,
            &self.rgb,
        )
    }
}

/// Geometry of a bar chart with `n` bars.
#[derive(Debug, Clone)]
pub struct BarLayout {
    pub width: usize,
    pub height: usize,
    pub plot_top: usize,
    /// y of the x axis; bars grow upwards from here.
    pub baseline: usize,
    /// `[x0, x1)` of every bar.
    pub bars: Vec<(usize, usize)>,
    pub label_y: usize,
}

const SCALE: usize = 2;
const MARGIN_LEFT: usize = 70;
const MARGIN_RIGHT: usize = 20;
const MARGIN_TOP: usize = 50;
const SLOT: usize = 56;
const PLOT_H: usize = 300;

impl BarLayout {
    pub fn new(n: usize) -> Self {
        let plot_w = SLOT * n.max(1);
        let width = MARGIN_LEFT + plot_w + MARGIN_RIGHT;
        let baseline = MARGIN_TOP + PLOT_H;
        let label_y = baseline + 8;
        let height = label_y + GLYPH_H * SCALE + 16;
        let bars = (0..n)
            .map(|i| {
                let x = MARGIN_LEFT + i * SLOT;
                (x + 10, x + SLOT - 10)
            })
            .collect();
        BarLayout {
            width,
            height,
            plot_top: MARGIN_TOP,
            baseline,
            bars,
            label_y,
        }
    }

    pub fn bar_top(&self, value: f64) -> usize {
        let h = (value.clamp(0.0, 1.0) * PLOT_H as f64).round() as usize;
        self.baseline - h
    }
}

/// Vertical bar chart of values in `[0, 1]`, one labelled bar per value.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64]) -> Canvas {
    assert_eq!(labels.len(), values.len());
    let layout = BarLayout::new(values.len());
    let mut canvas = Canvas::new(layout.width, layout.height);

    canvas.text(title, MARGIN_LEFT, 14, SCALE, INK);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = layout.bar_top(v);
        canvas.fill_rect(MARGIN_LEFT, y, layout.width - MARGIN_RIGHT, y + 1, GRID);
        canvas.text(&format!("{v:.2}"), 8, y.saturating_sub(GLYPH_H), SCALE, INK);
    }
    for ((&(x0, x1), label), &value) in layout.bars.iter().zip(labels).zip(values) {
        let top = layout.bar_top(value);
        canvas.fill_rect(x0, top, x1, layout.baseline, BAR);
        let cx = (x0 + x1) / 2;
        canvas.text_centered(label, cx, layout.label_y, SCALE, INK);
    }
    canvas.fill_rect(
        MARGIN_LEFT,
        layout.baseline,
        layout.width - MARGIN_RIGHT,
        layout.baseline + 2,
        INK,
    );
    canvas
}

/// Heatmap of a confusion matrix with per-cell counts. Cell shade is the
/// count relative to its row total.
pub fn confusion_heatmap(report: &EvalReport) -> Canvas {
    let k = report.matrix.classes();
    let longest = report
        .class_names
        .iter()
        .map(|n| text_width(&n.to_uppercase(), 1))
        .max()
        .unwrap_or(0);
    let widest_count = report
        .matrix
        .counts
        .iter()
        .flatten()
        .map(|c| text_width(&c.to_string(), 1))
        .max()
        .unwrap_or(0);
    let cell = (widest_count + 10).max(40);
    let left = longest + 30;
    let top = 60;
    let width = left + cell * k + 20;
    let height = top + cell * k + 40;
    let mut canvas = Canvas::new(width, height);
    canvas.text("ACTUAL (ROWS) VS PREDICTED (COLUMNS)", 10, 14, 1, INK);

    for (a, row) in report.matrix.counts.iter().enumerate() {
        let row_total: u64 = row.iter().sum();
        for (p, &n) in row.iter().enumerate() {
            let share = if row_total == 0 {
                0.0
            } else {
                n as f64 / row_total as f64
            };
            let shade = |lo: f64, hi: f64| (lo + (hi - lo) * share).round() as u8;
            let color = [shade(247.0, 8.0), shade(251.0, 48.0), shade(255.0, 107.0)];
            let (x0, y0) = (left + p * cell, top + a * cell);
            canvas.fill_rect(x0, y0, x0 + cell, y0 + cell, color);
            let ink = if share > 0.5 { WHITE } else { INK };
            canvas.text_centered(&n.to_string(), x0 + cell / 2, y0 + cell / 2 - 3, 1, ink);
        }
    }
    for (i, name) in report.class_names.iter().enumerate() {
        let name = name.to_uppercase();
        canvas.text(&name, 10, top + i * cell + cell / 2 - 3, 1, INK);
        canvas.text_centered(&name, left + i * cell + cell / 2, top - 16, 1, INK);
    }
    for i in 0..=k {
        canvas.fill_rect(left + i * cell, top, left + i * cell + 1, top + cell * k, GRID);
        canvas.fill_rect(left, top + i * cell, left + cell * k, top + i * cell + 1, GRID);
    }
    canvas
}

/// `"0.87 0.86 0.86"`: macro precision, recall and F1 at two decimals.
pub fn summary_row(m: &MacroMetrics) -> String {
    format!("{:.2} {:.2} {:.2}", m.precision, m.recall, m.f1)
}

/// Plain-text summary: macro metrics table, accuracy and per-class rows.
pub fn summary_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Precision Recall F1-Score");
    let _ = writeln!(s, "{}", summary_row(&report.macro_avg));
    let _ = writeln!(s);
    let _ = writeln!(s, "accuracy {:.4}", report.accuracy);
    let _ = writeln!(s, "averaging {}", report.averaging);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<8} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
    for (name, m) in report.class_names.iter().zip(&report.per_class) {
        let flag = if m.undefined.any() { " *" } else { "" };
        let _ = writeln!(
            s,
            "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>8}{}",
            name, m.precision, m.recall, m.f1, m.support, flag
        );
    }
    if !report.undefined_classes().is_empty() {
        let _ = writeln!(s, "* contains a 0/0 ratio reported as 0");
    }
    s
}

#[derive(Debug, Clone)]
pub struct RenderedReport {
    pub json: PathBuf,
    pub summary: PathBuf,
    pub precision_chart: PathBuf,
    pub confusion_chart: PathBuf,
}

/// Writes `report.json`, `summary.txt`, `precision.png` and `confusion.png`
/// into `dir`.
pub fn render_report(report: &EvalReport, dir: &Path) -> Result<RenderedReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = RenderedReport {
        json: dir.join("report.json"),
        summary: dir.join("summary.txt"),
        precision_chart: dir.join("precision.png"),
        confusion_chart: dir.join("confusion.png"),
    };
    report.save(&out.json)?;
    std::fs::write(&out.summary, summary_text(report)).map_err(|e| Error::io(&out.summary, e))?;
    let labels: Vec<String> = report.class_names.iter().map(|n| n.to_uppercase()).collect();
    let precision: Vec<f64> = report.per_class.iter().map(|m| m.precision).collect();
    bar_chart("CLASS-WISE PRECISION", &labels, &precision).save_png(&out.precision_chart)?;
    confusion_heatmap(report).save_png(&out.confusion_chart)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::decode_rgb_png;
    use crate::metrics::{ConfusionMatrix, EvalReport};

    fn has_ink(canvas: &Canvas, x0: usize, x1: usize, y0: usize, y1: usize) -> bool {
        (y0..y1).any(|y| (x0..x1).any(|x| canvas.get(x, y) == INK))
    }

    #[test]
    fn one_bar_per_class() {
        for n in [1, 12] {
            let labels: Vec<String> = (0..n).map(|i| format!("C{i}")).collect();
            let values: Vec<f64> = (0..n).map(|i| 0.2 + 0.06 * i as f64).collect();
            let canvas = bar_chart("T", &labels, &values);
            let layout = BarLayout::new(n);
            assert_eq!(layout.bars.len(), n);
            // count bar-coloured runs just above the axis
            let y = layout.baseline - 1;
            let mut runs = 0;
            let mut inside = false;
            for x in 0..canvas.width {
                let is_bar = canvas.get(x, y) == BAR;
                if is_bar && !inside {
                    runs += 1;
                }
                inside = is_bar;
            }
            assert_eq!(runs, n);
            for (i, &(x0, x1)) in layout.bars.iter().enumerate() {
                assert_eq!(canvas.get(x0, layout.bar_top(values[i])), BAR);
                assert!(has_ink(&canvas, x0 - 8, x1 + 8, layout.label_y, layout.label_y + 14));
            }
        }
    }

    #[test]
    fn table_row_format() {
        let m = MacroMetrics {
            precision: 0.8712,
            recall: 0.8649,
            f1: 0.8641,
        };
        assert_eq!(summary_row(&m), "0.87 0.86 0.86");
    }

    #[test]
    fn render_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let actual: Vec<usize> = (0..48).map(|i| i % 12).collect();
        let predicted: Vec<usize> = (0..48).map(|i| if i % 5 == 0 { 0 } else { i % 12 }).collect();
        let report =
            EvalReport::evaluate(&actual, &predicted, ConfusionMatrix::multiclass_names()).unwrap();
        let out = render_report(&report, dir.path()).unwrap();
        assert_eq!(EvalReport::load(&out.json).unwrap(), report);
        let summary = std::fs::read_to_string(&out.summary).unwrap();
        assert!(summary.contains(&summary_row(&report.macro_avg)));
        for png in [&out.precision_chart, &out.confusion_chart] {
            let f = std::io::BufReader::new(File::open(png).unwrap());
            let (w, h, _) = decode_rgb_png(f).unwrap();
            assert!(w > 100 && h > 100);
        }
    }
}
