//! Confusion heatmaps, loss curves and metric tables.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::eval::LabelMetrics;
use crate::io::write_csv;
use crate::scalogram::lookup;

fn rgb(c: [f64; 3]) -> Rgb<u8> {
    Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}

/// One filled square per matrix cell, colored by `value / max`, separated by
/// a one-pixel white grid.
pub fn render_heatmap(m: &Array2<f64>, cell: u32) -> RgbImage {
    let (rows, cols) = m.dim();
    let max = m.iter().cloned().fold(0.0, f64::max);
    let w = cols as u32 * (cell + 1) + 1;
    let h = rows as u32 * (cell + 1) + 1;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for ((i, j), &v) in m.indexed_iter() {
        let t = if max > 0.0 { v / max } else { 0.0 };
        let color = rgb(lookup(t));
        let (x0, y0) = (j as u32 * (cell + 1) + 1, i as u32 * (cell + 1) + 1);
        for y in y0..y0 + cell {
            for x in x0..x0 + cell {
                img.put_pixel(x, y, color);
            }
        }
    }
    img
}

/// Polylines for each series on a white canvas, all sharing one y range.
pub fn render_line_chart(series: &[Vec<f64>], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let finite = series.iter().flatten().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() || width < 3 || height < 3 {
        return img;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let axis = Rgb([0, 0, 0]);
    for x in 0..width {
        img.put_pixel(x, height - 1, axis);
    }
    for y in 0..height {
        img.put_pixel(0, y, axis);
    }
    let to_px = |i: usize, n: usize, v: f64| {
        let fx = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let x = 1.0 + fx * (width - 3) as f64;
        let y = 1.0 + (1.0 - (v - lo) / span) * (height - 3) as f64;
        (x, y)
    };
    for (k, s) in series.iter().enumerate() {
        let color = rgb(lookup(if series.len() > 1 {
            k as f64 / (series.len() - 1) as f64 * 0.8
        } else {
            0.0
        }));
        for i in 1..s.len() {
            if !(s[i - 1].is_finite() && s[i].is_finite()) {
                continue;
            }
            let (x0, y0) = to_px(i - 1, s.len(), s[i - 1]);
            let (x1, y1) = to_px(i, s.len(), s[i]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for t in 0..=steps {
                let f = t as f64 / steps as f64;
                let x = (x0 + f * (x1 - x0)).round() as u32;
                let y = (y0 + f * (y1 - y0)).round() as u32;
                img.put_pixel(x.min(width - 1), y.min(height - 1), color);
            }
        }
    }
    img
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into())
}

/// `label,recall,precision,f_measure,accuracy`, then overall rows.
pub fn write_metrics_csv(path: &Path, labels: &[&str], m: &LabelMetrics) -> Result<()> {
    if labels.len() != m.per_label.len() {
        return Err(Error::Dimension("label names do not match the metrics".into()));
    }
    let mut rows: Vec<Vec<String>> = labels
        .iter()
        .zip(&m.per_label)
        .map(|(l, r)| {
            vec![
                l.to_string(),
                fmt_opt(r.recall),
                fmt_opt(r.precision),
                fmt_opt(r.f_measure),
                fmt_opt(r.accuracy),
            ]
        })
        .collect();
    rows.push(vec![
        "overall_accuracy".into(),
        String::new(),
        String::new(),
        String::new(),
        format!("{:.4}", m.overall_accuracy),
    ]);
    rows.push(vec![
        "macro_recall".into(),
        format!("{:.4}", m.macro_recall),
        String::new(),
        String::new(),
        String::new(),
    ]);
    write_csv(path, &["label", "recall", "precision", "f_measure", "accuracy"], &rows)
}

/// Markdown table with the columns Label, Recall, Precision, F-measure, Accuracy.
pub fn markdown_table(labels: &[&str], m: &LabelMetrics) -> String {
    let mut s = String::from("| Label | Recall | Precision | F-measure | Accuracy |\n");
    s.push_str("|---|---|---|---|---|\n");
    for (l, r) in labels.iter().zip(&m.per_label) {
        s.push_str(&format!(
            "| {l} Target | {} | {} | {} | {} |\n",
            fmt_opt(r.recall),
            fmt_opt(r.precision),
            fmt_opt(r.f_measure),
            fmt_opt(r.accuracy)
        ));
    }
    s.push_str(&format!(
        "\nOverall accuracy: {:.4}  \nMacro recall: {:.4}\n",
        m.overall_accuracy, m.macro_recall
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics;

    #[test]
    fn heatmap_geometry_and_colors() {
        let m = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 4.0 } else { 0.0 });
        let img = render_heatmap(&m, 10);
        assert_eq!(img.dimensions(), (56, 56));
        assert_eq!(*img.get_pixel(0, 0), Rgb([255, 255, 255]));
        assert_eq!(*img.get_pixel(5, 5), rgb(lookup(1.0)));
        assert_eq!(*img.get_pixel(16, 5), rgb(lookup(0.0)));
    }

    #[test]
    fn identity_metrics_table() {
        let m = metrics(&Array2::eye(5)).unwrap();
        let md = markdown_table(&["F", "H", "I", "O", "T"], &m);
        assert!(md.contains("| H Target | 1.0000 | 1.0000 | 1.0000 | 1.0000 |"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &["F", "H", "I", "O", "T"], &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("F,1.0000,1.0000,1.0000,1.0000"));
    }

    #[test]
    fn line_chart_draws_something() {
        let img = render_line_chart(&[vec![3.0, 2.0, 1.5, 1.4]], 80, 40);
        let colored = img.pixels().filter(|p| p.0 != [255, 255, 255] && p.0 != [0, 0, 0]).count();
        assert!(colored > 40);
    }
}
