//! Report, CSV and SVG emission. Files are written to a temporary sibling
//! and renamed into place, so a run directory never holds partial files.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use mvlab::particles::format_float;
use serde::Serialize;

pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    let target = dir.join(name);
    tmp.persist(&target)
        .with_context(|| format!("writing {}", target.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

/// Column-oriented table; `None` cells are written empty.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.map(format_float).unwrap_or_default()))?;
        }
        w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
    }
}

/// Minimal static line chart of `(t, value)` pairs. Uses a log10 axis when
/// every value is positive.
pub fn svg_line_chart(title: &str, points: &[(f64, f64)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(t, v)| t.is_finite() && v.is_finite()).collect();
    let log = !finite.is_empty() && finite.iter().all(|&(_, v)| v > 0.0);
    let ys: Vec<f64> = finite.iter().map(|&(_, v)| if log { v.log10() } else { v }).collect();
    let (tmin, tmax) = bounds(finite.iter().map(|p| p.0));
    let (ymin, ymax) = bounds(ys.iter().copied());
    let sx = |t: f64| pad + (t - tmin) / (tmax - tmin) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin) * (h - 2.0 * pad);
    let path: Vec<String> = finite
        .iter()
        .zip(&ys)
        .map(|(&(t, _), &y)| format!("{:.2},{:.2}", sx(t), sy(y)))
        .collect();
    let axis = if log { "log10 value" } else { "value" };
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
            "<line x1=\"{pad}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\" stroke=\"black\"/>\n",
            "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{bottom}\" stroke=\"black\"/>\n",
            "<text x=\"{cx}\" y=\"{tlabel}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">t in [{tmin:.3}, {tmax:.3}]</text>\n",
            "<text x=\"12\" y=\"{cy}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 12 {cy})\">{axis} in [{ymin:.3}, {ymax:.3}]</text>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{path}\"/>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        pad = pad,
        cx = w / 2.0,
        cy = h / 2.0,
        bottom = h - pad,
        right = w - pad,
        tlabel = h - 15.0,
        title = title,
        tmin = tmin,
        tmax = tmax,
        axis = axis,
        ymin = ymin,
        ymax = ymax,
        path = path.join(" "),
    )
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["t", "x"]);
        t.push(vec![Some(0.0), None]);
        t.push(vec![Some(0.5), Some(1.0 / 3.0)]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(
            text,
            "t,x\n0.0000000000000000e0,\n5.0000000000000000e-1,3.3333333333333331e-1\n"
        );
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", b"one").unwrap();
        write_atomic(dir.path(), "a.txt", b"two").unwrap();
        assert_eq!(std::fs::read(dir.path().join("a.txt")).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn svg_handles_degenerate_series() {
        let s = svg_line_chart("flat", &[(0.0, 1.0), (1.0, 1.0)]);
        assert!(s.starts_with("<svg") && s.contains("polyline"));
        assert!(svg_line_chart("empty", &[]).contains("</svg>"));
    }
}
