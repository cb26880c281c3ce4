use std::fmt::Write as _;
use std::path::Path;

use crate::latency::Histogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    /// CSV plus an SVG chart per histogram.
    Svg,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn from_histogram(name: &str, h: &Histogram) -> Self {
        let mut t = Self::new(name, &["bin_low", "bin_high", "count"]);
        for (lo, hi, c) in h.rows() {
            t.push([lo.to_string(), hi.to_string(), c.to_string()]);
        }
        t
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_csv(&self, path: &Path) -> csv::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Plain bar chart of a histogram.
pub fn render_svg(title: &str, h: &Histogram) -> String {
    let (w, ht, pad) = (640.0, 320.0, 40.0);
    let counts = h.counts();
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = (w - 2.0 * pad) / counts.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{ht}" viewBox="0 0 {w} {ht}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{ht}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#
    );
    for (i, &c) in counts.iter().enumerate() {
        let bh = (ht - 2.0 * pad) * c as f64 / max;
        let x = pad + i as f64 * bar_w;
        let y = ht - pad - bh;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{bh:.2}" fill="steelblue"/>"#,
            (bar_w - 1.0).max(0.5)
        );
    }
    let lo = h.rows().next().map_or(0.0, |r| r.0);
    let hi = h.rows().last().map_or(0.0, |r| r.1);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = ht - pad,
        x2 = w - pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{y}" font-family="sans-serif" font-size="12">{lo:.3} s</text>"#,
        y = ht - pad + 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" text-anchor="end">{hi:.3} s</text>"#,
        x = w - pad,
        y = ht - pad + 16.0
    );
    s.push_str("</svg>\n");
    s
}
