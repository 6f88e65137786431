use std::fmt::Write as _;

use super::{accuracy, AccuracyThresholds, EvalError, EvalRecord, PointOutcome};
use crate::compression::{representation_size_bytes, Representation};

/// Responses in `[lo, hi)`; the last bin also holds 1.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub inliers: usize,
}

impl HistogramBin {
    /// Empiric inlier frequency; `None` for an empty bin.
    pub fn frequency(&self) -> Option<f64> {
        (self.count > 0).then(|| self.inliers as f64 / self.count as f64)
    }
}

pub fn inlierness_histogram(points: &[PointOutcome], bins: usize) -> Result<Vec<HistogramBin>, EvalError> {
    if bins < 2 {
        return Err(EvalError::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin { lo: i as f64 / bins as f64, hi: (i + 1) as f64 / bins as f64, count: 0, inliers: 0 })
        .collect();
    for p in points {
        let b = ((p.response.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        out[b].count += 1;
        out[b].inliers += p.inlier as usize;
    }
    Ok(out)
}

pub fn write_histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("lo,hi,count,inliers,frequency\n");
    for b in bins {
        let f = b.frequency().map_or(String::new(), |f| format!("{f:.6}"));
        let _ = writeln!(out, "{:.6},{:.6},{},{},{f}", b.lo, b.hi, b.count, b.inliers);
    }
    out
}

/// `name,response,inlier` for every point of every record.
pub fn write_points_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("name,response,inlier\n");
    for r in records {
        for p in &r.points {
            let _ = writeln!(out, "{},{:.6},{}", r.name, p.response, p.inlier as u8);
        }
    }
    out
}

pub fn read_points_csv(text: &str) -> Result<Vec<PointOutcome>, EvalError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("name,response,inlier") {
        return Err(EvalError::Csv("expected header `name,response,inlier`".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.rsplitn(3, ',').collect();
            let bad = || EvalError::Csv(format!("line {}: malformed point row", i + 2));
            if f.len() != 3 {
                return Err(bad());
            }
            let response = f[1].trim().parse::<f64>().map_err(|_| bad())?;
            let inlier = match f[0].trim() {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            Ok(PointOutcome { response, inlier })
        })
        .collect()
}

/// Records of one method at one operating point.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub representation: Representation,
    pub records: Vec<EvalRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeAccuracyRow {
    pub method: String,
    pub bytes: usize,
    pub accuracy: f64,
}

/// One row per run with records, in input order. Empty runs are skipped
/// with a warning.
pub fn size_accuracy_rows(runs: &[MethodRun], thresholds: AccuracyThresholds) -> Result<Vec<SizeAccuracyRow>, EvalError> {
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        if run.records.is_empty() {
            log::warn!("no records for {}, row omitted", run.representation.label());
            continue;
        }
        rows.push(SizeAccuracyRow {
            method: run.representation.label(),
            bytes: representation_size_bytes(&run.representation),
            accuracy: accuracy(&run.records, thresholds)?,
        });
    }
    Ok(rows)
}

pub fn write_size_accuracy_csv(rows: &[SizeAccuracyRow]) -> String {
    let mut out = String::from("method,bytes,accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6}", r.method, r.bytes, r.accuracy);
    }
    out
}

/// Scatter of accuracy against bytes, with a log-scale byte axis.
pub fn size_accuracy_svg(rows: &[SizeAccuracyRow]) -> String {
    const W: f64 = 560.0;
    const H: f64 = 360.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;
    let logs: Vec<f64> = rows.iter().map(|r| (r.bytes.max(1) as f64).log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
    let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
    let px = |l: f64| L + (l - lo) / (hi - lo) * (W - L - R);
    let py = |a: f64| T + (1.0 - a) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for e in lo as i64..=hi as i64 {
        let x = px(e as f64);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="black"/>"#, H - B, H - B + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">1e{e}</text>"#, H - B + 18.0);
    }
    for i in 0..=4 {
        let a = i as f64 / 4.0;
        let y = py(a);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.1}" x2="{L}" y2="{y:.1}" stroke="black"/>"#, L - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{a:.2}</text>"#, L - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">bytes per frame (log scale)</text>"#, (L + W - R) / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">accuracy</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0);
    for (r, l) in rows.iter().zip(&logs) {
        let (x, y) = (px(*l), py(r.accuracy));
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="steelblue"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 6.0, y - 6.0, xml_escape(&r.method));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
