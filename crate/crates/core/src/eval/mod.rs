//! Evaluation harness: dataset ingestion, per-pair pose and matching
//! evaluation, result CSVs and summary reports.

mod dataset;
mod report;
mod run;

use std::fmt::Write as _;

use thiserror::Error;

pub use dataset::{format_pair_list, generate_pairs, parse_pair_list, Dataset, DatasetKind, HomographyPair, SequenceData, SequencePairSource};
pub use report::{
    inlierness_histogram, read_points_csv, size_accuracy_rows, size_accuracy_svg, write_histogram_csv, write_points_csv,
    write_size_accuracy_csv, HistogramBin, MethodRun, SizeAccuracyRow,
};
pub use run::{evaluate_homographies, evaluate_pairs, evaluate_sequence, Detector, EvalConfig};

use crate::correspondence::CorrespondenceError;
use crate::extraction::ExtractionError;
use crate::geometry::GeometryError;
use crate::klt::KltError;
use crate::network::NetworkError;
use crate::training::TrainingError;
use crate::ImageError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("pose evaluation needs a stereo calibration")]
    MissingCalibration,
    #[error("no records")]
    EmptyRecords,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Correspondence(#[from] CorrespondenceError),
    #[error(transparent)]
    Klt(#[from] KltError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One interest point's response and whether its match was an inlier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointOutcome {
    pub response: f64,
    pub inlier: bool,
}

/// One evaluated image pair.
///
/// Pose columns are `None` for homography pairs. A failed pose estimate has
/// infinite `e_r_deg` and `et_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub name: String,
    pub d_r_deg: Option<f64>,
    pub dt_m: Option<f64>,
    pub matching_score: f64,
    pub e_r_deg: Option<f64>,
    pub et_m: Option<f64>,
    pub inlier_count: usize,
    pub n_channels: usize,
    /// Both images' points, image `a` first.
    pub points: Vec<PointOutcome>,
}

impl EvalRecord {
    pub fn pose_succeeded(&self) -> bool {
        matches!((self.e_r_deg, self.et_m), (Some(r), Some(t)) if r.is_finite() && t.is_finite())
    }
}

/// Fraction of the `n` channel matches that are inliers; 0 when `n` is 0.
pub fn matching_score(inliers: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        inliers as f64 / n as f64
    }
}

/// Rotation and translation bounds for counting a pose as accurate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyThresholds {
    pub rot_deg: f64,
    pub trans_m: f64,
}

impl AccuracyThresholds {
    pub const KITTI: Self = Self { rot_deg: 1.0, trans_m: 0.30 };
    pub const EUROC: Self = Self { rot_deg: 3.0, trans_m: 0.10 };

    /// `kitti` or `euroc`.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kitti" => Some(Self::KITTI),
            "euroc" => Some(Self::EUROC),
            _ => None,
        }
    }
}

/// Fraction of records with `eR < rot_deg` and `et < trans_m`. Records
/// without pose errors count as misses.
pub fn accuracy(records: &[EvalRecord], thresholds: AccuracyThresholds) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    if !(thresholds.rot_deg > 0.0 && thresholds.trans_m > 0.0) {
        return Err(EvalError::InvalidArgument("accuracy thresholds must be positive".into()));
    }
    let good = records
        .iter()
        .filter(|r| matches!((r.e_r_deg, r.et_m), (Some(e), Some(t)) if e < thresholds.rot_deg && t < thresholds.trans_m))
        .count();
    Ok(good as f64 / records.len() as f64)
}

pub const RESULTS_HEADER: &str = "name,dR,dt,matching score,eR,et";

fn field(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(v) if v.is_infinite() => "inf".into(),
        Some(v) => format!("{v:.6}"),
    }
}

/// Results CSV with fixed six-decimal formatting.
pub fn format_results_csv(records: &[EvalRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.name,
            field(r.d_r_deg),
            field(r.dt_m),
            field(Some(r.matching_score)),
            field(r.e_r_deg),
            field(r.et_m)
        );
    }
    out
}

/// Reads a results CSV back. Columns absent from the file (`inlier_count`,
/// `n_channels`, per-point outcomes) are left zero or empty.
pub fn parse_results_csv(text: &str) -> Result<Vec<EvalRecord>, EvalError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RESULTS_HEADER) {
        return Err(EvalError::Csv(format!("expected header `{RESULTS_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(EvalError::Csv(format!("line {}: expected 6 fields, found {}", i + 2, f.len())));
            }
            let num = |s: &str| -> Result<Option<f64>, EvalError> {
                let s = s.trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|e| EvalError::Csv(format!("line {}: {s:?}: {e}", i + 2)))
            };
            Ok(EvalRecord {
                name: f[0].to_string(),
                d_r_deg: num(f[1])?,
                dt_m: num(f[2])?,
                matching_score: num(f[3])?.ok_or_else(|| EvalError::Csv(format!("line {}: empty matching score", i + 2)))?,
                e_r_deg: num(f[4])?,
                et_m: num(f[5])?,
                inlier_count: 0,
                n_channels: 0,
                points: Vec::new(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(name: &str, e_r: f64, e_t: f64) -> EvalRecord {
        EvalRecord {
            name: name.into(),
            d_r_deg: Some(2.0),
            dt_m: Some(1.0),
            matching_score: 0.25,
            e_r_deg: Some(e_r),
            et_m: Some(e_t),
            inlier_count: 2,
            n_channels: 8,
            points: Vec::new(),
        }
    }

    #[test]
    fn matching_score_examples() {
        assert_eq!(matching_score(10, 128), 0.078125);
        assert_eq!(matching_score(128, 128), 1.0);
        assert_eq!(matching_score(0, 128), 0.0);
    }

    #[test]
    fn accuracy_examples() {
        let exact = vec![record("a", 0.0, 0.0), record("b", 0.0, 0.0)];
        assert_eq!(accuracy(&exact, AccuracyThresholds::KITTI).unwrap(), 1.0);
        let half = vec![record("a", 0.5, 0.1), record("b", f64::INFINITY, f64::INFINITY)];
        assert_eq!(accuracy(&half, AccuracyThresholds::KITTI).unwrap(), 0.5);
        assert!(matches!(accuracy(&[], AccuracyThresholds::KITTI), Err(EvalError::EmptyRecords)));
        assert_eq!(AccuracyThresholds::preset("KITTI"), Some(AccuracyThresholds { rot_deg: 1.0, trans_m: 0.30 }));
        assert_eq!(AccuracyThresholds::preset("euroc"), Some(AccuracyThresholds { rot_deg: 3.0, trans_m: 0.10 }));
        assert_eq!(AccuracyThresholds::preset("tum"), None);
    }

    #[test]
    fn csv_roundtrip_and_failure_sentinel() {
        let mut recs = vec![record("seq/000001-000004", 0.125, 0.0625), record("seq/000002-000003", f64::INFINITY, f64::INFINITY)];
        recs[1].matching_score = 0.0;
        let text = format_results_csv(&recs);
        assert_eq!(
            text,
            "name,dR,dt,matching score,eR,et\n\
             seq/000001-000004,2.000000,1.000000,0.250000,0.125000,0.062500\n\
             seq/000002-000003,2.000000,1.000000,0.000000,inf,inf\n"
        );
        let back = parse_results_csv(&text).unwrap();
        assert_eq!(back[1].e_r_deg, Some(f64::INFINITY));
        assert_eq!(back[0].et_m, Some(0.0625));
        assert!(!back[1].pose_succeeded() && back[0].pose_succeeded());
        assert!(parse_results_csv("name,dR\n").is_err());
        assert!(parse_results_csv(&format!("{RESULTS_HEADER}\na,1,2,x,4,5\n")).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn accuracy_is_monotone_in_thresholds(
                errs in prop::collection::vec((0.0f64..5.0, 0.0f64..1.0), 1..40),
                r in 0.01f64..5.0, t in 0.01f64..1.0, dr in 0.0f64..2.0, dt in 0.0f64..0.5,
            ) {
                let recs: Vec<EvalRecord> = errs.iter().map(|&(e, x)| record("p", e, x)).collect();
                let lo = accuracy(&recs, AccuracyThresholds { rot_deg: r, trans_m: t }).unwrap();
                let hi = accuracy(&recs, AccuracyThresholds { rot_deg: r + dr, trans_m: t + dt }).unwrap();
                prop_assert!(hi >= lo);
            }
        }
    }
}
