//! Per-case evaluation against phantom truth and summary reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lossmath;
use crate::phantom::{instance_geometry, InstanceGeometry, SpineGroundTruth};
use crate::volgrid::{LabelMap, Point3};

/// Craniocaudal distance between two points.
pub fn level_error_mm(pred: Point3, truth: Point3) -> f64 {
    (pred[2] - truth[2]).abs()
}

/// Whether `pred` identifies L1, and the signed vertebra offset of the
/// instance it falls in (negative = cranial). `pred = None` is incorrect with
/// no shift.
pub fn is_correct_l1(pred: Option<Point3>, truth: &SpineGroundTruth) -> Result<(bool, Option<i32>)> {
    let l1 = truth.l1_instance.ok_or_else(|| Error::invalid("truth has no L1 instance"))?;
    Ok(classify(pred, &truth.geometry(), l1, truth.labels.spacing()[2]))
}

fn classify(pred: Option<Point3>, geo: &[InstanceGeometry], l1: u8, dz: f64) -> (bool, Option<i32>) {
    let Some(p) = pred else {
        return (false, None);
    };
    let z = p[2];
    let l1i = l1 as usize - 1;
    let (lo, hi) = geo[l1i].z_extent_mm([1.0, 1.0, dz]);
    if z >= lo && z <= hi {
        return (true, Some(0));
    }
    // Containing instance, else the one with the nearest z-extent.
    let gap = |g: &InstanceGeometry| {
        let (a, b) = g.z_extent_mm([1.0, 1.0, dz]);
        if z < a {
            a - z
        } else if z > b {
            z - b
        } else {
            0.0
        }
    };
    let nearest = (0..geo.len())
        .filter(|&i| geo[i].voxels > 0)
        .min_by(|&a, &b| gap(&geo[a]).total_cmp(&gap(&geo[b])).then(a.cmp(&b)))
        .unwrap_or(l1i);
    let mut shift = nearest as i32 - l1i as i32;
    if shift == 0 {
        // Outside L1's extent yet nearest to it: count as the neighbour on
        // that side.
        shift = if z < lo { -1 } else { 1 };
    }
    (false, Some(shift))
}

/// Dice of every predicted instance against the truth instance it overlaps
/// most (0 when it overlaps none). Labels `1..=n_pred` of `pred` are the
/// predicted instances.
pub fn instance_dice(pred: &LabelMap, n_pred: usize, truth: &SpineGroundTruth) -> Result<Vec<f64>> {
    let t = &truth.labels;
    if pred.dims() != t.dims() {
        return Err(Error::DimensionMismatch { left: pred.dims(), right: t.dims() });
    }
    let n_true = truth.n_instances();
    let mut overlap = vec![vec![0usize; n_true + 1]; n_pred + 1];
    for (&p, &q) in pred.data().iter().zip(t.data()) {
        if p != 0 && (p as usize) <= n_pred {
            overlap[p as usize][(q as usize).min(n_true)] += 1;
        }
    }
    let pred_geo = instance_geometry(pred, n_pred);
    let true_geo = truth.geometry();
    let mut out = Vec::with_capacity(n_pred);
    for p in 1..=n_pred {
        let best = (1..=n_true).filter(|&q| overlap[p][q] > 0).max_by_key(|&q| (overlap[p][q], std::cmp::Reverse(q)));
        let Some(q) = best else {
            out.push(0.0);
            continue;
        };
        let (a, b) = (&pred_geo[p - 1], &true_geo[q - 1]);
        let lo: [usize; 3] = [0, 1, 2].map(|i| a.bbox_min[i].min(b.bbox_min[i]));
        let hi: [usize; 3] = [0, 1, 2].map(|i| a.bbox_max[i].max(b.bbox_max[i]));
        let dims = [0, 1, 2].map(|i| hi[i] - lo[i] + 1);
        let pm = pred.crop(lo, dims)?.map(|v| u8::from(v as usize == p));
        let tm = t.crop(lo, dims)?.map(|v| u8::from(v as usize == q));
        out.push(lossmath::dice(&pm, &tm)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub predicted_l1_centroid_mm: Option<Point3>,
    pub true_l1_z_extent_mm: (f64, f64),
    pub true_l1_centroid_mm: Point3,
    pub dice: Vec<f64>,
    pub correct: bool,
    pub shift: Option<i32>,
    /// Craniocaudal error, present whenever L1 was predicted.
    pub err_mm: Option<f64>,
}

impl CaseResult {
    pub fn mean_dice(&self) -> Option<f64> {
        mean(&self.dice)
    }
}

/// Scores one case: the predicted L1 centroid and the predicted instance map
/// (labels `1..=n_pred`) against the truth.
pub fn evaluate_case(
    case_id: &str,
    pred_l1: Option<Point3>,
    pred_labels: &LabelMap,
    n_pred: usize,
    truth: &SpineGroundTruth,
) -> Result<CaseResult> {
    let l1 = truth.l1_instance.ok_or_else(|| Error::invalid(format!("case {case_id}: truth has no L1 instance")))?;
    let geo = truth.geometry();
    let g = &geo[l1 as usize - 1];
    let dz = truth.labels.spacing()[2];
    let (correct, shift) = classify(pred_l1, &geo, l1, dz);
    Ok(CaseResult {
        case_id: case_id.to_string(),
        predicted_l1_centroid_mm: pred_l1,
        true_l1_z_extent_mm: g.z_extent_mm([1.0, 1.0, dz]),
        true_l1_centroid_mm: g.centroid_mm,
        dice: instance_dice(pred_labels, n_pred, truth)?,
        correct,
        shift,
        err_mm: pred_l1.map(|p| level_error_mm(p, g.centroid_mm)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub n_cases: usize,
    pub n_correct: usize,
    pub l1_accuracy: f64,
    /// Over every case with a prediction, correct or not.
    pub avg_err_mm: Option<f64>,
    pub median_err_mm: Option<f64>,
    /// Over every predicted instance of every case.
    pub mean_dice: Option<f64>,
    /// Keyed by signed shift, plus `"none"` for cases without a prediction.
    pub shift_histogram: BTreeMap<String, usize>,
}

pub fn summarize(results: &[CaseResult]) -> Result<SummaryReport> {
    if results.is_empty() {
        return Err(Error::EmptyRange("no cases to summarize".into()));
    }
    let n = results.len();
    let n_correct = results.iter().filter(|r| r.correct).count();
    let mut errs: Vec<f64> = results.iter().filter_map(|r| r.err_mm).collect();
    errs.sort_by(f64::total_cmp);
    let mut dice: Vec<f64> = results.iter().flat_map(|r| r.dice.iter().copied()).collect();
    dice.sort_by(f64::total_cmp);
    let mut hist = BTreeMap::new();
    for r in results {
        let key = r.shift.map_or_else(|| "none".to_string(), |s| s.to_string());
        *hist.entry(key).or_insert(0) += 1;
    }
    Ok(SummaryReport {
        n_cases: n,
        n_correct,
        l1_accuracy: n_correct as f64 / n as f64,
        avg_err_mm: mean(&errs),
        median_err_mm: median(&errs),
        mean_dice: mean(&dice),
        shift_histogram: hist,
    })
}

/// Mean of already sorted values (sorting first makes sums order-independent).
fn mean(sorted: &[f64]) -> Option<f64> {
    (!sorted.is_empty()).then(|| sorted.iter().sum::<f64>() / sorted.len() as f64)
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

pub fn write_report_json(path: &Path, report: &SummaryReport) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    id: &'a str,
    correct: bool,
    shift: Option<i32>,
    err_mm: Option<f64>,
    mean_dice: Option<f64>,
}

/// One row per case: id, correct, shift, err_mm, mean_dice.
pub fn write_report_csv(path: &Path, results: &[CaseResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(CsvRow {
            id: &r.case_id,
            correct: r.correct,
            shift: r.shift,
            err_mm: r.err_mm,
            mean_dice: r.mean_dice(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};

    fn case(correct: bool, shift: Option<i32>, err: Option<f64>) -> CaseResult {
        CaseResult {
            case_id: "c".into(),
            predicted_l1_centroid_mm: err.map(|e| [0.0, 0.0, e]),
            true_l1_z_extent_mm: (0.0, 25.0),
            true_l1_centroid_mm: [0.0; 3],
            dice: vec![1.0],
            correct,
            shift,
            err_mm: err,
        }
    }

    #[test]
    fn level_error_examples() {
        assert_eq!(level_error_mm([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
        assert_eq!(level_error_mm([0.0, 0.0, 210.0], [0.0, 0.0, 205.5]), 4.5);
        assert_eq!(level_error_mm([9.0, -4.0, 7.0], [0.0, 0.0, 7.0]), 0.0);
    }

    #[test]
    fn correctness_and_shift() {
        let spec = PhantomSpec { dims: [96, 96, 800], ..PhantomSpec::default() };
        let (_, truth) = generate_phantom(&spec, 0).unwrap();
        let geo = truth.geometry();
        let l1 = geo[19].centroid_mm;
        assert_eq!(is_correct_l1(Some(l1), &truth).unwrap(), (true, Some(0)));
        assert_eq!(is_correct_l1(Some(geo[18].centroid_mm), &truth).unwrap(), (false, Some(-1)));
        assert_eq!(is_correct_l1(Some(geo[21].centroid_mm), &truth).unwrap(), (false, Some(2)));
        assert_eq!(is_correct_l1(None, &truth).unwrap(), (false, None));
    }

    #[test]
    fn dice_of_truth_is_one() {
        let spec = PhantomSpec { n_vertebrae: 4, dims: [96, 96, 160], ..PhantomSpec::default() };
        let (_, truth) = generate_phantom(&spec, 0).unwrap();
        let d = instance_dice(&truth.labels, 4, &truth).unwrap();
        assert_eq!(d, vec![1.0; 4]);
    }

    #[test]
    fn summary_examples() {
        let mut cases: Vec<CaseResult> = (0..39).map(|_| case(true, Some(0), Some(1.0))).collect();
        cases.push(case(false, None, None));
        let s = summarize(&cases).unwrap();
        assert_eq!(s.l1_accuracy, 0.975);
        assert_eq!(s.shift_histogram.values().sum::<usize>(), 40);

        let s = summarize(&[case(true, Some(0), Some(0.0)), case(true, Some(0), Some(0.0)), case(false, Some(-1), Some(9.0))])
            .unwrap();
        assert_eq!(s.avg_err_mm, Some(3.0));
        assert_eq!(s.median_err_mm, Some(0.0));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn table_shaped_statistics() {
        // 50 cases, one misidentified: errors chosen so that the median is
        // 4.5 mm and the mean 11.2 mm.
        let mut cases = Vec::new();
        for i in 0..49 {
            let err = if i < 24 { 3.0 } else if i < 26 { 4.5 } else { 6.0 };
            cases.push(case(true, Some(0), Some(err)));
        }
        let total_so_far: f64 = 24.0 * 3.0 + 2.0 * 4.5 + 23.0 * 6.0;
        cases.push(case(false, Some(-1), Some(11.2 * 50.0 - total_so_far)));
        let s = summarize(&cases).unwrap();
        assert_eq!(s.l1_accuracy, 0.98);
        assert!((s.avg_err_mm.unwrap() - 11.2).abs() < 1e-9);
        assert_eq!(s.median_err_mm, Some(4.5));
    }
}
