//! Level likelihoods, maximum-likelihood ordering and L1 selection.
//!
//! Each committed instance with regressed level `p` gets the unnormalised
//! Gaussian likelihood `l_j = exp(-((p - j) / sigma)^2 / 2)` for every level
//! `j = 1..=24`. An ordering assigns consecutive ascending levels
//! `s, s+1, ..., s+N-1` to the instances in commit order; the best one
//! maximises the product of the assigned likelihoods.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traversal::{TerminationReason, TraversalResult};
use crate::volgrid::Point3;
use crate::{L1_LEVEL, NUM_LEVELS};

pub const DEFAULT_SIGMA: f64 = 2.0;

/// Level assigned to instances whose regressed level is not positive; such
/// values still carry ordering information ("at the very top").
pub const LEVEL_FLOOR: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelLikelihood {
    values: [f64; NUM_LEVELS],
    log_values: [f64; NUM_LEVELS],
}

impl LevelLikelihood {
    /// `l_j` for `j = 1..=24`, stored at index `j - 1`.
    pub fn values(&self) -> &[f64; NUM_LEVELS] {
        &self.values
    }

    pub fn get(&self, level: usize) -> f64 {
        self.values[level - 1]
    }

    /// `ln l_j`, computed without going through `exp`.
    pub fn log(&self, level: usize) -> f64 {
        self.log_values[level - 1]
    }

    /// Multiplies every value by `factor` (used to check argmax invariance).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.map(|v| v * factor),
            log_values: self.log_values.map(|v| v + factor.ln()),
        }
    }
}

pub fn likelihood_vector(p_l: f64, sigma: f64) -> Result<LevelLikelihood> {
    if !(p_l.is_finite() && p_l > 0.0) {
        return Err(Error::invalid(format!("regressed level must be positive, got {p_l}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let mut log_values = [0.0; NUM_LEVELS];
    for (j, lv) in log_values.iter_mut().enumerate() {
        let d = (p_l - (j + 1) as f64) / sigma;
        *lv = -0.5 * d * d;
    }
    Ok(LevelLikelihood { values: log_values.map(f64::exp), log_values })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    /// Level of each instance, commit order.
    pub levels: Vec<u8>,
    pub log_likelihood: f64,
    /// Position of the instance assigned L1, if any.
    pub l1_index: Option<usize>,
}

impl OrderingResult {
    /// The product of the assigned likelihoods.
    pub fn likelihood(&self) -> f64 {
        self.log_likelihood.exp()
    }
}

/// Best consecutive window; ties go to the smallest start level.
pub fn best_ordering(likelihoods: &[LevelLikelihood]) -> Result<OrderingResult> {
    let n = likelihoods.len();
    if n == 0 || n > NUM_LEVELS {
        return Err(Error::invalid(format!("can order 1..={NUM_LEVELS} instances, got {n}")));
    }
    let mut best: Option<(usize, f64)> = None;
    for s in 1..=NUM_LEVELS + 1 - n {
        let ll: f64 = likelihoods.iter().enumerate().map(|(i, l)| l.log(s + i)).sum();
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((s, ll));
        }
    }
    let (s, log_likelihood) = best.expect("at least one window");
    let levels: Vec<u8> = (0..n).map(|i| (s + i) as u8).collect();
    let l1_index = levels.iter().position(|&l| l == L1_LEVEL);
    Ok(OrderingResult { levels, log_likelihood, l1_index })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Rule {
    /// The ordering assigned level 20 to the instance.
    Ordering,
    /// Level 20 was outside the ordering but this instance's regressed level
    /// was within half a level of it.
    ClosestLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Pick {
    pub instance: usize,
    pub centroid_mm: Point3,
    pub rule: L1Rule,
}

/// The instance the ordering labels L1, falling back to the regressed level
/// closest to 20 when that is within 0.5.
pub fn select_l1(result: &TraversalResult, ordering: &OrderingResult) -> Option<L1Pick> {
    if let Some(i) = ordering.l1_index {
        let inst = result.instances.get(i)?;
        return Some(L1Pick { instance: i, centroid_mm: inst.centroid_mm, rule: L1Rule::Ordering });
    }
    let (i, inst) = result
        .instances
        .iter()
        .enumerate()
        .min_by(|a, b| dist20(a.1.predicted_level).total_cmp(&dist20(b.1.predicted_level)))?;
    (dist20(inst.predicted_level) <= 0.5).then_some(L1Pick { instance: i, centroid_mm: inst.centroid_mm, rule: L1Rule::ClosestLevel })
}

fn dist20(p: f32) -> f64 {
    (p as f64 - L1_LEVEL as f64).abs()
}

/// Ordering input for one committed level.
pub fn effective_level(p_l: f32) -> f64 {
    if p_l > 0.0 {
        p_l as f64
    } else {
        LEVEL_FLOOR
    }
}

/// Labels of a whole traversal.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeling {
    /// Level of each committed instance; `None` for instances outside the
    /// best 24-instance block when more than 24 were committed.
    pub levels: Vec<Option<u8>>,
    pub ordering: OrderingResult,
    /// Index of the first instance the ordering covers.
    pub first: usize,
    pub l1: Option<L1Pick>,
}

/// Orders the instances of `result` and picks L1. Returns `None` when nothing
/// was committed. With more than 24 instances the contiguous block of 24 with
/// the highest likelihood is labelled.
pub fn label_instances(result: &TraversalResult, sigma: f64) -> Result<Option<Labeling>> {
    let n = result.instances.len();
    if n == 0 {
        return Ok(None);
    }
    let likes = result
        .instances
        .iter()
        .map(|r| likelihood_vector(effective_level(r.predicted_level), sigma))
        .collect::<Result<Vec<_>>>()?;
    let width = n.min(NUM_LEVELS);
    let mut best: Option<(usize, OrderingResult)> = None;
    for first in 0..=n - width {
        let o = best_ordering(&likes[first..first + width])?;
        if best.as_ref().is_none_or(|(_, b)| o.log_likelihood > b.log_likelihood) {
            best = Some((first, o));
        }
    }
    let (first, ordering) = best.expect("at least one block");
    let mut levels = vec![None; n];
    for (i, &l) in ordering.levels.iter().enumerate() {
        levels[first + i] = Some(l);
    }

    // select_l1 works on instance positions of the whole result.
    let shifted = OrderingResult { l1_index: ordering.l1_index.map(|i| i + first), ..ordering.clone() };
    let l1 = select_l1(result, &shifted);
    Ok(Some(Labeling { levels, ordering, first, l1 }))
}

/// One entry of `instances.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceEntry {
    pub commit_index: usize,
    #[serde(rename = "p_L")]
    pub p_l: f32,
    pub centroid_mm: Point3,
    pub voxels: usize,
}

/// Contents of `instances.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstancesFile {
    pub instances: Vec<InstanceEntry>,
    pub termination: TerminationReason,
    pub levels: Vec<Option<u8>>,
    pub l1_instance: Option<usize>,
    pub l1_centroid_mm: Option<Point3>,
    pub l1_rule: Option<L1Rule>,
    pub log_likelihood: Option<f64>,
}

impl InstancesFile {
    pub fn new(result: &TraversalResult, labeling: Option<&Labeling>) -> Self {
        Self {
            instances: result
                .instances
                .iter()
                .map(|r| InstanceEntry {
                    commit_index: r.commit_index,
                    p_l: r.predicted_level,
                    centroid_mm: r.centroid_mm,
                    voxels: r.mask.voxel_count(),
                })
                .collect(),
            termination: result.termination,
            levels: labeling.map(|l| l.levels.clone()).unwrap_or_default(),
            l1_instance: labeling.and_then(|l| l.l1.as_ref()).map(|p| p.instance),
            l1_centroid_mm: labeling.and_then(|l| l.l1.as_ref()).map(|p| p.centroid_mm),
            l1_rule: labeling.and_then(|l| l.l1.as_ref()).map(|p| p.rule),
            log_likelihood: labeling.map(|l| l.ordering.log_likelihood),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
