//! Iterative instance inference: find a seed, segment the next vertebra,
//! re-centre on it, commit it to memory, repeat along the spine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::segbackend::{Mode, SegmentRequest, Segmenter};
use crate::volgrid::{self, check_window, extract_patch, normalize_value, Dims, LabelMap, Patch, Point3, Volume};

/// Memory value for sub-threshold or out-of-order bone that was looked at and
/// rejected. It is shown to the segmenter as ordinary memory so it is never
/// offered again.
pub const REJECTED: u8 = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraversalConfig {
    pub patch_size: Dims,
    pub mode: Mode,
    pub bone_hu_threshold: f64,
    pub min_new_bone_cm3: f64,
    pub scan_stride_vox: usize,
    pub recenter_tol_mm: f64,
    pub recenter_max_iters: usize,
    pub prob_threshold: f32,
    pub max_instances: usize,
    pub caudal_step_mm: f64,
    /// HU window used to normalise patches before they reach the segmenter.
    pub clip_hu: (f64, f64),
}

impl Default for TraversalConfig {
    fn default() -> Self {
        Self {
            patch_size: [128, 128, 128],
            mode: Mode::TopDown,
            bone_hu_threshold: 200.0,
            min_new_bone_cm3: 1.0,
            scan_stride_vox: 64,
            recenter_tol_mm: 2.0,
            recenter_max_iters: 5,
            prob_threshold: 0.5,
            max_instances: 30,
            caudal_step_mm: 64.0,
            clip_hu: (-100.0, 2000.0),
        }
    }
}

impl TraversalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size.contains(&0) {
            return Err(Error::invalid("patch_size components must be positive"));
        }
        if self.scan_stride_vox == 0 || self.recenter_max_iters == 0 || self.max_instances == 0 {
            return Err(Error::invalid("scan_stride_vox, recenter_max_iters and max_instances must be positive"));
        }
        if self.max_instances >= REJECTED as usize {
            return Err(Error::invalid(format!("max_instances must be below {REJECTED}")));
        }
        let positive = [self.min_new_bone_cm3, self.recenter_tol_mm, self.caudal_step_mm];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("min_new_bone_cm3, recenter_tol_mm and caudal_step_mm must be positive"));
        }
        if !(self.prob_threshold > 0.0 && self.prob_threshold < 1.0) {
            return Err(Error::invalid("prob_threshold must lie in (0, 1)"));
        }
        if !self.bone_hu_threshold.is_finite() {
            return Err(Error::invalid("bone_hu_threshold must be finite"));
        }
        check_window(self.clip_hu.0, self.clip_hu.1)
    }

    /// Worst-case number of segmenter calls [`traverse`] may make on `vol`.
    ///
    /// Every `center_iterate` run costs at most `recenter_max_iters` calls.
    /// Runs end in a commit (at most `max_instances`), a rejection (same
    /// budget), an advance (bounded by the scan extent) or termination, and
    /// the optional raster scan adds one call per position.
    pub fn call_bound(&self, dims: Dims, spacing: [f64; 3]) -> usize {
        let extent_z = dims[2] as f64 * spacing[2];
        let advances = (extent_z / self.caudal_step_mm).ceil() as usize + 1;
        let runs = 2 * self.max_instances + advances + 1;
        self.recenter_max_iters * runs + scan_positions(dims, self).len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// The patch centre left the volume in the direction of travel.
    BottomOfScan,
    /// The rounded level of the next instance exceeded 24.
    LevelOutOfRange,
    /// No seed point could be found anywhere.
    NoNewBone,
    MaxInstances,
}

/// A committed instance mask, stored as its bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMask {
    /// Volume index of the box corner.
    pub offset: [usize; 3],
    /// Binary (0/1) voxels of the box.
    pub mask: LabelMap,
}

impl InstanceMask {
    fn from_indices(indices: &[usize], vol_dims: Dims, spacing: [f64; 3]) -> Self {
        let [nx, ny, _] = vol_dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for &i in indices {
            let c = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
        let mut mask = LabelMap::filled(dims, spacing, 0).expect("non-empty box");
        for &i in indices {
            let c = [i % nx, (i / nx) % ny, i / (nx * ny)];
            mask.set(c[0] - lo[0], c[1] - lo[1], c[2] - lo[2], 1);
        }
        Self { offset: lo, mask }
    }

    pub fn voxel_count(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v != 0).count()
    }

    /// Volume indices of the mask voxels, in increasing order.
    pub fn volume_indices(&self, vol_dims: Dims) -> Vec<usize> {
        let d = self.mask.dims();
        let mut out = Vec::new();
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    if self.mask.get(x, y, z) != 0 {
                        let (vx, vy, vz) = (x + self.offset[0], y + self.offset[1], z + self.offset[2]);
                        out.push(vx + vol_dims[0] * (vy + vol_dims[1] * vz));
                    }
                }
            }
        }
        out
    }

    /// Full-size binary label map.
    pub fn to_volume(&self, vol_dims: Dims, spacing: [f64; 3]) -> LabelMap {
        let mut out = LabelMap::filled(vol_dims, spacing, 0).expect("valid volume geometry");
        for i in self.volume_indices(vol_dims) {
            out.data_mut()[i] = 1;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceRecord {
    pub mask: InstanceMask,
    pub predicted_level: f32,
    pub centroid_mm: Point3,
    pub commit_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraversalResult {
    pub instances: Vec<InstanceRecord>,
    pub termination: TerminationReason,
    /// Segmenter calls made.
    pub calls: usize,
    /// Candidates rejected as too small or out of order.
    pub rejected: usize,
}

impl TraversalResult {
    /// Label map with instance `i` stored as `commit_index + 1`.
    pub fn labelmap(&self, dims: Dims, spacing: [f64; 3]) -> LabelMap {
        let mut out = LabelMap::filled(dims, spacing, 0).expect("valid volume geometry");
        for inst in &self.instances {
            let label = (inst.commit_index + 1) as u8;
            for i in inst.mask.volume_indices(dims) {
                out.data_mut()[i] = label;
            }
        }
        out
    }
}

#[derive(Debug, Error)]
#[error("traversal stopped after {} committed instances", partial.instances.len())]
pub struct TraversalError {
    /// Everything committed before the failure.
    pub partial: TraversalResult,
    #[source]
    pub cause: Error,
}

/// Result of [`center_iterate`].
#[derive(Clone, Debug, PartialEq)]
pub struct CenterOutcome {
    /// Volume indices of newly segmented (memory-free) voxels.
    pub voxels: Vec<usize>,
    pub predicted_level: f32,
    pub center_mm: Point3,
    /// Segmenter calls spent (1..=recenter_max_iters).
    pub iters: usize,
}

/// Centroid of bone voxels in the two slices at the travel-start end of the
/// volume, or `None` when those slices contain no bone.
pub fn find_start(vol: &Volume, cfg: &TraversalConfig) -> Option<Point3> {
    let [nx, ny, nz] = vol.dims();
    let slices: Vec<usize> = match cfg.mode {
        Mode::TopDown => (0..nz.min(2)).collect(),
        Mode::BottomUp => (nz.saturating_sub(2)..nz).collect(),
    };
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for z in slices {
        for y in 0..ny {
            for x in 0..nx {
                if vol.get(x, y, z) as f64 > cfg.bone_hu_threshold {
                    sum[0] += x as f64;
                    sum[1] += y as f64;
                    sum[2] += z as f64;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return None;
    }
    let s = vol.spacing();
    Some([0, 1, 2].map(|a| (sum[a] / n as f64 + 0.5) * s[a]))
}

/// Patch centres visited by [`scan_for_bone`], in visiting order.
pub fn scan_positions(dims: Dims, cfg: &TraversalConfig) -> Vec<[usize; 3]> {
    let starts = |n: usize, size: usize, stride: usize| -> Vec<usize> {
        if n <= size {
            return vec![0];
        }
        let count = (n - size).div_ceil(stride) + 1;
        (0..count).map(|i| (i * stride).min(n - size)).collect()
    };
    let xs = starts(dims[0], cfg.patch_size[0], cfg.scan_stride_vox);
    let ys = starts(dims[1], cfg.patch_size[1], cfg.scan_stride_vox);
    let depth = cfg.patch_size[2];
    let bands = dims[2].div_ceil(depth);
    let mut out = Vec::new();
    for b in 0..bands {
        let z0 = match cfg.mode {
            Mode::TopDown => b * depth,
            Mode::BottomUp => dims[2].saturating_sub((b + 1) * depth),
        };
        for &y0 in &ys {
            for &x0 in &xs {
                out.push([x0, y0, z0]);
            }
        }
    }
    out
}

/// Raster scan for the first patch holding at least `min_new_bone_cm3` of
/// segmented bone; returns that bone's centroid.
pub fn scan_for_bone(vol: &Volume, segmenter: &mut dyn Segmenter, cfg: &TraversalConfig) -> Result<Option<Point3>> {
    cfg.validate()?;
    let memory = LabelMap::filled(vol.dims(), vol.spacing(), 0)?;
    let mut calls = 0;
    scan_inner(vol, &memory, segmenter, cfg, &mut calls)
}

fn scan_inner(
    vol: &Volume,
    memory: &LabelMap,
    segmenter: &mut dyn Segmenter,
    cfg: &TraversalConfig,
    calls: &mut usize,
) -> Result<Option<Point3>> {
    let s = vol.spacing();
    for start in scan_positions(vol.dims(), cfg) {
        let center = [0, 1, 2].map(|a| (start[a] as f64 + cfg.patch_size[a] as f64 / 2.0) * s[a]);
        let seg = evaluate(vol, memory, segmenter, center, cfg, calls)?;
        if volume_cm3(seg.voxels.len(), vol) >= cfg.min_new_bone_cm3 {
            return Ok(Some(centroid_of(&seg.voxels, vol)));
        }
    }
    Ok(None)
}

/// Segment at `center0`, re-centre on the segmented bone and repeat until the
/// centre moves less than `recenter_tol_mm` or `recenter_max_iters` calls have
/// been made. The centre may only move in the direction of travel along `z`.
pub fn center_iterate(
    vol: &Volume,
    segmenter: &mut dyn Segmenter,
    center0: Point3,
    memory: &LabelMap,
    cfg: &TraversalConfig,
) -> Result<CenterOutcome> {
    cfg.validate()?;
    check_same_grid(vol, memory)?;
    let mut calls = 0;
    iterate_inner(vol, memory, segmenter, center0, cfg, &mut calls)
}

fn iterate_inner(
    vol: &Volume,
    memory: &LabelMap,
    segmenter: &mut dyn Segmenter,
    center0: Point3,
    cfg: &TraversalConfig,
    calls: &mut usize,
) -> Result<CenterOutcome> {
    let sign = cfg.mode.z_sign();
    let mut center = center0;
    let mut best = CenterOutcome { voxels: Vec::new(), predicted_level: 0.0, center_mm: center0, iters: 0 };
    for iter in 1..=cfg.recenter_max_iters {
        best.iters = iter;
        let seg = evaluate(vol, memory, segmenter, center, cfg, calls)?;
        if seg.voxels.is_empty() {
            // Keep whatever the previous position produced.
            break;
        }
        let mut next = centroid_of(&seg.voxels, vol);
        if (next[2] - center[2]) * sign < 0.0 {
            next[2] = center[2];
        }
        let moved = dist(next, center);
        best.voxels = seg.voxels;
        best.predicted_level = seg.predicted_level;
        best.center_mm = next;
        center = next;
        if moved < cfg.recenter_tol_mm {
            break;
        }
    }
    Ok(best)
}

struct Evaluation {
    voxels: Vec<usize>,
    predicted_level: f32,
}

/// One segmenter call at `center`: thresholded, in-volume, memory-free voxels.
fn evaluate(
    vol: &Volume,
    memory: &LabelMap,
    segmenter: &mut dyn Segmenter,
    center: Point3,
    cfg: &TraversalConfig,
    calls: &mut usize,
) -> Result<Evaluation> {
    let (lo, hi) = cfg.clip_hu;
    let fill = lo.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
    let raw = extract_patch(vol, center, cfg.patch_size, fill)?;
    let intensity: Patch<f32> = raw.map(normalize_value(fill as f64, lo, hi), |v| normalize_value(v as f64, lo, hi));
    let label = cfg.mode.memory_label();
    let mem_raw = extract_patch(memory, center, cfg.patch_size, 0)?;
    let mem = mem_raw.map(0u8, |v| if v != 0 { label } else { 0 });
    let req = SegmentRequest {
        intensity,
        memory: mem,
        mode: cfg.mode,
        spacing_mm: vol.spacing()[0] as f32,
    };
    *calls += 1;
    let resp = segmenter.segment(&req)?;
    resp.validate(req.voxels())?;

    let dims = vol.dims();
    let start = req.intensity.start();
    let size = cfg.patch_size;
    let mut voxels = Vec::new();
    for lz in 0..size[2] {
        let z = start[2] + lz as i64;
        if z < 0 || z >= dims[2] as i64 {
            continue;
        }
        for ly in 0..size[1] {
            let y = start[1] + ly as i64;
            if y < 0 || y >= dims[1] as i64 {
                continue;
            }
            let row = size[0] * (ly + size[1] * lz);
            for lx in 0..size[0] {
                let li = row + lx;
                if resp.probabilities[li] < cfg.prob_threshold || req.memory.data()[li] != 0 {
                    continue;
                }
                let x = start[0] + lx as i64;
                if x < 0 || x >= dims[0] as i64 {
                    continue;
                }
                voxels.push(x as usize + dims[0] * (y as usize + dims[1] * z as usize));
            }
        }
    }
    Ok(Evaluation { voxels, predicted_level: resp.predicted_level })
}

/// Runs the full traversal of `vol` (HU) with `segmenter`.
pub fn traverse(vol: &Volume, segmenter: &mut dyn Segmenter, cfg: &TraversalConfig) -> Result<TraversalResult, TraversalError> {
    let mut state = TraversalResult {
        instances: Vec::new(),
        termination: TerminationReason::NoNewBone,
        calls: 0,
        rejected: 0,
    };
    match run(vol, segmenter, cfg, &mut state) {
        Ok(reason) => {
            state.termination = reason;
            Ok(state)
        }
        Err(cause) => Err(TraversalError { partial: state, cause }),
    }
}

fn run(vol: &Volume, segmenter: &mut dyn Segmenter, cfg: &TraversalConfig, st: &mut TraversalResult) -> Result<TerminationReason> {
    cfg.validate()?;
    let mut memory = LabelMap::filled(vol.dims(), vol.spacing(), 0)?;
    let seed = match find_start(vol, cfg) {
        Some(p) => Some(p),
        None => scan_inner(vol, &memory, segmenter, cfg, &mut st.calls)?,
    };
    let Some(mut center) = seed else {
        return Ok(TerminationReason::NoNewBone);
    };

    let sign = cfg.mode.z_sign();
    let extent_z = vol.extent_mm()[2];
    let beyond = |z: f64| match cfg.mode {
        Mode::TopDown => z >= extent_z,
        Mode::BottomUp => z < 0.0,
    };
    let budget = cfg.max_instances;
    loop {
        if st.instances.len() >= cfg.max_instances {
            return Ok(TerminationReason::MaxInstances);
        }
        let out = iterate_inner(vol, &memory, segmenter, center, cfg, &mut st.calls)?;
        // The centre never moves against the direction of travel, so runs that
        // yield nothing can keep their position for the advance below.
        center = out.center_mm;

        let enough = volume_cm3(out.voxels.len(), vol) >= cfg.min_new_bone_cm3;
        let centroid = (!out.voxels.is_empty()).then(|| centroid_of(&out.voxels, vol));
        let in_order = match (centroid, st.instances.last()) {
            (Some(c), Some(prev)) => (c[2] - prev.centroid_mm[2]) * sign > 0.0,
            _ => true,
        };

        if enough && in_order {
            if out.predicted_level.round() > crate::NUM_LEVELS as f32 {
                return Ok(TerminationReason::LevelOutOfRange);
            }
            let commit_index = st.instances.len();
            for &i in &out.voxels {
                memory.data_mut()[i] = (commit_index + 1) as u8;
            }
            log::debug!(
                "committed instance {commit_index}: {} voxels, level {:.2}",
                out.voxels.len(),
                out.predicted_level
            );
            st.instances.push(InstanceRecord {
                mask: InstanceMask::from_indices(&out.voxels, vol.dims(), vol.spacing()),
                predicted_level: out.predicted_level,
                centroid_mm: centroid.expect("non-empty"),
                commit_index,
            });
            continue;
        }

        if !out.voxels.is_empty() && st.rejected < budget {
            // Too small or out of order: hide it and look again from here.
            for &i in &out.voxels {
                memory.data_mut()[i] = REJECTED;
            }
            st.rejected += 1;
            continue;
        }

        center[2] += sign * cfg.caudal_step_mm;
        if beyond(center[2]) {
            return Ok(TerminationReason::BottomOfScan);
        }
    }
}

fn check_same_grid(vol: &Volume, memory: &LabelMap) -> Result<()> {
    if vol.dims() != memory.dims() {
        return Err(Error::DimensionMismatch { left: vol.dims(), right: memory.dims() });
    }
    Ok(())
}

fn volume_cm3(voxels: usize, vol: &Volume) -> f64 {
    voxels as f64 * vol.voxel_volume_mm3() / 1000.0
}

fn centroid_of(indices: &[usize], vol: &Volume) -> Point3 {
    let [nx, ny, _] = vol.dims();
    let mut sum = [0.0f64; 3];
    for &i in indices {
        sum[0] += (i % nx) as f64;
        sum[1] += ((i / nx) % ny) as f64;
        sum[2] += (i / (nx * ny)) as f64;
    }
    let n = indices.len().max(1) as f64;
    let s = vol.spacing();
    [0, 1, 2].map(|a| (sum[a] / n + 0.5) * s[a])
}

fn dist(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean of the mask voxels of a committed instance.
pub fn instance_centroid(record: &InstanceRecord) -> Point3 {
    let o = record.mask.offset;
    let s = record.mask.mask.spacing();
    let c = volgrid::foreground_centroid(&record.mask.mask, 1).unwrap_or([0.0; 3]);
    [0, 1, 2].map(|a| c[a] + o[a] as f64 * s[a])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};
    use crate::segbackend::OracleSegmenter;

    fn small_spec(n: usize) -> PhantomSpec {
        PhantomSpec { n_vertebrae: n, dims: [96, 96, 30 * n + 40], ..PhantomSpec::default() }
    }

    fn small_cfg() -> TraversalConfig {
        TraversalConfig { patch_size: [96, 96, 96], ..TraversalConfig::default() }
    }

    #[test]
    fn defaults_validate() {
        TraversalConfig::default().validate().unwrap();
        let bad = TraversalConfig { prob_threshold: 1.0, ..TraversalConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn find_start_on_phantom_and_empty() {
        let (vol, truth) = generate_phantom(&small_spec(4), 0).unwrap();
        let p = find_start(&vol, &TraversalConfig::default()).unwrap();
        let g = &truth.geometry()[0];
        assert!((p[0] - g.centroid_mm[0]).abs() < 2.0);
        assert!(p[2] < 2.0);
        let empty = Volume::filled([20, 20, 20], [1.0; 3], 0).unwrap();
        assert!(find_start(&empty, &TraversalConfig::default()).is_none());
    }

    #[test]
    fn recentering_converges_from_offset() {
        let (vol, truth) = generate_phantom(&small_spec(5), 0).unwrap();
        let cfg = small_cfg();
        let mem = LabelMap::filled(vol.dims(), vol.spacing(), 0).unwrap();
        let g = truth.geometry();
        let mut seg = OracleSegmenter::new(&truth, 0.0, 0);
        let exact = center_iterate(&vol, &mut seg, g[2].centroid_mm, &mem, &small_cfg()).unwrap();
        assert_eq!(exact.iters, 1);

        // The vertebrae above are already in memory, as during a traversal.
        let above = truth.labels.map(|v| u8::from(v != 0 && v < 3));
        let mut c = g[2].centroid_mm;
        c[2] -= 15.0;
        let out = center_iterate(&vol, &mut seg, c, &above, &cfg).unwrap();
        assert!(out.iters <= 5);
        assert!(dist(out.center_mm, g[2].centroid_mm) < cfg.recenter_tol_mm + 1.0);
    }

    #[test]
    fn oracle_traversal_recovers_every_vertebra() {
        let (vol, truth) = generate_phantom(&small_spec(6), 2).unwrap();
        for mode in [Mode::TopDown, Mode::BottomUp] {
            let cfg = TraversalConfig { mode, ..small_cfg() };
            let mut seg = OracleSegmenter::new(&truth, 0.0, 0);
            let res = traverse(&vol, &mut seg, &cfg).unwrap();
            assert_eq!(res.instances.len(), 6, "{mode}");
            assert!(res.calls <= cfg.call_bound(vol.dims(), vol.spacing()));
            let mut levels: Vec<f32> = res.instances.iter().map(|r| r.predicted_level).collect();
            if mode == Mode::BottomUp {
                levels.reverse();
            }
            assert_eq!(levels, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
            for r in &res.instances {
                let c = instance_centroid(r);
                assert!(dist(c, r.centroid_mm) < 1e-9);
            }
        }
    }

    #[test]
    fn empty_volume_has_no_bone() {
        let vol = Volume::filled([64, 64, 64], [1.0; 3], 40).unwrap();
        let truth = crate::SpineGroundTruth {
            labels: LabelMap::filled([64, 64, 64], [1.0; 3], 0).unwrap(),
            level_of_instance: vec![],
            l1_instance: None,
        };
        let mut seg = OracleSegmenter::new(&truth, 0.0, 0);
        let res = traverse(&vol, &mut seg, &small_cfg()).unwrap();
        assert!(res.instances.is_empty());
        assert_eq!(res.termination, TerminationReason::NoNewBone);
        assert_eq!(res.calls, scan_positions(vol.dims(), &small_cfg()).len());
    }
}
