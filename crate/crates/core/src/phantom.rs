//! Synthetic spine phantoms with exact ground truth.
//!
//! Vertebrae are elliptic cylinders of bone (body) with a small posterior
//! process, stacked along `z` with soft-tissue discs between them. The stack
//! centreline bows laterally as `x(z) = x0 + A * sin(pi * z / Z)` where `Z` is
//! the stack length. Optional distractors mimic structures a segmenter must
//! ignore: a hip blob beside the caudal end and an anterior contrast region.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{self, Dims, Grid, LabelMap, Point3, Spacing, Volume};
use crate::L1_LEVEL;

/// Highest anatomical level a phantom can carry (an extra lumbar vertebra).
pub const MAX_PHANTOM_LEVEL: u8 = 25;

const PROCESS_HALF_WIDTH_MM: f64 = 4.0;
const PROCESS_LENGTH_MM: f64 = 15.0;
const CONTRAST_HU: f64 = 300.0;
const TISSUE_NOISE_HU: f64 = 15.0;
const BONE_NOISE_HU: f64 = 30.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Distractors {
    pub hip_blob: bool,
    pub contrast_region: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anomaly {
    #[default]
    None,
    /// One vertebra more than `n_vertebrae` (e.g. a sixth lumbar).
    ExtraLumbar,
    /// The given anatomical level is absent.
    MissingVertebra(u8),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_vertebrae: usize,
    pub vertebra_height_mm: f64,
    pub disc_gap_mm: f64,
    pub body_radius_mm: f64,
    pub bone_hu: f64,
    pub soft_tissue_hu: f64,
    pub curvature_amplitude_mm: f64,
    pub distractors: Distractors,
    pub anomaly: Anomaly,
    /// Distance from the cranial face of the volume to the first vertebra.
    pub cranial_offset_mm: f64,
    pub dims: Dims,
    pub spacing_mm: Spacing,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_vertebrae: 24,
            vertebra_height_mm: 25.0,
            disc_gap_mm: 5.0,
            body_radius_mm: 18.0,
            bone_hu: 400.0,
            soft_tissue_hu: 40.0,
            curvature_amplitude_mm: 0.0,
            distractors: Distractors::default(),
            anomaly: Anomaly::None,
            cranial_offset_mm: 0.0,
            dims: [160, 128, 800],
            spacing_mm: [1.0; 3],
        }
    }
}

/// Ground truth for one phantom (or a crop of one).
#[derive(Clone, Debug, PartialEq)]
pub struct SpineGroundTruth {
    /// Instance labels 1..=K, 1 being the most cranial.
    pub labels: LabelMap,
    /// `level_of_instance[k - 1]` is the anatomical level of instance `k`.
    pub level_of_instance: Vec<u8>,
    pub l1_instance: Option<u8>,
}

/// Serialised form of `<name>.truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub level_of_instance: BTreeMap<u8, u8>,
    pub l1_instance: Option<u8>,
}

/// Per-instance geometry derived from a label map in one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceGeometry {
    pub voxels: usize,
    pub centroid_mm: Point3,
    /// Inclusive voxel bounding box.
    pub bbox_min: [usize; 3],
    pub bbox_max: [usize; 3],
}

impl InstanceGeometry {
    /// Craniocaudal extent in mm, from the top face of the first slice to the
    /// bottom face of the last.
    pub fn z_extent_mm(&self, spacing: Spacing) -> (f64, f64) {
        (self.bbox_min[2] as f64 * spacing[2], (self.bbox_max[2] + 1) as f64 * spacing[2])
    }
}

impl SpineGroundTruth {
    pub fn n_instances(&self) -> usize {
        self.level_of_instance.len()
    }

    pub fn level_of(&self, instance: u8) -> Option<u8> {
        self.level_of_instance.get(instance as usize - 1).copied()
    }

    /// Geometry of every instance, indexed by `instance - 1`.
    pub fn geometry(&self) -> Vec<InstanceGeometry> {
        instance_geometry(&self.labels, self.n_instances())
    }

    pub fn to_file(&self) -> TruthFile {
        TruthFile {
            level_of_instance: self
                .level_of_instance
                .iter()
                .enumerate()
                .map(|(i, &l)| ((i + 1) as u8, l))
                .collect(),
            l1_instance: self.l1_instance,
        }
    }

    pub fn from_file(labels: LabelMap, file: &TruthFile) -> Result<Self> {
        let k = file.level_of_instance.len();
        let mut levels = Vec::with_capacity(k);
        for (i, (&inst, &level)) in file.level_of_instance.iter().enumerate() {
            if inst as usize != i + 1 {
                return Err(Error::invalid(format!("instance ids must be 1..={k}, found {inst}")));
            }
            levels.push(level);
        }
        let truth = Self { labels, level_of_instance: levels, l1_instance: file.l1_instance };
        truth.validate()?;
        Ok(truth)
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_of_instance.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("levels must increase strictly with instance index"));
        }
        let expected_l1 = self.level_of_instance.iter().position(|&l| l == L1_LEVEL).map(|i| (i + 1) as u8);
        if self.l1_instance != expected_l1 {
            return Err(Error::invalid(format!(
                "l1_instance {:?} disagrees with levels (expected {expected_l1:?})",
                self.l1_instance
            )));
        }
        let k = self.n_instances();
        let mut counts = vec![0usize; 256];
        for &v in self.labels.data() {
            counts[v as usize] += 1;
        }
        if counts[k + 1..].iter().any(|&c| c > 0) || counts[1..=k].contains(&0) {
            return Err(Error::invalid(format!("labels must be exactly 1..={k}, each non-empty")));
        }
        Ok(())
    }

    /// Writes `<prefix>.truth.json` and the label map as `<prefix>.labels.vgrid.*`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        std::fs::write(truth_json_path(prefix), serde_json::to_vec_pretty(&self.to_file())?)?;
        volgrid::write_volgrid(&labels_prefix(prefix), &self.labels)
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let file: TruthFile = serde_json::from_slice(&std::fs::read(truth_json_path(prefix))?)?;
        let labels = volgrid::read_volgrid(&labels_prefix(prefix))?;
        Self::from_file(labels, &file)
    }
}

pub fn truth_json_path(prefix: &Path) -> std::path::PathBuf {
    std::path::PathBuf::from(format!("{}.truth.json", prefix.display()))
}

pub fn labels_prefix(prefix: &Path) -> std::path::PathBuf {
    std::path::PathBuf::from(format!("{}.labels", prefix.display()))
}

/// One pass over a label map collecting counts, centroids and boxes for
/// labels `1..=k`.
pub fn instance_geometry(labels: &LabelMap, k: usize) -> Vec<InstanceGeometry> {
    let [nx, ny, nz] = labels.dims();
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    let mut lo = vec![[usize::MAX; 3]; k];
    let mut hi = vec![[0usize; 3]; k];
    let data = labels.data();
    for z in 0..nz {
        for y in 0..ny {
            let row = nx * (y + ny * z);
            for x in 0..nx {
                let v = data[row + x] as usize;
                if v == 0 || v > k {
                    continue;
                }
                let i = v - 1;
                counts[i] += 1;
                sums[i][0] += x as f64;
                sums[i][1] += y as f64;
                sums[i][2] += z as f64;
                let c = [x, y, z];
                for a in 0..3 {
                    lo[i][a] = lo[i][a].min(c[a]);
                    hi[i][a] = hi[i][a].max(c[a]);
                }
            }
        }
    }
    let s = labels.spacing();
    (0..k)
        .map(|i| {
            let n = counts[i].max(1) as f64;
            InstanceGeometry {
                voxels: counts[i],
                centroid_mm: [
                    (sums[i][0] / n + 0.5) * s[0],
                    (sums[i][1] / n + 0.5) * s[1],
                    (sums[i][2] / n + 0.5) * s[2],
                ],
                bbox_min: if counts[i] == 0 { [0; 3] } else { lo[i] },
                bbox_max: hi[i],
            }
        })
        .collect()
}

struct VertebraSlot {
    z_top: f64,
    z_bottom: f64,
    x_center: f64,
}

impl PhantomSpec {
    /// Anatomical levels present, cranial to caudal.
    pub fn levels(&self) -> Result<Vec<u8>> {
        let mut n = self.n_vertebrae;
        if matches!(self.anomaly, Anomaly::ExtraLumbar) {
            n += 1;
        }
        if self.n_vertebrae == 0 || n > MAX_PHANTOM_LEVEL as usize {
            return Err(Error::invalid(format!(
                "n_vertebrae must be in 1..=25 including anomalies, got {n}"
            )));
        }
        let mut levels: Vec<u8> = (1..=n as u8).collect();
        if let Anomaly::MissingVertebra(k) = self.anomaly {
            let before = levels.len();
            levels.retain(|&l| l != k);
            if levels.len() == before {
                return Err(Error::invalid(format!("missing level {k} is not part of the spine")));
            }
            if levels.is_empty() {
                return Err(Error::invalid("no vertebrae left after removing the missing level"));
            }
        }
        Ok(levels)
    }

    pub fn validate(&self) -> Result<()> {
        volgrid::check_geometry(self.dims, self.spacing_mm)?;
        self.levels()?;
        for (name, v) in [
            ("vertebra_height_mm", self.vertebra_height_mm),
            ("disc_gap_mm", self.disc_gap_mm),
            ("body_radius_mm", self.body_radius_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.curvature_amplitude_mm.is_finite() && self.curvature_amplitude_mm >= 0.0) {
            return Err(Error::invalid("curvature_amplitude_mm must be >= 0"));
        }
        if !(self.cranial_offset_mm.is_finite() && self.cranial_offset_mm >= 0.0) {
            return Err(Error::invalid("cranial_offset_mm must be >= 0"));
        }
        Ok(())
    }

    fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing_mm[0],
            self.dims[1] as f64 * self.spacing_mm[1],
            self.dims[2] as f64 * self.spacing_mm[2],
        ]
    }

    fn body_center_y(&self) -> f64 {
        self.extent()[1] * 0.55
    }

    fn body_radius_y(&self) -> f64 {
        0.8 * self.body_radius_mm
    }

    fn slots(&self, count: usize) -> Vec<VertebraSlot> {
        let pitch = self.vertebra_height_mm + self.disc_gap_mm;
        let stack = count as f64 * pitch - self.disc_gap_mm;
        let x0 = self.extent()[0] / 2.0;
        (0..count)
            .map(|i| {
                let z_top = self.cranial_offset_mm + i as f64 * pitch;
                let z_mid = i as f64 * pitch + self.vertebra_height_mm / 2.0;
                VertebraSlot {
                    z_top,
                    z_bottom: z_top + self.vertebra_height_mm,
                    x_center: x0
                        + self.curvature_amplitude_mm * (std::f64::consts::PI * z_mid / stack).sin(),
                }
            })
            .collect()
    }
}

/// Build a phantom volume and its ground truth. Deterministic in `(spec, seed)`.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<(Volume, SpineGroundTruth)> {
    spec.validate()?;
    let levels = spec.levels()?;
    let slots = spec.slots(levels.len());
    let extent = spec.extent();
    let s = spec.spacing_mm;
    let y0 = spec.body_center_y();
    let ry = spec.body_radius_y();
    let rx = spec.body_radius_mm;
    let process_end_y = y0 + ry + PROCESS_LENGTH_MM;

    // everything has to fit strictly inside the volume
    let last = slots.last().expect("at least one vertebra");
    let max_x = slots.iter().map(|v| v.x_center + rx).fold(f64::MIN, f64::max);
    let min_x = slots.iter().map(|v| v.x_center - rx).fold(f64::MAX, f64::min);
    if last.z_bottom > extent[2] || max_x >= extent[0] || min_x <= 0.0 || process_end_y >= extent[1] || y0 - ry <= 0.0 {
        return Err(Error::GeometryOverflow(format!(
            "spine spans x [{min_x:.1}, {max_x:.1}] y [{:.1}, {process_end_y:.1}] z [{:.1}, {:.1}] mm \
             but the volume is {extent:?} mm",
            y0 - ry,
            slots[0].z_top,
            last.z_bottom
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nx, ny, nz] = spec.dims;
    let mut labels = LabelMap::filled(spec.dims, s, 0)?;
    let mut hu = vec![0f64; nx * ny * nz];

    for (i, slot) in slots.iter().enumerate() {
        let label = (i + 1) as u8;
        let k_lo = ((slot.z_top / s[2] - 0.5).ceil().max(0.0)) as usize;
        let k_hi = (((slot.z_bottom / s[2]) - 0.5).ceil().max(0.0) as usize).min(nz);
        let quarter = spec.vertebra_height_mm / 4.0;
        for k in k_lo..k_hi {
            let z = (k as f64 + 0.5) * s[2];
            let in_process_z = z >= slot.z_top + quarter && z < slot.z_bottom - quarter;
            for j in 0..ny {
                let y = (j as f64 + 0.5) * s[1];
                let dy = (y - y0) / ry;
                for ii in 0..nx {
                    let x = (ii as f64 + 0.5) * s[0];
                    let dx = (x - slot.x_center) / rx;
                    let body = dx * dx + dy * dy <= 1.0;
                    let process = in_process_z
                        && (x - slot.x_center).abs() <= PROCESS_HALF_WIDTH_MM
                        && y >= y0 + 0.9 * ry
                        && y <= process_end_y;
                    if body || process {
                        labels.set(ii, j, k, label);
                    }
                }
            }
        }
    }

    let mut distractor = vec![0u8; nx * ny * nz];
    let stack_top = slots[0].z_top;
    let stack_len = last.z_bottom - stack_top;
    if spec.distractors.hip_blob {
        let c = [
            extent[0] - 20.0 + rng.random_range(-2.0..2.0),
            y0 + rng.random_range(-5.0..5.0),
            last.z_bottom - 25.0 + rng.random_range(-10.0..10.0),
        ];
        let r = [12.0, 20.0, 35.0];
        if c[0] - r[0] <= max_x + 2.0 {
            return Err(Error::GeometryOverflow("no room for the hip blob beside the spine".into()));
        }
        paint(&mut distractor, HIP, spec.dims, s, c, r, |d| d <= 1.0);
    }
    if spec.distractors.contrast_region {
        let z_lo = stack_top + 0.55 * stack_len + rng.random_range(-10.0..10.0);
        let z_hi = z_lo + 0.2 * stack_len;
        let y_hi = y0 - ry - 12.0;
        if y_hi < 10.0 {
            return Err(Error::GeometryOverflow("no room for the anterior contrast region".into()));
        }
        let x0 = extent[0] / 2.0 + rng.random_range(-5.0..5.0);
        let c = [x0, (4.0 + y_hi) / 2.0, (z_lo + z_hi) / 2.0];
        let r = [20.0, (y_hi - 4.0) / 2.0, (z_hi - z_lo) / 2.0];
        paint(&mut distractor, CONTRAST, spec.dims, s, c, r, |_| true);
    }

    for i in 0..hu.len() {
        hu[i] = if labels.data()[i] != 0 || distractor[i] == HIP {
            spec.bone_hu + rng.random_range(-BONE_NOISE_HU..BONE_NOISE_HU)
        } else if distractor[i] == CONTRAST {
            CONTRAST_HU + rng.random_range(-BONE_NOISE_HU..BONE_NOISE_HU)
        } else {
            spec.soft_tissue_hu + rng.random_range(-TISSUE_NOISE_HU..TISSUE_NOISE_HU)
        };
    }
    let volume = Grid::new(spec.dims, s, hu.into_iter().map(<i16 as volgrid::Voxel>::from_f64).collect())?;

    let l1_instance = levels.iter().position(|&l| l == L1_LEVEL).map(|i| (i + 1) as u8);
    let truth = SpineGroundTruth { labels, level_of_instance: levels, l1_instance };
    Ok((volume, truth))
}

const HIP: u8 = 1;
const CONTRAST: u8 = 2;

/// Tag voxels inside the box `c +- r` whose squared ellipsoid norm passes
/// `inside` (always-true gives the full box).
fn paint(out: &mut [u8], tag: u8, dims: Dims, s: Spacing, c: Point3, r: [f64; 3], inside: impl Fn(f64) -> bool) {
    let lo: Vec<usize> = (0..3).map(|a| (((c[a] - r[a]) / s[a]).floor().max(0.0)) as usize).collect();
    let hi: Vec<usize> = (0..3).map(|a| ((((c[a] + r[a]) / s[a]).ceil()) as usize).min(dims[a])).collect();
    for k in lo[2]..hi[2] {
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                let p = [(i as f64 + 0.5) * s[0], (j as f64 + 0.5) * s[1], (k as f64 + 0.5) * s[2]];
                let d: [f64; 3] = std::array::from_fn(|a| (p[a] - c[a]) / r[a]);
                if d.iter().any(|v| v.abs() > 1.0) {
                    continue;
                }
                if inside(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) {
                    out[i + dims[0] * (j + dims[1] * k)] = tag;
                }
            }
        }
    }
}

/// Crop to the slices covering `z_range_mm`; instances with no voxel left
/// are dropped and the rest renumbered from 1, keeping their levels.
pub fn crop_fov(vol: &Volume, gt: &SpineGroundTruth, z_range_mm: (f64, f64)) -> Result<(Volume, SpineGroundTruth)> {
    if vol.dims() != gt.labels.dims() {
        return Err(Error::DimensionMismatch { left: vol.dims(), right: gt.labels.dims() });
    }
    let (z0, z1) = z_range_mm;
    let sz = vol.spacing()[2];
    let nz = vol.dims()[2];
    if !(z0.is_finite() && z1.is_finite()) || z1 <= z0 {
        return Err(Error::EmptyRange(format!("[{z0}, {z1}) mm")));
    }
    let k0 = ((z0 / sz).floor().max(0.0) as usize).min(nz);
    let k1 = ((z1 / sz).ceil().max(0.0) as usize).min(nz);
    if k1 <= k0 {
        return Err(Error::EmptyRange(format!("[{z0}, {z1}) mm holds no slice of a {nz}-slice volume")));
    }
    let [nx, ny, _] = vol.dims();
    let dims = [nx, ny, k1 - k0];
    let cropped = vol.crop([0, 0, k0], dims)?;
    let mut labels = gt.labels.crop([0, 0, k0], dims)?;

    let mut present = vec![false; gt.n_instances() + 1];
    for &v in labels.data() {
        present[v as usize] = true;
    }
    let mut remap = vec![0u8; 256];
    let mut levels = Vec::new();
    for inst in 1..=gt.n_instances() {
        if present[inst] {
            levels.push(gt.level_of_instance[inst - 1]);
            remap[inst] = levels.len() as u8;
        }
    }
    for v in labels.data_mut() {
        *v = remap[*v as usize];
    }
    let l1_instance = levels.iter().position(|&l| l == L1_LEVEL).map(|i| (i + 1) as u8);
    Ok((cropped, SpineGroundTruth { labels, level_of_instance: levels, l1_instance }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::{connected_components, Connectivity};

    fn small_spec() -> PhantomSpec {
        PhantomSpec { n_vertebrae: 6, dims: [128, 96, 190], ..PhantomSpec::default() }
    }

    fn bone_mask(v: &Volume) -> LabelMap {
        v.map(|x| (x > 200) as u8)
    }

    #[test]
    fn default_phantom_has_24_instances_and_l1_at_20() {
        let (vol, gt) = generate_phantom(&PhantomSpec::default(), 7).unwrap();
        assert_eq!(gt.n_instances(), 24);
        assert_eq!(gt.l1_instance, Some(20));
        gt.validate().unwrap();
        let cc = connected_components(&bone_mask(&vol), Connectivity::Full).unwrap();
        assert_eq!(*cc.data().iter().max().unwrap(), 24);
    }

    #[test]
    fn straight_spine_centroids_align() {
        let (_, gt) = generate_phantom(&small_spec(), 1).unwrap();
        let geo = gt.geometry();
        for g in &geo {
            assert!((g.centroid_mm[0] - geo[0].centroid_mm[0]).abs() < 0.5);
            assert!((g.centroid_mm[1] - geo[0].centroid_mm[1]).abs() < 0.5);
        }
    }

    #[test]
    fn anomalies_change_counts() {
        let extra = PhantomSpec { anomaly: Anomaly::ExtraLumbar, ..PhantomSpec::default() };
        let (_, gt) = generate_phantom(&extra, 3).unwrap();
        assert_eq!(gt.n_instances(), 25);
        assert_eq!(gt.level_of(gt.l1_instance.unwrap()), Some(20));

        let missing = PhantomSpec { anomaly: Anomaly::MissingVertebra(12), ..PhantomSpec::default() };
        let (_, gt) = generate_phantom(&missing, 3).unwrap();
        assert_eq!(gt.n_instances(), 23);
        assert_eq!(gt.l1_instance, Some(19));
        assert!(!gt.level_of_instance.contains(&12));

        let bogus = PhantomSpec { anomaly: Anomaly::MissingVertebra(30), ..PhantomSpec::default() };
        assert!(generate_phantom(&bogus, 3).is_err());
    }

    #[test]
    fn overflowing_geometry_is_rejected() {
        let spec = PhantomSpec { dims: [160, 128, 500], ..PhantomSpec::default() };
        assert!(matches!(generate_phantom(&spec, 0), Err(Error::GeometryOverflow(_))));
        let spec = PhantomSpec { curvature_amplitude_mm: 90.0, ..small_spec() };
        assert!(matches!(generate_phantom(&spec, 0), Err(Error::GeometryOverflow(_))));
        let spec = PhantomSpec { n_vertebrae: 26, ..PhantomSpec::default() };
        assert!(generate_phantom(&spec, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let spec = PhantomSpec { distractors: Distractors { hip_blob: true, contrast_region: true }, ..small_spec() };
        let (a, ga) = generate_phantom(&spec, 11).unwrap();
        let (b, gb) = generate_phantom(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let (c, _) = generate_phantom(&spec, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn distractors_are_bright_and_separate() {
        let spec = PhantomSpec { distractors: Distractors { hip_blob: true, contrast_region: true }, ..small_spec() };
        let (vol, gt) = generate_phantom(&spec, 5).unwrap();
        let cc = connected_components(&bone_mask(&vol), Connectivity::Full).unwrap();
        // six vertebrae plus two distractors
        assert_eq!(*cc.data().iter().max().unwrap(), 8);
        // truth never labels distractor voxels
        for (i, &v) in vol.data().iter().enumerate() {
            if v > 200 && gt.labels.data()[i] == 0 {
                continue;
            }
            if gt.labels.data()[i] != 0 {
                assert!(v > 200);
            }
        }
    }

    #[test]
    fn crop_keeps_levels_and_renumbers() {
        let (vol, gt) = generate_phantom(&PhantomSpec::default(), 2).unwrap();
        let (v2, g2) = crop_fov(&vol, &gt, (0.0, 800.0)).unwrap();
        assert_eq!(v2, vol);
        assert_eq!(g2, gt);

        // level 17 starts at 16 * 30 = 480 mm
        let (_, g) = crop_fov(&vol, &gt, (478.0, 800.0)).unwrap();
        assert_eq!(g.level_of_instance, (17..=24).collect::<Vec<u8>>());
        assert_eq!(g.l1_instance, Some(4));
        g.validate().unwrap();

        // levels 1..10 end at 295 mm
        let (_, g) = crop_fov(&vol, &gt, (0.0, 298.0)).unwrap();
        assert_eq!(g.level_of_instance, (1..=10).collect::<Vec<u8>>());
        assert_eq!(g.l1_instance, None);

        assert!(matches!(crop_fov(&vol, &gt, (300.0, 300.0)), Err(Error::EmptyRange(_))));
        assert!(matches!(crop_fov(&vol, &gt, (900.0, 950.0)), Err(Error::EmptyRange(_))));
    }

    #[test]
    fn truth_file_round_trip() {
        let (_, gt) = generate_phantom(&small_spec(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("p0");
        gt.save(&prefix).unwrap();
        let json = std::fs::read_to_string(truth_json_path(&prefix)).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["level_of_instance"]["3"], 3);
        assert!(parsed["l1_instance"].is_null());
        assert_eq!(SpineGroundTruth::load(&prefix).unwrap(), gt);
    }
}
