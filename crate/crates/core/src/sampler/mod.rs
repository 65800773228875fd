//! Training-patch generation: jittered patches centred on a vertebra with the
//! instance memory of its neighbours, plus bone-free patches.

mod augment;

pub use augment::{augment, sample_transform, AugmentConfig, AugmentTransform, BsplineConfig};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{InstanceGeometry, SpineGroundTruth};
use crate::segbackend::{Mode, MEMORY_ABOVE, MEMORY_BELOW};
use crate::volgrid::{check_window, extract_patch, normalize_value, write_volgrid, Dims, Patch, Point3, Volume};

/// Patches holding less truth bone than this count as empty.
pub const EMPTY_MAX_BONE_MM3: f64 = 50.0;
const EMPTY_MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModePolicy {
    #[default]
    TopDown,
    BottomUp,
    /// Top-down or bottom-up with probability 1/2 each, per patch.
    Bidirectional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub patch_size: Dims,
    pub jitter_mm: f64,
    pub empty_fraction: f64,
    pub mode_policy: ModePolicy,
    pub augmentation: AugmentConfig,
    /// HU window used to normalise intensities.
    pub clip_hu: (f64, f64),
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            patch_size: [128, 128, 128],
            jitter_mm: 20.0,
            empty_fraction: 0.30,
            mode_policy: ModePolicy::TopDown,
            augmentation: AugmentConfig::default(),
            clip_hu: (-100.0, 2000.0),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size.contains(&0) {
            return Err(Error::invalid("patch_size components must be positive"));
        }
        if !(self.jitter_mm.is_finite() && self.jitter_mm >= 0.0) {
            return Err(Error::invalid(format!("jitter_mm must be >= 0, got {}", self.jitter_mm)));
        }
        if !(0.0..1.0).contains(&self.empty_fraction) {
            return Err(Error::invalid(format!("empty_fraction must lie in [0, 1), got {}", self.empty_fraction)));
        }
        check_window(self.clip_hu.0, self.clip_hu.1)?;
        self.augmentation.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPatch {
    /// Normalised intensities.
    pub intensity: Patch<f32>,
    /// 1 on the target vertebra.
    pub target_mask: Patch<u8>,
    /// 2 (above) or 3 (below) on vertebrae already segmented.
    pub memory_mask: Patch<u8>,
    /// Anatomical level of the target, 0 for empty patches.
    pub target_level: f32,
    pub mode: Mode,
    /// Truth instance the patch is centred on (`None` when empty).
    pub target_instance: Option<u8>,
    /// The jittered point the patch was centred on.
    pub requested_center_mm: Point3,
    pub seed: u64,
}

impl TrainingPatch {
    pub fn is_empty(&self) -> bool {
        self.target_level == 0.0
    }
}

/// Precomputed per-volume state shared by every patch of a batch.
pub struct PatchSampler<'a> {
    vol: &'a Volume,
    truth: &'a SpineGroundTruth,
    geo: Vec<InstanceGeometry>,
    cfg: SamplerConfig,
    seed: u64,
}

impl<'a> PatchSampler<'a> {
    pub fn new(vol: &'a Volume, truth: &'a SpineGroundTruth, cfg: &SamplerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vol.spacing().iter().any(|&s| (s - 1.0).abs() > 1e-6) {
            return Err(Error::invalid(format!("training volumes must be at 1 mm, got {:?}", vol.spacing())));
        }
        if vol.dims() != truth.labels.dims() {
            return Err(Error::DimensionMismatch { left: vol.dims(), right: truth.labels.dims() });
        }
        if truth.n_instances() == 0 {
            return Err(Error::Sampling("volume has no vertebrae".into()));
        }
        Ok(Self { vol, truth, geo: truth.geometry(), cfg: cfg.clone(), seed })
    }

    /// Patch number `index`; independent of every other index.
    pub fn patch(&self, index: u64) -> Result<TrainingPatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let mode = match self.cfg.mode_policy {
            ModePolicy::TopDown => Mode::TopDown,
            ModePolicy::BottomUp => Mode::BottomUp,
            ModePolicy::Bidirectional => {
                if rng.random_bool(0.5) {
                    Mode::TopDown
                } else {
                    Mode::BottomUp
                }
            }
        };
        let size = self.cfg.patch_size;
        let patch_seed = rng.random::<u64>();

        if rng.random_bool(self.cfg.empty_fraction) {
            let ext = self.vol.extent_mm();
            for _ in 0..EMPTY_MAX_ATTEMPTS {
                let c: Point3 = std::array::from_fn(|a| {
                    let half = size[a] as f64 / 2.0;
                    rng.random_range(-half..ext[a] + half)
                });
                if self.truth_bone_mm3(c) < EMPTY_MAX_BONE_MM3 {
                    return self.build(c, None, mode, patch_seed);
                }
            }
            return Err(Error::Sampling(format!("no bone-free patch found in {EMPTY_MAX_ATTEMPTS} attempts")));
        }

        let present: Vec<usize> = (0..self.geo.len()).filter(|&i| self.geo[i].voxels > 0).collect();
        let i = present[rng.random_range(0..present.len())];
        let j = self.cfg.jitter_mm;
        let c: Point3 = std::array::from_fn(|a| {
            self.geo[i].centroid_mm[a] + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 }
        });
        self.build(c, Some((i + 1) as u8), mode, patch_seed)
    }

    fn build(&self, center: Point3, target: Option<u8>, mode: Mode, seed: u64) -> Result<TrainingPatch> {
        let (lo, hi) = self.cfg.clip_hu;
        let size = self.cfg.patch_size;
        let fill = lo.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        let raw = extract_patch(self.vol, center, size, fill)?;
        let intensity = raw.map(normalize_value(fill as f64, lo, hi), |v| normalize_value(v as f64, lo, hi));
        let labels = extract_patch(&self.truth.labels, center, size, 0)?;
        let (target_mask, memory_mask) = match target {
            Some(k) => (
                labels.map(0u8, |v| u8::from(v == k)),
                labels.map(0u8, |v| match mode {
                    Mode::TopDown if v != 0 && v < k => MEMORY_ABOVE,
                    Mode::BottomUp if v > k => MEMORY_BELOW,
                    _ => 0,
                }),
            ),
            None => (labels.map(0u8, |_| 0), labels.map(0u8, |_| 0)),
        };
        Ok(TrainingPatch {
            intensity,
            target_mask,
            memory_mask,
            target_level: target.and_then(|k| self.truth.level_of(k)).map_or(0.0, f32::from),
            mode,
            target_instance: target,
            requested_center_mm: center,
            seed,
        })
    }

    /// Truth bone volume inside a patch centred at `c`.
    fn truth_bone_mm3(&self, c: Point3) -> f64 {
        let size = self.cfg.patch_size;
        let start = crate::volgrid::patch_start(c, size, self.vol.spacing());
        let labels = &self.truth.labels;
        let mut count = 0usize;
        for g in self.geo.iter().filter(|g| g.voxels > 0) {
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            let mut empty = false;
            for a in 0..3 {
                let l = start[a].max(g.bbox_min[a] as i64);
                let h = (start[a] + size[a] as i64).min(g.bbox_max[a] as i64 + 1);
                empty |= l >= h;
                lo[a] = l.max(0) as usize;
                hi[a] = h.max(0) as usize;
            }
            if empty {
                continue;
            }
            for z in lo[2]..hi[2] {
                for y in lo[1]..hi[1] {
                    for x in lo[0]..hi[0] {
                        count += usize::from(labels.get(x, y, z) != 0);
                    }
                }
            }
        }
        count as f64 * self.vol.voxel_volume_mm3()
    }
}

/// `count` training patches, deterministic in `seed`. Patch `i` depends only
/// on `(seed, i)`, so batches can be generated in parallel with
/// [`PatchSampler::patch`].
pub fn make_training_patches(
    vol: &Volume,
    truth: &SpineGroundTruth,
    cfg: &SamplerConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainingPatch>> {
    let sampler = PatchSampler::new(vol, truth, cfg, seed)?;
    (0..count as u64).map(|i| sampler.patch(i)).collect()
}

#[derive(Serialize)]
struct PatchMeta {
    #[serde(rename = "t_L")]
    t_l: f32,
    mode: Mode,
    seed: u64,
    start: [i64; 3],
}

/// Writes `<dir>/<name>.{intensity,target,memory}.vgrid.*` and
/// `<dir>/<name>.meta.json`.
pub fn write_patch(dir: &Path, name: &str, p: &TrainingPatch) -> Result<()> {
    write_volgrid(&dir.join(format!("{name}.intensity")), &p.intensity.to_grid())?;
    write_volgrid(&dir.join(format!("{name}.target")), &p.target_mask.to_grid())?;
    write_volgrid(&dir.join(format!("{name}.memory")), &p.memory_mask.to_grid())?;
    let meta = PatchMeta { t_l: p.target_level, mode: p.mode, seed: p.seed, start: p.intensity.start() };
    std::fs::write(dir.join(format!("{name}.meta.json")), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}
