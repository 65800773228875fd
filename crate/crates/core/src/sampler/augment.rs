//! Random flips, rotations and cubic B-spline deformation.
//!
//! The three steps are composed into one backward mapping, so each output
//! voxel is interpolated exactly once: intensities trilinearly, label patches
//! by nearest neighbour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TrainingPatch;
use crate::error::{Error, Result};
use crate::volgrid::{Dims, Patch, Spacing};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsplineConfig {
    pub enabled: bool,
    /// Control points per axis (at least 4).
    pub control_points: usize,
    pub max_displacement_mm: f64,
}

impl Default for BsplineConfig {
    fn default() -> Self {
        Self { enabled: true, control_points: 4, max_displacement_mm: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Random flip enabled per axis (x, y, z).
    pub flip_axes: [bool; 3],
    pub rotation_enabled: bool,
    pub rotation_deg_max: f64,
    pub bspline: BsplineConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_axes: [true, true, false],
            rotation_enabled: true,
            rotation_deg_max: 20.0,
            bspline: BsplineConfig::default(),
        }
    }
}

impl AugmentConfig {
    /// Everything switched off.
    pub fn disabled() -> Self {
        Self {
            flip_axes: [false; 3],
            rotation_enabled: false,
            rotation_deg_max: 0.0,
            bspline: BsplineConfig { enabled: false, ..BsplineConfig::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_deg_max) {
            return Err(Error::invalid(format!("rotation_deg_max must lie in [0, 180], got {}", self.rotation_deg_max)));
        }
        if self.bspline.control_points < 4 {
            return Err(Error::invalid("bspline.control_points must be at least 4"));
        }
        if !(self.bspline.max_displacement_mm.is_finite() && self.bspline.max_displacement_mm >= 0.0) {
            return Err(Error::invalid("bspline.max_displacement_mm must be >= 0"));
        }
        Ok(())
    }
}

/// A concrete draw of the random augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentTransform {
    pub flips: [bool; 3],
    /// Row-major rotation matrix about the patch centre.
    pub rotation: Option<[[f64; 3]; 3]>,
    /// Control points per axis and their displacements (mm), x-fastest.
    pub bspline: Option<(usize, Vec<[f64; 3]>)>,
}

impl AugmentTransform {
    pub fn identity() -> Self {
        Self { flips: [false; 3], rotation: None, bspline: None }
    }

    pub fn is_identity(&self) -> bool {
        !self.flips.iter().any(|&f| f) && self.rotation.is_none() && self.bspline.is_none()
    }
}

pub fn sample_transform(cfg: &AugmentConfig, seed: u64) -> AugmentTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flips = [false; 3];
    for (f, &on) in flips.iter_mut().zip(&cfg.flip_axes) {
        *f = on && rng.random_bool(0.5);
    }
    let rotation = (cfg.rotation_enabled && cfg.rotation_deg_max > 0.0).then(|| {
        let axis = loop {
            let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-9 {
                break v.map(|c| c / n);
            }
        };
        let m = cfg.rotation_deg_max;
        let angle = rng.random_range(-m..=m).to_radians();
        rotation_matrix(axis, angle)
    });
    let bspline = (cfg.bspline.enabled && cfg.bspline.max_displacement_mm > 0.0).then(|| {
        let n = cfg.bspline.control_points;
        let d = cfg.bspline.max_displacement_mm;
        let ctrl = (0..n * n * n).map(|_| std::array::from_fn(|_| rng.random_range(-d..=d))).collect();
        (n, ctrl)
    });
    AugmentTransform { flips, rotation, bspline }
}

/// Rodrigues' formula.
fn rotation_matrix(u: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = u;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Uniform cubic B-spline basis at local parameter `w` in `[0, 1]`.
fn basis(w: f64) -> [f64; 4] {
    let w2 = w * w;
    let w3 = w2 * w;
    [
        (1.0 - w).powi(3) / 6.0,
        (3.0 * w3 - 6.0 * w2 + 4.0) / 6.0,
        (-3.0 * w3 + 3.0 * w2 + 3.0 * w + 1.0) / 6.0,
        w3 / 6.0,
    ]
}

/// Per-index segment and weights along one axis of `len` voxels with `n`
/// control points; the axis maps onto spline parameters `[0, n - 3]`.
fn axis_table(len: usize, n: usize) -> Vec<(usize, [f64; 4])> {
    let span = (n - 3) as f64;
    (0..len)
        .map(|i| {
            let t = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.5 };
            let u = t * span;
            let k = (u.floor() as usize).min(n - 4);
            (k, basis(u - k as f64))
        })
        .collect()
}

/// Displacement field (mm) of a control grid over a patch, x-fastest.
fn displacement_field(size: Dims, n: usize, ctrl: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let [nx, ny, nz] = size;
    let tx = axis_table(nx, n);
    let ty = axis_table(ny, n);
    let tz = axis_table(nz, n);
    let p = |a: usize, b: usize, c: usize| ctrl[a + n * (b + n * c)];
    // contract x: dx[x][cy][cz]
    let mut dx = vec![[0.0; 3]; nx * n * n];
    for (x, (k, w)) in tx.iter().enumerate() {
        for cz in 0..n {
            for cy in 0..n {
                let mut acc = [0.0; 3];
                for (a, wa) in w.iter().enumerate() {
                    let v = p(k + a, cy, cz);
                    for d in 0..3 {
                        acc[d] += wa * v[d];
                    }
                }
                dx[x + nx * (cy + n * cz)] = acc;
            }
        }
    }
    // contract y: dxy[x][y][cz]
    let mut dxy = vec![[0.0; 3]; nx * ny * n];
    for cz in 0..n {
        for (y, (k, w)) in ty.iter().enumerate() {
            for x in 0..nx {
                let mut acc = [0.0; 3];
                for (b, wb) in w.iter().enumerate() {
                    let v = dx[x + nx * (k + b + n * cz)];
                    for d in 0..3 {
                        acc[d] += wb * v[d];
                    }
                }
                dxy[x + nx * (y + ny * cz)] = acc;
            }
        }
    }
    let mut out = vec![[0.0; 3]; nx * ny * nz];
    for (z, (k, w)) in tz.iter().enumerate() {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = [0.0; 3];
                for (c, wc) in w.iter().enumerate() {
                    let v = dxy[x + nx * (y + ny * (k + c))];
                    for d in 0..3 {
                        acc[d] += wc * v[d];
                    }
                }
                out[x + nx * (y + ny * z)] = acc;
            }
        }
    }
    out
}

/// Source position (fractional voxel index) of every output voxel.
fn source_positions(size: Dims, spacing: Spacing, t: &AugmentTransform) -> Vec<[f64; 3]> {
    let [nx, ny, nz] = size;
    let center: [f64; 3] = std::array::from_fn(|a| (size[a] as f64 - 1.0) / 2.0);
    let field = t.bspline.as_ref().map(|(n, ctrl)| displacement_field(size, *n, ctrl));
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = out.len();
                let idx = [x, y, z];
                // output position in mm relative to the centre
                let mut p: [f64; 3] = std::array::from_fn(|a| (idx[a] as f64 - center[a]) * spacing[a]);
                if let Some(f) = &field {
                    for a in 0..3 {
                        p[a] += f[i][a];
                    }
                }
                if let Some(r) = &t.rotation {
                    // inverse rotation = transpose
                    p = std::array::from_fn(|a| r[0][a] * p[0] + r[1][a] * p[1] + r[2][a] * p[2]);
                }
                let mut q: [f64; 3] = std::array::from_fn(|a| p[a] / spacing[a] + center[a]);
                for a in 0..3 {
                    if t.flips[a] {
                        q[a] = (size[a] - 1) as f64 - q[a];
                    }
                }
                out.push(q);
            }
        }
    }
    out
}

fn sample_trilinear(p: &Patch<f32>, q: [f64; 3]) -> f32 {
    let size = p.size();
    let fill = p.fill_value() as f64;
    let base: [i64; 3] = std::array::from_fn(|a| q[a].floor() as i64);
    let frac: [f64; 3] = std::array::from_fn(|a| q[a] - base[a] as f64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        let mut idx = [0i64; 3];
        for a in 0..3 {
            w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            idx[a] = base[a] + off[a] as i64;
        }
        if w == 0.0 {
            continue;
        }
        let inside = (0..3).all(|a| idx[a] >= 0 && idx[a] < size[a] as i64);
        let v = if inside { p.get(idx[0] as usize, idx[1] as usize, idx[2] as usize) as f64 } else { fill };
        acc += w * v;
    }
    acc as f32
}

fn sample_nearest(p: &Patch<u8>, q: [f64; 3]) -> u8 {
    let size = p.size();
    let idx: [i64; 3] = std::array::from_fn(|a| q[a].round() as i64);
    if (0..3).all(|a| idx[a] >= 0 && idx[a] < size[a] as i64) {
        p.get(idx[0] as usize, idx[1] as usize, idx[2] as usize)
    } else {
        p.fill_value()
    }
}

/// Applies a fixed transform to every channel of a training patch.
pub fn apply_transform(p: &TrainingPatch, t: &AugmentTransform) -> Result<TrainingPatch> {
    if t.is_identity() {
        return Ok(p.clone());
    }
    let src = source_positions(p.intensity.size(), p.intensity.spacing(), t);
    let intensity = p.intensity.with_data(src.iter().map(|&q| sample_trilinear(&p.intensity, q)).collect())?;
    let target_mask = p.target_mask.with_data(src.iter().map(|&q| sample_nearest(&p.target_mask, q)).collect())?;
    let memory_mask = p.memory_mask.with_data(src.iter().map(|&q| sample_nearest(&p.memory_mask, q)).collect())?;
    Ok(TrainingPatch { intensity, target_mask, memory_mask, ..p.clone() })
}

/// Random flip, then rotation, then deformation, deterministic in `seed`.
pub fn augment(p: &TrainingPatch, cfg: &AugmentConfig, seed: u64) -> Result<TrainingPatch> {
    cfg.validate()?;
    apply_transform(p, &sample_transform(cfg, seed))
}
