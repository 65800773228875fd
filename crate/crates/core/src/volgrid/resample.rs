use serde::{Deserialize, Serialize};

use super::{check_geometry, clip_normalize, Dims, FloatVolume, Grid, LabelMap, Spacing, Voxel};
use crate::error::{Error, Result};

/// Target shape of the whole-volume (direct L1) path.
pub const DIRECT_DIMS: Dims = [128, 128, 192];
/// Clip window of the whole-volume path, in HU.
pub const DIRECT_CLIP_HU: (f64, f64) = (100.0, 1000.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Trilinear,
    Nearest,
}

/// Per-axis lookup: two source indices and the weight of the second.
struct AxisMap {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
    nearest: Vec<usize>,
}

impl AxisMap {
    fn new(n_in: usize, s_in: f64, n_out: usize, s_out: f64) -> Self {
        let mut m = AxisMap {
            lo: Vec::with_capacity(n_out),
            hi: Vec::with_capacity(n_out),
            frac: Vec::with_capacity(n_out),
            nearest: Vec::with_capacity(n_out),
        };
        let last = (n_in - 1) as f64;
        for j in 0..n_out {
            let world = (j as f64 + 0.5) * s_out;
            // continuous source index (voxel centres sit on integers)
            let u = (world / s_in - 0.5).clamp(0.0, last);
            let lo = u.floor();
            let frac = u - lo;
            let lo = lo as usize;
            m.lo.push(lo);
            m.hi.push((lo + 1).min(n_in - 1));
            m.frac.push(frac);
            m.nearest.push(((world / s_in).floor() as usize).min(n_in - 1));
        }
        m
    }
}

/// Resample onto a new spacing. Output dims are `round(extent / target)`,
/// at least 1 per axis, and the output keeps exactly `target_spacing`.
pub fn resample<T: Voxel>(vol: &Grid<T>, target_spacing: Spacing, interp: Interp) -> Result<Grid<T>> {
    check_geometry(vol.dims(), target_spacing)?;
    let extent = vol.extent_mm();
    let mut dims = [0usize; 3];
    for a in 0..3 {
        dims[a] = ((extent[a] / target_spacing[a]).round() as usize).max(1);
    }
    resample_onto(vol, dims, target_spacing, interp)
}

/// Resample onto fixed dims; spacing becomes `extent / dims` per axis.
pub fn resample_to_dims<T: Voxel>(vol: &Grid<T>, dims: Dims, interp: Interp) -> Result<Grid<T>> {
    if dims.contains(&0) {
        return Err(Error::invalid(format!("target dims must be >= 1, got {dims:?}")));
    }
    let extent = vol.extent_mm();
    let spacing = [extent[0] / dims[0] as f64, extent[1] / dims[1] as f64, extent[2] / dims[2] as f64];
    resample_onto(vol, dims, spacing, interp)
}

/// Label maps are always resampled with nearest neighbour.
pub fn resample_labels(labels: &LabelMap, target_spacing: Spacing) -> Result<LabelMap> {
    resample(labels, target_spacing, Interp::Nearest)
}

/// Whole-volume preprocessing: fixed 128x128x192 grid, clipped to
/// 100..1000 HU and normalised.
pub fn preprocess_direct<T: Voxel>(vol: &Grid<T>) -> Result<FloatVolume> {
    let resampled = resample_to_dims(vol, DIRECT_DIMS, Interp::Trilinear)?;
    clip_normalize(&resampled, DIRECT_CLIP_HU.0, DIRECT_CLIP_HU.1)
}

fn resample_onto<T: Voxel>(vol: &Grid<T>, dims: Dims, spacing: Spacing, interp: Interp) -> Result<Grid<T>> {
    check_geometry(dims, spacing)?;
    let src_dims = vol.dims();
    let src_spacing = vol.spacing();
    if src_dims == dims && src_spacing == spacing {
        return Ok(vol.clone());
    }
    let mx = AxisMap::new(src_dims[0], src_spacing[0], dims[0], spacing[0]);
    let my = AxisMap::new(src_dims[1], src_spacing[1], dims[1], spacing[1]);
    let mz = AxisMap::new(src_dims[2], src_spacing[2], dims[2], spacing[2]);
    let src = vol.data();
    let sx = src_dims[0];
    let sxy = src_dims[0] * src_dims[1];
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);

    match interp {
        Interp::Nearest => {
            for z in 0..dims[2] {
                let oz = mz.nearest[z] * sxy;
                for y in 0..dims[1] {
                    let oy = oz + my.nearest[y] * sx;
                    out.extend(mx.nearest.iter().map(|&x| src[oy + x]));
                }
            }
        }
        Interp::Trilinear => {
            for z in 0..dims[2] {
                let (z0, z1, fz) = (mz.lo[z] * sxy, mz.hi[z] * sxy, mz.frac[z]);
                for y in 0..dims[1] {
                    let (y0, y1, fy) = (my.lo[y] * sx, my.hi[y] * sx, my.frac[y]);
                    for x in 0..dims[0] {
                        let (x0, x1, fx) = (mx.lo[x], mx.hi[x], mx.frac[x]);
                        let v = |o: usize, xx: usize| src[o + xx].to_f64();
                        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
                        let c00 = lerp(v(z0 + y0, x0), v(z0 + y0, x1), fx);
                        let c01 = lerp(v(z0 + y1, x0), v(z0 + y1, x1), fx);
                        let c10 = lerp(v(z1 + y0, x0), v(z1 + y0, x1), fx);
                        let c11 = lerp(v(z1 + y1, x0), v(z1 + y1, x1), fx);
                        let c0 = lerp(c00, c01, fy);
                        let c1 = lerp(c10, c11, fy);
                        out.push(T::from_f64(lerp(c0, c1, fz)));
                    }
                }
            }
        }
    }
    Grid::new(dims, spacing, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::{foreground_centroid, Volume};

    fn cube_volume(n: usize, spacing: f64, lo: usize, hi: usize) -> Volume {
        let mut v = Volume::filled([n; 3], [spacing; 3], 0).unwrap();
        for z in lo..hi {
            for y in lo..hi {
                for x in lo..hi {
                    v.set(x, y, z, 1000);
                }
            }
        }
        v
    }

    /// Independent reference: evaluate every output voxel by explicit
    /// world-space trilinear interpolation with clamped sampling.
    fn reference_trilinear(vol: &Volume, target: f64) -> Vec<f64> {
        let n_in = vol.dims();
        let s = vol.spacing();
        let n_out: Vec<usize> = (0..3).map(|a| ((n_in[a] as f64 * s[a]) / target).round() as usize).collect();
        let sample = |x: i64, y: i64, z: i64| {
            let c = |v: i64, n: usize| v.clamp(0, n as i64 - 1);
            vol.get_checked(c(x, n_in[0]), c(y, n_in[1]), c(z, n_in[2])).unwrap() as f64
        };
        let mut out = Vec::new();
        for k in 0..n_out[2] {
            for j in 0..n_out[1] {
                for i in 0..n_out[0] {
                    let p = [(i as f64 + 0.5) * target, (j as f64 + 0.5) * target, (k as f64 + 0.5) * target];
                    let u: Vec<f64> = (0..3).map(|a| p[a] / s[a] - 0.5).collect();
                    let f: Vec<i64> = u.iter().map(|v| v.floor() as i64).collect();
                    let mut acc = 0.0;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let w = |a: usize, d: i64| {
                                    let t = u[a] - f[a] as f64;
                                    if d == 0 { 1.0 - t } else { t }
                                };
                                acc += w(0, dx) * w(1, dy) * w(2, dz) * sample(f[0] + dx, f[1] + dy, f[2] + dz);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn upsampling_doubles_dims() {
        let v = Volume::filled([64; 3], [2.0; 3], 7).unwrap();
        let r = resample(&v, [1.0; 3], Interp::Trilinear).unwrap();
        assert_eq!(r.dims(), [128; 3]);
        assert_eq!(r.spacing(), [1.0; 3]);
        assert!(r.data().iter().all(|&x| x == 7));
    }

    #[test]
    fn identity_spacing_is_voxelwise_identical() {
        let mut v = Volume::filled([7, 5, 3], [0.8, 1.0, 2.5], 0).unwrap();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = (i as i16 * 37) % 901 - 450;
        }
        assert_eq!(resample(&v, v.spacing(), Interp::Trilinear).unwrap(), v);
        assert_eq!(resample(&v, v.spacing(), Interp::Nearest).unwrap(), v);
    }

    #[test]
    fn rejects_nonpositive_spacing() {
        let v = Volume::filled([4; 3], [1.0; 3], 0).unwrap();
        assert!(resample(&v, [1.0, 0.0, 1.0], Interp::Trilinear).is_err());
        assert!(resample(&v, [1.0, -2.0, 1.0], Interp::Nearest).is_err());
    }

    #[test]
    fn matches_reference_resampler() {
        let v = cube_volume(16, 2.0, 5, 10);
        let r = resample(&v, [1.0; 3], Interp::Trilinear).unwrap();
        let reference = reference_trilinear(&v, 1.0);
        assert_eq!(reference.len(), r.len());
        for (a, b) in r.data().iter().zip(&reference) {
            assert!((*a as f64 - b.round()).abs() <= 1.0, "{a} vs {b}");
        }
    }

    #[test]
    fn cube_centroid_shift_below_one_mm() {
        // 10 mm cube on a 2 mm grid.
        let v = cube_volume(20, 2.0, 5, 10);
        let before = foreground_centroid(&v.map(|x| (x > 500) as u8), 1).unwrap();
        let r = resample(&v, [1.0; 3], Interp::Trilinear).unwrap();
        let after = foreground_centroid(&r.map(|x| (x > 500) as u8), 1).unwrap();
        // the dense reference resampler gives the same answer
        let reference = reference_trilinear(&v, 1.0);
        let ref_mask: Vec<u8> = reference.iter().map(|&x| (x > 500.0) as u8).collect();
        let ref_grid = LabelMap::new(r.dims(), r.spacing(), ref_mask).unwrap();
        let ref_centroid = foreground_centroid(&ref_grid, 1).unwrap();
        for a in 0..3 {
            assert!((before[a] - after[a]).abs() < 1.0);
            assert!((ref_centroid[a] - after[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn trilinear_stays_within_input_range() {
        let mut v = Volume::filled([9, 8, 7], [1.7, 1.1, 3.0], 0).unwrap();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = ((i * 7919) % 2000) as i16 - 1000;
        }
        let lo = *v.data().iter().min().unwrap();
        let hi = *v.data().iter().max().unwrap();
        let r = resample(&v, [0.9, 1.3, 0.5], Interp::Trilinear).unwrap();
        assert!(r.data().iter().all(|&x| x >= lo && x <= hi));
    }

    #[test]
    fn labels_use_nearest() {
        let mut l = LabelMap::filled([4, 4, 4], [2.0; 3], 0).unwrap();
        l.set(1, 1, 1, 5);
        l.set(2, 1, 1, 9);
        let r = resample_labels(&l, [1.0; 3]).unwrap();
        let mut values: Vec<u8> = r.data().to_vec();
        values.sort_unstable();
        values.dedup();
        assert_eq!(values, vec![0, 5, 9]);
    }

    #[test]
    fn direct_preprocessing() {
        let v = Volume::filled([64, 48, 100], [4.0, 5.0, 2.0], 550).unwrap();
        let p = preprocess_direct(&v).unwrap();
        assert_eq!(p.dims(), DIRECT_DIMS);
        assert!(p.data().iter().all(|&x| (x as f64 - 0.5).abs() < 1e-6));

        let mut v = Volume::filled(DIRECT_DIMS, [1.0; 3], 100).unwrap();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = 100 + (i % 901) as i16;
        }
        let p = preprocess_direct(&v).unwrap();
        assert_eq!(p.dims(), DIRECT_DIMS);
        for (a, b) in v.data().iter().zip(p.data()) {
            assert!(((*a as f64 - 100.0) / 900.0 - *b as f64).abs() < 1e-6);
        }
    }
}
