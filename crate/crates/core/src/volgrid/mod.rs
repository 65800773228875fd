//! Dense 3D voxel grids and the geometry operations the pipeline is built on.
//!
//! A [`Grid`] stores `nx * ny * nz` voxels, x-fastest. Slice `z = 0` is the
//! most cranial slice and `z` grows caudally. The world position of voxel
//! index `i` along an axis is `(i + 0.5) * spacing`, so a grid at spacing `s`
//! covers `[0, n * s)` millimetres.

pub(crate) mod components;
mod io;
mod patch;
mod resample;

pub use components::{connected_components, Connectivity};
pub use io::{read_volgrid, volgrid_paths, write_volgrid, VolgridHeader, Z_ORIENTATION};
pub use patch::{extract_patch, patch_start, Patch};
pub use resample::{preprocess_direct, resample, resample_labels, resample_to_dims, Interp};

use crate::error::{Error, Result};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];
/// World coordinate in millimetres.
pub type Point3 = [f64; 3];

/// Scalar types that can live in a [`Grid`].
pub trait Voxel: Copy + Default + PartialEq + PartialOrd + Send + Sync + std::fmt::Debug + 'static {
    /// `dtype` tag used by the volgrid file header.
    const DTYPE: &'static str;
    const BYTES: usize;

    fn to_f64(self) -> f64;
    /// Rounds and saturates into the representable range.
    fn from_f64(v: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Voxel for i16 {
    const DTYPE: &'static str = "int16";
    const BYTES: usize = 2;

    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        i16::from_le_bytes([bytes[0], bytes[1]])
    }
}

impl Voxel for u8 {
    const DTYPE: &'static str = "uint8";
    const BYTES: usize = 1;

    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Voxel for f32 {
    const DTYPE: &'static str = "float32";
    const BYTES: usize = 4;

    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

/// Dense voxel grid with physical spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

/// CT intensities in Hounsfield units.
pub type Volume = Grid<i16>;
/// Intensities after clipping and normalisation to `[0, 1]`.
pub type FloatVolume = Grid<f32>;
/// Integer labels, 0 is background.
pub type LabelMap = Grid<u8>;

pub(crate) fn check_geometry(dims: Dims, spacing: Spacing) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::invalid(format!("dims must be >= 1, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")));
    }
    Ok(())
}

impl<T: Voxel> Grid<T> {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::invalid(format!(
                "voxel count {} does not match dims {dims:?} ({n})",
                data.len()
            )));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Result<Self> {
        check_geometry(dims, spacing)?;
        Ok(Self { dims, spacing, data: vec![value; dims[0] * dims[1] * dims[2]] })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Voxel at a possibly out-of-range index.
    #[inline]
    pub fn get_checked(&self, x: i64, y: i64, z: i64) -> Option<T> {
        let [nx, ny, nz] = self.dims;
        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
            return None;
        }
        Some(self.get(x as usize, y as usize, z as usize))
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Physical size covered by the grid along each axis.
    pub fn extent_mm(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn voxel_center_mm(&self, idx: [usize; 3]) -> Point3 {
        [
            (idx[0] as f64 + 0.5) * self.spacing[0],
            (idx[1] as f64 + 0.5) * self.spacing[1],
            (idx[2] as f64 + 0.5) * self.spacing[2],
        ]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid { dims: self.dims, spacing: self.spacing, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Mirror the grid along one axis (0 = x, 1 = y, 2 = z).
    pub fn flipped(&self, axis: usize) -> Grid<T> {
        assert!(axis < 3, "axis out of range");
        let [nx, ny, nz] = self.dims;
        let mut out = self.clone();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let src = match axis {
                        0 => self.get(nx - 1 - x, y, z),
                        1 => self.get(x, ny - 1 - y, z),
                        _ => self.get(x, y, nz - 1 - z),
                    };
                    out.set(x, y, z, src);
                }
            }
        }
        out
    }

    /// Copy of the sub-block `[lo, lo + dims)`, which must lie inside the grid.
    pub fn crop(&self, lo: [usize; 3], dims: Dims) -> Result<Grid<T>> {
        check_geometry(dims, self.spacing)?;
        for a in 0..3 {
            if lo[a] + dims[a] > self.dims[a] {
                return Err(Error::invalid(format!(
                    "crop [{lo:?} + {dims:?}) exceeds grid {:?}",
                    self.dims
                )));
            }
        }
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in lo[2]..lo[2] + dims[2] {
            for y in lo[1]..lo[1] + dims[1] {
                let start = self.index(lo[0], y, z);
                data.extend_from_slice(&self.data[start..start + dims[0]]);
            }
        }
        Ok(Grid { dims, spacing: self.spacing, data })
    }
}

/// Clamp to `[lo, hi]` and rescale linearly to `[0, 1]`.
pub fn clip_normalize<T: Voxel>(vol: &Grid<T>, lo: f64, hi: f64) -> Result<FloatVolume> {
    check_window(lo, hi)?;
    Ok(vol.map(|v| normalize_value(v.to_f64(), lo, hi)))
}

pub(crate) fn check_window(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("clip window requires lo < hi, got [{lo}, {hi}]")));
    }
    Ok(())
}

#[inline]
pub(crate) fn normalize_value(v: f64, lo: f64, hi: f64) -> f32 {
    ((v.clamp(lo, hi) - lo) / (hi - lo)) as f32
}

/// Mean world coordinate of the voxels carrying `label`, or `None` when absent.
pub fn foreground_centroid(mask: &LabelMap, label: u8) -> Option<Point3> {
    let [nx, ny, nz] = mask.dims;
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    let data = mask.data();
    for z in 0..nz {
        for y in 0..ny {
            let row = &data[nx * (y + ny * z)..nx * (y + ny * z) + nx];
            for (x, &v) in row.iter().enumerate() {
                if v == label {
                    sum[0] += x as f64;
                    sum[1] += y as f64;
                    sum[2] += z as f64;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return None;
    }
    let s = mask.spacing;
    let n = count as f64;
    Some([(sum[0] / n + 0.5) * s[0], (sum[1] / n + 0.5) * s[1], (sum[2] / n + 0.5) * s[2]])
}

/// Foreground (nonzero) volume in cubic centimetres.
pub fn bone_volume_cm3(mask: &LabelMap) -> f64 {
    let count = mask.data.iter().filter(|&&v| v != 0).count();
    count as f64 * mask.voxel_volume_mm3() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::filled([0, 1, 1], [1.0; 3], 0).is_err());
        assert!(Volume::filled([1, 1, 1], [1.0, -1.0, 1.0], 0).is_err());
        assert!(Volume::new([2, 2, 2], [1.0; 3], vec![0; 7]).is_err());
    }

    #[test]
    fn clip_normalize_examples() {
        let v = Volume::new([3, 1, 1], [1.0; 3], vec![2500, -100, 950]).unwrap();
        let n = clip_normalize(&v, -100.0, 2000.0).unwrap();
        assert_eq!(n.data()[0], 1.0);
        assert_eq!(n.data()[1], 0.0);
        assert!((n.data()[2] as f64 - 0.5).abs() < 1e-7);
        assert!(clip_normalize(&v, 10.0, 10.0).is_err());
        assert!(clip_normalize(&v, 11.0, 10.0).is_err());
    }

    #[test]
    fn clip_normalize_is_idempotent_on_unit_window() {
        let v = Volume::new([4, 1, 1], [1.0; 3], vec![-3000, 17, 999, 4000]).unwrap();
        let once = clip_normalize(&v, -100.0, 2000.0).unwrap();
        let twice = clip_normalize(&once, 0.0, 1.0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn centroid_examples() {
        let mut m = LabelMap::filled([20, 20, 20], [1.0; 3], 0).unwrap();
        assert_eq!(foreground_centroid(&m, 1), None);
        m.set(10, 10, 10, 1);
        assert_eq!(foreground_centroid(&m, 1), Some([10.5, 10.5, 10.5]));
        let mut m = LabelMap::filled([1, 1, 11], [1.0; 3], 0).unwrap();
        m.set(0, 0, 0, 3);
        m.set(0, 0, 10, 3);
        assert_eq!(foreground_centroid(&m, 3).unwrap()[2], 5.5);
    }

    #[test]
    fn bone_volume_examples() {
        let mut m = LabelMap::filled([10, 10, 20], [1.0; 3], 0).unwrap();
        assert_eq!(bone_volume_cm3(&m), 0.0);
        m.data_mut()[..1000].fill(1);
        assert_eq!(bone_volume_cm3(&m), 1.0);
        let mut m = LabelMap::filled([10, 10, 10], [2.0; 3], 0).unwrap();
        m.data_mut()[..500].fill(1);
        assert_eq!(bone_volume_cm3(&m), 4.0);
    }

    #[test]
    fn bone_volume_is_additive_over_disjoint_masks() {
        let mut a = LabelMap::filled([8, 8, 8], [1.5, 1.0, 2.0], 0).unwrap();
        let mut b = a.clone();
        for i in 0..a.len() {
            match i % 3 {
                0 => a.data_mut()[i] = 1,
                1 => b.data_mut()[i] = 1,
                _ => {}
            }
        }
        let union = Grid::new(
            a.dims(),
            a.spacing(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| x | y).collect(),
        )
        .unwrap();
        let sum = bone_volume_cm3(&a) + bone_volume_cm3(&b);
        assert!((bone_volume_cm3(&union) - sum).abs() < 1e-12);
    }

    #[test]
    fn crop_and_flip() {
        let g = Grid::new([2, 2, 2], [1.0; 3], (0u8..8).collect()).unwrap();
        assert_eq!(g.flipped(0).data(), &[1, 0, 3, 2, 5, 4, 7, 6]);
        assert_eq!(g.flipped(2).flipped(2), g);
        let c = g.crop([1, 0, 1], [1, 2, 1]).unwrap();
        assert_eq!(c.data(), &[5, 7]);
        assert!(g.crop([1, 1, 1], [2, 1, 1]).is_err());
    }
}
