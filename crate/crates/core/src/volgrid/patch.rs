use super::{Dims, Grid, Point3, Spacing, Voxel};
use crate::error::{Error, Result};

/// Axis-aligned window into a grid, addressed by its voxel offset.
///
/// `start` is the (possibly negative) source index of the patch voxel
/// `(0, 0, 0)`; voxels that map outside the source hold `fill`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    size: Dims,
    spacing: Spacing,
    start: [i64; 3],
    fill: T,
    data: Vec<T>,
}

impl<T: Voxel> Patch<T> {
    pub fn from_parts(size: Dims, spacing: Spacing, start: [i64; 3], fill: T, data: Vec<T>) -> Result<Self> {
        super::check_geometry(size, spacing)?;
        if data.len() != size[0] * size[1] * size[2] {
            return Err(Error::invalid(format!(
                "patch data length {} does not match size {size:?}",
                data.len()
            )));
        }
        Ok(Self { size, spacing, start, fill, data })
    }

    pub fn filled(size: Dims, spacing: Spacing, start: [i64; 3], fill: T) -> Result<Self> {
        Self::from_parts(size, spacing, start, fill, vec![fill; size[0] * size[1] * size[2]])
    }

    pub fn size(&self) -> Dims {
        self.size
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn start(&self) -> [i64; 3] {
        self.start
    }

    pub fn fill_value(&self) -> T {
        self.fill
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// World position of the centre of patch voxel `(0, 0, 0)`.
    pub fn origin_mm(&self) -> Point3 {
        [
            (self.start[0] as f64 + 0.5) * self.spacing[0],
            (self.start[1] as f64 + 0.5) * self.spacing[1],
            (self.start[2] as f64 + 0.5) * self.spacing[2],
        ]
    }

    /// Geometric centre of the patch box.
    pub fn center_mm(&self) -> Point3 {
        [
            (self.start[0] as f64 + self.size[0] as f64 / 2.0) * self.spacing[0],
            (self.start[1] as f64 + self.size[1] as f64 / 2.0) * self.spacing[1],
            (self.start[2] as f64 + self.size[2] as f64 / 2.0) * self.spacing[2],
        ]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.size[0] * (y + self.size[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.size[0];
        let ny = self.size[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Source-grid index of a patch voxel, if it lies inside `dims`.
    #[inline]
    pub fn source_index(&self, local: [usize; 3], dims: Dims) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = self.start[a] + local[a] as i64;
            if v < 0 || v >= dims[a] as i64 {
                return None;
            }
            out[a] = v as usize;
        }
        Some(out)
    }

    pub fn map<U: Voxel>(&self, fill: U, f: impl Fn(T) -> U) -> Patch<U> {
        Patch {
            size: self.size,
            spacing: self.spacing,
            start: self.start,
            fill,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same voxels as a standalone grid (positional information dropped).
    pub fn to_grid(&self) -> Grid<T> {
        Grid::new(self.size, self.spacing, self.data.clone()).expect("patch geometry already validated")
    }

    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        Self::from_parts(self.size, self.spacing, self.start, self.fill, data)
    }
}

/// Source index of patch voxel `(0, 0, 0)` for a patch centred at `center_mm`.
///
/// The centre is snapped so the patch box centre lies within half a voxel of
/// the requested point on every axis.
pub fn patch_start(center_mm: Point3, size: Dims, spacing: Spacing) -> [i64; 3] {
    let mut start = [0i64; 3];
    for a in 0..3 {
        start[a] = (center_mm[a] / spacing[a] - size[a] as f64 / 2.0).round() as i64;
    }
    start
}

/// Copy the `size` window centred at `center_mm`; outside voxels get `fill`.
pub fn extract_patch<T: Voxel>(vol: &Grid<T>, center_mm: Point3, size: Dims, fill: T) -> Result<Patch<T>> {
    super::check_geometry(size, vol.spacing())?;
    let start = patch_start(center_mm, size, vol.spacing());
    let mut data = vec![fill; size[0] * size[1] * size[2]];
    let dims = vol.dims();

    // overlap of [start, start + size) with [0, dims) along x
    let x_lo = start[0].max(0);
    let x_hi = (start[0] + size[0] as i64).min(dims[0] as i64);
    if x_lo < x_hi {
        let n = (x_hi - x_lo) as usize;
        let dst_x = (x_lo - start[0]) as usize;
        let src = vol.data();
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
                let s = vol.index(x_lo as usize, y as usize, z as usize);
                let d = dst_x + size[0] * (ly + size[1] * lz);
                data[d..d + n].copy_from_slice(&src[s..s + n]);
            }
        }
    }
    Patch::from_parts(size, vol.spacing(), start, fill, data)
}
