//! `<name>.vgrid.json` + `<name>.vgrid.raw` volume files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dims, Grid, Spacing, Voxel};
use crate::error::{Error, Result};

pub const Z_ORIENTATION: &str = "z0_cranial";
const BYTE_ORDER: &str = "little";

/// Field order matches the on-disk layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolgridHeader {
    pub dims: Dims,
    pub spacing_mm: Spacing,
    pub dtype: String,
    pub byte_order: String,
    pub z_orientation: String,
}

/// Header and raw paths for a name prefix. A path that already ends in
/// `.vgrid.json` or `.vgrid.raw` is accepted as well.
pub fn volgrid_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let s = prefix.to_string_lossy();
    let stem = s
        .strip_suffix(".vgrid.json")
        .or_else(|| s.strip_suffix(".vgrid.raw"))
        .unwrap_or(&s)
        .to_string();
    (PathBuf::from(format!("{stem}.vgrid.json")), PathBuf::from(format!("{stem}.vgrid.raw")))
}

pub fn write_volgrid<T: Voxel>(prefix: &Path, grid: &Grid<T>) -> Result<()> {
    let (json_path, raw_path) = volgrid_paths(prefix);
    let header = VolgridHeader {
        dims: grid.dims(),
        spacing_mm: grid.spacing(),
        dtype: T::DTYPE.to_string(),
        byte_order: BYTE_ORDER.to_string(),
        z_orientation: Z_ORIENTATION.to_string(),
    };
    let mut raw = Vec::with_capacity(grid.len() * T::BYTES);
    for &v in grid.data() {
        v.write_le(&mut raw);
    }
    fs::write(&json_path, serde_json::to_vec(&header)?)?;
    fs::write(&raw_path, raw)?;
    Ok(())
}

pub fn read_volgrid<T: Voxel>(prefix: &Path) -> Result<Grid<T>> {
    let (json_path, raw_path) = volgrid_paths(prefix);
    let bad = |reason: String| Error::Format { path: json_path.clone(), reason };
    let header: VolgridHeader = serde_json::from_slice(&fs::read(&json_path)?).map_err(|e| bad(e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(bad(format!("dtype {} where {} was expected", header.dtype, T::DTYPE)));
    }
    if header.byte_order != BYTE_ORDER {
        return Err(bad(format!("unsupported byte order {}", header.byte_order)));
    }
    if header.z_orientation != Z_ORIENTATION {
        return Err(bad(format!("unsupported z orientation {}", header.z_orientation)));
    }
    let raw = fs::read(&raw_path)?;
    let n = header.dims.iter().product::<usize>();
    if raw.len() != n * T::BYTES {
        return Err(Error::Format {
            path: raw_path,
            reason: format!("{} bytes, expected {} ({} voxels of {})", raw.len(), n * T::BYTES, n, T::DTYPE),
        });
    }
    let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    Grid::new(header.dims, header.spacing_mm, data).map_err(|e| bad(e.to_string()))
}
