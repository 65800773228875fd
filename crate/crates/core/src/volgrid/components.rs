use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Dims, Grid, LabelMap};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Faces,
    #[default]
    #[serde(rename = "26")]
    Full,
}

impl Connectivity {
    fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Faces => manhattan == 1,
                        Connectivity::Full => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Raw component labelling: per-voxel component ids (0 = background,
/// 1.. in discovery order) and component sizes.
pub(crate) fn label_regions(dims: Dims, foreground: impl Fn(usize) -> bool, conn: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let mut ids = vec![0u32; n];
    let mut sizes = Vec::new();
    let offsets = conn.offsets();
    let mut queue = VecDeque::new();

    for seed in 0..n {
        if ids[seed] != 0 || !foreground(seed) {
            continue;
        }
        sizes.push(0usize);
        let id = sizes.len() as u32;
        ids[seed] = id;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            sizes[id as usize - 1] += 1;
            let x = (i % nx) as i64;
            let y = ((i / nx) % ny) as i64;
            let z = (i / (nx * ny)) as i64;
            for o in &offsets {
                let (qx, qy, qz) = (x + o[0], y + o[1], z + o[2]);
                if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 || qz >= nz as i64 {
                    continue;
                }
                let j = qx as usize + nx * (qy as usize + ny * qz as usize);
                if ids[j] == 0 && foreground(j) {
                    ids[j] = id;
                    queue.push_back(j);
                }
            }
        }
    }
    (ids, sizes)
}

/// Label every maximal connected foreground (nonzero) region.
///
/// Labels run 1..K in decreasing region size; equal sizes keep raster
/// discovery order. Fails only when K exceeds 255.
pub fn connected_components(mask: &LabelMap, conn: Connectivity) -> Result<LabelMap> {
    let data = mask.data();
    let (ids, sizes) = label_regions(mask.dims(), |i| data[i] != 0, conn);
    if sizes.len() > 255 {
        return Err(Error::TooManyComponents(sizes.len()));
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut relabel = vec![0u8; sizes.len() + 1];
    for (rank, &c) in order.iter().enumerate() {
        relabel[c + 1] = (rank + 1) as u8;
    }
    Grid::new(mask.dims(), mask.spacing(), ids.iter().map(|&i| relabel[i as usize]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count(l: &LabelMap) -> usize {
        *l.data().iter().max().unwrap_or(&0) as usize
    }

    #[test]
    fn two_cubes_larger_first() {
        let mut m = LabelMap::filled([20, 10, 10], [1.0; 3], 0).unwrap();
        for z in 1..3 {
            for y in 1..3 {
                for x in 1..3 {
                    m.set(x, y, z, 1);
                }
            }
        }
        for z in 2..7 {
            for y in 2..7 {
                for x in 10..15 {
                    m.set(x, y, z, 1);
                }
            }
        }
        let c = connected_components(&m, Connectivity::Full).unwrap();
        assert_eq!(count(&c), 2);
        assert_eq!(c.get(12, 4, 4), 1);
        assert_eq!(c.get(1, 1, 1), 2);
    }

    #[test]
    fn empty_mask_stays_zero() {
        let m = LabelMap::filled([5, 5, 5], [1.0; 3], 0).unwrap();
        let c = connected_components(&m, Connectivity::Faces).unwrap();
        assert!(c.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn diagonal_bridge_depends_on_connectivity() {
        let mut m = LabelMap::filled([3, 3, 3], [1.0; 3], 0).unwrap();
        m.set(0, 0, 0, 1);
        m.set(1, 1, 1, 1);
        assert_eq!(count(&connected_components(&m, Connectivity::Full).unwrap()), 1);
        assert_eq!(count(&connected_components(&m, Connectivity::Faces).unwrap()), 2);
    }

    proptest! {
        #[test]
        fn count_invariant_under_flips(bits in proptest::collection::vec(0u8..2, 6 * 5 * 4), axis in 0usize..3) {
            let m = LabelMap::new([6, 5, 4], [1.0; 3], bits).unwrap();
            for conn in [Connectivity::Faces, Connectivity::Full] {
                let a = count(&connected_components(&m, conn).unwrap());
                let b = count(&connected_components(&m.flipped(axis), conn).unwrap());
                prop_assert_eq!(a, b);
            }
        }
    }
}
