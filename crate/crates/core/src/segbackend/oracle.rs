//! Ground-truth segmenter for phantoms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BackendError, Mode, SegmentRequest, SegmentResponse, Segmenter};
use crate::phantom::SpineGroundTruth;

/// Answers every request from the truth label map: the next uncovered
/// instance in travel order, with its level perturbed by per-instance
/// Gaussian noise.
///
/// The request patch is located through its `start` index, which must refer
/// to the truth grid.
pub struct OracleSegmenter<'a> {
    truth: &'a SpineGroundTruth,
    boxes: Vec<([usize; 3], [usize; 3])>,
    noise_sigma: f64,
    seed: u64,
}

impl<'a> OracleSegmenter<'a> {
    pub fn new(truth: &'a SpineGroundTruth, noise_sigma: f64, seed: u64) -> Self {
        let boxes = truth.geometry().into_iter().map(|g| (g.bbox_min, g.bbox_max)).collect();
        Self { truth, boxes, noise_sigma, seed }
    }

    /// Level reported for instance `k`; identical on every call.
    pub fn noisy_level(&self, k: u8) -> f32 {
        let level = self.truth.level_of(k).unwrap_or(0) as f64;
        if self.noise_sigma <= 0.0 {
            return level as f32;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        let z: f64 = StandardNormal.sample(&mut rng);
        (level + self.noise_sigma * z) as f32
    }

    pub fn respond(&self, req: &SegmentRequest) -> SegmentResponse {
        let size = req.intensity.size();
        let start = req.intensity.start();
        let labels = &self.truth.labels;
        let dims = labels.dims();
        let memory = req.memory.data();
        let mut out = SegmentResponse::empty(req.voxels());

        // Intersection of the patch box with the volume, in source indices.
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = start[a].max(0);
            let h = (start[a] + size[a] as i64).min(dims[a] as i64);
            if l >= h {
                return out;
            }
            lo[a] = l as usize;
            hi[a] = h as usize;
        }

        let k_all = self.boxes.len();
        let order: Box<dyn Iterator<Item = usize>> = match req.mode {
            Mode::TopDown => Box::new(0..k_all),
            Mode::BottomUp => Box::new((0..k_all).rev()),
        };
        for i in order {
            let (bmin, bmax) = self.boxes[i];
            let mut r_lo = [0usize; 3];
            let mut r_hi = [0usize; 3];
            let mut empty = false;
            for a in 0..3 {
                r_lo[a] = lo[a].max(bmin[a]);
                r_hi[a] = hi[a].min(bmax[a] + 1);
                empty |= r_lo[a] >= r_hi[a];
            }
            if empty {
                continue;
            }
            let k = (i + 1) as u8;
            let mut hits = 0usize;
            for z in r_lo[2]..r_hi[2] {
                for y in r_lo[1]..r_hi[1] {
                    let lz = (z as i64 - start[2]) as usize;
                    let ly = (y as i64 - start[1]) as usize;
                    for x in r_lo[0]..r_hi[0] {
                        if labels.get(x, y, z) != k {
                            continue;
                        }
                        let li = (x as i64 - start[0]) as usize + size[0] * (ly + size[1] * lz);
                        if memory[li] == 0 {
                            out.probabilities[li] = 1.0;
                            hits += 1;
                        }
                    }
                }
            }
            if hits > 0 {
                out.predicted_level = self.noisy_level(k);
                return out;
            }
        }
        out
    }
}

impl Segmenter for OracleSegmenter<'_> {
    fn segment(&mut self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError> {
        Ok(self.respond(req))
    }
}

/// One-shot form of [`OracleSegmenter::respond`].
pub fn oracle_segment(req: &SegmentRequest, truth: &SpineGroundTruth, noise_sigma: f64, seed: u64) -> SegmentResponse {
    OracleSegmenter::new(truth, noise_sigma, seed).respond(req)
}
