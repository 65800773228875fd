//! Truth-free segmenter: intensity threshold plus connected components.

use super::{BackendError, Mode, SegmentRequest, SegmentResponse, Segmenter};
use crate::volgrid::components::label_regions;
use crate::volgrid::{normalize_value, Connectivity};

/// Segments the first (travel order) connected bright region not covered by
/// memory. It cannot tell vertebrae from other bone, which makes it a useful
/// adversary for the traversal engine's safety guarantees.
#[derive(Clone, Debug)]
pub struct ThresholdSegmenter {
    /// Threshold on the normalised intensity scale.
    pub threshold: f32,
    /// Level reported for any non-empty answer.
    pub level: f32,
}

impl ThresholdSegmenter {
    /// Threshold at `hu` for patches normalised with window `[lo, hi]`.
    pub fn from_hu(hu: f64, lo: f64, hi: f64, level: f32) -> Self {
        Self { threshold: normalize_value(hu, lo, hi), level }
    }

    pub fn respond(&self, req: &SegmentRequest) -> SegmentResponse {
        let size = req.intensity.size();
        let intensity = req.intensity.data();
        let memory = req.memory.data();
        let (ids, sizes) = label_regions(
            size,
            |i| memory[i] == 0 && intensity[i] > self.threshold,
            Connectivity::Full,
        );
        let mut out = SegmentResponse::empty(req.voxels());
        if sizes.is_empty() {
            return out;
        }
        let plane = size[0] * size[1];
        let mut zsum = vec![0.0f64; sizes.len()];
        for (i, &id) in ids.iter().enumerate() {
            if id != 0 {
                zsum[id as usize - 1] += (i / plane) as f64;
            }
        }
        let mean_z = |c: usize| zsum[c] / sizes[c] as f64;
        let pick = (0..sizes.len())
            .min_by(|&a, &b| {
                let (za, zb) = match req.mode {
                    Mode::TopDown => (mean_z(a), mean_z(b)),
                    Mode::BottomUp => (-mean_z(a), -mean_z(b)),
                };
                za.total_cmp(&zb).then(a.cmp(&b))
            })
            .expect("at least one region") as u32
            + 1;
        for (p, &id) in out.probabilities.iter_mut().zip(&ids) {
            if id == pick {
                *p = 1.0;
            }
        }
        out.predicted_level = self.level;
        out
    }
}

impl Segmenter for ThresholdSegmenter {
    fn segment(&mut self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError> {
        Ok(self.respond(req))
    }
}
