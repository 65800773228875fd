//! Pluggable segmenters.
//!
//! A segmenter receives a normalised intensity patch plus the instance memory
//! for the same window and answers with per-voxel probabilities and a
//! regressed vertebral level (0 means nothing found). The engine thresholds
//! the probabilities itself.

mod external;
mod oracle;
mod threshold;
pub mod wire;

pub use external::{ExternalSegmenter, DEFAULT_TIMEOUT};
pub use oracle::{oracle_segment, OracleSegmenter};
pub use threshold::ThresholdSegmenter;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volgrid::Patch;

/// Memory label of vertebrae above the target.
pub const MEMORY_ABOVE: u8 = 2;
/// Memory label of vertebrae below the target.
pub const MEMORY_BELOW: u8 = 3;

/// Direction of travel along the spine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    TopDown,
    BottomUp,
}

impl Mode {
    pub fn wire_code(self) -> u8 {
        match self {
            Mode::TopDown => 0,
            Mode::BottomUp => 1,
        }
    }

    pub fn from_wire(code: u8) -> Option<Self> {
        match code {
            0 => Some(Mode::TopDown),
            1 => Some(Mode::BottomUp),
            _ => None,
        }
    }

    /// Memory label for already-segmented vertebrae in this mode.
    pub fn memory_label(self) -> u8 {
        match self {
            Mode::TopDown => MEMORY_ABOVE,
            Mode::BottomUp => MEMORY_BELOW,
        }
    }

    /// +1 when travelling caudally (increasing z), -1 otherwise.
    pub fn z_sign(self) -> f64 {
        match self {
            Mode::TopDown => 1.0,
            Mode::BottomUp => -1.0,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::TopDown => "top-down",
            Mode::BottomUp => "bottom-up",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top-down" | "top_down" => Ok(Mode::TopDown),
            "bottom-up" | "bottom_up" => Ok(Mode::BottomUp),
            other => Err(format!("unknown mode {other:?} (expected top-down or bottom-up)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRequest {
    pub intensity: Patch<f32>,
    /// Labels 0, [`MEMORY_ABOVE`] or [`MEMORY_BELOW`].
    pub memory: Patch<u8>,
    pub mode: Mode,
    pub spacing_mm: f32,
}

impl SegmentRequest {
    pub fn voxels(&self) -> usize {
        self.intensity.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentResponse {
    pub probabilities: Vec<f32>,
    pub predicted_level: f32,
}

impl SegmentResponse {
    pub fn empty(voxels: usize) -> Self {
        Self { probabilities: vec![0.0; voxels], predicted_level: 0.0 }
    }

    /// Shape and range check against the request that produced it.
    pub fn validate(&self, voxels: usize) -> Result<(), BackendError> {
        if self.probabilities.len() != voxels {
            return Err(BackendError::Protocol(format!(
                "response carries {} probabilities for a {voxels}-voxel request",
                self.probabilities.len()
            )));
        }
        if let Some((i, p)) = self.probabilities.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(BackendError::Range(format!("probability {p} at voxel {i} outside [0, 1]")));
        }
        if !self.predicted_level.is_finite() {
            return Err(BackendError::Range(format!("predicted level {} is not finite", self.predicted_level)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("backend did not answer within {0:?}")]
    Timeout(Duration),
    #[error("backend process exited: {0}")]
    ProcessExited(String),
    #[error("backend i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub trait Segmenter {
    fn segment(&mut self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError>;
}

impl<S: Segmenter + ?Sized> Segmenter for &mut S {
    fn segment(&mut self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError> {
        (**self).segment(req)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for Box<S> {
    fn segment(&mut self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError> {
        (**self).segment(req)
    }
}
