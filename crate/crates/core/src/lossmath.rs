//! Instance loss, its false-positive weight schedule, and the Dice overlap.
//!
//! ```text
//! L = lambda_n * FP_frac + FN_frac + beta * |p_L - t_L|
//! FP_frac = |pred & !target| / max(1, |!target|)
//! FN_frac = |!pred & target| / max(1, |target|)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{Dims, Grid, Patch};

/// Anything that can be read as a binary mask (nonzero = foreground).
pub trait BinaryMask {
    fn mask_dims(&self) -> Dims;
    fn mask_voxels(&self) -> &[u8];
}

impl BinaryMask for Grid<u8> {
    fn mask_dims(&self) -> Dims {
        self.dims()
    }
    fn mask_voxels(&self) -> &[u8] {
        self.data()
    }
}

impl BinaryMask for Patch<u8> {
    fn mask_dims(&self) -> Dims {
        self.size()
    }
    fn mask_voxels(&self) -> &[u8] {
        self.data()
    }
}

/// Raw confusion counts between a prediction and a target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

pub fn confusion<A: BinaryMask + ?Sized, B: BinaryMask + ?Sized>(pred: &A, target: &B) -> Result<Confusion> {
    if pred.mask_dims() != target.mask_dims() {
        return Err(Error::DimensionMismatch { left: pred.mask_dims(), right: target.mask_dims() });
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.mask_voxels().iter().zip(target.mask_voxels()) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

impl Confusion {
    pub fn fp_frac(&self) -> f64 {
        self.fp as f64 / ((self.fp + self.tn).max(1)) as f64
    }

    pub fn fn_frac(&self) -> f64 {
        self.fn_ as f64 / ((self.tp + self.fn_).max(1)) as f64
    }

    /// `2TP / (2TP + FP + FN)`, and 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub schedule_sharpness: f64,
    pub n_max: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 1000.0, lambda_start: 0.05, lambda_end: 1.0, schedule_sharpness: 12.0, n_max: 100_000 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_start > 0.0 && self.lambda_start < self.lambda_end && self.lambda_end <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < lambda_start < lambda_end <= 1, got {} and {}",
                self.lambda_start, self.lambda_end
            )));
        }
        if self.n_max < 1 {
            return Err(Error::invalid("n_max must be >= 1"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.schedule_sharpness.is_finite() && self.schedule_sharpness > 0.0) {
            return Err(Error::invalid("schedule_sharpness must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub fp_frac: f64,
    pub fn_frac: f64,
    pub level_term: f64,
    pub lambda: f64,
    pub total: f64,
}

pub fn fp_fn_fractions<A: BinaryMask + ?Sized, B: BinaryMask + ?Sized>(pred: &A, target: &B) -> Result<(f64, f64)> {
    let c = confusion(pred, target)?;
    Ok((c.fp_frac(), c.fn_frac()))
}

/// False-positive weight at iteration `n`: a logistic ramp rescaled so it
/// starts exactly at `lambda_start` and ends exactly at `lambda_end`.
pub fn lambda_schedule(n: u64, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if n > cfg.n_max {
        return Err(Error::invalid(format!("iteration {n} outside 0..={}", cfg.n_max)));
    }
    if n == cfg.n_max {
        return Ok(cfg.lambda_end);
    }
    let k = cfg.schedule_sharpness;
    let g = |m: u64| 1.0 / (1.0 + (-k * (m as f64 / cfg.n_max as f64 - 0.5)).exp());
    let g0 = g(0);
    let ramp = (g(n) - g0) / (g(cfg.n_max) - g0);
    Ok((cfg.lambda_start + (cfg.lambda_end - cfg.lambda_start) * ramp).min(cfg.lambda_end))
}

pub fn instance_loss<A: BinaryMask + ?Sized, B: BinaryMask + ?Sized>(
    pred: &A,
    target: &B,
    predicted_level: f64,
    target_level: f64,
    n: u64,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let c = confusion(pred, target)?;
    let lambda = lambda_schedule(n, cfg)?;
    let fp_frac = c.fp_frac();
    let fn_frac = c.fn_frac();
    let level_term = (predicted_level - target_level).abs();
    Ok(LossTerms { fp_frac, fn_frac, level_term, lambda, total: lambda * fp_frac + fn_frac + cfg.beta * level_term })
}

pub fn dice<A: BinaryMask + ?Sized, B: BinaryMask + ?Sized>(pred: &A, target: &B) -> Result<f64> {
    Ok(confusion(pred, target)?.dice())
}
