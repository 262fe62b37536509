//! Evaluation harness: strict/per-dimension accuracy and L1 metrics,
//! light/heavy truncation splits, episode index I/O, benchmark orchestration
//! over ablation variants, and report emission.

mod bench;
mod index;
mod report;

pub use bench::{
    aggregate_samples, evaluate_model, mask_quality_study, run_benchmark, BenchVariant,
    EvalSample, MaskStudyRow,
};
pub use index::{load_episode_index, save_episode_index, DataSplit, IndexEntry};
pub use report::{emit_mask_study, emit_report, ReportFormat};

use serde::{Deserialize, Serialize};

use crate::action::{Action, DimKind};
use crate::error::{Error, Result};

/// Kind-specific strict-accuracy thresholds in raw action units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub rotation: f64,
    pub gripper: f64,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec { rotation: 0.1, gripper: 0.5 }
    }
}

impl ThresholdSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rotation <= 0.0 || self.gripper <= 0.0 {
            return Err(Error::Param("thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, kind: DimKind) -> f64 {
        match kind {
            DimKind::Rotation => self.rotation,
            DimKind::Gripper => self.gripper,
        }
    }
}

fn check_pair(pred: &Action, gt: &Action) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction dim {} vs ground truth dim {}",
            pred.dim(),
            gt.dim()
        )));
    }
    if pred.kinds != gt.kinds {
        return Err(Error::Shape("prediction and ground truth dim kinds differ".into()));
    }
    Ok(())
}

/// 1 iff every dimension is within its kind threshold (inclusive boundary).
pub fn strict_acc(pred: &Action, gt: &Action, spec: &ThresholdSpec) -> Result<u8> {
    check_pair(pred, gt)?;
    for ((p, g), kind) in pred.values.iter().zip(&gt.values).zip(&pred.kinds) {
        if (p - g).abs() > spec.threshold(*kind) {
            return Ok(0);
        }
    }
    Ok(1)
}

/// Mean over dimensions of the per-dimension pass indicator.
pub fn acc_per_dim(pred: &Action, gt: &Action, spec: &ThresholdSpec) -> Result<f64> {
    check_pair(pred, gt)?;
    let passed = pred
        .values
        .iter()
        .zip(&gt.values)
        .zip(&pred.kinds)
        .filter(|((p, g), kind)| (**p - **g).abs() <= spec.threshold(**kind))
        .count();
    Ok(passed as f64 / pred.dim() as f64)
}

/// Mean absolute difference over dimensions, raw units.
pub fn l1_distance(pred: &Action, gt: &Action) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction dim {} vs ground truth dim {}",
            pred.dim(),
            gt.dim()
        )));
    }
    let total: f64 = pred.values.iter().zip(&gt.values).map(|(p, g)| (p - g).abs()).sum();
    Ok(total / pred.dim() as f64)
}

/// Truncation split assignment for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Light,
    Heavy,
}

/// Occupancy threshold rule. Samples exactly at the threshold count as
/// light (the documented tie rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub threshold: f64,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule { threshold: crate::synth::OCCUPANCY_THRESHOLD }
    }
}

impl SplitRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Param(format!("split threshold {} outside (0,1)", self.threshold)));
        }
        Ok(())
    }

    pub fn label(&self, occupancy: f64) -> SplitLabel {
        if occupancy >= self.threshold {
            SplitLabel::Light
        } else {
            SplitLabel::Heavy
        }
    }
}

/// Exhaustive, disjoint partition of sample indices by occupancy.
pub fn split_by_truncation(occupancies: &[f64], rule: &SplitRule) -> Result<(Vec<usize>, Vec<usize>)> {
    rule.validate()?;
    let mut light = Vec::new();
    let mut heavy = Vec::new();
    for (i, occ) in occupancies.iter().enumerate() {
        if !occ.is_finite() {
            return Err(Error::Data(format!("sample {i} has non-finite occupancy {occ}")));
        }
        match rule.label(*occ) {
            SplitLabel::Light => light.push(i),
            SplitLabel::Heavy => heavy.push(i),
        }
    }
    Ok((light, heavy))
}

/// Aggregate metrics of one (variant, split) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub acc: f64,
    pub acc_per_dim: f64,
    pub l1: f64,
    pub n: usize,
}

impl SplitMetrics {
    pub fn empty() -> Self {
        SplitMetrics { acc: 0.0, acc_per_dim: 0.0, l1: 0.0, n: 0 }
    }
}

/// One point of the occupancy-binned L1 curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub occupancy: f64,
    pub l1: f64,
    pub n: usize,
}

/// Per-variant evaluation summary over both truncation splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub light: SplitMetrics,
    pub heavy: SplitMetrics,
    /// L1 versus binned current-frame occupancy.
    pub curve: Vec<CurvePoint>,
}

impl MetricReport {
    /// Strictness ordering: full-vector success implies per-dim success.
    pub fn check_invariants(&self) -> Result<()> {
        for (name, m) in [("light", &self.light), ("heavy", &self.heavy)] {
            if m.n > 0 && m.acc > m.acc_per_dim + 1e-12 {
                return Err(Error::Numeric(format!(
                    "{}/{name}: acc {} exceeds acc_per_dim {}",
                    self.variant, m.acc, m.acc_per_dim
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
