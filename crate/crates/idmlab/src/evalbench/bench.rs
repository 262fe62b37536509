//! Benchmark orchestration: evaluate trained variants over identical windows
//! in identical order, aggregate per-split metrics, and run the mask-quality
//! study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::evalbench::{
    acc_per_dim, l1_distance, split_by_truncation, strict_acc, CurvePoint, MetricReport,
    SplitMetrics, SplitRule, ThresholdSpec,
};
use crate::masking::{degrade_mask, RobotMask};
use crate::pipeline::{predict_sequence, ModelParams};
use crate::synth::EpisodeRecord;

/// One evaluated window: ground truth, prediction, and the current-frame
/// occupancy that assigns its truncation split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub episode_id: String,
    pub t: usize,
    pub occupancy: f64,
    pub gt: Action,
    pub pred: Action,
}

/// A named, trained model; its ablation flags are the config echo it was
/// trained with.
#[derive(Debug, Clone)]
pub struct BenchVariant {
    pub name: String,
    pub params: ModelParams,
}

/// Evaluate every window of every episode, in episode order, t ascending.
/// `mask_override`, when present, substitutes the pipeline-input masks while
/// occupancy labels stay derived from the episodes' clean masks.
fn evaluate_with_masks(
    params: &ModelParams,
    episodes: &[EpisodeRecord],
    mask_override: Option<&[Vec<RobotMask>]>,
) -> Result<Vec<EvalSample>> {
    let flags = params.config.ablation;
    let per_episode: Vec<Result<Vec<EvalSample>>> = episodes
        .par_iter()
        .enumerate()
        .map(|(ei, ep)| {
            let masks: &[RobotMask] = match mask_override {
                Some(all) => &all[ei],
                None => &ep.masks,
            };
            let preds = predict_sequence(params, &ep.frames, masks, &flags)?;
            Ok(preds
                .into_iter()
                .enumerate()
                .map(|(t, pred)| EvalSample {
                    episode_id: ep.episode_id.clone(),
                    t,
                    occupancy: ep.occupancy[t],
                    gt: ep.actions[t].clone(),
                    pred,
                })
                .collect())
        })
        .collect();
    let mut samples = Vec::new();
    for r in per_episode {
        samples.extend(r?);
    }
    Ok(samples)
}

/// Evaluate a model on its configured ablation over clean masks.
pub fn evaluate_model(params: &ModelParams, episodes: &[EpisodeRecord]) -> Result<Vec<EvalSample>> {
    if episodes.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    evaluate_with_masks(params, episodes, None)
}

const CURVE_BIN_WIDTH: f64 = 0.05;

/// Reduce evaluated samples to a per-split metric report.
pub fn aggregate_samples(
    variant: &str,
    samples: &[EvalSample],
    spec: &ThresholdSpec,
    rule: &SplitRule,
) -> Result<MetricReport> {
    spec.validate()?;
    let occupancies: Vec<f64> = samples.iter().map(|s| s.occupancy).collect();
    let (light_idx, heavy_idx) = split_by_truncation(&occupancies, rule)?;

    let metrics_of = |idx: &[usize]| -> Result<SplitMetrics> {
        if idx.is_empty() {
            return Ok(SplitMetrics::empty());
        }
        let mut acc = 0.0;
        let mut apd = 0.0;
        let mut l1 = 0.0;
        for &i in idx {
            let s = &samples[i];
            acc += strict_acc(&s.pred, &s.gt, spec)? as f64;
            apd += acc_per_dim(&s.pred, &s.gt, spec)?;
            l1 += l1_distance(&s.pred, &s.gt)?;
        }
        let n = idx.len() as f64;
        Ok(SplitMetrics { acc: acc / n, acc_per_dim: apd / n, l1: l1 / n, n: idx.len() })
    };

    // Occupancy-binned L1 curve for the report chart.
    let nbins = (1.0 / CURVE_BIN_WIDTH) as usize;
    let mut bin_sum = vec![0.0; nbins];
    let mut bin_n = vec![0usize; nbins];
    for s in samples {
        let b = ((s.occupancy / CURVE_BIN_WIDTH) as usize).min(nbins - 1);
        bin_sum[b] += l1_distance(&s.pred, &s.gt)?;
        bin_n[b] += 1;
    }
    let curve = (0..nbins)
        .filter(|&b| bin_n[b] > 0)
        .map(|b| CurvePoint {
            occupancy: (b as f64 + 0.5) * CURVE_BIN_WIDTH,
            l1: bin_sum[b] / bin_n[b] as f64,
            n: bin_n[b],
        })
        .collect();

    let report = MetricReport {
        variant: variant.to_string(),
        light: metrics_of(&light_idx)?,
        heavy: metrics_of(&heavy_idx)?,
        curve,
    };
    report.check_invariants()?;
    Ok(report)
}

/// Score every variant on identical windows in identical order.
pub fn run_benchmark(
    variants: &[BenchVariant],
    episodes: &[EpisodeRecord],
    spec: &ThresholdSpec,
    rule: &SplitRule,
) -> Result<Vec<MetricReport>> {
    if episodes.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    if variants.is_empty() {
        return Err(Error::Param("no variants to benchmark".into()));
    }
    let mut reports = Vec::with_capacity(variants.len());
    for v in variants {
        let samples = evaluate_model(&v.params, episodes)?;
        reports.push(aggregate_samples(&v.name, &samples, spec, rule)?);
    }
    Ok(reports)
}

/// Clean-versus-degraded L1 per split at one severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStudyRow {
    pub severity: f64,
    pub clean_light_l1: f64,
    pub clean_heavy_l1: f64,
    pub degraded_light_l1: f64,
    pub degraded_heavy_l1: f64,
    pub light_n: usize,
    pub heavy_n: usize,
}

fn degrade_seed(episode_seed: u64, t: usize, sev_idx: usize) -> u64 {
    episode_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(t as u64)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
        .wrapping_add(sev_idx as u64)
}

/// Evaluate identical windows with clean and degraded masks for each
/// severity. Split labels always come from clean occupancy, so rows compare
/// like for like.
pub fn mask_quality_study(
    params: &ModelParams,
    episodes: &[EpisodeRecord],
    severities: &[f64],
    spec: &ThresholdSpec,
    rule: &SplitRule,
) -> Result<Vec<MaskStudyRow>> {
    if episodes.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    if severities.is_empty() {
        return Err(Error::Param("no severities given".into()));
    }
    spec.validate()?;
    rule.validate()?;

    let clean_samples = evaluate_model(params, episodes)?;
    let occupancies: Vec<f64> = clean_samples.iter().map(|s| s.occupancy).collect();
    let (light_idx, heavy_idx) = split_by_truncation(&occupancies, rule)?;
    let mean_l1 = |samples: &[EvalSample], idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for &i in idx {
            total += l1_distance(&samples[i].pred, &samples[i].gt)?;
        }
        Ok(total / idx.len() as f64)
    };
    let clean_light = mean_l1(&clean_samples, &light_idx)?;
    let clean_heavy = mean_l1(&clean_samples, &heavy_idx)?;

    let mut rows = Vec::with_capacity(severities.len());
    for (si, &severity) in severities.iter().enumerate() {
        let degraded_masks: Vec<Vec<RobotMask>> = episodes
            .iter()
            .map(|ep| {
                ep.masks
                    .iter()
                    .enumerate()
                    .map(|(t, m)| degrade_mask(m, severity, degrade_seed(ep.seed, t, si)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let degraded_samples = evaluate_with_masks(params, episodes, Some(&degraded_masks))?;
        rows.push(MaskStudyRow {
            severity,
            clean_light_l1: clean_light,
            clean_heavy_l1: clean_heavy,
            degraded_light_l1: mean_l1(&degraded_samples, &light_idx)?,
            degraded_heavy_l1: mean_l1(&degraded_samples, &heavy_idx)?,
            light_n: light_idx.len(),
            heavy_n: heavy_idx.len(),
        });
    }
    Ok(rows)
}
