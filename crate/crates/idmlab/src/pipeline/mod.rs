//! End-to-end assembly: masking, encoding, window fusion, directional
//! aggregation, temporal regression, action normalization, and the ablation
//! switches that remove each stage.

mod model_io;
mod train;

pub use model_io::{load_model, save_model};
pub use train::{train, Adam, TrainReport};

use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionSpace, DimKind};
use crate::dfa::{dfa_descriptor, ContextProjection, DfaConfig, DirectionBank};
use crate::encoder::{bind_frame, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::masking::{apply_mask, downsample_mask, RobotMask};
use crate::param::{Param, ParamSet};
use crate::synth::EpisodeRecord;
use crate::tdr::{fuse_window, temporal_regress, FusionParams, RegressorParams, TdrConfig};
use crate::tensor::{GradTape, TensorId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Component-removal switches mirroring the ablation rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub disable_dfa: bool,
    pub disable_tdr: bool,
    pub disable_mask: bool,
    pub disable_refinement: bool,
}

/// Fully resolved switches after `disable_refinement` fan-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EffectiveFlags {
    pub dfa_off: bool,
    pub tdr_off: bool,
    pub mask_off: bool,
}

impl AblationFlags {
    /// Removing the whole refinement stack removes all three components.
    pub(crate) fn effective(&self) -> EffectiveFlags {
        EffectiveFlags {
            dfa_off: self.disable_dfa || self.disable_refinement,
            tdr_off: self.disable_tdr || self.disable_refinement,
            mask_off: self.disable_mask || self.disable_refinement,
        }
    }

    /// Parse a benchmark variant name.
    pub fn variant(name: &str) -> Result<Self> {
        let mut flags = AblationFlags::default();
        match name {
            "full" => {}
            "no_dfa" => flags.disable_dfa = true,
            "no_tdr" => flags.disable_tdr = true,
            "no_mask" => flags.disable_mask = true,
            "no_refine" => flags.disable_refinement = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown variant {other:?}; expected full, no_dfa, no_tdr, no_mask or no_refine"
                )))
            }
        }
        Ok(flags)
    }
}

/// Loss selector (the objective is L1 in normalized action space).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub dfa: DfaConfig,
    pub tdr: TdrConfig,
    pub loss: LossKind,
    pub learning_rate: f64,
    /// Learning-rate multiplier for the last quarter of the epochs.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training windows sampled per episode per epoch.
    pub windows_per_episode: usize,
    /// Local view perturbation magnitude in pixels.
    pub augment_px: i64,
    pub ablation: AblationFlags,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            encoder: EncoderConfig::default(),
            dfa: DfaConfig::default(),
            tdr: TdrConfig::default(),
            loss: LossKind::L1,
            learning_rate: 1e-3,
            lr_decay: 0.25,
            epochs: 10,
            batch_size: 8,
            windows_per_episode: 4,
            augment_px: 2,
            ablation: AblationFlags::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.dfa.validate()?;
        self.tdr.validate()?;
        if self.batch_size == 0 || self.windows_per_episode == 0 {
            return Err(Error::Config("batch_size and windows_per_episode must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !self.lr_decay.is_finite() || self.lr_decay < 0.0 || self.lr_decay > 1.0 {
            return Err(Error::Config(format!("bad lr decay {}", self.lr_decay)));
        }
        if self.augment_px < 0 {
            return Err(Error::Config("augment_px must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-dimension normalization statistics from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub const SIGMA_FLOOR: f64 = 1e-6;

/// Population mean/std per dimension, sigma floored.
pub fn fit_norm_stats(actions: &[Action]) -> Result<NormStats> {
    if actions.len() < 2 {
        return Err(Error::Param(format!(
            "fit_norm_stats needs at least 2 actions, got {}",
            actions.len()
        )));
    }
    let d = actions[0].dim();
    for a in actions {
        if a.dim() != d {
            return Err(Error::Shape("actions of mixed dimensionality".into()));
        }
    }
    let n = actions.len() as f64;
    let mut mu = vec![0.0; d];
    for a in actions {
        for (m, v) in mu.iter_mut().zip(&a.values) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n;
    }
    let mut sigma = vec![0.0; d];
    for a in actions {
        for i in 0..d {
            let dv = a.values[i] - mu[i];
            sigma[i] += dv * dv;
        }
    }
    for s in sigma.iter_mut() {
        *s = (*s / n).sqrt().max(SIGMA_FLOOR);
    }
    Ok(NormStats { mu, sigma })
}

pub fn normalize_action(a: &Action, stats: &NormStats) -> Result<Action> {
    if a.dim() != stats.mu.len() {
        return Err(Error::Shape(format!(
            "action dim {} vs stats dim {}",
            a.dim(),
            stats.mu.len()
        )));
    }
    let values = a
        .values
        .iter()
        .zip(stats.mu.iter().zip(&stats.sigma))
        .map(|(v, (m, s))| (v - m) / s)
        .collect();
    Ok(Action { values, space: ActionSpace::Normalized, kinds: a.kinds.clone() })
}

pub fn denormalize_action(a: &Action, stats: &NormStats) -> Result<Action> {
    if a.dim() != stats.mu.len() {
        return Err(Error::Shape(format!(
            "action dim {} vs stats dim {}",
            a.dim(),
            stats.mu.len()
        )));
    }
    let values = a
        .values
        .iter()
        .zip(stats.mu.iter().zip(&stats.sigma))
        .map(|(v, (m, s))| m + s * v)
        .collect();
    Ok(Action { values, space: ActionSpace::Raw, kinds: a.kinds.clone() })
}

/// Every learnable tensor plus normalization stats and the config echo.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: PipelineConfig,
    pub dim_kinds: Vec<DimKind>,
    pub encoder: EncoderParams,
    pub bank: DirectionBank,
    pub ctx_proj: ContextProjection,
    pub fusion: FusionParams,
    pub regressor: RegressorParams,
    /// Fallback projection used when DFA is disabled: pooled features to the
    /// descriptor length.
    gap_w: Param,
    gap_b: Param,
    pub norm: NormStats,
}

impl ModelParams {
    pub fn init(config: &PipelineConfig, dim_kinds: Vec<DimKind>, seed: u64) -> Result<Self> {
        config.validate()?;
        if dim_kinds.is_empty() {
            return Err(Error::Config("action space has no dimensions".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dim_kinds.len();
        let dz = config.dfa.descriptor_len();
        let c = config.encoder.channels;
        Ok(ModelParams {
            config: config.clone(),
            dim_kinds,
            encoder: EncoderParams::init(&config.encoder, &mut rng)?,
            bank: DirectionBank::init(&config.dfa, c, &mut rng)?,
            ctx_proj: ContextProjection::init(&config.dfa, config.encoder.context_dim, &mut rng),
            fusion: FusionParams::init(&config.tdr, c, &mut rng),
            regressor: RegressorParams::init(&config.tdr, dz, d, &mut rng),
            gap_w: Param::uniform(&mut rng, &[dz, c], c),
            gap_b: Param::zeros(&[dz]),
            norm: NormStats { mu: vec![0.0; d], sigma: vec![1.0; d] },
        })
    }

    pub fn action_dim(&self) -> usize {
        self.dim_kinds.len()
    }
}

impl ParamSet for ModelParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(f);
        self.bank.visit(f);
        self.ctx_proj.visit(f);
        self.fusion.visit(f);
        self.regressor.visit(f);
        f("gap.weight", &self.gap_w);
        f("gap.bias", &self.gap_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(f);
        self.bank.visit_mut(f);
        self.ctx_proj.visit_mut(f);
        self.fusion.visit_mut(f);
        self.regressor.visit_mut(f);
        f("gap.weight", &mut self.gap_w);
        f("gap.bias", &mut self.gap_b);
    }
}

pub(crate) struct BoundModel {
    pub enc: crate::encoder::BoundEncoder,
    pub dfa: crate::dfa::BoundDfa,
    pub fusion: crate::tdr::BoundFusion,
    pub reg: crate::tdr::BoundRegressor,
    pub gap_w: TensorId,
    pub gap_b: TensorId,
}

impl BoundModel {
    /// Leaf ids in the exact order `ModelParams::visit` enumerates params.
    pub fn leaf_ids(&self) -> Vec<TensorId> {
        let mut ids = self.enc.leaf_ids();
        ids.extend(self.dfa.leaf_ids());
        ids.extend(self.fusion.leaf_ids());
        ids.extend(self.reg.leaf_ids());
        ids.push(self.gap_w);
        ids.push(self.gap_b);
        ids
    }
}

impl ModelParams {
    pub(crate) fn bind(&self, tape: &mut GradTape) -> Result<BoundModel> {
        let bound = BoundModel {
            enc: self.encoder.bind(&self.config.encoder, tape)?,
            dfa: self.bank.bind(&self.ctx_proj, tape)?,
            fusion: self.fusion.bind(tape),
            reg: self.regressor.bind(tape),
            gap_w: self.gap_w.bind(tape),
            gap_b: self.gap_b.bind(tape),
        };
        #[cfg(debug_assertions)]
        {
            let ids = bound.leaf_ids();
            let shapes = self.named_shapes();
            debug_assert_eq!(ids.len(), shapes.len(), "leaf order drifted from visit order");
            for (id, (name, shape)) in ids.iter().zip(&shapes) {
                debug_assert_eq!(
                    tape.value(*id).shape(),
                    shape.as_slice(),
                    "leaf/visit mismatch at {name}"
                );
            }
        }
        Ok(bound)
    }
}

/// Causal window slice of an episode ending at `t`, at most `k` frames.
pub fn window_bounds(t: usize, k: usize) -> (usize, usize) {
    let start = (t + 1).saturating_sub(k);
    (start, t + 1)
}

/// Run the full pipeline for one causally ordered window and return the
/// normalized action prediction for the final frame.
pub(crate) fn forward_window(
    tape: &mut GradTape,
    bound: &BoundModel,
    config: &PipelineConfig,
    frames: &[&Image],
    masks: &[&RobotMask],
    flags: &AblationFlags,
) -> Result<TensorId> {
    let eff = flags.effective();
    let k = config.tdr.window;
    let n = frames.len();
    if n == 0 || n > k {
        return Err(Error::Param(format!("window of {n} frames, expected 1..={k}")));
    }
    if masks.len() != n {
        return Err(Error::Shape(format!("{n} frames with {} masks", masks.len())));
    }
    let grid = config.encoder.grid();

    // Without the temporal stack only the final frame reaches the output;
    // skip the history entirely.
    let (frames, masks): (&[&Image], &[&RobotMask]) =
        if eff.tdr_off { (&frames[n - 1..], &masks[n - 1..]) } else { (frames, masks) };
    let n = frames.len();

    let mut feature_maps = Vec::with_capacity(n);
    let mut contexts = Vec::with_capacity(n);
    let mut grid_weights: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (frame, mask) in frames.iter().zip(masks) {
        let ones;
        let mask_ref: &RobotMask = if eff.mask_off {
            ones = RobotMask::ones(mask.height(), mask.width());
            &ones
        } else {
            mask
        };
        let masked = apply_mask(frame, mask_ref)?;
        let fid = bind_frame(tape, &masked)?;
        let (g, ctx) = bound.enc.encode(tape, fid)?;
        feature_maps.push(g);
        contexts.push(ctx);
        grid_weights.push(if eff.mask_off {
            vec![1.0; grid * grid]
        } else {
            downsample_mask(mask_ref, grid, grid)?
        });
    }

    let refined = if eff.tdr_off {
        feature_maps
    } else {
        fuse_window(tape, &feature_maps, &bound.fusion, config.tdr.fusion_cascaded)?
    };

    let dz = config.dfa.descriptor_len();
    let mut descriptors = Vec::with_capacity(k);
    // Left-zero-pad short histories to the fixed window length.
    for _ in n..k {
        descriptors.push(tape.constant(vec![0.0; dz], &[dz])?);
    }
    for (i, fm) in refined.iter().enumerate() {
        let z = if eff.dfa_off {
            let (pooled, _) = tape.masked_pool(fm.0, &grid_weights[i])?;
            tape.affine(bound.gap_w, pooled, Some(bound.gap_b))?
        } else {
            let (z, _) = dfa_descriptor(tape, *fm, &grid_weights[i], contexts[i], &bound.dfa)?;
            z
        };
        descriptors.push(z);
    }

    temporal_regress(tape, &descriptors, &bound.reg, !eff.tdr_off)
}

/// Single-window inference: masked window in, raw action for the last frame
/// out. Stateless; identical windows give identical outputs.
pub fn infer(
    params: &ModelParams,
    frames: &[&Image],
    masks: &[&RobotMask],
    flags: &AblationFlags,
) -> Result<Action> {
    let mut tape = GradTape::new();
    let bound = params.bind(&mut tape)?;
    let out = forward_window(&mut tape, &bound, &params.config, frames, masks, flags)?;
    let normalized = Action {
        values: tape.value(out).data().to_vec(),
        space: ActionSpace::Normalized,
        kinds: params.dim_kinds.clone(),
    };
    denormalize_action(&normalized, &params.norm)
}

/// Convenience: run `infer` on the window of an episode ending at `t`.
pub fn infer_at(
    params: &ModelParams,
    episode: &EpisodeRecord,
    t: usize,
    flags: &AblationFlags,
) -> Result<Action> {
    if t >= episode.len() {
        return Err(Error::Param(format!("t {t} outside episode of length {}", episode.len())));
    }
    let (start, end) = window_bounds(t, params.config.tdr.window);
    let frames: Vec<&Image> = episode.frames[start..end].iter().collect();
    let masks: Vec<&RobotMask> = episode.masks[start..end].iter().collect();
    infer(params, &frames, &masks, flags)
}

/// Predict the action at every step of a frame/mask sequence.
///
/// Computes per-frame encodings, adjacent-pair fusions, and descriptors once
/// and reuses them across the sliding windows; the per-window arithmetic is
/// identical to [`infer`], so outputs match it bit-exactly (covered by a
/// test). A window's first frame always contributes its raw (unfused)
/// descriptor, matching the windowed fusion contract.
pub fn predict_sequence(
    params: &ModelParams,
    frames: &[Image],
    masks: &[RobotMask],
    flags: &AblationFlags,
) -> Result<Vec<Action>> {
    if frames.is_empty() || frames.len() != masks.len() {
        return Err(Error::Param(format!(
            "predict_sequence: {} frames with {} masks",
            frames.len(),
            masks.len()
        )));
    }
    let config = &params.config;
    let eff = flags.effective();
    let k = config.tdr.window;
    let grid = config.encoder.grid();
    let dz = config.dfa.descriptor_len();
    let t_len = frames.len();

    let mut tape = GradTape::new();
    let bound = params.bind(&mut tape)?;

    let mut maps = Vec::with_capacity(t_len);
    let mut contexts = Vec::with_capacity(t_len);
    let mut grid_weights = Vec::with_capacity(t_len);
    for (frame, mask) in frames.iter().zip(masks) {
        let ones;
        let mask_ref: &RobotMask = if eff.mask_off {
            ones = RobotMask::ones(mask.height(), mask.width());
            &ones
        } else {
            mask
        };
        let masked = apply_mask(frame, mask_ref)?;
        let fid = bind_frame(&mut tape, &masked)?;
        let (g, ctx) = bound.enc.encode(&mut tape, fid)?;
        maps.push(g);
        contexts.push(ctx);
        grid_weights.push(if eff.mask_off {
            vec![1.0; grid * grid]
        } else {
            downsample_mask(mask_ref, grid, grid)?
        });
    }

    let descriptor = |tape: &mut GradTape, fm: crate::encoder::FeatureMap, i: usize| {
        if eff.dfa_off {
            let (pooled, _) = tape.masked_pool(fm.0, &grid_weights[i])?;
            tape.affine(bound.gap_w, pooled, Some(bound.gap_b))
        } else {
            dfa_descriptor(tape, fm, &grid_weights[i], contexts[i], &bound.dfa).map(|(z, _)| z)
        }
    };

    // Descriptor of each frame as a window head (raw map) and as a window
    // continuation (fused with its predecessor).
    let mut z_head = Vec::with_capacity(t_len);
    for (i, fm) in maps.iter().enumerate() {
        z_head.push(descriptor(&mut tape, *fm, i)?);
    }
    let z_cont = if eff.tdr_off {
        z_head.clone()
    } else {
        let mut zc = vec![z_head[0]];
        for i in 1..t_len {
            let source = if config.tdr.fusion_cascaded {
                // The cascade source depends on window placement; fall back to
                // per-window evaluation for that configuration.
                return predict_sequence_windowed(params, frames, masks, flags);
            } else {
                maps[i - 1]
            };
            let fused = crate::tdr::temporal_fuse(&mut tape, source, maps[i], &bound.fusion)?;
            zc.push(descriptor(&mut tape, fused, i)?);
        }
        zc
    };

    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let (start, end) = window_bounds(t, k);
        let mut descriptors = Vec::with_capacity(k);
        for _ in (end - start)..k {
            descriptors.push(tape.constant(vec![0.0; dz], &[dz])?);
        }
        descriptors.push(z_head[start]);
        for z in z_cont.iter().take(end).skip(start + 1) {
            descriptors.push(*z);
        }
        let pred = temporal_regress(&mut tape, &descriptors, &bound.reg, !eff.tdr_off)?;
        let normalized = Action {
            values: tape.value(pred).data().to_vec(),
            space: ActionSpace::Normalized,
            kinds: params.dim_kinds.clone(),
        };
        out.push(denormalize_action(&normalized, &params.norm)?);
    }
    Ok(out)
}

fn predict_sequence_windowed(
    params: &ModelParams,
    frames: &[Image],
    masks: &[RobotMask],
    flags: &AblationFlags,
) -> Result<Vec<Action>> {
    (0..frames.len())
        .map(|t| {
            let (start, end) = window_bounds(t, params.config.tdr.window);
            let f: Vec<&Image> = frames[start..end].iter().collect();
            let m: Vec<&RobotMask> = masks[start..end].iter().collect();
            infer(params, &f, &m, flags)
        })
        .collect()
}
