//! Seeded end-to-end training: window sampling, local view perturbations,
//! per-window gradients fanned out across workers, fixed-order accumulation,
//! and adaptive moment updates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::action::ActionSpace;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::masking::{MaskSource, RobotMask};
use crate::param::ParamSet;
use crate::pipeline::{
    fit_norm_stats, forward_window, normalize_action, window_bounds, ModelParams, PipelineConfig,
};
use crate::synth::EpisodeRecord;
use crate::tensor::GradTape;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-window training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Adam with bias correction; moment buffers follow the canonical param
/// visit order.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ModelParams) -> Self {
        let mut sizes = Vec::new();
        params.visit(&mut |_, p| sizes.push(p.len()));
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut idx = 0;
        let mut status = Ok(());
        params.visit_mut(&mut |name, p| {
            if status.is_err() {
                return;
            }
            let g = &grads[idx];
            if g.len() != p.len() {
                status = Err(Error::Shape(format!(
                    "gradient for {name} has {} entries, parameter has {}",
                    g.len(),
                    p.len()
                )));
                return;
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for ((pv, gv), (mv, vv)) in
                p.data_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            idx += 1;
        });
        status
    }
}

/// Shift an image by (dy, dx) with zero fill.
fn shift_image(img: &Image, dy: i64, dx: i64) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = Image::new(h, w);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (sy, sx) = (y - dy, x - dx);
            if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                out.set(y as usize, x as usize, img.get(sy as usize, sx as usize));
            }
        }
    }
    out
}

fn shift_mask(mask: &RobotMask, dy: i64, dx: i64) -> RobotMask {
    let (h, w) = (mask.height(), mask.width());
    let mut out = RobotMask::zeros(h, w, MaskSource::GroundTruth);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (sy, sx) = (y - dy, x - dx);
            if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                out.set(y as usize, x as usize, mask.get(sy as usize, sx as usize));
            }
        }
    }
    out
}

fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut x = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(a)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
        .wrapping_add(b);
    x ^= x >> 31;
    x.wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// One sampled training window with its perturbation seed.
#[derive(Clone, Copy)]
struct Sample {
    episode: usize,
    t: usize,
    aug_seed: u64,
}

/// Loss and gradient of one window under local view perturbations.
fn window_grad(
    params: &ModelParams,
    episodes: &[EpisodeRecord],
    sample: Sample,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let config = &params.config;
    let ep = &episodes[sample.episode];
    let (start, end) = window_bounds(sample.t, config.tdr.window);

    // Per-frame jitter; the mask shifts with the frame so the pair stays
    // consistent.
    let mut aug_rng = ChaCha8Rng::seed_from_u64(sample.aug_seed);
    let amp = config.augment_px;
    let mut frames = Vec::with_capacity(end - start);
    let mut masks = Vec::with_capacity(end - start);
    for i in start..end {
        if amp > 0 {
            let dy = aug_rng.gen_range(-amp..=amp);
            let dx = aug_rng.gen_range(-amp..=amp);
            frames.push(shift_image(&ep.frames[i], dy, dx));
            masks.push(shift_mask(&ep.masks[i], dy, dx));
        } else {
            frames.push(ep.frames[i].clone());
            masks.push(ep.masks[i].clone());
        }
    }
    let frame_refs: Vec<&Image> = frames.iter().collect();
    let mask_refs: Vec<&RobotMask> = masks.iter().collect();

    let mut tape = GradTape::new();
    let bound = params.bind(&mut tape)?;
    let pred = forward_window(&mut tape, &bound, config, &frame_refs, &mask_refs, &config.ablation)?;

    let target = normalize_action(&ep.actions[sample.t], &params.norm)?;
    debug_assert_eq!(target.space, ActionSpace::Normalized);
    let tgt = tape.constant(target.values, &[params.action_dim()])?;
    let diff = tape.sub(pred, tgt)?;
    let absdiff = tape.abs(diff)?;
    let loss = tape.mean(absdiff)?;

    let loss_val = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let leaf_ids = bound.leaf_ids();
    Ok((loss_val, leaf_ids.into_iter().map(|id| grads.of(id)).collect()))
}

/// Train a model on the given episodes (the caller passes the training split
/// only; normalization statistics are fitted from exactly these episodes).
pub fn train(episodes: &[EpisodeRecord], config: &PipelineConfig) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if episodes.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    for ep in episodes {
        if ep.frames[0].height() != config.encoder.resolution {
            return Err(Error::Config(format!(
                "episode {} frames are {}px, encoder expects {}px",
                ep.episode_id,
                ep.frames[0].height(),
                config.encoder.resolution
            )));
        }
    }
    let kinds = episodes[0].actions[0].kinds.clone();
    let mut params = ModelParams::init(config, kinds, config.seed)?;

    let all_actions: Vec<_> = episodes.iter().flat_map(|e| e.actions.iter().cloned()).collect();
    params.norm = fit_norm_stats(&all_actions)?;

    let mut optimizer = Adam::new(config.learning_rate, &params);
    let decay_from = (config.epochs * 3) / 4;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0xA0, 0));
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        optimizer.lr = if epoch >= decay_from && config.epochs > 1 {
            config.learning_rate * config.lr_decay
        } else {
            config.learning_rate
        };
        let mut samples = Vec::new();
        for (ei, ep) in episodes.iter().enumerate() {
            for _ in 0..config.windows_per_episode {
                let t = sample_rng.gen_range(0..ep.len());
                let aug_seed = mix_seed(config.seed, epoch as u64, samples.len() as u64);
                samples.push(Sample { episode: ei, t, aug_seed });
            }
        }
        samples.shuffle(&mut sample_rng);

        let mut epoch_loss = 0.0;
        for batch in samples.chunks(config.batch_size) {
            // Fan out per-window gradients; the ordered collect keeps the
            // reduction deterministic.
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch
                .par_iter()
                .map(|s| window_grad(&params, episodes, *s))
                .collect();

            let mut acc: Option<Vec<Vec<f64>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r.map_err(|e| match e {
                    Error::Numeric(reason) => Error::Training { epoch, reason },
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(Error::Training { epoch, reason: format!("loss {loss}") });
                }
                batch_loss += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (av, gv) in a.iter_mut().zip(grads) {
                            for (x, y) in av.iter_mut().zip(gv) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut mean_grads = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in mean_grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            epoch_loss += batch_loss;
            optimizer.step(&mut params, &mean_grads)?;
        }
        loss_curve.push(epoch_loss / samples.len() as f64);
    }

    Ok((params, TrainReport { loss_curve }))
}
