//! Temporal Dynamics Refinement.
//!
//! Two stages around the directional descriptor: pairwise gated warping
//! fusion of adjacent feature maps before it, and a causal dilated TCN
//! residual on the descriptor history after it. Both residual branches carry
//! non-negative scales (softplus-parameterized), so either stage reduces
//! exactly to its base term when its scale or gate vanishes.

use serde::{Deserialize, Serialize};

use crate::encoder::FeatureMap;
use crate::error::{Error, Result};
use crate::param::{Param, ParamSet};
use crate::tensor::{GradTape, TensorId};
use rand_chacha::ChaCha8Rng;

/// Predicted deformation offsets [2, H, W] in grid-cell units.
#[derive(Debug, Clone, Copy)]
pub struct WarpField(pub TensorId);

/// Predicted per-cell blend confidence [1, H, W], sigmoid range.
#[derive(Debug, Clone, Copy)]
pub struct VisibilityGate(pub TensorId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdrConfig {
    /// Causal history window length K.
    pub window: usize,
    /// Offset bound for the warp field, in grid cells.
    pub max_offset: f64,
    /// Hidden channels of the fusion head.
    pub fusion_hidden: usize,
    /// TCN dilation schedule.
    pub tcn_dilations: Vec<usize>,
    /// TCN kernel width.
    pub tcn_kernel: usize,
    /// TCN hidden channels.
    pub tcn_channels: usize,
    /// Hidden width of the base regressor h.
    pub regressor_hidden: usize,
    /// Initial value of both residual scales (beta).
    pub beta_init: f64,
    /// Use the fused (cascaded) previous map as the warp source instead of
    /// the raw one.
    pub fusion_cascaded: bool,
}

impl Default for TdrConfig {
    fn default() -> Self {
        TdrConfig {
            window: 8,
            max_offset: 2.0,
            fusion_hidden: 8,
            tcn_dilations: vec![1, 2, 4, 8],
            tcn_kernel: 2,
            tcn_channels: 32,
            regressor_hidden: 64,
            beta_init: 0.1,
            fusion_cascaded: false,
        }
    }
}

impl TdrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if self.tcn_dilations.is_empty() || self.tcn_dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config("tcn dilations must be positive and non-empty".into()));
        }
        if self.tcn_kernel == 0 {
            return Err(Error::Config("tcn kernel width must be positive".into()));
        }
        if self.max_offset <= 0.0 {
            return Err(Error::Config("max_offset must be positive".into()));
        }
        if self.beta_init <= 0.0 {
            return Err(Error::Config("beta_init must be positive".into()));
        }
        Ok(())
    }
}

/// Receptive field of a causal dilated stack: 1 + (k-1) * sum(dilations).
pub fn tcn_receptive_field(dilations: &[usize], kernel_width: usize) -> usize {
    1 + (kernel_width - 1) * dilations.iter().sum::<usize>()
}

fn rho_for(beta: f64) -> f64 {
    // softplus(rho) == beta
    (beta.exp() - 1.0).ln()
}

// ── Fusion (Eq.-level: gated warp of the previous frame) ────────────────

/// Shallow conv head predicting offsets and gate from a channel-concatenated
/// frame pair, plus the non-negative fusion scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    conv1_w: Param,
    conv1_b: Param,
    conv2_w: Param,
    conv2_b: Param,
    rho: Param,
    pub max_offset: f64,
}

impl FusionParams {
    pub fn init(config: &TdrConfig, feature_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let hid = config.fusion_hidden;
        let c2 = 2 * feature_channels;
        FusionParams {
            conv1_w: Param::uniform(rng, &[hid, c2, 3, 3], c2 * 9),
            conv1_b: Param::zeros(&[hid]),
            conv2_w: Param::uniform(rng, &[3, hid, 3, 3], hid * 9),
            conv2_b: Param::zeros(&[3]),
            rho: Param::constant(rho_for(config.beta_init), &[1]),
            max_offset: config.max_offset,
        }
    }

    /// Zeroed prediction head (offsets 0, gate 0.5 everywhere); the scale
    /// keeps its configured init.
    pub fn zeroed_head(mut self) -> Self {
        for p in [&mut self.conv1_w, &mut self.conv1_b, &mut self.conv2_w, &mut self.conv2_b] {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        self
    }

    pub fn beta(&self) -> f64 {
        let r = self.rho.data()[0];
        if r > 0.0 {
            r + (-r).exp().ln_1p()
        } else {
            r.exp().ln_1p()
        }
    }
}

impl ParamSet for FusionParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("fusion.conv1.weight", &self.conv1_w);
        f("fusion.conv1.bias", &self.conv1_b);
        f("fusion.conv2.weight", &self.conv2_w);
        f("fusion.conv2.bias", &self.conv2_b);
        f("fusion.rho", &self.rho);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("fusion.conv1.weight", &mut self.conv1_w);
        f("fusion.conv1.bias", &mut self.conv1_b);
        f("fusion.conv2.weight", &mut self.conv2_w);
        f("fusion.conv2.bias", &mut self.conv2_b);
        f("fusion.rho", &mut self.rho);
    }
}

pub struct BoundFusion {
    conv1_w: TensorId,
    conv1_b: TensorId,
    conv2_w: TensorId,
    conv2_b: TensorId,
    rho: TensorId,
    max_offset: f64,
}

impl FusionParams {
    pub fn bind(&self, tape: &mut GradTape) -> BoundFusion {
        BoundFusion {
            conv1_w: self.conv1_w.bind(tape),
            conv1_b: self.conv1_b.bind(tape),
            conv2_w: self.conv2_w.bind(tape),
            conv2_b: self.conv2_b.bind(tape),
            rho: self.rho.bind(tape),
            max_offset: self.max_offset,
        }
    }
}

impl BoundFusion {
    pub fn beta(&self, tape: &mut GradTape) -> Result<TensorId> {
        tape.softplus(self.rho)
    }

    pub(crate) fn leaf_ids(&self) -> Vec<TensorId> {
        vec![self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b, self.rho]
    }
}

fn identity_grid(h: usize, w: usize) -> Vec<f64> {
    let mut coords = vec![0.0; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            coords[y * w + x] = x as f64;
            coords[h * w + y * w + x] = y as f64;
        }
    }
    coords
}

/// Tile a [1, H, W] gate across `c` channels.
fn tile_gate(tape: &mut GradTape, gate: TensorId, c: usize, h: usize, w: usize) -> Result<TensorId> {
    let copies = vec![gate; c];
    let flat = tape.concat(&copies)?;
    tape.reshape(flat, &[c, h, w])
}

/// Predict the warp field and visibility gate from an adjacent frame pair.
pub fn predict_warp_gate(
    tape: &mut GradTape,
    prev: FeatureMap,
    cur: FeatureMap,
    fusion: &BoundFusion,
) -> Result<(WarpField, VisibilityGate)> {
    let ps = tape.value(prev.0).shape().to_vec();
    let cs = tape.value(cur.0).shape().to_vec();
    if ps != cs || ps.len() != 3 {
        return Err(Error::Shape(format!("predict_warp_gate: maps {ps:?} vs {cs:?}")));
    }
    let (c, h, w) = (ps[0], ps[1], ps[2]);
    let pair_flat = tape.concat(&[prev.0, cur.0])?;
    let pair = tape.reshape(pair_flat, &[1, 2 * c, h, w])?;
    let hid = tape.conv2d(pair, fusion.conv1_w, Some(fusion.conv1_b), 1, 1)?;
    let hid = tape.leaky_relu(hid, 0.01)?;
    let raw = tape.conv2d(hid, fusion.conv2_w, Some(fusion.conv2_b), 1, 1)?;

    let raw_off = tape.slice(raw, 0, 2 * h * w)?;
    let squashed = tape.tanh(raw_off)?;
    let bounded = tape.scale(squashed, fusion.max_offset)?;
    let offsets = tape.reshape(bounded, &[2, h, w])?;

    let raw_gate = tape.slice(raw, 2 * h * w, h * w)?;
    let gate = tape.sigmoid(raw_gate)?;
    let gate = tape.reshape(gate, &[1, h, w])?;
    Ok((WarpField(offsets), VisibilityGate(gate)))
}

/// Blend an explicit warp/gate pair: out = cur + beta * gate * (warp(prev) - cur).
pub fn temporal_fuse_with(
    tape: &mut GradTape,
    prev: FeatureMap,
    cur: FeatureMap,
    warp: WarpField,
    gate: VisibilityGate,
    beta: TensorId,
) -> Result<FeatureMap> {
    let s = tape.value(cur.0).shape().to_vec();
    let (c, h, w) = (s[0], s[1], s[2]);
    let base = tape.constant(identity_grid(h, w), &[2, h, w])?;
    let coords = tape.add(base, warp.0)?;
    let warped = tape.bilinear_sample(prev.0, coords)?;
    let diff = tape.sub(warped, cur.0)?;
    let gate_tiled = tile_gate(tape, gate.0, c, h, w)?;
    let gated = tape.mul(diff, gate_tiled)?;
    let scaled = tape.mul_scalar(gated, beta)?;
    let fused = tape.add(cur.0, scaled)?;
    Ok(FeatureMap(fused))
}

/// Full Eq.-style fusion: predict warp and gate, then blend.
pub fn temporal_fuse(
    tape: &mut GradTape,
    prev: FeatureMap,
    cur: FeatureMap,
    fusion: &BoundFusion,
) -> Result<FeatureMap> {
    let (warp, gate) = predict_warp_gate(tape, prev, cur, fusion)?;
    let beta = fusion.beta(tape)?;
    temporal_fuse_with(tape, prev, cur, warp, gate, beta)
}

/// Pairwise fusion across a window. The first frame passes through raw; each
/// later frame blends from its *raw* predecessor unless `cascaded`.
pub fn fuse_window(
    tape: &mut GradTape,
    window: &[FeatureMap],
    fusion: &BoundFusion,
    cascaded: bool,
) -> Result<Vec<FeatureMap>> {
    if window.is_empty() {
        return Err(Error::Param("fuse_window: empty window".into()));
    }
    let mut out = Vec::with_capacity(window.len());
    out.push(window[0]);
    for tau in 1..window.len() {
        let source = if cascaded { out[tau - 1] } else { window[tau - 1] };
        out.push(temporal_fuse(tape, source, window[tau], fusion)?);
    }
    Ok(out)
}

// ── Regressor (base MLP + causal TCN residual) ─────────────────────────

/// Base regressor h and the causal TCN residual branch.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorParams {
    h1_w: Param,
    h1_b: Param,
    h2_w: Param,
    h2_b: Param,
    tcn_w: Vec<Param>,
    tcn_b: Vec<Param>,
    /// 1x1 projection for the first residual hop (channel change).
    tcn_res_w: Param,
    out_w: Param,
    out_b: Param,
    rho: Param,
    dilations: Vec<usize>,
}

impl RegressorParams {
    pub fn init(
        config: &TdrConfig,
        descriptor_len: usize,
        action_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let hid = config.regressor_hidden;
        let ct = config.tcn_channels;
        let k = config.tcn_kernel;
        let mut tcn_w = Vec::new();
        let mut tcn_b = Vec::new();
        let mut c_in = descriptor_len;
        for _ in &config.tcn_dilations {
            tcn_w.push(Param::uniform(rng, &[ct, c_in, k], c_in * k));
            tcn_b.push(Param::zeros(&[ct]));
            c_in = ct;
        }
        RegressorParams {
            h1_w: Param::uniform(rng, &[hid, descriptor_len], descriptor_len),
            h1_b: Param::zeros(&[hid]),
            h2_w: Param::uniform(rng, &[action_dim, hid], hid),
            h2_b: Param::zeros(&[action_dim]),
            tcn_w,
            tcn_b,
            tcn_res_w: Param::uniform(rng, &[ct, descriptor_len, 1], descriptor_len),
            out_w: Param::uniform(rng, &[action_dim, ct], ct),
            out_b: Param::zeros(&[action_dim]),
            rho: Param::constant(rho_for(config.beta_init), &[1]),
            dilations: config.tcn_dilations.clone(),
        }
    }

    pub fn beta(&self) -> f64 {
        let r = self.rho.data()[0];
        if r > 0.0 {
            r + (-r).exp().ln_1p()
        } else {
            r.exp().ln_1p()
        }
    }

    /// Zero the final affine layers of both branches (test hook).
    pub fn zeroed_outputs(mut self, h_bias: &[f64]) -> Self {
        for v in self.h2_w.data_mut() {
            *v = 0.0;
        }
        self.h2_b.data_mut().copy_from_slice(h_bias);
        for v in self.out_w.data_mut() {
            *v = 0.0;
        }
        for v in self.out_b.data_mut() {
            *v = 0.0;
        }
        self
    }
}

impl ParamSet for RegressorParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("regressor.h1.weight", &self.h1_w);
        f("regressor.h1.bias", &self.h1_b);
        f("regressor.h2.weight", &self.h2_w);
        f("regressor.h2.bias", &self.h2_b);
        for (i, (w, b)) in self.tcn_w.iter().zip(&self.tcn_b).enumerate() {
            f(&format!("regressor.tcn{i}.weight"), w);
            f(&format!("regressor.tcn{i}.bias"), b);
        }
        f("regressor.tcn_res.weight", &self.tcn_res_w);
        f("regressor.out.weight", &self.out_w);
        f("regressor.out.bias", &self.out_b);
        f("regressor.rho", &self.rho);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("regressor.h1.weight", &mut self.h1_w);
        f("regressor.h1.bias", &mut self.h1_b);
        f("regressor.h2.weight", &mut self.h2_w);
        f("regressor.h2.bias", &mut self.h2_b);
        for (i, (w, b)) in self.tcn_w.iter_mut().zip(self.tcn_b.iter_mut()).enumerate() {
            f(&format!("regressor.tcn{i}.weight"), w);
            f(&format!("regressor.tcn{i}.bias"), b);
        }
        f("regressor.tcn_res.weight", &mut self.tcn_res_w);
        f("regressor.out.weight", &mut self.out_w);
        f("regressor.out.bias", &mut self.out_b);
        f("regressor.rho", &mut self.rho);
    }
}

pub struct BoundRegressor {
    h1_w: TensorId,
    h1_b: TensorId,
    h2_w: TensorId,
    h2_b: TensorId,
    tcn_w: Vec<TensorId>,
    tcn_b: Vec<TensorId>,
    tcn_res_w: TensorId,
    out_w: TensorId,
    out_b: TensorId,
    rho: TensorId,
    dilations: Vec<usize>,
}

impl BoundRegressor {
    pub(crate) fn leaf_ids(&self) -> Vec<TensorId> {
        let mut ids = vec![self.h1_w, self.h1_b, self.h2_w, self.h2_b];
        for (w, b) in self.tcn_w.iter().zip(&self.tcn_b) {
            ids.push(*w);
            ids.push(*b);
        }
        ids.push(self.tcn_res_w);
        ids.push(self.out_w);
        ids.push(self.out_b);
        ids.push(self.rho);
        ids
    }
}

impl RegressorParams {
    pub fn bind(&self, tape: &mut GradTape) -> BoundRegressor {
        BoundRegressor {
            h1_w: self.h1_w.bind(tape),
            h1_b: self.h1_b.bind(tape),
            h2_w: self.h2_w.bind(tape),
            h2_b: self.h2_b.bind(tape),
            tcn_w: self.tcn_w.iter().map(|p| p.bind(tape)).collect(),
            tcn_b: self.tcn_b.iter().map(|p| p.bind(tape)).collect(),
            tcn_res_w: self.tcn_res_w.bind(tape),
            out_w: self.out_w.bind(tape),
            out_b: self.out_b.bind(tape),
            rho: self.rho.bind(tape),
            dilations: self.dilations.clone(),
        }
    }
}

/// Single-step regression from a causal descriptor history (left-padded to
/// the window length by the caller). Returns the normalized action for the
/// last step only.
pub fn temporal_regress(
    tape: &mut GradTape,
    z_history: &[TensorId],
    reg: &BoundRegressor,
    use_tcn: bool,
) -> Result<TensorId> {
    let k = z_history.len();
    if k == 0 {
        return Err(Error::Param("temporal_regress: empty history".into()));
    }
    let z_t = *z_history.last().unwrap();

    // Base path h(z_t).
    let h_hidden = tape.affine(reg.h1_w, z_t, Some(reg.h1_b))?;
    let h_act = tape.leaky_relu(h_hidden, 0.01)?;
    let base = tape.affine(reg.h2_w, h_act, Some(reg.h2_b))?;
    if !use_tcn {
        return Ok(base);
    }

    // Stack history into [Dz, K].
    let dz = tape.value(z_t).len();
    for z in z_history {
        if tape.value(*z).len() != dz {
            return Err(Error::Shape("temporal_regress: descriptor lengths differ".into()));
        }
    }
    let flat = tape.concat(z_history)?; // [K * Dz], time-major
    let time_major = tape.reshape(flat, &[k, dz])?;
    let mut x = tape.transpose2d(time_major)?; // [Dz, K]

    for (i, dil) in reg.dilations.iter().enumerate() {
        let conv = tape.conv1d_causal(x, reg.tcn_w[i], Some(reg.tcn_b[i]), *dil)?;
        let act = tape.leaky_relu(conv, 0.01)?;
        let residual =
            if i == 0 { tape.conv1d_causal(x, reg.tcn_res_w, None, 1)? } else { x };
        x = tape.add(act, residual)?;
    }

    // Last time step's channel vector.
    let xt = tape.transpose2d(x)?; // [K, C_t]
    let ct = tape.value(xt).shape()[1];
    let last = tape.slice(xt, (k - 1) * ct, ct)?;
    let tcn_out = tape.affine(reg.out_w, last, Some(reg.out_b))?;

    let beta = tape.softplus(reg.rho)?;
    let scaled = tape.mul_scalar(tcn_out, beta)?;
    tape.add(base, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{self, FD_FLOOR, FD_STEP, FD_TOL};
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_config() -> TdrConfig {
        TdrConfig {
            window: 4,
            fusion_hidden: 4,
            tcn_dilations: vec![1, 2],
            tcn_channels: 6,
            regressor_hidden: 8,
            ..TdrConfig::default()
        }
    }

    fn rand_map(tape: &mut GradTape, r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        let data: Vec<f64> = (0..c * h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
        FeatureMap(tape.constant(data, &[c, h, w]).unwrap())
    }

    #[test]
    fn receptive_field_formula() {
        assert_eq!(tcn_receptive_field(&[1, 2, 4, 8], 2), 16);
        assert_eq!(tcn_receptive_field(&[1], 1), 1);
        assert_eq!(tcn_receptive_field(&[1], 3), 3);
    }

    #[test]
    fn zeroed_head_gives_zero_offsets_and_half_gate() {
        let config = small_config();
        let params = FusionParams::init(&config, 3, &mut rng(1)).zeroed_head();
        let mut tape = GradTape::new();
        let bound = params.bind(&mut tape);
        let mut r = rng(2);
        let prev = rand_map(&mut tape, &mut r, 3, 5, 5);
        let cur = rand_map(&mut tape, &mut r, 3, 5, 5);
        let (warp, gate) = predict_warp_gate(&mut tape, prev, cur, &bound).unwrap();
        assert!(tape.value(warp.0).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(gate.0).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn warp_and_gate_stay_in_range_by_construction() {
        let config = small_config();
        let params = FusionParams::init(&config, 4, &mut rng(3));
        let mut tape = GradTape::new();
        let bound = params.bind(&mut tape);
        let mut r = rng(4);
        // Large-magnitude inputs to push the head hard.
        let data: Vec<f64> = (0..4 * 36).map(|_| r.gen_range(-50.0..50.0)).collect();
        let prev = FeatureMap(tape.constant(data.clone(), &[4, 6, 6]).unwrap());
        let cur = rand_map(&mut tape, &mut r, 4, 6, 6);
        let (warp, gate) = predict_warp_gate(&mut tape, prev, cur, &bound).unwrap();
        for v in tape.value(warp.0).data() {
            assert!(v.abs() <= config.max_offset);
        }
        for v in tape.value(gate.0).data() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn fuse_reduces_to_current_when_beta_zero_or_gate_zero() {
        let mut tape = GradTape::new();
        let mut r = rng(5);
        let prev = rand_map(&mut tape, &mut r, 3, 4, 4);
        let cur = rand_map(&mut tape, &mut r, 3, 4, 4);
        let cur_data = tape.value(cur.0).data().to_vec();

        let off: Vec<f64> = (0..2 * 16).map(|_| r.gen_range(-1.5..1.5)).collect();
        let warp = WarpField(tape.constant(off, &[2, 4, 4]).unwrap());
        let gate_half = VisibilityGate(tape.constant(vec![0.5; 16], &[1, 4, 4]).unwrap());
        let beta_zero = tape.constant(vec![0.0], &[1]).unwrap();
        let fused =
            temporal_fuse_with(&mut tape, prev, cur, warp, gate_half, beta_zero).unwrap();
        assert_eq!(tape.value(fused.0).data(), cur_data.as_slice());

        let gate_zero = VisibilityGate(tape.constant(vec![0.0; 16], &[1, 4, 4]).unwrap());
        let beta_one = tape.constant(vec![1.0], &[1]).unwrap();
        let fused = temporal_fuse_with(&mut tape, prev, cur, warp, gate_zero, beta_one).unwrap();
        assert_eq!(tape.value(fused.0).data(), cur_data.as_slice());
    }

    #[test]
    fn fuse_returns_previous_under_full_gate_identity_warp() {
        let mut tape = GradTape::new();
        let mut r = rng(6);
        let prev = rand_map(&mut tape, &mut r, 3, 4, 4);
        let cur = rand_map(&mut tape, &mut r, 3, 4, 4);
        let warp = WarpField(tape.constant(vec![0.0; 2 * 16], &[2, 4, 4]).unwrap());
        let gate = VisibilityGate(tape.constant(vec![1.0; 16], &[1, 4, 4]).unwrap());
        let beta = tape.constant(vec![1.0], &[1]).unwrap();
        let fused = temporal_fuse_with(&mut tape, prev, cur, warp, gate, beta).unwrap();
        for (f, p) in tape.value(fused.0).data().iter().zip(tape.value(prev.0).data()) {
            assert!((f - p).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_window_identities() {
        let config = small_config();
        let params = FusionParams::init(&config, 3, &mut rng(7)).zeroed_head();
        let mut tape = GradTape::new();
        let bound = params.bind(&mut tape);

        // Identical frames with zero offsets: warped == cur, so fused == raw.
        let mut r = rng(8);
        let data: Vec<f64> = (0..3 * 16).map(|_| r.gen_range(-1.0..1.0)).collect();
        let frames: Vec<FeatureMap> = (0..3)
            .map(|_| FeatureMap(tape.constant(data.clone(), &[3, 4, 4]).unwrap()))
            .collect();
        let fused = fuse_window(&mut tape, &frames, &bound, false).unwrap();
        for (f, raw) in fused.iter().zip(&frames) {
            assert_eq!(tape.value(f.0).data(), tape.value(raw.0).data());
        }

        // K = 1 passes through.
        let single = [rand_map(&mut tape, &mut r, 3, 4, 4)];
        let fused = fuse_window(&mut tape, &single, &bound, false).unwrap();
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].0, single[0].0);

        // Empty window is an error.
        assert!(fuse_window(&mut tape, &[], &bound, false).is_err());
    }

    #[test]
    fn fuse_window_matches_independent_pairwise_calls() {
        let config = small_config();
        let params = FusionParams::init(&config, 3, &mut rng(9));
        let mut tape = GradTape::new();
        let bound = params.bind(&mut tape);
        let mut r = rng(10);
        let frames: Vec<FeatureMap> =
            (0..3).map(|_| rand_map(&mut tape, &mut r, 3, 4, 4)).collect();
        let fused = fuse_window(&mut tape, &frames, &bound, false).unwrap();

        let f1 = temporal_fuse(&mut tape, frames[0], frames[1], &bound).unwrap();
        let f2 = temporal_fuse(&mut tape, frames[1], frames[2], &bound).unwrap();
        assert_eq!(tape.value(fused[0].0).data(), tape.value(frames[0].0).data());
        assert_eq!(tape.value(fused[1].0).data(), tape.value(f1.0).data());
        assert_eq!(tape.value(fused[2].0).data(), tape.value(f2.0).data());
    }

    #[test]
    fn regress_without_tcn_is_the_base_path() {
        let config = small_config();
        let params = RegressorParams::init(&config, 10, 4, &mut rng(11));
        let mut r = rng(12);
        let hist: Vec<Vec<f64>> =
            (0..4).map(|_| (0..10).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();

        let mut tape = GradTape::new();
        let bound = params.bind(&mut tape);
        let ids: Vec<TensorId> =
            hist.iter().map(|z| tape.constant(z.clone(), &[10]).unwrap()).collect();
        let full = temporal_regress(&mut tape, &ids, &bound, false).unwrap();

        // Manual base path on a fresh tape.
        let mut tape2 = GradTape::new();
        let bound2 = params.bind(&mut tape2);
        let z_t = tape2.constant(hist[3].clone(), &[10]).unwrap();
        let hh = tape2.affine(bound2.h1_w, z_t, Some(bound2.h1_b)).unwrap();
        let ha = tape2.leaky_relu(hh, 0.01).unwrap();
        let base = tape2.affine(bound2.h2_w, ha, Some(bound2.h2_b)).unwrap();
        assert_eq!(tape.value(full).data(), tape2.value(base).data());
    }

    #[test]
    fn zeroed_output_layers_give_h_bias() {
        let config = small_config();
        let bias = [0.3, -0.7, 0.1, 2.0];
        let params = RegressorParams::init(&config, 10, 4, &mut rng(13)).zeroed_outputs(&bias);
        let mut tape = GradTape::new();
        let bound = params.bind(&mut tape);
        let ids: Vec<TensorId> =
            (0..4).map(|_| tape.constant(vec![0.5; 10], &[10]).unwrap()).collect();
        let out = temporal_regress(&mut tape, &ids, &bound, true).unwrap();
        assert_eq!(tape.value(out).data(), &bias);
    }

    #[test]
    fn earliest_descriptor_inside_receptive_field_matters() {
        let config = TdrConfig {
            window: 8,
            tcn_dilations: vec![1, 2, 4, 8],
            tcn_kernel: 2,
            tcn_channels: 8,
            regressor_hidden: 8,
            ..TdrConfig::default()
        };
        assert!(tcn_receptive_field(&config.tcn_dilations, config.tcn_kernel) >= config.window);
        let params = RegressorParams::init(&config, 6, 3, &mut rng(14));
        let mut r = rng(15);
        let hist: Vec<Vec<f64>> =
            (0..8).map(|_| (0..6).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();

        let run = |hist: &[Vec<f64>]| {
            let mut tape = GradTape::new();
            let bound = params.bind(&mut tape);
            let ids: Vec<TensorId> =
                hist.iter().map(|z| tape.constant(z.clone(), &[6]).unwrap()).collect();
            let out = temporal_regress(&mut tape, &ids, &bound, true).unwrap();
            tape.value(out).data().to_vec()
        };
        let base = run(&hist);
        let mut poked = hist.clone();
        for v in poked[0].iter_mut() {
            *v += 1.0;
        }
        assert_ne!(base, run(&poked), "z_{{t-K+1}} must reach the output through the TCN");
    }

    #[test]
    fn statelessness_same_window_same_output() {
        let config = small_config();
        let params = RegressorParams::init(&config, 8, 4, &mut rng(16));
        let mut r = rng(17);
        let hist: Vec<Vec<f64>> =
            (0..4).map(|_| (0..8).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let run = || {
            let mut tape = GradTape::new();
            let bound = params.bind(&mut tape);
            let ids: Vec<TensorId> =
                hist.iter().map(|z| tape.constant(z.clone(), &[8]).unwrap()).collect();
            let out = temporal_regress(&mut tape, &ids, &bound, true).unwrap();
            tape.value(out).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fusion_and_regressor_gradients_match_finite_differences() {
        let config = small_config();
        let fusion = FusionParams::init(&config, 2, &mut rng(18));
        let mut r = rng(19);
        let prev_data: Vec<f64> = (0..2 * 16).map(|_| r.gen_range(-1.0..1.0)).collect();
        let cur_data: Vec<f64> = (0..2 * 16).map(|_| r.gen_range(-1.0..1.0)).collect();

        // Probe through both warp and gate via the fused map.
        let loss_of = |p: &FusionParams| -> crate::error::Result<f64> {
            let mut tape = GradTape::new();
            let bound = p.bind(&mut tape);
            let prev = FeatureMap(tape.constant(prev_data.clone(), &[2, 4, 4])?);
            let cur = FeatureMap(tape.constant(cur_data.clone(), &[2, 4, 4])?);
            let fused = temporal_fuse(&mut tape, prev, cur, &bound)?;
            let m = tape.mean(fused.0)?;
            tape.value(m).item()
        };
        let mut tape = GradTape::new();
        let bound = fusion.bind(&mut tape);
        let prev = FeatureMap(tape.constant(prev_data.clone(), &[2, 4, 4]).unwrap());
        let cur = FeatureMap(tape.constant(cur_data.clone(), &[2, 4, 4]).unwrap());
        let fused = temporal_fuse(&mut tape, prev, cur, &bound).unwrap();
        let m = tape.mean(fused.0).unwrap();
        let grads = tape.backward(m).unwrap();

        let w0 = fusion.conv1_w.data().to_vec();
        let fd = gradcheck::fd_gradient(
            |v| {
                let mut probe = fusion.clone();
                probe.conv1_w.data_mut().copy_from_slice(v);
                loss_of(&probe)
            },
            &w0,
            FD_STEP,
        )
        .unwrap();
        let report = gradcheck::compare(&grads.of(bound.conv1_w), &fd, FD_FLOOR);
        assert!(report.passes(FD_TOL), "fusion conv1: {report:?}");

        // Regressor side: check TCN weights and rho.
        let params = RegressorParams::init(&config, 5, 3, &mut rng(20));
        let hist: Vec<Vec<f64>> =
            (0..4).map(|_| (0..5).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let reg_loss = |p: &RegressorParams| -> crate::error::Result<f64> {
            let mut tape = GradTape::new();
            let bound = p.bind(&mut tape);
            let ids: Vec<TensorId> = hist
                .iter()
                .map(|z| tape.constant(z.clone(), &[5]).unwrap())
                .collect();
            let out = temporal_regress(&mut tape, &ids, &bound, true)?;
            let m = tape.mean(out)?;
            tape.value(m).item()
        };
        let mut tape = GradTape::new();
        let bound = params.bind(&mut tape);
        let ids: Vec<TensorId> =
            hist.iter().map(|z| tape.constant(z.clone(), &[5]).unwrap()).collect();
        let out = temporal_regress(&mut tape, &ids, &bound, true).unwrap();
        let m = tape.mean(out).unwrap();
        let grads = tape.backward(m).unwrap();

        let t0 = params.tcn_w[0].data().to_vec();
        let fd = gradcheck::fd_gradient(
            |v| {
                let mut probe = params.clone();
                probe.tcn_w[0].data_mut().copy_from_slice(v);
                reg_loss(&probe)
            },
            &t0,
            FD_STEP,
        )
        .unwrap();
        let report = gradcheck::compare(&grads.of(bound.tcn_w[0]), &fd, FD_FLOOR);
        assert!(report.passes(FD_TOL), "tcn conv0: {report:?}");

        let r0 = params.rho.data().to_vec();
        let fd = gradcheck::fd_gradient(
            |v| {
                let mut probe = params.clone();
                probe.rho.data_mut().copy_from_slice(v);
                reg_loss(&probe)
            },
            &r0,
            FD_STEP,
        )
        .unwrap();
        let report = gradcheck::compare(&grads.of(bound.rho), &fd, FD_FLOOR);
        assert!(report.passes(FD_TOL), "rho: {report:?}");
    }

    #[test]
    fn beta_stays_non_negative_for_any_rho() {
        let config = small_config();
        let mut params = RegressorParams::init(&config, 4, 2, &mut rng(21));
        for rho in [-1000.0, -5.0, 0.0, 3.0, 500.0] {
            params.rho.data_mut()[0] = rho;
            assert!(params.beta() >= 0.0, "rho {rho} gave beta {}", params.beta());
        }
        // rho -> -inf limit reaches exactly zero.
        params.rho.data_mut()[0] = -1000.0;
        assert_eq!(params.beta(), 0.0);
    }
}
