//! Directional Feature Aggregation.
//!
//! Oriented line extractors sample the feature map along A canonical angles,
//! project each direction to its own channel block, pool under the robot
//! mask, and reweight the blocks with softmax weights derived from the
//! encoder's global context. The concatenated blocks form the per-frame
//! descriptor consumed by the temporal regressor.

use serde::{Deserialize, Serialize};

use crate::encoder::{FeatureMap, GlobalContext};
use crate::error::{Error, Result};
use crate::param::{Param, ParamSet};
use crate::tensor::{GradTape, TensorId};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfaConfig {
    /// Number of analysis directions A.
    pub directions: usize,
    /// Channels per direction D_dir.
    pub dir_channels: usize,
    /// Taps along each oriented line (odd).
    pub tap_len: usize,
    /// Softmax temperature for the context weights.
    pub temperature: f64,
}

impl Default for DfaConfig {
    fn default() -> Self {
        DfaConfig { directions: 4, dir_channels: 32, tap_len: 5, temperature: 1.0 }
    }
}

impl DfaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.directions == 0 {
            return Err(Error::Config("directions must be positive".into()));
        }
        if self.dir_channels == 0 {
            return Err(Error::Config("dir_channels must be positive".into()));
        }
        if self.tap_len == 0 || self.tap_len % 2 == 0 {
            return Err(Error::Config(format!("tap_len must be odd, got {}", self.tap_len)));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Canonical angles spanning [0, pi), evenly spaced.
    pub fn angles(&self) -> Vec<f64> {
        (0..self.directions)
            .map(|k| k as f64 * std::f64::consts::PI / self.directions as f64)
            .collect()
    }

    /// Descriptor length A * D_dir.
    pub fn descriptor_len(&self) -> usize {
        self.directions * self.dir_channels
    }
}

/// Per-direction extractors: line taps plus a channel projection each.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBank {
    pub angles: Vec<f64>,
    taps: Vec<Param>,
    proj_w: Vec<Param>,
    proj_b: Vec<Param>,
}

impl DirectionBank {
    pub fn init(config: &DfaConfig, feature_channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let angles = config.angles();
        let mut taps = Vec::new();
        let mut proj_w = Vec::new();
        let mut proj_b = Vec::new();
        for _ in 0..config.directions {
            taps.push(Param::uniform(rng, &[config.tap_len], config.tap_len));
            proj_w.push(Param::uniform(rng, &[config.dir_channels, feature_channels], feature_channels));
            proj_b.push(Param::zeros(&[config.dir_channels]));
        }
        Ok(DirectionBank { angles, taps, proj_w, proj_b })
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::Config("direction bank has no angles".into()));
        }
        for (i, a) in self.angles.iter().enumerate() {
            if !(0.0..std::f64::consts::PI).contains(a) {
                return Err(Error::Config(format!("angle {i} = {a} outside [0, pi)")));
            }
            for b in &self.angles[i + 1..] {
                if (a - b).abs() < 1e-12 {
                    return Err(Error::Config(format!("duplicate direction angle {a}")));
                }
            }
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        self.angles.len()
    }

    /// Swap two directions wholesale (angle, taps, projection).
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.angles.len() {
            return Err(Error::Param("permutation length mismatch".into()));
        }
        Ok(DirectionBank {
            angles: order.iter().map(|&i| self.angles[i]).collect(),
            taps: order.iter().map(|&i| self.taps[i].clone()).collect(),
            proj_w: order.iter().map(|&i| self.proj_w[i].clone()).collect(),
            proj_b: order.iter().map(|&i| self.proj_b[i].clone()).collect(),
        })
    }

    #[cfg(test)]
    pub(crate) fn set_direction(&mut self, k: usize, taps: &[f64], w: &[f64], b: &[f64]) {
        self.taps[k] = Param::from_parts(taps.to_vec(), vec![taps.len()]);
        let dd = self.proj_b[k].len();
        let c = w.len() / dd;
        self.proj_w[k] = Param::from_parts(w.to_vec(), vec![dd, c]);
        self.proj_b[k] = Param::from_parts(b.to_vec(), vec![dd]);
    }
}

impl ParamSet for DirectionBank {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        for k in 0..self.taps.len() {
            f(&format!("dfa.dir{k}.taps"), &self.taps[k]);
            f(&format!("dfa.dir{k}.proj_w"), &self.proj_w[k]);
            f(&format!("dfa.dir{k}.proj_b"), &self.proj_b[k]);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for k in 0..self.taps.len() {
            f(&format!("dfa.dir{k}.taps"), &mut self.taps[k]);
            f(&format!("dfa.dir{k}.proj_w"), &mut self.proj_w[k]);
            f(&format!("dfa.dir{k}.proj_b"), &mut self.proj_b[k]);
        }
    }
}

/// Context-to-direction projection U with its softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextProjection {
    u: Param,
    pub temperature: f64,
}

impl ContextProjection {
    pub fn init(config: &DfaConfig, context_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ContextProjection {
            u: Param::uniform(rng, &[config.directions, context_dim], context_dim),
            temperature: config.temperature,
        }
    }

    pub fn from_matrix(u: Param, temperature: f64) -> Self {
        ContextProjection { u, temperature }
    }

    /// Reorder rows of U to match a permuted direction bank.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let shape = self.u.shape().to_vec();
        let (a, cg) = (shape[0], shape[1]);
        if order.len() != a {
            return Err(Error::Param("permutation length mismatch".into()));
        }
        let mut data = Vec::with_capacity(a * cg);
        for &i in order {
            data.extend_from_slice(&self.u.data()[i * cg..(i + 1) * cg]);
        }
        Ok(ContextProjection { u: Param::from_parts(data, shape), temperature: self.temperature })
    }
}

impl ParamSet for ContextProjection {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("dfa.context.u", &self.u);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("dfa.context.u", &mut self.u);
    }
}

/// Bank and projection registered on a tape for one forward pass.
pub struct BoundDfa {
    pub angles: Vec<f64>,
    pub taps: Vec<TensorId>,
    pub proj_w: Vec<TensorId>,
    pub proj_b: Vec<TensorId>,
    pub u: TensorId,
    pub temperature: f64,
    tap_len: usize,
}

impl BoundDfa {
    /// Leaf ids in bank-then-projection visit order.
    pub(crate) fn leaf_ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::new();
        for k in 0..self.taps.len() {
            ids.push(self.taps[k]);
            ids.push(self.proj_w[k]);
            ids.push(self.proj_b[k]);
        }
        ids.push(self.u);
        ids
    }
}

impl DirectionBank {
    pub fn bind(&self, proj: &ContextProjection, tape: &mut GradTape) -> Result<BoundDfa> {
        self.validate()?;
        Ok(BoundDfa {
            angles: self.angles.clone(),
            taps: self.taps.iter().map(|p| p.bind(tape)).collect(),
            proj_w: self.proj_w.iter().map(|p| p.bind(tape)).collect(),
            proj_b: self.proj_b.iter().map(|p| p.bind(tape)).collect(),
            u: proj.u.bind(tape),
            temperature: proj.temperature,
            tap_len: self.taps[0].len(),
        })
    }
}

fn shifted_grid(h: usize, w: usize, dx: f64, dy: f64) -> Vec<f64> {
    let mut coords = vec![0.0; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            coords[y * w + x] = x as f64 + dx;
            coords[h * w + y * w + x] = y as f64 + dy;
        }
    }
    coords
}

/// Oriented line extraction for every direction: bilinear taps along the
/// angle, learned tap weights, per-direction channel projection, leaky
/// rectification. Returns A maps of [D_dir, H, W].
pub fn directional_extract(
    tape: &mut GradTape,
    feature: FeatureMap,
    bank: &BoundDfa,
) -> Result<Vec<FeatureMap>> {
    if bank.angles.is_empty() {
        return Err(Error::Config("direction bank has no angles".into()));
    }
    let shape = tape.value(feature.0).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("directional_extract: feature map {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let half = (bank.tap_len as isize - 1) / 2;
    let mut out = Vec::with_capacity(bank.angles.len());
    for (k, &theta) in bank.angles.iter().enumerate() {
        let (ux, uy) = (theta.cos(), theta.sin());
        let mut sampled = Vec::with_capacity(bank.tap_len);
        for j in -half..=half {
            let coords = shifted_grid(h, w, j as f64 * ux, j as f64 * uy);
            let cid = tape.constant(coords, &[2, h, w])?;
            sampled.push(tape.bilinear_sample(feature.0, cid)?);
        }
        let line = tape.lincomb(&sampled, bank.taps[k])?;
        // 1x1 projection to D_dir channels.
        let line4 = tape.reshape(line, &[1, c, h, w])?;
        let dd = tape.value(bank.proj_w[k]).shape()[0];
        let kernel = tape.reshape(bank.proj_w[k], &[dd, c, 1, 1])?;
        let proj = tape.conv2d(line4, kernel, Some(bank.proj_b[k]), 1, 0)?;
        let proj3 = tape.reshape(proj, &[dd, h, w])?;
        let act = tape.leaky_relu(proj3, 0.01)?;
        out.push(FeatureMap(act));
    }
    Ok(out)
}

/// Mask-weighted average pool of one direction map to a channel vector.
/// Returns the `mask_empty` fallback flag alongside the pooled vector.
pub fn masked_pool(
    tape: &mut GradTape,
    map: FeatureMap,
    mask_grid: &[f64],
) -> Result<(TensorId, bool)> {
    tape.masked_pool(map.0, mask_grid)
}

/// Softmax directional confidences from the global context: softmax(U g / tau).
pub fn context_weights(tape: &mut GradTape, g: GlobalContext, bank: &BoundDfa) -> Result<TensorId> {
    let logits = tape.affine(bank.u, g.0, None)?;
    tape.softmax(logits, bank.temperature)
}

/// Full descriptor: per-direction masked pooling, context reweighting, and
/// concatenation in angle order. Also reports the empty-mask fallback flag.
pub fn dfa_descriptor(
    tape: &mut GradTape,
    feature: FeatureMap,
    mask_grid: &[f64],
    g: GlobalContext,
    bank: &BoundDfa,
) -> Result<(TensorId, bool)> {
    let maps = directional_extract(tape, feature, bank)?;
    let weights = context_weights(tape, g, bank)?;
    let mut blocks = Vec::with_capacity(maps.len());
    let mut any_empty = false;
    for (k, map) in maps.into_iter().enumerate() {
        let (pooled, empty) = masked_pool(tape, map, mask_grid)?;
        any_empty |= empty;
        let wk = tape.slice(weights, k, 1)?;
        blocks.push(tape.mul_scalar(pooled, wk)?);
    }
    let z = tape.concat(&blocks)?;
    Ok((z, any_empty))
}
