//! Trainable patch encoder: masked frame in, feature grid plus global
//! context vector out. Stands in for a large pretrained backbone while
//! keeping the same grid-and-context interface.
//!
//! Also home of the `.fmap` tensor container used for frames, masks,
//! actions, features, and model payloads.

pub mod fmap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::param::{Param, ParamSet};
use crate::tensor::{GradTape, TensorId};
use rand_chacha::ChaCha8Rng;

/// Patch-grid feature map handle on a tape, shaped [C, H, W].
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap(pub TensorId);

/// Global context vector handle on a tape, shaped [C_g].
#[derive(Debug, Clone, Copy)]
pub struct GlobalContext(pub TensorId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Input resolution (square frames).
    pub resolution: usize,
    /// Patch size; the feature grid is resolution/patch on a side.
    pub patch: usize,
    /// Feature channels C.
    pub channels: usize,
    /// Context vector length C_g.
    pub context_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { resolution: 64, patch: 8, channels: 32, context_dim: 32 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.patch == 0 || self.channels == 0 || self.context_dim == 0 {
            return Err(Error::Config("encoder extents must be positive".into()));
        }
        if self.resolution % self.patch != 0 {
            return Err(Error::Config(format!(
                "resolution {} not divisible by patch {}",
                self.resolution, self.patch
            )));
        }
        self.stage_strides()?;
        Ok(())
    }

    /// Feature grid side length H = W = resolution / patch.
    pub fn grid(&self) -> usize {
        self.resolution / self.patch
    }

    /// Three stride-matched stages whose product equals the patch size.
    pub fn stage_strides(&self) -> Result<[usize; 3]> {
        match self.patch {
            1 => Ok([1, 1, 1]),
            2 => Ok([2, 1, 1]),
            4 => Ok([2, 2, 1]),
            8 => Ok([2, 2, 2]),
            p => Err(Error::Config(format!(
                "patch size {p} not supported; use 1, 2, 4 or 8"
            ))),
        }
    }

    fn stage_channels(&self) -> [usize; 3] {
        [(self.channels / 2).max(6), (self.channels * 3 / 4).max(8), self.channels]
    }
}

/// Learnable encoder state: three conv stages plus the context head
/// (learned pooling affine and a learned offset token standing in for the
/// backbone's summary tokens).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    conv_w: Vec<Param>,
    conv_b: Vec<Param>,
    ctx_w: Param,
    ctx_b: Param,
    ctx_token: Param,
}

impl EncoderParams {
    pub fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let chans = config.stage_channels();
        let strides = config.stage_strides()?;
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        let mut prev = 3;
        for (&c, &s) in chans.iter().zip(&strides) {
            // Kernel extent equals the stride: stages tile the frame without
            // overlap or padding, so a cell sees exactly its own patch and a
            // constant input stays constant through every stage.
            conv_w.push(Param::uniform(rng, &[c, prev, s, s], prev * s * s));
            conv_b.push(Param::zeros(&[c]));
            prev = c;
        }
        Ok(EncoderParams {
            conv_w,
            conv_b,
            ctx_w: Param::uniform(rng, &[config.context_dim, config.channels], config.channels),
            ctx_b: Param::zeros(&[config.context_dim]),
            ctx_token: Param::zeros(&[config.context_dim]),
        })
    }
}

impl ParamSet for EncoderParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, (w, b)) in self.conv_w.iter().zip(&self.conv_b).enumerate() {
            f(&format!("encoder.conv{i}.weight"), w);
            f(&format!("encoder.conv{i}.bias"), b);
        }
        f("encoder.ctx.weight", &self.ctx_w);
        f("encoder.ctx.bias", &self.ctx_b);
        f("encoder.ctx.token", &self.ctx_token);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, (w, b)) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()).enumerate() {
            f(&format!("encoder.conv{i}.weight"), w);
            f(&format!("encoder.conv{i}.bias"), b);
        }
        f("encoder.ctx.weight", &mut self.ctx_w);
        f("encoder.ctx.bias", &mut self.ctx_b);
        f("encoder.ctx.token", &mut self.ctx_token);
    }
}

/// Encoder parameters registered on a tape for one forward pass.
pub struct BoundEncoder {
    config: EncoderConfig,
    conv_w: Vec<TensorId>,
    conv_b: Vec<TensorId>,
    ctx_w: TensorId,
    ctx_b: TensorId,
    ctx_token: TensorId,
    strides: [usize; 3],
}

impl EncoderParams {
    pub fn bind(&self, config: &EncoderConfig, tape: &mut GradTape) -> Result<BoundEncoder> {
        Ok(BoundEncoder {
            config: config.clone(),
            conv_w: self.conv_w.iter().map(|p| p.bind(tape)).collect(),
            conv_b: self.conv_b.iter().map(|p| p.bind(tape)).collect(),
            ctx_w: self.ctx_w.bind(tape),
            ctx_b: self.ctx_b.bind(tape),
            ctx_token: self.ctx_token.bind(tape),
            strides: config.stage_strides()?,
        })
    }
}

/// Register an RGB frame as constant tape input, scaled to [0,1],
/// shaped [3, H, W].
pub fn bind_frame(tape: &mut GradTape, frame: &Image) -> Result<TensorId> {
    tape.constant(frame.to_f64(), &[3, frame.height(), frame.width()])
}

impl BoundEncoder {
    /// Leaf ids in `EncoderParams::visit` order.
    pub(crate) fn leaf_ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::new();
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            ids.push(*w);
            ids.push(*b);
        }
        ids.push(self.ctx_w);
        ids.push(self.ctx_b);
        ids.push(self.ctx_token);
        ids
    }

    /// Masked frame [3, res, res] -> (feature grid [C, H, W], context [C_g]).
    pub fn encode(&self, tape: &mut GradTape, frame: TensorId) -> Result<(FeatureMap, GlobalContext)> {
        let fs = tape.value(frame).shape().to_vec();
        let res = self.config.resolution;
        if fs != [3, res, res] {
            return Err(Error::Shape(format!(
                "encode: frame shape {fs:?}, config expects [3, {res}, {res}]"
            )));
        }
        let mut x = tape.reshape(frame, &[1, 3, res, res])?;
        for i in 0..3 {
            let conv = tape.conv2d(x, self.conv_w[i], Some(self.conv_b[i]), self.strides[i], 0)?;
            x = tape.leaky_relu(conv, 0.01)?;
        }
        let g = self.config.grid();
        let grid = tape.reshape(x, &[self.config.channels, g, g])?;

        let (pooled, _) = tape.masked_pool(grid, &vec![1.0; g * g])?;
        let projected = tape.affine(self.ctx_w, pooled, Some(self.ctx_b))?;
        let ctx = tape.add(projected, self.ctx_token)?;
        Ok((FeatureMap(grid), GlobalContext(ctx)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{self, FD_FLOOR, FD_STEP, FD_TOL};
    use rand::SeedableRng;

    fn desk_config() -> EncoderConfig {
        EncoderConfig { resolution: 64, patch: 8, channels: 16, context_dim: 8 }
    }

    fn encode_once(
        config: &EncoderConfig,
        params: &EncoderParams,
        frame: &Image,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut tape = GradTape::new();
        let bound = params.bind(config, &mut tape).unwrap();
        let f = bind_frame(&mut tape, frame).unwrap();
        let (grid, ctx) = bound.encode(&mut tape, f).unwrap();
        (tape.value(grid.0).data().to_vec(), tape.value(ctx.0).data().to_vec())
    }

    #[test]
    fn grid_extents_follow_config() {
        let config = EncoderConfig { resolution: 64, patch: 8, channels: 16, context_dim: 8 };
        assert_eq!(config.grid(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = EncoderParams::init(&config, &mut rng).unwrap();
        let frame = Image::new(64, 64);
        let mut tape = GradTape::new();
        let bound = params.bind(&config, &mut tape).unwrap();
        let f = bind_frame(&mut tape, &frame).unwrap();
        let (grid, ctx) = bound.encode(&mut tape, f).unwrap();
        assert_eq!(tape.value(grid.0).shape(), &[16, 8, 8]);
        assert_eq!(tape.value(ctx.0).shape(), &[8]);
    }

    #[test]
    fn zero_frame_gives_spatially_constant_bias_response() {
        let config = desk_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = EncoderParams::init(&config, &mut rng).unwrap();
        // Give biases nonzero values so the constant response is visible.
        for (i, b) in params.conv_b.iter_mut().enumerate() {
            for v in b.data_mut() {
                *v = 0.1 * (i as f64 + 1.0);
            }
        }
        let (grid, _) = encode_once(&config, &params, &Image::new(64, 64));
        let g = config.grid();
        for c in 0..config.channels {
            let plane = &grid[c * g * g..(c + 1) * g * g];
            for v in plane {
                assert!((v - plane[0]).abs() < 1e-12, "channel {c} not constant");
            }
        }
    }

    #[test]
    fn single_patch_change_stays_in_receptive_field() {
        let config = desk_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = EncoderParams::init(&config, &mut rng).unwrap();

        let mut base = Image::new(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                base.set(y, x, [((y * 3) % 256) as u8, ((x * 5) % 256) as u8, 77]);
            }
        }
        let mut poked = base.clone();
        let (py, px) = (3usize, 4usize); // patch coordinates
        for y in py * 8..(py + 1) * 8 {
            for x in px * 8..(px + 1) * 8 {
                poked.set(y, x, [255, 0, 255]);
            }
        }
        let (ga, _) = encode_once(&config, &params, &base);
        let (gb, _) = encode_once(&config, &params, &poked);

        // Independent receptive-field computation for the tiling stack
        // (kernel extent == stride, no padding): rf = 1 + sum (k-1)*jump.
        let mut rf = 1usize;
        let mut jump = 1usize;
        for s in config.stage_strides().unwrap() {
            rf += (s - 1) * jump;
            jump *= s;
        }
        assert_eq!(rf, config.patch, "stages must tile exactly one patch");
        let margin_cells = (rf - 1) / config.patch; // 0: cells never cross patches

        let g = config.grid();
        for c in 0..config.channels {
            for y in 0..g {
                for x in 0..g {
                    let idx = c * g * g + y * g + x;
                    let within = y.abs_diff(py) <= margin_cells && x.abs_diff(px) <= margin_cells;
                    if !within {
                        assert_eq!(ga[idx], gb[idx], "leak outside receptive field at ({y},{x})");
                    }
                }
            }
        }
        assert_ne!(ga, gb);
    }

    #[test]
    fn encode_rejects_resolution_mismatch() {
        let config = desk_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = EncoderParams::init(&config, &mut rng).unwrap();
        let mut tape = GradTape::new();
        let bound = params.bind(&config, &mut tape).unwrap();
        let f = bind_frame(&mut tape, &Image::new(32, 32)).unwrap();
        assert!(matches!(bound.encode(&mut tape, f), Err(Error::Shape(_))));
    }

    #[test]
    fn encoder_param_gradients_match_finite_differences() {
        let config = EncoderConfig { resolution: 16, patch: 4, channels: 8, context_dim: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = EncoderParams::init(&config, &mut rng).unwrap();
        let mut frame = Image::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                frame.set(y, x, [(y * 16) as u8, (x * 16) as u8, ((x + y) * 8) as u8]);
            }
        }

        // Probe loss: mean of grid plus mean of context.
        let loss_of = |p: &EncoderParams| -> crate::error::Result<f64> {
            let mut tape = GradTape::new();
            let bound = p.bind(&config, &mut tape)?;
            let f = bind_frame(&mut tape, &frame)?;
            let (grid, ctx) = bound.encode(&mut tape, f)?;
            let mg = tape.mean(grid.0)?;
            let mc = tape.mean(ctx.0)?;
            let loss = tape.add(mg, mc)?;
            tape.value(loss).item()
        };

        // Analytic gradients for the first conv weight and the ctx weight.
        let mut tape = GradTape::new();
        let bound = params.bind(&config, &mut tape).unwrap();
        let f = bind_frame(&mut tape, &frame).unwrap();
        let (grid, ctx) = bound.encode(&mut tape, f).unwrap();
        let mg = tape.mean(grid.0).unwrap();
        let mc = tape.mean(ctx.0).unwrap();
        let loss = tape.add(mg, mc).unwrap();
        let grads = tape.backward(loss).unwrap();

        for (pick, analytic) in
            [(0usize, grads.of(bound.conv_w[0])), (1, grads.of(bound.ctx_w))]
        {
            let x0: Vec<f64> = if pick == 0 {
                params.conv_w[0].data().to_vec()
            } else {
                params.ctx_w.data().to_vec()
            };
            let fd = gradcheck::fd_gradient(
                |v| {
                    let mut probe = params.clone();
                    if pick == 0 {
                        probe.conv_w[0].data_mut().copy_from_slice(v);
                    } else {
                        probe.ctx_w.data_mut().copy_from_slice(v);
                    }
                    loss_of(&probe)
                },
                &x0,
                FD_STEP,
            )
            .unwrap();
            let report = gradcheck::compare(&analytic, &fd, FD_FLOOR);
            assert!(report.passes(FD_TOL), "param set {pick}: {report:?}");
        }
    }
}
