//! Robot-centric masking: pixel-level background suppression, area-weighted
//! downsampling to pooling grids, and seeded mask degradation for the
//! mask-quality robustness study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Where a mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    GroundTruth,
    External,
    Degraded,
}

/// Binary per-frame manipulator mask aligned to an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobotMask {
    height: usize,
    width: usize,
    grid: Vec<u8>,
    source: MaskSource,
}

impl RobotMask {
    pub fn new(height: usize, width: usize, grid: Vec<u8>, source: MaskSource) -> Result<Self> {
        if grid.len() != height * width {
            return Err(Error::Shape(format!(
                "mask grid of {} cells for {height}x{width}",
                grid.len()
            )));
        }
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::Param("mask values must be 0 or 1".into()));
        }
        Ok(RobotMask { height, width, grid, source })
    }

    pub fn zeros(height: usize, width: usize, source: MaskSource) -> Self {
        RobotMask { height, width, grid: vec![0; height * width], source }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        RobotMask { height, width, grid: vec![1; height * width], source: MaskSource::External }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    pub fn source(&self) -> MaskSource {
        self.source
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.grid[y * self.width + x]
    }

    pub(crate) fn set(&mut self, y: usize, x: usize, v: u8) {
        self.grid[y * self.width + x] = v;
    }

    /// Fraction of on pixels.
    pub fn occupancy(&self) -> Result<f64> {
        occupancy(&self.grid)
    }
}

/// Ratio of set pixels to all pixels of a binary grid.
pub fn occupancy(grid: &[u8]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Param("occupancy: empty grid".into()));
    }
    let ones = grid.iter().filter(|&&v| v == 1).count();
    Ok(ones as f64 / grid.len() as f64)
}

/// Pixel-wise product of frame and mask; background pixels become zero.
pub fn apply_mask(frame: &Image, mask: &RobotMask) -> Result<Image> {
    if frame.height() != mask.height() || frame.width() != mask.width() {
        return Err(Error::Shape(format!(
            "apply_mask: frame {}x{} vs mask {}x{}",
            frame.height(),
            frame.width(),
            mask.height(),
            mask.width()
        )));
    }
    let (h, w) = (frame.height(), frame.width());
    let hw = h * w;
    let mut data = frame.data().to_vec();
    for p in 0..hw {
        if mask.grid[p] == 0 {
            data[p] = 0;
            data[hw + p] = 0;
            data[2 * hw + p] = 0;
        }
    }
    Image::from_data(h, w, data)
}

/// Area-weighted downsampling of a binary mask to a pooling grid: each cell
/// holds the fraction of mask-on pixels it covers, so total mask mass is
/// conserved under `cell_value * pixels_per_cell`.
pub fn downsample_mask(mask: &RobotMask, grid_h: usize, grid_w: usize) -> Result<Vec<f64>> {
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::Param("downsample_mask: zero target extents".into()));
    }
    let (h, w) = (mask.height(), mask.width());
    let mut out = vec![0.0; grid_h * grid_w];
    let cell_h = h as f64 / grid_h as f64;
    let cell_w = w as f64 / grid_w as f64;
    for gy in 0..grid_h {
        let y_lo = gy as f64 * cell_h;
        let y_hi = (gy + 1) as f64 * cell_h;
        for gx in 0..grid_w {
            let x_lo = gx as f64 * cell_w;
            let x_hi = (gx + 1) as f64 * cell_w;
            let mut on_area = 0.0;
            let py_lo = y_lo.floor() as usize;
            let py_hi = (y_hi.ceil() as usize).min(h);
            let px_lo = x_lo.floor() as usize;
            let px_hi = (x_hi.ceil() as usize).min(w);
            for py in py_lo..py_hi {
                let oy = overlap(py as f64, (py + 1) as f64, y_lo, y_hi);
                if oy == 0.0 {
                    continue;
                }
                for px in px_lo..px_hi {
                    if mask.grid[py * w + px] == 0 {
                        continue;
                    }
                    let ox = overlap(px as f64, (px + 1) as f64, x_lo, x_hi);
                    on_area += oy * ox;
                }
            }
            out[gy * grid_w + gx] = on_area / (cell_h * cell_w);
        }
    }
    Ok(out)
}

fn overlap(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

/// Seeded mask corruption standing in for segmentation failures: erosion
/// removes manipulator area, random blobs leak background in. Severity 0 is
/// the identity; the output stays strictly binary.
pub fn degrade_mask(mask: &RobotMask, severity: f64, seed: u64) -> Result<RobotMask> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::Param(format!("degrade severity {severity} outside [0,1]")));
    }
    if severity == 0.0 {
        return Ok(mask.clone());
    }
    let (h, w) = (mask.height(), mask.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = mask.clone();
    out.source = MaskSource::Degraded;

    // Erosion: applied with probability = severity, radius grows with it.
    if rng.gen_range(0.0..1.0) < severity {
        let radius = 1 + (severity * 1.5).floor() as i64;
        out = erode(&out, radius);
    }

    // Background leakage: blob count and size grow with severity.
    let n_blobs = (severity * 3.0).round() as usize;
    for _ in 0..n_blobs {
        let cy = rng.gen_range(0..h) as i64;
        let cx = rng.gen_range(0..w) as i64;
        let r = rng.gen_range(2.0..(2.5 + severity * 4.0));
        for y in (cy - r as i64 - 1).max(0)..=(cy + r as i64 + 1).min(h as i64 - 1) {
            for x in (cx - r as i64 - 1).max(0)..=(cx + r as i64 + 1).min(w as i64 - 1) {
                let d2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) as f64;
                if d2 <= r * r {
                    out.set(y as usize, x as usize, 1);
                }
            }
        }
    }
    Ok(out)
}

fn erode(mask: &RobotMask, radius: i64) -> RobotMask {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y as usize, x as usize) == 0 {
                continue;
            }
            let mut keep = true;
            'scan: for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if dy * dy + dx * dx > radius * radius {
                        continue;
                    }
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || ny >= h || nx < 0 || nx >= w {
                        keep = false;
                        break 'scan;
                    }
                    if mask.get(ny as usize, nx as usize) == 0 {
                        keep = false;
                        break 'scan;
                    }
                }
            }
            if !keep {
                out.set(y as usize, x as usize, 0);
            }
        }
    }
    out
}

/// Intersection-over-union of two binary masks.
pub fn mask_iou(a: &RobotMask, b: &RobotMask) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (va, vb) in a.grid.iter().zip(&b.grid) {
        if *va == 1 && *vb == 1 {
            inter += 1;
        }
        if *va == 1 || *vb == 1 {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(h: usize, w: usize) -> RobotMask {
        let grid: Vec<u8> =
            (0..h * w).map(|p| (((p / w) + (p % w)) % 2) as u8).collect();
        RobotMask::new(h, w, grid, MaskSource::GroundTruth).unwrap()
    }

    #[test]
    fn occupancy_trivial_cases() {
        assert_eq!(occupancy(&[0, 0, 0, 0]).unwrap(), 0.0);
        assert_eq!(occupancy(&[1, 1, 1, 1]).unwrap(), 1.0);
        assert_eq!(checker(4, 4).occupancy().unwrap(), 0.5);
        assert!(occupancy(&[]).is_err());
    }

    #[test]
    fn apply_mask_identity_zero_idempotent() {
        let mut frame = Image::new(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                frame.set(y, x, [(y * 16) as u8, (x * 16) as u8, 200]);
            }
        }
        let ones = RobotMask::ones(4, 4);
        assert_eq!(apply_mask(&frame, &ones).unwrap(), frame);

        let zeros = RobotMask::zeros(4, 4, MaskSource::GroundTruth);
        let blank = apply_mask(&frame, &zeros).unwrap();
        assert!(blank.data().iter().all(|&v| v == 0));

        let half = checker(4, 4);
        let once = apply_mask(&frame, &half).unwrap();
        let twice = apply_mask(&once, &half).unwrap();
        assert_eq!(once, twice);
        // Masked-off pixels are exactly zero.
        for y in 0..4 {
            for x in 0..4 {
                if half.get(y, x) == 0 {
                    assert_eq!(once.get(y, x), [0, 0, 0]);
                }
            }
        }
    }

    #[test]
    fn apply_mask_rejects_extent_mismatch() {
        let frame = Image::new(4, 4);
        let mask = RobotMask::ones(4, 5);
        assert!(matches!(apply_mask(&frame, &mask), Err(Error::Shape(_))));
    }

    #[test]
    fn downsample_all_ones_gives_all_ones() {
        let mask = RobotMask::ones(16, 16);
        let grid = downsample_mask(&mask, 4, 4).unwrap();
        for v in grid {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_left_half_mask() {
        let mut mask = RobotMask::zeros(8, 8, MaskSource::GroundTruth);
        for y in 0..8 {
            for x in 0..4 {
                mask.set(y, x, 1);
            }
        }
        let grid = downsample_mask(&mask, 2, 2).unwrap();
        assert_eq!(grid, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn downsample_matches_pixel_count_oracle() {
        use rand::{Rng, SeedableRng};
        let mut r = ChaCha8Rng::seed_from_u64(21);
        let (h, w) = (24, 24);
        let grid: Vec<u8> = (0..h * w).map(|_| r.gen_range(0..2u8)).collect();
        let mask = RobotMask::new(h, w, grid, MaskSource::GroundTruth).unwrap();
        let (gh, gw) = (6, 6);
        let down = downsample_mask(&mask, gh, gw).unwrap();
        // Divisible extents: each cell is a plain block mean.
        let (bh, bw) = (h / gh, w / gw);
        for gy in 0..gh {
            for gx in 0..gw {
                let mut count = 0;
                for y in gy * bh..(gy + 1) * bh {
                    for x in gx * bw..(gx + 1) * bw {
                        count += mask.get(y, x) as usize;
                    }
                }
                let expect = count as f64 / (bh * bw) as f64;
                assert!((down[gy * gw + gx] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_conserves_mask_mass() {
        use rand::{Rng, SeedableRng};
        let mut r = ChaCha8Rng::seed_from_u64(22);
        // Non-divisible extents exercise the fractional-overlap path.
        for (h, w, gh, gw) in [(20, 20, 4, 4), (17, 13, 5, 3), (9, 9, 2, 2)] {
            let grid: Vec<u8> = (0..h * w).map(|_| r.gen_range(0..2u8)).collect();
            let mask = RobotMask::new(h, w, grid, MaskSource::GroundTruth).unwrap();
            let down = downsample_mask(&mask, gh, gw).unwrap();
            let pixels_per_cell = (h * w) as f64 / (gh * gw) as f64;
            let total: f64 = down.iter().map(|v| v * pixels_per_cell).sum();
            let expect = mask.grid().iter().filter(|&&v| v == 1).count() as f64;
            assert!((total - expect).abs() < 1e-6, "{h}x{w} -> {gh}x{gw}: {total} vs {expect}");
        }
    }

    #[test]
    fn downsample_rejects_zero_extents() {
        let mask = RobotMask::ones(8, 8);
        assert!(matches!(downsample_mask(&mask, 0, 2), Err(Error::Param(_))));
    }

    #[test]
    fn degrade_severity_zero_is_identity() {
        let mask = checker(16, 16);
        let out = degrade_mask(&mask, 0.0, 7).unwrap();
        assert_eq!(out.grid(), mask.grid());
    }

    #[test]
    fn degrade_is_seed_deterministic_and_binary() {
        let mask = checker(32, 32);
        let a = degrade_mask(&mask, 0.6, 11).unwrap();
        let b = degrade_mask(&mask, 0.6, 11).unwrap();
        assert_eq!(a.grid(), b.grid());
        assert!(a.grid().iter().all(|&v| v <= 1));
        assert_eq!(a.source(), MaskSource::Degraded);
        let c = degrade_mask(&mask, 0.6, 12).unwrap();
        assert_ne!(a.grid(), c.grid());
    }

    #[test]
    fn degrade_severity_rejects_out_of_range() {
        let mask = checker(8, 8);
        assert!(degrade_mask(&mask, 1.5, 0).is_err());
        assert!(degrade_mask(&mask, -0.1, 0).is_err());
    }

    #[test]
    fn degrade_at_full_severity_blows_past_iou_budget() {
        use crate::synth::{generate_episode, TruncationRegime, WorldConfig};
        let world = WorldConfig::default();
        let rec = generate_episode(&world, TruncationRegime::Light, "iou", 17).unwrap();
        for (t, mask) in rec.masks.iter().enumerate().take(6) {
            let degraded = degrade_mask(mask, 1.0, 100 + t as u64).unwrap();
            let iou = mask_iou(mask, &degraded);
            assert!(iou < 0.6, "frame {t}: IoU {iou} not degraded enough");
        }
    }

    #[test]
    fn moderate_severity_damages_less_than_full() {
        use crate::synth::{generate_episode, TruncationRegime, WorldConfig};
        let world = WorldConfig::default();
        let rec = generate_episode(&world, TruncationRegime::Light, "iou2", 18).unwrap();
        let mask = &rec.masks[0];
        let mut mild = 0.0;
        let mut harsh = 0.0;
        for seed in 0..8u64 {
            mild += mask_iou(mask, &degrade_mask(mask, 0.5, seed).unwrap());
            harsh += mask_iou(mask, &degrade_mask(mask, 1.0, seed).unwrap());
        }
        assert!(mild > harsh, "severity should order mean IoU: {mild} vs {harsh}");
    }
}
