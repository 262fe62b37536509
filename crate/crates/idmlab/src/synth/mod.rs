//! Deterministic synthetic 2-D articulated-arm world.
//!
//! Episodes are rendered from planar forward kinematics: capsule links with
//! jaw-style grippers over seeded rectangle clutter, imaged through a crop
//! camera that steers how much of the manipulator stays in view. Every frame
//! carries a ground-truth robot mask and the joint-space action that produced
//! it.

mod archive;
mod episode;
mod render;

pub use archive::{episode_dir, load_episode, save_episode};
pub use episode::{
    generate_episode, EpisodeRecord, TruncationRegime, TruncationSplit, OCCUPANCY_THRESHOLD,
};
pub use render::{render_frame, ArmState, Clutter};

use serde::{Deserialize, Serialize};

use crate::action::DimKind;
use crate::error::{Error, Result};

/// Planar point in canvas pixel coordinates (x right, y down).
pub type Point = (f64, f64);

/// Arm layout shared by every episode of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub num_arms: usize,
    pub joints_per_arm: usize,
    /// Link lengths in pixels, one per joint (same chain for each arm).
    pub link_lengths: Vec<f64>,
    pub link_thickness: f64,
    pub gripper_dims_per_arm: usize,
    /// Jaw length in pixels; opening is the action value.
    pub gripper_jaw_len: f64,
    pub gripper_max_opening: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        ArmConfig {
            num_arms: 2,
            joints_per_arm: 3,
            link_lengths: vec![22.0, 20.0, 18.0],
            link_thickness: 8.0,
            gripper_dims_per_arm: 1,
            gripper_jaw_len: 13.0,
            gripper_max_opening: 2.6,
        }
    }
}

impl ArmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.num_arms) {
            return Err(Error::Config(format!("num_arms must be 1 or 2, got {}", self.num_arms)));
        }
        if self.joints_per_arm == 0 {
            return Err(Error::Config("joints_per_arm must be positive".into()));
        }
        if self.link_lengths.len() != self.joints_per_arm {
            return Err(Error::Config(format!(
                "{} link lengths for {} joints",
                self.link_lengths.len(),
                self.joints_per_arm
            )));
        }
        if self.link_lengths.iter().any(|&l| l <= 0.0) || self.link_thickness <= 0.0 {
            return Err(Error::Config("link geometry must be positive".into()));
        }
        Ok(())
    }

    /// D = num_arms * joints_per_arm + num_arms * gripper_dims_per_arm.
    pub fn action_dim(&self) -> usize {
        self.num_arms * self.joints_per_arm + self.num_arms * self.gripper_dims_per_arm
    }

    /// Joint dims first (arm by arm), gripper dims after.
    pub fn dim_kinds(&self) -> Vec<DimKind> {
        let mut kinds = vec![DimKind::Rotation; self.num_arms * self.joints_per_arm];
        kinds.extend(vec![DimKind::Gripper; self.num_arms * self.gripper_dims_per_arm]);
        kinds
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }
}

/// Crop window from the canvas plus the output resolution it is sampled to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraCrop {
    /// Top-left corner (y, x) in canvas pixels.
    pub origin: (usize, usize),
    /// Window height and width in canvas pixels.
    pub extent: (usize, usize),
    /// Output image height and width.
    pub resolution: (usize, usize),
}

impl CameraCrop {
    pub fn validate(&self, canvas: usize) -> Result<()> {
        if self.extent.0 == 0 || self.extent.1 == 0 || self.resolution.0 == 0 || self.resolution.1 == 0
        {
            return Err(Error::Param("camera crop has zero extent".into()));
        }
        if self.origin.0 + self.extent.0 > canvas || self.origin.1 + self.extent.1 > canvas {
            return Err(Error::Param(format!(
                "crop {:?}+{:?} leaves the {canvas}x{canvas} canvas",
                self.origin, self.extent
            )));
        }
        Ok(())
    }

    /// Canvas-space center of output pixel (oy, ox).
    pub(crate) fn pixel_center(&self, oy: usize, ox: usize) -> Point {
        let sy = self.extent.0 as f64 / self.resolution.0 as f64;
        let sx = self.extent.1 as f64 / self.resolution.1 as f64;
        (self.origin.1 as f64 + (ox as f64 + 0.5) * sx, self.origin.0 as f64 + (oy as f64 + 0.5) * sy)
    }
}

/// World-level generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub canvas: usize,
    pub crop: usize,
    /// Output frame resolution (square).
    pub resolution: usize,
    pub arm: ArmConfig,
    pub episode_len: usize,
    pub max_step_rotation: f64,
    pub max_step_gripper: f64,
    pub clutter_min: usize,
    pub clutter_max: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            canvas: 128,
            crop: 64,
            resolution: 64,
            arm: ArmConfig::default(),
            episode_len: 24,
            max_step_rotation: 0.08,
            max_step_gripper: 0.12,
            clutter_min: 3,
            clutter_max: 8,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.arm.validate()?;
        if self.crop == 0 || self.crop > self.canvas {
            return Err(Error::Config(format!(
                "crop {} must fit the canvas {}",
                self.crop, self.canvas
            )));
        }
        if self.resolution == 0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if self.episode_len < 2 {
            return Err(Error::Config("episode_len must be at least 2".into()));
        }
        if self.clutter_min > self.clutter_max {
            return Err(Error::Config("clutter_min exceeds clutter_max".into()));
        }
        Ok(())
    }

    /// Arm base positions on the canvas.
    pub fn arm_bases(&self) -> Vec<Point> {
        let c = self.canvas as f64;
        match self.arm.num_arms {
            1 => vec![(0.5 * c, 0.72 * c)],
            _ => vec![(0.34 * c, 0.72 * c), (0.66 * c, 0.72 * c)],
        }
    }
}

/// Chain of joint positions from planar forward kinematics. Returns one more
/// point than there are links (the base comes first).
pub fn forward_kinematics(
    joint_angles: &[f64],
    link_lengths: &[f64],
    base: Point,
) -> Result<Vec<Point>> {
    if joint_angles.len() != link_lengths.len() {
        return Err(Error::Param(format!(
            "{} joint angles for {} links",
            joint_angles.len(),
            link_lengths.len()
        )));
    }
    let mut points = Vec::with_capacity(link_lengths.len() + 1);
    points.push(base);
    let mut heading = 0.0;
    let (mut x, mut y) = base;
    for (theta, len) in joint_angles.iter().zip(link_lengths) {
        heading += theta;
        x += len * heading.cos();
        y += len * heading.sin();
        points.push((x, y));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fk_colinear_chain() {
        let pts = forward_kinematics(&[0.0, 0.0, 0.0], &[10.0, 10.0, 10.0], (0.0, 0.0)).unwrap();
        assert_eq!(pts.len(), 4);
        for (i, (x, y)) in pts.iter().enumerate() {
            assert!((x - 10.0 * i as f64).abs() < 1e-12);
            assert!(y.abs() < 1e-12);
        }
    }

    #[test]
    fn fk_quarter_turn() {
        let pts = forward_kinematics(
            &[std::f64::consts::FRAC_PI_2, 0.0],
            &[5.0, 5.0],
            (0.0, 0.0),
        )
        .unwrap();
        let expect = [(0.0, 0.0), (0.0, 5.0), (0.0, 10.0)];
        for (p, e) in pts.iter().zip(expect) {
            assert!((p.0 - e.0).abs() < 1e-12 && (p.1 - e.1).abs() < 1e-12);
        }
    }

    #[test]
    fn fk_matches_cumulative_rotation_oracle() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let n = r.gen_range(1..6);
            let angles: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
            let lens: Vec<f64> = (0..n).map(|_| r.gen_range(1.0..20.0)).collect();
            let base = (r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0));
            let pts = forward_kinematics(&angles, &lens, base).unwrap();

            // Independent route: explicit prefix sums of angles.
            let mut ex = base.0;
            let mut ey = base.1;
            for k in 0..n {
                let heading: f64 = angles[..=k].iter().sum();
                ex += lens[k] * heading.cos();
                ey += lens[k] * heading.sin();
            }
            let end = pts.last().unwrap();
            assert!((end.0 - ex).abs() < 1e-12 && (end.1 - ey).abs() < 1e-12);
        }
    }

    #[test]
    fn fk_rejects_mismatched_lengths() {
        assert!(forward_kinematics(&[0.0], &[1.0, 2.0], (0.0, 0.0)).is_err());
    }

    #[test]
    fn action_dim_formula() {
        let arm = ArmConfig::default();
        assert_eq!(arm.action_dim(), 8);
        let kinds = arm.dim_kinds();
        assert_eq!(kinds.len(), 8);
        assert_eq!(kinds.iter().filter(|k| matches!(k, DimKind::Rotation)).count(), 6);
        assert_eq!(kinds.iter().filter(|k| matches!(k, DimKind::Gripper)).count(), 2);
    }

    #[test]
    fn camera_crop_validation() {
        let crop = CameraCrop { origin: (100, 100), extent: (64, 64), resolution: (64, 64) };
        assert!(crop.validate(128).is_err());
        let crop = CameraCrop { origin: (0, 0), extent: (0, 64), resolution: (64, 64) };
        assert!(crop.validate(128).is_err());
        let crop = CameraCrop { origin: (32, 32), extent: (64, 64), resolution: (64, 64) };
        assert!(crop.validate(128).is_ok());
    }
}
