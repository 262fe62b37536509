//! Rasterization: capsule links and gripper jaws over rectangle clutter,
//! point-sampled through the crop camera.

use crate::error::Result;
use crate::image::Image;
use crate::masking::{MaskSource, RobotMask};
use crate::synth::{forward_kinematics, ArmConfig, CameraCrop, Point, WorldConfig};

const BACKGROUND: [u8; 3] = [30, 32, 36];
const JAW_THICKNESS: f64 = 4.0;
/// Jaw separation per unit of gripper opening; keeps small openings visually
/// resolvable at the output scale.
const GRIPPER_VISUAL_GAIN: f64 = 2.2;

/// Distinct hues per (arm, link) and per gripper, so color-selective features
/// can attribute orientation and opening evidence to the right joint.
const LINK_COLORS: [[[u8; 3]; 3]; 2] = [
    [[205, 55, 55], [225, 120, 45], [235, 190, 60]],
    [[55, 95, 205], [45, 170, 200], [90, 220, 160]],
];
const JAW_COLORS: [[u8; 3]; 2] = [[255, 110, 180], [185, 95, 255]];

/// Static background rectangle, canvas coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Clutter {
    pub y: f64,
    pub x: f64,
    pub h: f64,
    pub w: f64,
    pub color: [u8; 3],
}

impl Clutter {
    fn contains(&self, p: Point) -> bool {
        p.0 >= self.x && p.0 < self.x + self.w && p.1 >= self.y && p.1 < self.y + self.h
    }
}

/// Joint-space state of every arm for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    /// Per arm: joint angles in radians.
    pub joint_angles: Vec<Vec<f64>>,
    /// Per arm: gripper openings in pixels (empty when grippers are disabled).
    pub gripper_openings: Vec<Vec<f64>>,
}

impl ArmState {
    /// Flatten to the action layout: joints arm-by-arm, then grippers.
    pub fn to_action_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.joint_angles.iter().flatten().copied().collect();
        v.extend(self.gripper_openings.iter().flatten());
        v
    }

    pub fn from_action_values(values: &[f64], arm: &ArmConfig) -> Self {
        let j = arm.joints_per_arm;
        let joint_angles = (0..arm.num_arms).map(|a| values[a * j..(a + 1) * j].to_vec()).collect();
        let gbase = arm.num_arms * j;
        let g = arm.gripper_dims_per_arm;
        let gripper_openings =
            (0..arm.num_arms).map(|a| values[gbase + a * g..gbase + (a + 1) * g].to_vec()).collect();
        ArmState { joint_angles, gripper_openings }
    }
}

struct Capsule {
    a: Point,
    b: Point,
    radius: f64,
    color: [u8; 3],
}

impl Capsule {
    fn covers(&self, p: Point) -> bool {
        let (ax, ay) = self.a;
        let (bx, by) = self.b;
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (ax + t * dx, ay + t * dy);
        let (ex, ey) = (p.0 - cx, p.1 - cy);
        ex * ex + ey * ey <= self.radius * self.radius
    }
}

fn arm_capsules(state: &ArmState, world: &WorldConfig) -> Result<Vec<Capsule>> {
    let arm = &world.arm;
    let bases = world.arm_bases();
    let mut caps = Vec::new();
    for (a, base) in bases.iter().enumerate().take(arm.num_arms) {
        let angles = &state.joint_angles[a];
        let chain = forward_kinematics(angles, &arm.link_lengths, *base)?;
        for (i, seg) in chain.windows(2).enumerate() {
            let color = LINK_COLORS[a % 2][i % 3];
            caps.push(Capsule { a: seg[0], b: seg[1], radius: arm.link_thickness / 2.0, color });
        }
        if arm.gripper_dims_per_arm > 0 {
            let opening = state.gripper_openings[a][0].max(0.0);
            let tip = *chain.last().unwrap();
            let heading: f64 = angles.iter().sum();
            let dir = (heading.cos(), heading.sin());
            let norm = (-dir.1, dir.0);
            // Center-to-center separation keeps an open gap at any opening.
            let separation = JAW_THICKNESS + GRIPPER_VISUAL_GAIN * opening;
            for side in [-0.5, 0.5] {
                let off = separation * side;
                let start = (tip.0 + norm.0 * off, tip.1 + norm.1 * off);
                let end = (
                    start.0 + dir.0 * arm.gripper_jaw_len,
                    start.1 + dir.1 * arm.gripper_jaw_len,
                );
                caps.push(Capsule {
                    a: start,
                    b: end,
                    radius: JAW_THICKNESS / 2.0,
                    color: JAW_COLORS[a % 2],
                });
            }
        }
    }
    Ok(caps)
}

/// Rasterize one frame: clutter appears only in the image, the mask is 1
/// exactly where an arm capsule covers the output pixel center.
pub fn render_frame(
    state: &ArmState,
    clutter: &[Clutter],
    camera: &CameraCrop,
    world: &WorldConfig,
) -> Result<(Image, RobotMask)> {
    camera.validate(world.canvas)?;
    let caps = arm_capsules(state, world)?;
    let (res_h, res_w) = camera.resolution;
    let mut img = Image::new(res_h, res_w);
    let mut mask = RobotMask::zeros(res_h, res_w, MaskSource::GroundTruth);
    for oy in 0..res_h {
        for ox in 0..res_w {
            let p = camera.pixel_center(oy, ox);
            let mut color = BACKGROUND;
            for c in clutter {
                if c.contains(p) {
                    color = c.color;
                }
            }
            // Last capsule drawn wins, so distal links overdraw proximal ones.
            let mut on_arm = false;
            for cap in &caps {
                if cap.covers(p) {
                    color = cap.color;
                    on_arm = true;
                }
            }
            img.set(oy, ox, color);
            if on_arm {
                mask.set(oy, ox, 1);
            }
        }
    }
    Ok((img, mask))
}
