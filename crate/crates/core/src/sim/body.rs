//! Jointed 3-D stick figure with fixed segment lengths.

use std::f64::consts::FRAC_PI_2;

use super::{add, scale, Vec3};
use crate::pose::N_KEYPOINTS;

/// Per-person identity: body size and paint colour.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyModel {
    pub thigh: f64,
    pub shin: f64,
    pub hip_half_width: f64,
    pub torso: f64,
    pub head_up: f64,
    pub head_forward: f64,
    pub shoulder_half_width: f64,
    pub shoulder_drop: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub color: [f64; 3],
}

/// Identity colours, saturated so they never occur in the background.
pub const PALETTE: [[f64; 3]; 4] = [
    [0.86, 0.20, 0.16],
    [0.14, 0.66, 0.24],
    [0.16, 0.30, 0.90],
    [0.80, 0.18, 0.78],
];

impl BodyModel {
    /// Adult proportions multiplied by `size`.
    pub fn new(size: f64, color: [f64; 3]) -> Self {
        BodyModel {
            thigh: 0.45 * size,
            shin: 0.45 * size,
            hip_half_width: 0.10 * size,
            torso: 0.50 * size,
            head_up: 0.18 * size,
            head_forward: 0.05 * size,
            shoulder_half_width: 0.18 * size,
            shoulder_drop: 0.04 * size,
            upper_arm: 0.28 * size,
            forearm: 0.26 * size,
            color,
        }
    }

    pub fn standing_height(&self) -> f64 {
        self.thigh + self.shin + self.torso + self.head_up
    }

    /// Keypoints in canonical kind order.
    pub fn keypoints(&self, p: &PoseParams) -> [Vec3; N_KEYPOINTS] {
        let (s, c) = p.heading.sin_cos();
        let fwd = [c, s, 0.0];
        let left = [-s, c, 0.0];
        let up = [0.0, 0.0, 1.0];
        // direction tilted `pitch` from straight down towards `towards`
        let limb_dir =
            |pitch: f64, towards: Vec3| add(scale(up, -pitch.cos()), scale(towards, pitch.sin()));

        let sit_pitch = p.sit.clamp(0.0, 1.0) * FRAC_PI_2;
        let swing = p.gait_amp * p.gait_phase.sin();
        let bend = 0.6 * p.gait_amp * p.gait_phase.sin().abs();
        let pelvis_height = self.thigh * sit_pitch.cos() + self.shin;
        // sitting moves the pelvis back so the feet stay put
        let back = self.thigh * sit_pitch.sin();
        let pelvis = [
            p.root[0] - fwd[0] * back,
            p.root[1] - fwd[1] * back,
            pelvis_height,
        ];

        let r_hip = add(pelvis, scale(left, -self.hip_half_width));
        let l_hip = add(pelvis, scale(left, self.hip_half_width));
        let leg = |hip: Vec3, swing: f64| {
            let knee = add(hip, scale(limb_dir(sit_pitch + swing, fwd), self.thigh));
            let shin_pitch = if p.sit > 0.0 { 0.0 } else { swing - bend };
            let ankle = add(knee, scale(limb_dir(shin_pitch, fwd), self.shin));
            (knee, ankle)
        };
        let (r_knee, r_ankle) = leg(r_hip, swing);
        let (l_knee, l_ankle) = leg(l_hip, -swing);

        let neck = add(pelvis, scale(up, self.torso));
        let nose = add(
            add(neck, scale(up, self.head_up)),
            scale(fwd, self.head_forward),
        );
        let drop = scale(up, -self.shoulder_drop);
        let r_sh = add(add(neck, scale(left, -self.shoulder_half_width)), drop);
        let l_sh = add(add(neck, scale(left, self.shoulder_half_width)), drop);

        // arms swing against the legs while walking
        let arm_swing = 0.8 * swing;
        let l_elbow = add(l_sh, scale(limb_dir(arm_swing, fwd), self.upper_arm));
        let l_wrist = add(
            l_elbow,
            scale(limb_dir(arm_swing + 0.2 * p.gait_amp, fwd), self.forearm),
        );

        // waving raises the right arm sideways, forearm rocking overhead
        let raise = p.wave.clamp(0.0, 1.0);
        let outward = scale(left, -1.0);
        let (upper_dir, fore_dir) = if raise > 0.0 {
            let fore_pitch = raise * (2.8 + 0.45 * p.wave_phase.sin());
            (
                limb_dir(raise * 2.3, outward),
                limb_dir(fore_pitch, outward),
            )
        } else {
            (
                limb_dir(-arm_swing, fwd),
                limb_dir(-arm_swing + 0.2 * p.gait_amp, fwd),
            )
        };
        let r_elbow = add(r_sh, scale(upper_dir, self.upper_arm));
        let r_wrist = add(r_elbow, scale(fore_dir, self.forearm));

        [
            nose, neck, r_sh, r_elbow, r_wrist, l_sh, l_elbow, l_wrist, r_hip, r_knee, l_hip,
            l_knee, r_ankle, l_ankle,
        ]
    }
}

/// Instantaneous pose controls.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseParams {
    /// Floor point under the feet.
    pub root: [f64; 2],
    /// Facing direction, radians from +x.
    pub heading: f64,
    /// 0 standing, 1 seated.
    pub sit: f64,
    pub gait_phase: f64,
    /// Leg swing amplitude in radians; 0 when not walking.
    pub gait_amp: f64,
    /// 0 arm down, 1 arm raised.
    pub wave: f64,
    pub wave_phase: f64,
}
