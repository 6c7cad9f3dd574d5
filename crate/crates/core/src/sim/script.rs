//! Scripted motion: people move between floor stations performing walk,
//! sit, wave and drift actions. Every segment starts and ends on the
//! quantum where the CSI tick grid and the frame grid coincide, so a
//! repeated routine reproduces both CSI ticks and frames exactly.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::body::{BodyModel, PoseParams, PALETTE};
use super::{SceneConfig, Vec3};
use crate::pose::N_KEYPOINTS;

/// Heading that faces a camera looking along +y.
pub const FACING_CAMERA: f64 = -FRAC_PI_2;
const STEP_LENGTH: f64 = 0.7;
const GAIT_AMP: f64 = 0.35;
const DRIFT_DISTANCE: f64 = 0.3;
const DRIFT_GAIT_AMP: f64 = 0.12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Walk,
    Sit,
    Wave,
    Drift,
}

#[derive(Clone, Debug, PartialEq)]
enum Motion {
    Turn {
        at: [f64; 2],
        from: f64,
        to: f64,
    },
    Walk {
        from: [f64; 2],
        to: [f64; 2],
        heading: f64,
        half_steps: u32,
        amp: f64,
    },
    Sit {
        at: [f64; 2],
        heading: f64,
        stage: Stage,
    },
    Wave {
        at: [f64; 2],
        heading: f64,
        stage: Stage,
        cycles: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Stage {
    Enter,
    Hold,
    Leave,
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    start_tick: u64,
    len_ticks: u64,
    motion: Motion,
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

impl Motion {
    fn pose(&self, u: f64) -> PoseParams {
        let stand = |at: [f64; 2], heading: f64| PoseParams {
            root: at,
            heading,
            ..Default::default()
        };
        let ramp = |stage: Stage| match stage {
            Stage::Enter => smoothstep(u),
            Stage::Hold => 1.0,
            Stage::Leave => 1.0 - smoothstep(u),
        };
        match *self {
            Motion::Turn { at, from, to } => stand(at, from + (to - from) * u),
            Motion::Walk {
                from,
                to,
                heading,
                half_steps,
                amp,
            } => PoseParams {
                root: [
                    from[0] + (to[0] - from[0]) * u,
                    from[1] + (to[1] - from[1]) * u,
                ],
                heading,
                gait_phase: PI * half_steps as f64 * u,
                gait_amp: amp,
                ..Default::default()
            },
            Motion::Sit { at, heading, stage } => PoseParams {
                sit: ramp(stage),
                ..stand(at, heading)
            },
            Motion::Wave {
                at,
                heading,
                stage,
                cycles,
            } => PoseParams {
                wave: ramp(stage),
                wave_phase: if stage == Stage::Hold {
                    TAU * cycles as f64 * u
                } else {
                    0.0
                },
                ..stand(at, heading)
            },
        }
    }
}

/// One person's motion over the whole recording.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub body: BodyModel,
    rate_hz: f64,
    segments: Vec<Segment>,
    /// Routine length in ticks when the script repeats.
    period_ticks: Option<u64>,
}

impl Trajectory {
    pub fn pose_at(&self, t_s: f64) -> PoseParams {
        let mut ticks = t_s * self.rate_hz;
        if let Some(p) = self.period_ticks {
            ticks = ticks.rem_euclid(p as f64);
        }
        let idx = self
            .segments
            .partition_point(|s| (s.start_tick as f64) <= ticks)
            .saturating_sub(1);
        let seg = &self.segments[idx];
        let u = ((ticks - seg.start_tick as f64) / seg.len_ticks as f64).clamp(0.0, 1.0);
        seg.motion.pose(u)
    }

    pub fn keypoints_at(&self, t_s: f64) -> [Vec3; N_KEYPOINTS] {
        self.body.keypoints(&self.pose_at(t_s))
    }

    pub fn period_ticks(&self) -> Option<u64> {
        self.period_ticks
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Station layout: well separated points in the walk region, seeded.
pub fn stations(cfg: &SceneConfig) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5354_4154);
    let [x0, y0, x1, y1] = cfg.region;
    let margin = 0.35;
    let mut out: Vec<[f64; 2]> = Vec::new();
    let mut min_sep = 0.9;
    while out.len() < cfg.n_stations {
        let mut placed = false;
        for _ in 0..500 {
            let p = [
                rng.random_range(x0 + margin..x1 - margin),
                rng.random_range(y0 + margin..y1 - margin),
            ];
            if out
                .iter()
                .all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= min_sep)
            {
                out.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            min_sep *= 0.8;
        }
    }
    out
}

struct Scripter<'a> {
    cfg: &'a SceneConfig,
    quantum: u64,
    tick: u64,
    pos: [f64; 2],
    heading: f64,
    segments: Vec<Segment>,
}

impl Scripter<'_> {
    fn quanta_for(&self, seconds: f64) -> u64 {
        let q_s = self.quantum as f64 / self.cfg.csi_rate_hz;
        ((seconds / q_s) - 1e-9).ceil().max(1.0) as u64
    }

    fn push(&mut self, quanta: u64, motion: Motion) {
        let len = quanta * self.quantum;
        self.segments.push(Segment {
            start_tick: self.tick,
            len_ticks: len,
            motion,
        });
        self.tick += len;
    }

    fn turn_to(&mut self, target: f64) {
        let delta = wrap_angle(target - self.heading);
        if delta.abs() > 1e-9 {
            let q = self.quanta_for(delta.abs() / self.cfg.turn_rate);
            let from = self.heading;
            self.push(
                q,
                Motion::Turn {
                    at: self.pos,
                    from,
                    to: from + delta,
                },
            );
        }
        self.heading = target;
    }

    /// Straight move; `face` turns towards the destination first.
    fn walk_to(&mut self, to: [f64; 2], face: bool, amp: f64) {
        let d = (to[0] - self.pos[0]).hypot(to[1] - self.pos[1]);
        if d < 1e-9 {
            return;
        }
        if face {
            self.turn_to((to[1] - self.pos[1]).atan2(to[0] - self.pos[0]));
        }
        let q = self.quanta_for(d / self.cfg.walk_speed);
        let half_steps = ((d / STEP_LENGTH).round() as u32).max(1);
        let from = self.pos;
        self.push(
            q,
            Motion::Walk {
                from,
                to,
                heading: self.heading,
                half_steps,
                amp,
            },
        );
        self.pos = to;
    }

    fn staged(&mut self, quanta: [u64; 3], make: impl Fn(Stage) -> Motion) {
        self.turn_to(FACING_CAMERA);
        for (q, stage) in quanta
            .into_iter()
            .zip([Stage::Enter, Stage::Hold, Stage::Leave])
        {
            let m = make(stage);
            self.push(q, m);
        }
    }

    fn act(&mut self, action: Action, rng: &mut ChaCha8Rng, stations: &[[f64; 2]]) {
        let (at, heading) = (self.pos, FACING_CAMERA);
        match action {
            Action::Walk => {
                let others: Vec<[f64; 2]> = stations
                    .iter()
                    .copied()
                    .filter(|s| *s != self.pos)
                    .collect();
                if others.is_empty() {
                    self.act(Action::Wave, rng, stations);
                } else {
                    let to = others[rng.random_range(0..others.len())];
                    self.walk_to(to, true, GAIT_AMP);
                }
            }
            Action::Sit => {
                let q = [
                    self.quanta_for(1.2),
                    self.quanta_for(1.6),
                    self.quanta_for(1.2),
                ];
                self.staged(q, |stage| Motion::Sit { at, heading, stage });
            }
            Action::Wave => {
                let q = [
                    self.quanta_for(1.2),
                    self.quanta_for(2.4),
                    self.quanta_for(1.2),
                ];
                self.staged(q, |stage| Motion::Wave {
                    at,
                    heading,
                    stage,
                    cycles: 3,
                });
            }
            Action::Drift => {
                let dirs = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
                let d = dirs[rng.random_range(0..dirs.len())];
                let [x0, y0, x1, y1] = self.cfg.region;
                let to = [
                    (at[0] + DRIFT_DISTANCE * d[0]).clamp(x0, x1),
                    (at[1] + DRIFT_DISTANCE * d[1]).clamp(y0, y1),
                ];
                self.walk_to(to, false, DRIFT_GAIT_AMP);
                self.walk_to(at, false, DRIFT_GAIT_AMP);
            }
        }
    }
}

fn pick_action(rng: &mut ChaCha8Rng) -> Action {
    match rng.random_range(0..10) {
        0..=3 => Action::Walk,
        4..=5 => Action::Sit,
        6..=7 => Action::Wave,
        _ => Action::Drift,
    }
}

/// One trajectory per person, deterministic in `cfg.seed`.
///
/// Person `p` starts at station `p mod n_stations` facing the camera. With
/// `routine_actions > 0` each person walks back to that start after the
/// routine and repeats it indefinitely.
pub fn gen_trajectories(cfg: &SceneConfig) -> Vec<Trajectory> {
    let stations = stations(cfg);
    let end_tick = cfg.n_ticks() as u64 + 1;
    (0..cfg.n_persons)
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed
                    .wrapping_add(1 + p as u64)
                    .wrapping_mul(0x9E37_79B9),
            );
            let size = rng.random_range(0.92..1.08);
            let start = stations[p % stations.len()];
            let mut s = Scripter {
                cfg,
                quantum: cfg.quantum_ticks(),
                tick: 0,
                pos: start,
                heading: FACING_CAMERA,
                segments: Vec::new(),
            };
            let period_ticks = if cfg.routine_actions > 0 {
                for _ in 0..cfg.routine_actions {
                    let a = pick_action(&mut rng);
                    s.act(a, &mut rng, &stations);
                }
                s.walk_to(start, true, GAIT_AMP);
                s.turn_to(FACING_CAMERA);
                if s.segments.is_empty() {
                    s.act(Action::Wave, &mut rng, &stations);
                }
                Some(s.tick)
            } else {
                while s.tick < end_tick {
                    let a = pick_action(&mut rng);
                    s.act(a, &mut rng, &stations);
                }
                None
            };
            Trajectory {
                body: BodyModel::new(size, PALETTE[p % PALETTE.len()]),
                rate_hz: cfg.csi_rate_hz,
                segments: s.segments,
                period_ticks,
            }
        })
        .collect()
}
