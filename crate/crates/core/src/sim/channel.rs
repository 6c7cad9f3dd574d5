//! Sum-of-scatterers channel: static room paths plus one scatterer per limb
//! midpoint and one at the head, with complex Gaussian receiver noise.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::script::Trajectory;
use super::{dist, SceneConfig, SimError, Vec3};
use crate::csi::{ComplexSample, CsiHeader, CsiMeasurement, CsiSequence};
use crate::pose::{KeypointKind, LimbTopology, N_KEYPOINTS, N_LIMBS};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative radar cross-section of each limb, in canonical limb order.
pub const LIMB_GAINS: [f64; N_LIMBS] = [
    0.5, 0.6, 0.5, 0.4, 0.6, 0.5, 0.4, 1.5, 0.8, 0.6, 1.5, 0.8, 0.6,
];
pub const HEAD_GAIN: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModel {
    /// Line-of-sight amplitude is `los_gain / d`.
    pub los_gain: f64,
    /// Amplitude factor of the six first-order wall, floor and ceiling images.
    pub wall_reflection: f64,
    /// Multiplier on [`LIMB_GAINS`] and [`HEAD_GAIN`].
    pub body_gain: f64,
    /// Standard deviation of the complex noise (`E|n|² = noise_std²`).
    pub noise_std: f64,
    /// Common phase added to every path.
    pub phase_offset: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            los_gain: 6.0,
            wall_reflection: 0.3,
            body_gain: 1.0,
            noise_std: 0.005,
            phase_offset: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scatterer {
    pub position: Vec3,
    pub gain: f64,
}

/// Limb midpoints plus the head point.
pub fn body_scatterers(keypoints: &[Vec3; N_KEYPOINTS], body_gain: f64) -> Vec<Scatterer> {
    let topo = LimbTopology::default();
    let mut out: Vec<Scatterer> = topo
        .limbs()
        .iter()
        .zip(LIMB_GAINS)
        .map(|(&(a, b), g)| {
            let (pa, pb) = (keypoints[a.index()], keypoints[b.index()]);
            Scatterer {
                position: [
                    (pa[0] + pb[0]) / 2.0,
                    (pa[1] + pb[1]) / 2.0,
                    (pa[2] + pb[2]) / 2.0,
                ],
                gain: g * body_gain,
            }
        })
        .collect();
    out.push(Scatterer {
        position: keypoints[KeypointKind::Nose.index()],
        gain: HEAD_GAIN * body_gain,
    });
    out
}

/// Static paths for one antenna pair as `(amplitude, path length)`: line of
/// sight plus mirror images of the transmitter in the six room surfaces.
pub fn static_paths(room: Vec3, channel: &ChannelModel, tx: Vec3, rx: Vec3) -> Vec<(f64, f64)> {
    let mut paths = Vec::with_capacity(7);
    if channel.los_gain != 0.0 {
        let d = dist(tx, rx);
        paths.push((channel.los_gain / d, d));
    }
    if channel.wall_reflection != 0.0 {
        for axis in 0..3 {
            for wall in [0.0, room[axis]] {
                let mut image = tx;
                image[axis] = 2.0 * wall - tx[axis];
                let d = dist(image, rx);
                paths.push((channel.wall_reflection * channel.los_gain / d, d));
            }
        }
    }
    paths
}

/// Adds `a·e^{−j(2π f_k L / c − φ)}` for every subcarrier to `out`, stepping
/// the phasor across the evenly spaced subcarriers.
fn accumulate_path(
    scene: &SceneConfig,
    amplitude: f64,
    length: f64,
    phase_offset: f64,
    out: &mut [ComplexSample],
) {
    let f0 = scene.subcarrier_hz(0);
    let df = scene.bandwidth_hz / (scene.n_subcarriers - 1) as f64;
    let mut z =
        ComplexSample::from_polar(amplitude, phase_offset - TAU * f0 * length / SPEED_OF_LIGHT);
    let step = ComplexSample::from_polar(1.0, -TAU * df * length / SPEED_OF_LIGHT);
    for v in out.iter_mut() {
        *v = *v + z;
        z = z * step;
    }
}

/// Noise-free response, laid out `[tx][rx][subcarrier]`. Each scatterer
/// contributes `g·(1/L)·e^{−j2πf(d_tx + d_rx)/c}` with `L = d_tx + d_rx`.
pub fn channel_response(
    scene: &SceneConfig,
    channel: &ChannelModel,
    scatterers: &[Scatterer],
) -> Vec<ComplexSample> {
    let (tx, rx) = (scene.tx_antennas(), scene.rx_antennas());
    let n_c = scene.n_subcarriers;
    let mut out = vec![ComplexSample::ZERO; tx.len() * rx.len() * n_c];
    for (i, &t) in tx.iter().enumerate() {
        for (j, &r) in rx.iter().enumerate() {
            let cell = &mut out[(i * rx.len() + j) * n_c..][..n_c];
            for (a, l) in static_paths(scene.room, channel, t, r) {
                accumulate_path(scene, a, l, channel.phase_offset, cell);
            }
            for s in scatterers {
                let l = dist(t, s.position) + dist(s.position, r);
                accumulate_path(scene, s.gain / l, l, channel.phase_offset, cell);
            }
        }
    }
    out
}

/// One CSI record per tick at `csi_rate_hz` for `duration_s`.
pub fn simulate_csi(
    trajectories: &[Trajectory],
    scene: &SceneConfig,
) -> Result<CsiSequence, SimError> {
    let channel = &scene.channel;
    let (n_tx, n_rx, n_c) = (scene.n_tx, scene.n_rx, scene.n_subcarriers);
    // statics are shared by every tick
    let statics = channel_response(scene, channel, &[]);
    let noise = Normal::new(0.0, channel.noise_std / 2f64.sqrt())
        .map_err(|e| SimError::Geometry(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x4E4F_4953_45);
    let (tx, rx) = (scene.tx_antennas(), scene.rx_antennas());
    let mut records = Vec::with_capacity(scene.n_ticks());
    for i in 0..scene.n_ticks() {
        let t = i as f64 / scene.csi_rate_hz;
        let mut values = statics.clone();
        for tr in trajectories {
            let kps = tr.keypoints_at(t);
            for s in body_scatterers(&kps, channel.body_gain) {
                if !scene.inside_room(s.position) {
                    return Err(SimError::Geometry(format!(
                        "scatterer at {:?} outside room at t={t}",
                        s.position
                    )));
                }
                for (a, &ta) in tx.iter().enumerate() {
                    for (b, &rb) in rx.iter().enumerate() {
                        let l = dist(ta, s.position) + dist(s.position, rb);
                        let cell = &mut values[(a * n_rx + b) * n_c..][..n_c];
                        accumulate_path(scene, s.gain / l, l, channel.phase_offset, cell);
                    }
                }
            }
        }
        if channel.noise_std > 0.0 {
            for v in values.iter_mut() {
                *v = *v + ComplexSample::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        records.push(CsiMeasurement::new(
            scene.tick_timestamp_us(i),
            n_tx,
            n_rx,
            n_c,
            values,
        )?);
    }
    let header = CsiHeader {
        nominal_rate_hz: scene.csi_rate_hz,
        n_tx,
        n_rx,
        n_c,
    };
    Ok(CsiSequence::new(header, records)?)
}
