//! Synthetic RF scene: scripted stick-figure people, a sum-of-scatterers
//! WiFi channel, and a pinhole camera rendering labelled frames.

pub mod body;
pub mod channel;
pub mod render;
pub mod script;

use std::f64::consts::PI;

use thiserror::Error;

use crate::config::{format_array, ConfigError, KeyValues};

pub use body::{BodyModel, PoseParams};
pub use channel::{channel_response, simulate_csi, ChannelModel, Scatterer};
pub use render::{background, render_frame, Camera, RenderStyle};
pub use script::{gen_trajectories, Trajectory};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

pub(crate) fn dist(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Csi(#[from] crate::csi::CsilError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Everything needed to simulate one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    /// Room extents in metres; the floor is `z = 0`.
    pub room: Vec3,
    pub tx_center: Vec3,
    pub rx_center: Vec3,
    /// Direction along which each antenna array is laid out.
    pub array_axis: Vec3,
    pub antenna_spacing: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub n_subcarriers: usize,
    pub csi_rate_hz: f64,
    pub fps: f64,
    pub n_persons: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub image_width: usize,
    pub image_height: usize,
    pub camera_position: Vec3,
    /// Floor area people move in: `[x_min, y_min, x_max, y_max]`.
    pub region: [f64; 4],
    pub n_stations: usize,
    /// Number of scripted actions after which each person repeats their
    /// routine exactly; 0 never repeats.
    pub routine_actions: usize,
    pub walk_speed: f64,
    pub turn_rate: f64,
    pub channel: ChannelModel,
    pub style: RenderStyle,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            room: [8.0, 8.0, 3.0],
            tx_center: [0.5, 3.75, 1.0],
            rx_center: [7.5, 3.75, 1.0],
            array_axis: [0.0, 1.0, 0.0],
            antenna_spacing: 0.026,
            n_tx: 3,
            n_rx: 3,
            carrier_hz: 5.6e9,
            bandwidth_hz: 20e6,
            n_subcarriers: 30,
            csi_rate_hz: 100.0,
            fps: 7.5,
            n_persons: 1,
            duration_s: 10.0,
            seed: 0,
            image_width: 256,
            image_height: 128,
            camera_position: [4.0, 0.2, 1.8],
            region: [1.2, 2.6, 6.8, 5.2],
            n_stations: 8,
            routine_actions: 0,
            walk_speed: 0.8,
            turn_rate: PI,
            channel: ChannelModel::default(),
            style: RenderStyle::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "room",
    "tx_center",
    "rx_center",
    "array_axis",
    "antenna_spacing",
    "n_tx",
    "n_rx",
    "carrier_hz",
    "bandwidth_hz",
    "n_subcarriers",
    "csi_rate_hz",
    "fps",
    "n_persons",
    "duration_s",
    "seed",
    "image_width",
    "image_height",
    "camera_position",
    "region",
    "n_stations",
    "routine_actions",
    "walk_speed",
    "turn_rate",
    "los_gain",
    "wall_reflection",
    "body_gain",
    "noise_std",
    "phase_offset",
    "limb_px",
    "head_radius_px",
];

impl SceneConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(KEYS)?;
        let mut c = SceneConfig::default();
        kv.read_array("room", &mut c.room)?;
        kv.read_array("tx_center", &mut c.tx_center)?;
        kv.read_array("rx_center", &mut c.rx_center)?;
        kv.read_array("array_axis", &mut c.array_axis)?;
        kv.read("antenna_spacing", &mut c.antenna_spacing)?;
        kv.read("n_tx", &mut c.n_tx)?;
        kv.read("n_rx", &mut c.n_rx)?;
        kv.read("carrier_hz", &mut c.carrier_hz)?;
        kv.read("bandwidth_hz", &mut c.bandwidth_hz)?;
        kv.read("n_subcarriers", &mut c.n_subcarriers)?;
        kv.read("csi_rate_hz", &mut c.csi_rate_hz)?;
        kv.read("fps", &mut c.fps)?;
        kv.read("n_persons", &mut c.n_persons)?;
        kv.read("duration_s", &mut c.duration_s)?;
        kv.read("seed", &mut c.seed)?;
        kv.read("image_width", &mut c.image_width)?;
        kv.read("image_height", &mut c.image_height)?;
        kv.read_array("camera_position", &mut c.camera_position)?;
        kv.read_array("region", &mut c.region)?;
        kv.read("n_stations", &mut c.n_stations)?;
        kv.read("routine_actions", &mut c.routine_actions)?;
        kv.read("walk_speed", &mut c.walk_speed)?;
        kv.read("turn_rate", &mut c.turn_rate)?;
        kv.read("los_gain", &mut c.channel.los_gain)?;
        kv.read("wall_reflection", &mut c.channel.wall_reflection)?;
        kv.read("body_gain", &mut c.channel.body_gain)?;
        kv.read("noise_std", &mut c.channel.noise_std)?;
        kv.read("phase_offset", &mut c.channel.phase_offset)?;
        kv.read("limb_px", &mut c.style.limb_px)?;
        kv.read("head_radius_px", &mut c.style.head_radius_px)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("room", format_array(&self.room));
        kv.set("tx_center", format_array(&self.tx_center));
        kv.set("rx_center", format_array(&self.rx_center));
        kv.set("array_axis", format_array(&self.array_axis));
        kv.set("antenna_spacing", self.antenna_spacing);
        kv.set("n_tx", self.n_tx);
        kv.set("n_rx", self.n_rx);
        kv.set("carrier_hz", self.carrier_hz);
        kv.set("bandwidth_hz", self.bandwidth_hz);
        kv.set("n_subcarriers", self.n_subcarriers);
        kv.set("csi_rate_hz", self.csi_rate_hz);
        kv.set("fps", self.fps);
        kv.set("n_persons", self.n_persons);
        kv.set("duration_s", self.duration_s);
        kv.set("seed", self.seed);
        kv.set("image_width", self.image_width);
        kv.set("image_height", self.image_height);
        kv.set("camera_position", format_array(&self.camera_position));
        kv.set("region", format_array(&self.region));
        kv.set("n_stations", self.n_stations);
        kv.set("routine_actions", self.routine_actions);
        kv.set("walk_speed", self.walk_speed);
        kv.set("turn_rate", self.turn_rate);
        kv.set("los_gain", self.channel.los_gain);
        kv.set("wall_reflection", self.channel.wall_reflection);
        kv.set("body_gain", self.channel.body_gain);
        kv.set("noise_std", self.channel.noise_std);
        kv.set("phase_offset", self.channel.phase_offset);
        kv.set("limb_px", self.style.limb_px);
        kv.set("head_radius_px", self.style.head_radius_px);
        kv
    }

    pub fn inside_room(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= 0.0 && p[i] <= self.room[i])
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(SimError::Config(ConfigError::Invalid(m)));
        if self.n_persons > 3 {
            return invalid(format!("n_persons {} outside 0..=3", self.n_persons));
        }
        if self.n_tx == 0 || self.n_rx == 0 || self.n_subcarriers < 2 {
            return invalid("need at least one antenna per side and two subcarriers".into());
        }
        if !(self.csi_rate_hz > 0.0 && self.fps > 0.0 && self.duration_s >= 0.0) {
            return invalid("rates must be positive and duration non-negative".into());
        }
        if self.image_width < 2 || self.image_height < 2 {
            return invalid("image must be at least 2x2".into());
        }
        if self.n_stations == 0 || !(self.walk_speed > 0.0 && self.turn_rate > 0.0) {
            return invalid("need stations and positive walk/turn speeds".into());
        }
        for p in self.tx_antennas().into_iter().chain(self.rx_antennas()) {
            if !self.inside_room(p) {
                return Err(SimError::Geometry(format!("antenna {p:?} outside room")));
            }
        }
        if !self.inside_room(self.camera_position) {
            return Err(SimError::Geometry("camera outside room".into()));
        }
        let [x0, y0, x1, y1] = self.region;
        if !(x0 < x1
            && y0 < y1
            && self.inside_room([x0, y0, 0.0])
            && self.inside_room([x1, y1, 0.0]))
        {
            return Err(SimError::Geometry(format!(
                "walk region {:?} outside room",
                self.region
            )));
        }
        Ok(())
    }

    fn array(&self, center: Vec3, n: usize) -> Vec<Vec3> {
        let norm = dist(self.array_axis, [0.0; 3]);
        let axis = scale(self.array_axis, 1.0 / norm);
        (0..n)
            .map(|i| {
                let off = (i as f64 - (n as f64 - 1.0) / 2.0) * self.antenna_spacing;
                add(center, scale(axis, off))
            })
            .collect()
    }

    pub fn tx_antennas(&self) -> Vec<Vec3> {
        self.array(self.tx_center, self.n_tx)
    }

    pub fn rx_antennas(&self) -> Vec<Vec3> {
        self.array(self.rx_center, self.n_rx)
    }

    /// `f_k = carrier − BW/2 + k·BW/(n − 1)`.
    pub fn subcarrier_hz(&self, k: usize) -> f64 {
        self.carrier_hz - self.bandwidth_hz / 2.0
            + k as f64 * self.bandwidth_hz / (self.n_subcarriers - 1) as f64
    }

    pub fn n_ticks(&self) -> usize {
        (self.duration_s * self.csi_rate_hz).round() as usize
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn tick_timestamp_us(&self, i: usize) -> u64 {
        (i as f64 * 1e6 / self.csi_rate_hz).round() as u64
    }

    pub fn frame_time_s(&self, n: usize) -> f64 {
        n as f64 / self.fps
    }

    pub fn frame_timestamp_us(&self, n: usize) -> u64 {
        (n as f64 * 1e6 / self.fps).round() as u64
    }

    /// Smallest tick count after which both the CSI grid and the frame grid
    /// restart in phase (40 ticks for 100 Hz and 7.5 fps).
    pub fn quantum_ticks(&self) -> u64 {
        (1..=10_000u64)
            .find(|&n| {
                let frames = n as f64 / self.csi_rate_hz * self.fps;
                (frames - frames.round()).abs() < 1e-9
            })
            .unwrap_or(1)
    }

    pub fn camera(&self) -> Camera {
        Camera::for_image(self.camera_position, self.image_width, self.image_height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subcarrier_grid_spans_the_band() {
        let c = SceneConfig::default();
        assert_eq!(c.subcarrier_hz(0), 5.59e9);
        assert_eq!(c.subcarrier_hz(29), 5.61e9);
        let step = c.subcarrier_hz(1) - c.subcarrier_hz(0);
        assert!((step - 20e6 / 29.0).abs() < 1e-3);
    }

    #[test]
    fn rate_arithmetic() {
        let c = SceneConfig::default();
        assert_eq!((c.n_ticks(), c.n_frames()), (1000, 75));
        assert_eq!(c.quantum_ticks(), 40);
        assert_eq!(c.frame_timestamp_us(3), 400_000);
        assert_eq!(c.tick_timestamp_us(7), 70_000);
    }

    #[test]
    fn antenna_arrays_are_spaced() {
        let c = SceneConfig::default();
        let tx = c.tx_antennas();
        assert_eq!(tx.len(), 3);
        assert!((dist(tx[0], tx[1]) - 0.026).abs() < 1e-15);
        assert_eq!(tx[1], c.tx_center);
    }

    #[test]
    fn config_text_round_trip_and_validation() {
        let mut c = SceneConfig::default();
        c.seed = 42;
        c.channel.noise_std = 0.5;
        let back = SceneConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        let kv = KeyValues::parse("n_persons = 4").unwrap();
        assert!(SceneConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("tx_center = 9, 1, 1").unwrap();
        assert!(matches!(
            SceneConfig::from_kv(&kv),
            Err(SimError::Geometry(_))
        ));
        let kv = KeyValues::parse("colour = red").unwrap();
        assert!(SceneConfig::from_kv(&kv).is_err());
    }
}
