//! Dataset directory layout.
//!
//! ```text
//! csi.csil              CSI stream
//! frames/NNNNNN.png     8-bit RGB frames, NNNNNN = zero-padded frame id
//! masks/NNNNNN.png      8-bit gray person masks, 0 background / 255 person
//! background.png        the empty-scene frame
//! keypoints.jsonl       one object per frame:
//!                       {"frame_id", "timestamp_us", "persons": [[[x, y, visible] × 14], …]}
//! meta.txt              key = value: fps, rate_hz, width, height
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::csi::{parse_csil, write_csil, CsiSequence, CsilError};
use crate::image::{Frame, ImageError, MaskImage};
use crate::pose::{
    render_jhm, render_paf, Jhm, Keypoint, LimbTopology, Paf, Skeleton, N_KEYPOINTS,
};
use crate::preprocess::FrameIndexEntry;
use crate::sim::{gen_trajectories, render_frame, simulate_csi, SceneConfig, SimError, Trajectory};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csi(#[from] CsilError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub fn frame_file_name(frame_id: u64) -> String {
    format!("{frame_id:06}.png")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetMeta {
    pub fps: f64,
    pub rate_hz: f64,
    pub width: usize,
    pub height: usize,
}

impl DatasetMeta {
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.set("fps", self.fps);
        kv.set("rate_hz", self.rate_hz);
        kv.set("width", self.width);
        kv.set("height", self.height);
        kv.to_text()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&["fps", "rate_hz", "width", "height"])?;
        for k in ["fps", "rate_hz", "width", "height"] {
            if kv.get_raw(k).is_none() {
                return Err(ConfigError::Invalid(format!("meta.txt lacks `{k}`")));
            }
        }
        let mut m = DatasetMeta {
            fps: 0.0,
            rate_hz: 0.0,
            width: 0,
            height: 0,
        };
        kv.read("fps", &mut m.fps)?;
        kv.read("rate_hz", &mut m.rate_hz)?;
        kv.read("width", &mut m.width)?;
        kv.read("height", &mut m.height)?;
        Ok(m)
    }
}

/// Ground-truth people of one frame, in image pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabels {
    pub frame_id: u64,
    pub timestamp_us: u64,
    pub persons: Vec<Skeleton>,
}

#[derive(Serialize, Deserialize)]
struct KeypointLine {
    frame_id: u64,
    timestamp_us: u64,
    persons: Vec<Vec<[f64; 3]>>,
}

impl FrameLabels {
    pub fn to_json_line(&self) -> String {
        let line = KeypointLine {
            frame_id: self.frame_id,
            timestamp_us: self.timestamp_us,
            persons: self
                .persons
                .iter()
                .map(|s| {
                    s.keypoints
                        .iter()
                        .map(|k| [k.x, k.y, if k.visible { 1.0 } else { 0.0 }])
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string(&line).expect("plain numbers serialise")
    }

    pub fn from_json_line(text: &str) -> std::result::Result<Self, String> {
        let line: KeypointLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let persons = line
            .persons
            .iter()
            .map(|p| {
                if p.len() != N_KEYPOINTS {
                    return Err(format!("{} keypoints, expected {N_KEYPOINTS}", p.len()));
                }
                let mut s = Skeleton::default();
                for (k, t) in s.keypoints.iter_mut().zip(p) {
                    let visible = t[2] != 0.0;
                    *k = Keypoint {
                        x: t[0],
                        y: t[1],
                        visible,
                        confidence: if visible { 1.0 } else { 0.0 },
                    };
                }
                Ok(s)
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(FrameLabels {
            frame_id: line.frame_id,
            timestamp_us: line.timestamp_us,
            persons,
        })
    }

    pub fn index_entry(&self) -> FrameIndexEntry {
        FrameIndexEntry {
            frame_id: self.frame_id,
            timestamp_us: self.timestamp_us,
        }
    }
}

pub fn write_keypoints_jsonl(labels: &[FrameLabels]) -> String {
    labels.iter().map(|l| l.to_json_line() + "\n").collect()
}

pub fn parse_keypoints_jsonl(text: &str, path: &Path) -> Result<Vec<FrameLabels>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            FrameLabels::from_json_line(l).map_err(|detail| DatasetError::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: {detail}", i + 1),
            })
        })
        .collect()
}

/// Keypoints moved from an `img_w × img_h` image onto a `map_w × map_h`
/// grid with corner pixels aligned (the convention of the bilinear resize).
pub fn skeleton_to_map(
    s: &Skeleton,
    img_w: usize,
    img_h: usize,
    map_w: usize,
    map_h: usize,
) -> Skeleton {
    s.scaled(
        (map_w - 1) as f64 / (img_w - 1) as f64,
        (map_h - 1) as f64 / (img_h - 1) as f64,
    )
}

pub fn skeleton_from_map(
    s: &Skeleton,
    map_w: usize,
    map_h: usize,
    img_w: usize,
    img_h: usize,
) -> Skeleton {
    skeleton_to_map(s, map_w, map_h, img_w, img_h)
}

/// Ground-truth map parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapSpec {
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub paf_width: f64,
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec {
            height: 32,
            width: 64,
            sigma: 2.0,
            paf_width: 2.0,
        }
    }
}

/// Teacher maps for one frame.
pub fn target_maps(persons: &[Skeleton], img_w: usize, img_h: usize, spec: &MapSpec) -> (Jhm, Paf) {
    let scaled: Vec<Skeleton> = persons
        .iter()
        .map(|s| skeleton_to_map(s, img_w, img_h, spec.width, spec.height))
        .collect();
    (
        render_jhm(&scaled, spec.sigma, spec.height, spec.width),
        render_paf(
            &scaled,
            &LimbTopology::default(),
            spec.paf_width,
            spec.height,
            spec.width,
        ),
    )
}

/// Simulated recording held in memory.
pub struct Simulation {
    pub scene: SceneConfig,
    pub trajectories: Vec<Trajectory>,
    pub csi: CsiSequence,
    pub labels: Vec<FrameLabels>,
}

impl Simulation {
    pub fn run(scene: &SceneConfig) -> Result<Self> {
        scene.validate()?;
        let trajectories = gen_trajectories(scene);
        let csi = simulate_csi(&trajectories, scene)?;
        let cam = scene.camera();
        let labels = (0..scene.n_frames())
            .map(|n| {
                let t = scene.frame_time_s(n);
                FrameLabels {
                    frame_id: n as u64,
                    timestamp_us: scene.frame_timestamp_us(n),
                    persons: trajectories
                        .iter()
                        .map(|tr| cam.skeleton(&tr.keypoints_at(t)))
                        .collect(),
                }
            })
            .collect();
        Ok(Simulation {
            scene: scene.clone(),
            trajectories,
            csi,
            labels,
        })
    }

    pub fn colors(&self) -> Vec<[f64; 3]> {
        self.trajectories.iter().map(|t| t.body.color).collect()
    }

    pub fn render(&self, labels: &FrameLabels) -> (Frame, MaskImage) {
        render_frame(
            &labels.persons,
            &self.colors(),
            self.scene.image_height,
            self.scene.image_width,
            &self.scene.style,
        )
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            fps: self.scene.fps,
            rate_hz: self.scene.csi_rate_hz,
            width: self.scene.image_width,
            height: self.scene.image_height,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmitSummary {
    pub n_frames: usize,
    pub n_csi_records: usize,
}

/// Simulates `scene` and writes the dataset layout into `dir`.
pub fn emit_dataset(scene: &SceneConfig, dir: &Path) -> Result<EmitSummary> {
    let sim = Simulation::run(scene)?;
    create_dir(&dir.join("frames"))?;
    create_dir(&dir.join("masks"))?;
    write_file(&dir.join("csi.csil"), &write_csil(&sim.csi)?)?;
    for labels in &sim.labels {
        let (frame, mask) = sim.render(labels);
        let name = frame_file_name(labels.frame_id);
        write_file(&dir.join("frames").join(&name), &frame.encode_png()?)?;
        write_file(&dir.join("masks").join(&name), &mask.encode_png()?)?;
    }
    let bg = crate::sim::background(scene.image_height, scene.image_width);
    write_file(&dir.join("background.png"), &bg.encode_png()?)?;
    write_file(
        &dir.join("keypoints.jsonl"),
        write_keypoints_jsonl(&sim.labels).as_bytes(),
    )?;
    write_file(&dir.join("meta.txt"), sim.meta().to_text().as_bytes())?;
    Ok(EmitSummary {
        n_frames: sim.labels.len(),
        n_csi_records: sim.csi.len(),
    })
}

/// A dataset directory opened for reading; images load on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub meta: DatasetMeta,
    pub labels: Vec<FrameLabels>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.txt");
        let meta_text =
            String::from_utf8(read_file(&meta_path)?).map_err(|e| DatasetError::Format {
                path: meta_path.clone(),
                detail: e.to_string(),
            })?;
        let meta = DatasetMeta::parse(&meta_text).map_err(|e| DatasetError::Format {
            path: meta_path,
            detail: e.to_string(),
        })?;
        let kp_path = dir.join("keypoints.jsonl");
        let text = String::from_utf8(read_file(&kp_path)?).map_err(|e| DatasetError::Format {
            path: kp_path.clone(),
            detail: e.to_string(),
        })?;
        let labels = parse_keypoints_jsonl(&text, &kp_path)?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            meta,
            labels,
        })
    }

    pub fn csi(&self) -> Result<CsiSequence> {
        Ok(parse_csil(&read_file(&self.dir.join("csi.csil"))?)?)
    }

    pub fn frame(&self, frame_id: u64) -> Result<Frame> {
        let path = self.dir.join("frames").join(frame_file_name(frame_id));
        Ok(Frame::decode_png(&read_file(&path)?)?)
    }

    pub fn mask(&self, frame_id: u64) -> Result<MaskImage> {
        let path = self.dir.join("masks").join(frame_file_name(frame_id));
        Ok(MaskImage::decode_png(&read_file(&path)?)?)
    }

    pub fn background(&self) -> Result<Frame> {
        Ok(Frame::decode_png(&read_file(
            &self.dir.join("background.png"),
        )?)?)
    }

    pub fn frame_index(&self) -> Vec<FrameIndexEntry> {
        self.labels.iter().map(FrameLabels::index_entry).collect()
    }

    pub fn labels_for(&self, frame_id: u64) -> Option<&FrameLabels> {
        self.labels.iter().find(|l| l.frame_id == frame_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypoint_line_round_trip() {
        let mut s = Skeleton::from_points(&[(1.5, 2.0); 14]);
        s.keypoints[3].visible = false;
        s.keypoints[3].confidence = 0.0;
        let l = FrameLabels {
            frame_id: 4,
            timestamp_us: 533_333,
            persons: vec![s],
        };
        let line = l.to_json_line();
        assert!(
            line.starts_with("{\"frame_id\":4,\"timestamp_us\":533333,\"persons\":[[[1.5,2.0,1.0]")
        );
        assert_eq!(FrameLabels::from_json_line(&line).unwrap(), l);
        assert!(FrameLabels::from_json_line(
            "{\"frame_id\":0,\"timestamp_us\":0,\"persons\":[[[0,0,1]]]}"
        )
        .is_err());
    }

    #[test]
    fn meta_round_trip() {
        let m = DatasetMeta {
            fps: 7.5,
            rate_hz: 100.0,
            width: 256,
            height: 128,
        };
        assert_eq!(
            m.to_text(),
            "fps = 7.5\nheight = 128\nrate_hz = 100\nwidth = 256\n"
        );
        assert_eq!(DatasetMeta::parse(&m.to_text()).unwrap(), m);
        assert!(DatasetMeta::parse("fps = 1").is_err());
    }

    #[test]
    fn map_scaling_aligns_corners() {
        let s = Skeleton::from_points(&[(255.0, 127.0); 14]);
        let m = skeleton_to_map(&s, 256, 128, 64, 32);
        assert_eq!((m.keypoints[0].x, m.keypoints[0].y), (63.0, 31.0));
        let back = skeleton_from_map(&m, 64, 32, 256, 128);
        assert_eq!(back, s);
    }
}
