//! Glue between the dataset layout, preprocessing, the networks and the
//! metrics: the preprocessed-input cache, training-sample assembly,
//! skeleton decoding, prediction directories and their evaluation.
//!
//! Input cache layout:
//!
//! ```text
//! inputs/NNNNNN.bin   one [C, H, W] network input per surviving frame (map encoding)
//! index.txt           cached frame ids, one per line, in frame order
//! preprocess.cfg      the preprocessing configuration used
//! keypoints.jsonl     copied from the source dataset
//! meta.txt            copied from the source dataset
//! ```
//!
//! A prediction directory mirrors the dataset layout (`keypoints.jsonl`,
//! `frames/`, `masks/`, `meta.txt`) and adds `maps/NNNNNN.jhm` / `.paf`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use csi2video_nn::Tensor;
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::dataset::{
    create_dir, frame_file_name, read_file, skeleton_from_map, skeleton_to_map, target_maps,
    write_file, write_keypoints_jsonl, Dataset, DatasetError, DatasetMeta, FrameLabels, MapSpec,
};
use crate::image::{Frame, ImageError, MaskImage};
use crate::metrics::{
    frame_pairs, iou_report, mask_iou, pck_report, IouConvention, MetricsError, Report,
};
use crate::networks::{GeneratorSample, MapperSample, NetworkError};
use crate::pose::{
    assemble_skeletons, decode_map, encode_map, AssemblyParams, Jhm, LimbTopology, Paf, PoseError,
    Skeleton,
};
use crate::preprocess::{prepare_inputs, InputTensor, PreprocessConfig, PreprocessError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("frame {0} has no ground-truth labels")]
    MissingLabels(u64),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn format_err(path: &Path, detail: impl Into<String>) -> PipelineError {
    PipelineError::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|e| format_err(path, e.to_string()))
}

fn input_file_name(frame_id: u64) -> String {
    format!("{frame_id:06}.bin")
}

/// Preprocessed network inputs of one dataset.
#[derive(Clone, Debug)]
pub struct InputCache {
    pub dir: PathBuf,
    pub meta: DatasetMeta,
    pub labels: Vec<FrameLabels>,
    pub config: PreprocessConfig,
    pub frame_ids: Vec<u64>,
}

impl InputCache {
    /// Preprocesses `dataset` with `cfg` and writes the cache into `dir`.
    pub fn create(dir: &Path, dataset: &Dataset, cfg: &PreprocessConfig) -> Result<Self> {
        let inputs = prepare_inputs(&dataset.csi()?, &dataset.frame_index(), cfg)?;
        create_dir(&dir.join("inputs"))?;
        let mut index = String::new();
        for t in &inputs {
            write_file(
                &dir.join("inputs").join(input_file_name(t.frame_id)),
                &encode_map(&t.data)?,
            )?;
            index.push_str(&format!("{}\n", t.frame_id));
        }
        write_file(&dir.join("index.txt"), index.as_bytes())?;
        write_file(
            &dir.join("preprocess.cfg"),
            cfg.to_kv().to_text().as_bytes(),
        )?;
        write_file(
            &dir.join("keypoints.jsonl"),
            write_keypoints_jsonl(&dataset.labels).as_bytes(),
        )?;
        write_file(&dir.join("meta.txt"), dataset.meta.to_text().as_bytes())?;
        Ok(InputCache {
            dir: dir.to_path_buf(),
            meta: dataset.meta,
            labels: dataset.labels.clone(),
            config: *cfg,
            frame_ids: inputs.iter().map(|t| t.frame_id).collect(),
        })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        // the dataset reader already knows meta.txt and keypoints.jsonl
        let labelled = Dataset::open(dir)?;
        let cfg_path = dir.join("preprocess.cfg");
        let config = PreprocessConfig::from_kv(&KeyValues::parse(&read_text(&cfg_path)?)?)?;
        let index_path = dir.join("index.txt");
        let frame_ids = read_text(&index_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<u64>()
                    .map_err(|e| format_err(&index_path, format!("`{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(InputCache {
            dir: dir.to_path_buf(),
            meta: labelled.meta,
            labels: labelled.labels,
            config,
            frame_ids,
        })
    }

    pub fn input(&self, frame_id: u64) -> Result<InputTensor> {
        let path = self.dir.join("inputs").join(input_file_name(frame_id));
        let data = decode_map(&read_file(&path)?).map_err(|e| format_err(&path, e.to_string()))?;
        Ok(InputTensor { frame_id, data })
    }

    pub fn inputs(&self) -> Result<Vec<InputTensor>> {
        self.frame_ids.iter().map(|&id| self.input(id)).collect()
    }
}

/// Number of leading (chronologically first) items in the training split.
pub fn train_split_len(n: usize, train_fraction: f64) -> usize {
    ((n as f64 * train_fraction).floor() as usize).min(n)
}

fn labels_by_frame(labels: &[FrameLabels]) -> BTreeMap<u64, &FrameLabels> {
    labels.iter().map(|l| (l.frame_id, l)).collect()
}

/// Pairs each input with teacher maps rendered from its frame's labels.
pub fn mapper_samples(
    inputs: &[InputTensor],
    labels: &[FrameLabels],
    meta: &DatasetMeta,
    spec: &MapSpec,
) -> Result<Vec<MapperSample>> {
    let by_frame = labels_by_frame(labels);
    inputs
        .iter()
        .map(|t| {
            let l = by_frame
                .get(&t.frame_id)
                .ok_or(PipelineError::MissingLabels(t.frame_id))?;
            let (jhm, paf) = target_maps(&l.persons, meta.width, meta.height, spec);
            Ok(MapperSample {
                input: t.data.clone(),
                jhm,
                paf,
            })
        })
        .collect()
}

/// Teacher maps plus the recorded frame and mask of each listed frame.
pub fn generator_samples(
    dataset: &Dataset,
    frame_ids: &[u64],
    spec: &MapSpec,
) -> Result<Vec<GeneratorSample>> {
    let by_frame = labels_by_frame(&dataset.labels);
    frame_ids
        .iter()
        .map(|&id| {
            let l = by_frame.get(&id).ok_or(PipelineError::MissingLabels(id))?;
            let (jhm, paf) = target_maps(&l.persons, dataset.meta.width, dataset.meta.height, spec);
            Ok(GeneratorSample {
                jhm,
                paf,
                frame: dataset.frame(id)?,
                mask: dataset.mask(id)?,
            })
        })
        .collect()
}

/// Element-wise mean of the samples' target maps: the "predict the average
/// pose" baseline.
pub fn mean_maps(samples: &[MapperSample]) -> Option<(Jhm, Paf)> {
    let first = samples.first()?;
    let mut j = Tensor::zeros(first.jhm.0.shape());
    let mut p = Tensor::zeros(first.paf.0.shape());
    for s in samples {
        j.data_mut()
            .iter_mut()
            .zip(s.jhm.0.data())
            .for_each(|(a, b)| *a += b);
        p.data_mut()
            .iter_mut()
            .zip(s.paf.0.data())
            .for_each(|(a, b)| *a += b);
    }
    let n = samples.len() as f64;
    j.data_mut().iter_mut().for_each(|v| *v /= n);
    p.data_mut().iter_mut().for_each(|v| *v /= n);
    Some((Jhm(j), Paf(p)))
}

/// Assembles skeletons from maps and moves them into image pixels.
pub fn decode_skeletons(
    jhm: &Jhm,
    paf: &Paf,
    params: &AssemblyParams,
    img_w: usize,
    img_h: usize,
) -> Result<Vec<Skeleton>> {
    let (h, w) = (jhm.0.shape()[1], jhm.0.shape()[2]);
    Ok(
        assemble_skeletons(jhm, paf, &LimbTopology::default(), params)?
            .iter()
            .map(|s| skeleton_from_map(s, w, h, img_w, img_h))
            .collect(),
    )
}

/// Ground truth moved onto the map grid, for scoring decoded skeletons in map units.
pub fn labels_on_map(persons: &[Skeleton], meta: &DatasetMeta, spec: &MapSpec) -> Vec<Skeleton> {
    persons
        .iter()
        .map(|s| skeleton_to_map(s, meta.width, meta.height, spec.width, spec.height))
        .collect()
}

/// Streams predictions into a directory laid out like a dataset.
pub struct PredictionWriter {
    dir: PathBuf,
    meta: DatasetMeta,
    labels: Vec<FrameLabels>,
}

impl PredictionWriter {
    pub fn create(dir: &Path, meta: DatasetMeta) -> Result<Self> {
        for sub in ["frames", "masks", "maps"] {
            create_dir(&dir.join(sub))?;
        }
        Ok(PredictionWriter {
            dir: dir.to_path_buf(),
            meta,
            labels: Vec::new(),
        })
    }

    pub fn add_skeletons(&mut self, frame_id: u64, timestamp_us: u64, persons: Vec<Skeleton>) {
        self.labels.push(FrameLabels {
            frame_id,
            timestamp_us,
            persons,
        });
    }

    pub fn write_maps(&self, frame_id: u64, jhm: &Jhm, paf: &Paf) -> Result<()> {
        let maps = self.dir.join("maps");
        write_file(
            &maps.join(format!("{frame_id:06}.jhm")),
            &encode_map(&jhm.0)?,
        )?;
        write_file(
            &maps.join(format!("{frame_id:06}.paf")),
            &encode_map(&paf.0)?,
        )?;
        Ok(())
    }

    pub fn write_frame(&self, frame_id: u64, frame: &Frame, mask: &MaskImage) -> Result<()> {
        let name = frame_file_name(frame_id);
        write_file(&self.dir.join("frames").join(&name), &frame.encode_png()?)?;
        write_file(&self.dir.join("masks").join(&name), &mask.encode_png()?)?;
        Ok(())
    }

    /// Writes `keypoints.jsonl` and `meta.txt`; returns the frame count.
    pub fn finish(self) -> Result<usize> {
        write_file(
            &self.dir.join("keypoints.jsonl"),
            write_keypoints_jsonl(&self.labels).as_bytes(),
        )?;
        write_file(&self.dir.join("meta.txt"), self.meta.to_text().as_bytes())?;
        Ok(self.labels.len())
    }
}

/// Reads a `maps/` pair written by [`PredictionWriter::write_maps`].
pub fn read_maps(dir: &Path, frame_id: u64) -> Result<(Jhm, Paf)> {
    let maps = dir.join("maps");
    let read = |ext: &str| -> Result<Tensor> {
        let path = maps.join(format!("{frame_id:06}.{ext}"));
        decode_map(&read_file(&path)?).map_err(|e| format_err(&path, e.to_string()))
    };
    Ok((Jhm(read("jhm")?), Paf(read("paf")?)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub pck_alphas: Vec<f64>,
    pub iou_alphas: Vec<f64>,
    pub convention: IouConvention,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            pck_alphas: crate::metrics::DEFAULT_PCK_ALPHAS.to_vec(),
            iou_alphas: crate::metrics::default_iou_alphas(),
            convention: IouConvention::AtLeast,
        }
    }
}

/// Scores the frames of a prediction directory against the dataset.
/// PCK is reported when any evaluated frame has ground-truth people; IoU
/// when the prediction directory holds masks.
pub fn evaluate(gt: &Dataset, pred: &Dataset, opts: &EvalOptions) -> Result<Report> {
    let by_frame = labels_by_frame(&gt.labels);
    let mut pairs = Vec::new();
    let mut ious = Vec::new();
    let has_masks = pred.labels.first().is_some_and(|l| {
        pred.dir
            .join("masks")
            .join(frame_file_name(l.frame_id))
            .is_file()
    });
    for p in &pred.labels {
        let g = by_frame
            .get(&p.frame_id)
            .ok_or(PipelineError::MissingLabels(p.frame_id))?;
        pairs.extend(frame_pairs(&p.persons, &g.persons));
        if has_masks {
            ious.push(mask_iou(&pred.mask(p.frame_id)?, &gt.mask(p.frame_id)?)?);
        }
    }
    let pck = match pck_report(&pairs, &opts.pck_alphas) {
        Ok(r) => Some(r),
        Err(MetricsError::NoInstances) => None,
        Err(e) => return Err(e.into()),
    };
    let iou = match iou_report(&ious, &opts.iou_alphas, opts.convention) {
        Ok(r) => Some(r),
        Err(MetricsError::NoInstances) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Report::new(pck, iou))
}
