//! Pose (PCK) and segmentation (IoU) evaluation.
//!
//! # Report schema (`schema_version` 1)
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "pck": null | {
//!     "alphas":      [α, ...],
//!     "kinds":       ["Nose", ...],          // 14 names, canonical order
//!     "values":      [[f | null, ...], ...], // [kind][alpha]; null = kind never visible in GT
//!     "mean":        [f, ...],               // per alpha, mean over non-null kinds
//!     "n_instances": n                       // GT instances evaluated
//!   },
//!   "iou": null | {
//!     "per_frame":   [f, ...],
//!     "alphas":      [α, ...],
//!     "curve":       [f, ...],               // fraction of frames meeting each α
//!     "miou":        f,
//!     "convention":  "at_least" | "at_most"
//!   }
//! }
//! ```
//!
//! Numbers are written with shortest round-trip formatting, so a report
//! reads back bit-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Frame, MaskImage};
use crate::pose::{KeypointKind, Skeleton};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PCK_ALPHAS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.5];
/// Per-channel difference from the background above which a generated pixel
/// counts as foreground.
pub const DEFAULT_MASK_TOLERANCE: f64 = 0.2;

/// `0.05, 0.10, …, 0.95`.
pub fn default_iou_alphas() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no instances to evaluate")]
    NoInstances,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("alpha {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed report: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Mean distance over keypoints visible in both skeletons; `None` if they share none.
pub fn instance_distance(pred: &Skeleton, gt: &Skeleton) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in pred.keypoints.iter().zip(&gt.keypoints) {
        if p.visible && g.visible {
            sum += p.dist(g);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Matching {
    /// `(pred index, gt index)`, sorted by gt index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Greedy one-to-one matching by ascending [`instance_distance`]; ties go to
/// the lower (pred, gt) index pair. Instances sharing no visible keypoint
/// never match.
pub fn match_instances(pred: &[Skeleton], gt: &[Skeleton]) -> Matching {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if let Some(d) = instance_distance(p, g) {
                cands.push((d, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_g) = (vec![false; pred.len()], vec![false; gt.len()]);
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_by_key(|&(_, j)| j);
    Matching {
        pairs,
        unmatched_pred: (0..pred.len()).filter(|&i| !used_p[i]).collect(),
        unmatched_gt: (0..gt.len()).filter(|&j| !used_g[j]).collect(),
    }
}

/// A ground-truth instance and its matched prediction, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct InstancePair {
    pub gt: Skeleton,
    pub pred: Option<Skeleton>,
}

/// Matches one frame and returns one pair per GT instance; GT left unmatched
/// gets `pred: None` and counts as a miss for every visible kind.
pub fn frame_pairs(pred: &[Skeleton], gt: &[Skeleton]) -> Vec<InstancePair> {
    let m = match_instances(pred, gt);
    let mut out: Vec<InstancePair> = gt
        .iter()
        .map(|g| InstancePair {
            gt: g.clone(),
            pred: None,
        })
        .collect();
    for (i, j) in m.pairs {
        out[j].pred = Some(pred[i].clone());
    }
    out
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidAlpha(alpha))
    }
}

/// Fraction of instances whose `kind` keypoint lies within `α·diag` of the GT
/// (inclusive), `diag` being the GT's visible-keypoint bounding-box diagonal.
/// Instances where the GT keypoint is invisible are skipped; a missing or
/// invisible prediction is a miss.
pub fn pck(pairs: &[InstancePair], kind: KeypointKind, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for pair in pairs {
        let g = pair.gt.get(kind);
        if !g.visible {
            continue;
        }
        let diag = pair.gt.bbox_diagonal().unwrap_or(0.0);
        total += 1;
        if let Some(p) = &pair.pred {
            let pk = p.get(kind);
            if pk.visible && pk.dist(g) <= alpha * diag {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::NoInstances);
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    pub alphas: Vec<f64>,
    pub kinds: Vec<String>,
    /// `[kind][alpha]`; `None` where the kind is never visible in GT.
    pub values: Vec<Vec<Option<f64>>>,
    /// Per alpha: mean over kinds that have a value.
    pub mean: Vec<f64>,
    pub n_instances: usize,
}

impl PckReport {
    pub fn mean_at(&self, alpha: f64) -> Option<f64> {
        self.alphas
            .iter()
            .position(|&a| a == alpha)
            .map(|i| self.mean[i])
    }
}

pub fn pck_report(pairs: &[InstancePair], alphas: &[f64]) -> Result<PckReport> {
    if pairs.is_empty() || alphas.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let mut values = Vec::new();
    for kind in KeypointKind::ALL {
        let row = alphas
            .iter()
            .map(|&a| match pck(pairs, kind, a) {
                Ok(v) => Ok(Some(v)),
                Err(MetricsError::NoInstances) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    let mut mean = Vec::with_capacity(alphas.len());
    for ai in 0..alphas.len() {
        let present: Vec<f64> = values.iter().filter_map(|r| r[ai]).collect();
        if present.is_empty() {
            return Err(MetricsError::NoInstances);
        }
        mean.push(present.iter().sum::<f64>() / present.len() as f64);
    }
    Ok(PckReport {
        alphas: alphas.to_vec(),
        kinds: KeypointKind::ALL
            .iter()
            .map(|k| k.name().to_string())
            .collect(),
        values,
        mean,
        n_instances: pairs.len(),
    })
}

/// `|a ∧ b| / |a ∨ b|`, with two empty masks scoring 1.
pub fn mask_iou(a: &MaskImage, b: &MaskImage) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Union of per-person masks into one frame-level foreground mask.
pub fn union_masks(masks: &[MaskImage]) -> Result<MaskImage> {
    let (first, rest) = masks.split_first().ok_or(MetricsError::NoInstances)?;
    rest.iter().try_fold(first.clone(), |acc, m| {
        acc.union(m)
            .map_err(|e| MetricsError::ShapeMismatch(e.to_string()))
    })
}

/// Foreground of a generated frame: pixels differing from the background by
/// more than `tolerance` in any channel.
pub fn generated_mask(frame: &Frame, background: &Frame, tolerance: f64) -> Result<MaskImage> {
    MaskImage::from_difference(frame, background, tolerance)
        .map_err(|e| MetricsError::ShapeMismatch(e.to_string()))
}

/// Which side of the threshold counts at each α.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouConvention {
    /// `IoU ≥ α`: the curve is a survival function and non-increasing.
    #[default]
    AtLeast,
    /// `IoU ≤ α`.
    AtMost,
}

impl IouConvention {
    fn counts(self, iou: f64, alpha: f64) -> bool {
        match self {
            IouConvention::AtLeast => iou >= alpha,
            IouConvention::AtMost => iou <= alpha,
        }
    }
}

/// Fraction of frames meeting each α.
pub fn iou_curve(ious: &[f64], alphas: &[f64], convention: IouConvention) -> Result<Vec<f64>> {
    if ious.is_empty() {
        return Err(MetricsError::NoInstances);
    }
    let n = ious.len() as f64;
    Ok(alphas
        .iter()
        .map(|&a| ious.iter().filter(|&&v| convention.counts(v, a)).count() as f64 / n)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_frame: Vec<f64>,
    pub alphas: Vec<f64>,
    pub curve: Vec<f64>,
    pub miou: f64,
    pub convention: IouConvention,
}

pub fn iou_report(ious: &[f64], alphas: &[f64], convention: IouConvention) -> Result<IouReport> {
    let curve = iou_curve(ious, alphas, convention)?;
    Ok(IouReport {
        per_frame: ious.to_vec(),
        alphas: alphas.to_vec(),
        curve,
        miou: ious.iter().sum::<f64>() / ious.len() as f64,
        convention,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub pck: Option<PckReport>,
    pub iou: Option<IouReport>,
}

impl Report {
    pub fn new(pck: Option<PckReport>, iou: Option<IouReport>) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            pck,
            iou,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Report =
            serde_json::from_str(text).map_err(|e| MetricsError::Format(e.to_string()))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(MetricsError::Format(format!(
                "schema_version {}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Writes the report via a sibling temporary file and a rename, so readers
/// never observe a partial document. Empty reports are refused up front.
pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    if report.pck.is_none() && report.iou.is_none() {
        return Err(MetricsError::NoInstances);
    }
    if report.iou.as_ref().is_some_and(|r| r.per_frame.is_empty()) {
        return Err(MetricsError::NoInstances);
    }
    let io = |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, report.to_json()).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Report::from_json(&text)
}
