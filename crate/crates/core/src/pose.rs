//! Joint heat maps (JHMs) and part affinity fields (PAFs): rendering from
//! keypoints and decoding back into skeletons.
//!
//! Map coordinates put pixel `(row, col)` at `(x = col, y = row)`.

use std::collections::{BTreeMap, VecDeque};

use csi2video_nn::Tensor;
use thiserror::Error;

pub const N_KEYPOINTS: usize = 14;
pub const N_LIMBS: usize = 13;
pub const N_PAF_CHANNELS: usize = 2 * N_LIMBS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeypointKind {
    Nose,
    Neck,
    RShoulder,
    RElbow,
    RWrist,
    LShoulder,
    LElbow,
    LWrist,
    RHip,
    RKnee,
    LHip,
    LKnee,
    RAnkle,
    LAnkle,
}

impl KeypointKind {
    pub const ALL: [KeypointKind; N_KEYPOINTS] = [
        KeypointKind::Nose,
        KeypointKind::Neck,
        KeypointKind::RShoulder,
        KeypointKind::RElbow,
        KeypointKind::RWrist,
        KeypointKind::LShoulder,
        KeypointKind::LElbow,
        KeypointKind::LWrist,
        KeypointKind::RHip,
        KeypointKind::RKnee,
        KeypointKind::LHip,
        KeypointKind::LKnee,
        KeypointKind::RAnkle,
        KeypointKind::LAnkle,
    ];

    /// JHM channel of this kind.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            KeypointKind::Nose => "Nose",
            KeypointKind::Neck => "Neck",
            KeypointKind::RShoulder => "RShoulder",
            KeypointKind::RElbow => "RElbow",
            KeypointKind::RWrist => "RWrist",
            KeypointKind::LShoulder => "LShoulder",
            KeypointKind::LElbow => "LElbow",
            KeypointKind::LWrist => "LWrist",
            KeypointKind::RHip => "RHip",
            KeypointKind::RKnee => "RKnee",
            KeypointKind::LHip => "LHip",
            KeypointKind::LKnee => "LKnee",
            KeypointKind::RAnkle => "RAnkle",
            KeypointKind::LAnkle => "LAnkle",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
    pub confidence: f64,
}

impl Keypoint {
    pub fn at(x: f64, y: f64) -> Self {
        Keypoint {
            x,
            y,
            visible: true,
            confidence: 1.0,
        }
    }

    pub fn dist(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Fourteen keypoints of one person, indexed by [`KeypointKind::index`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Skeleton {
    pub keypoints: [Keypoint; N_KEYPOINTS],
}

impl Skeleton {
    pub fn from_points(points: &[(f64, f64)]) -> Self {
        let mut s = Skeleton::default();
        for (kp, &(x, y)) in s.keypoints.iter_mut().zip(points) {
            *kp = Keypoint::at(x, y);
        }
        s
    }

    pub fn get(&self, kind: KeypointKind) -> &Keypoint {
        &self.keypoints[kind.index()]
    }

    pub fn visible_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.visible).count()
    }

    /// Tight box over visible keypoints: `(min_x, min_y, max_x, max_y)`.
    pub fn bbox(&self) -> Option<(f64, f64, f64, f64)> {
        self.keypoints
            .iter()
            .filter(|k| k.visible)
            .fold(None, |acc, k| {
                Some(match acc {
                    None => (k.x, k.y, k.x, k.y),
                    Some((a, b, c, d)) => (a.min(k.x), b.min(k.y), c.max(k.x), d.max(k.y)),
                })
            })
    }

    pub fn bbox_diagonal(&self) -> Option<f64> {
        self.bbox().map(|(a, b, c, d)| (c - a).hypot(d - b))
    }

    /// Coordinates multiplied by `(sx, sy)`; visibility and confidence kept.
    pub fn scaled(&self, sx: f64, sy: f64) -> Skeleton {
        let mut s = self.clone();
        for k in &mut s.keypoints {
            k.x *= sx;
            k.y *= sy;
        }
        s
    }

    /// Visible keypoints inside `[0, w−1] × [0, h−1]` and at least one of them.
    pub fn is_valid_in(&self, w: usize, h: usize) -> bool {
        self.visible_count() >= 1
            && self
                .keypoints
                .iter()
                .filter(|k| k.visible)
                .all(|k| k.x >= 0.0 && k.y >= 0.0 && k.x <= (w - 1) as f64 && k.y <= (h - 1) as f64)
    }
}

/// Ordered limb list; limb `l` owns PAF channels `2l` (x) and `2l + 1` (y).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LimbTopology {
    limbs: Vec<(KeypointKind, KeypointKind)>,
}

impl Default for LimbTopology {
    /// Neck-rooted spanning tree over the fourteen keypoints.
    fn default() -> Self {
        use KeypointKind::*;
        LimbTopology {
            limbs: vec![
                (Neck, Nose),
                (Neck, RShoulder),
                (RShoulder, RElbow),
                (RElbow, RWrist),
                (Neck, LShoulder),
                (LShoulder, LElbow),
                (LElbow, LWrist),
                (Neck, RHip),
                (RHip, RKnee),
                (RKnee, RAnkle),
                (Neck, LHip),
                (LHip, LKnee),
                (LKnee, LAnkle),
            ],
        }
    }
}

impl LimbTopology {
    pub fn limbs(&self) -> &[(KeypointKind, KeypointKind)] {
        &self.limbs
    }

    pub fn len(&self) -> usize {
        self.limbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.limbs.is_empty()
    }

    pub fn paf_channels(&self) -> usize {
        2 * self.limbs.len()
    }
}

/// `[channels, h, w]` map wrapper shared by JHMs and PAFs.
macro_rules! map_type {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(pub Tensor);

        impl $name {
            pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
                $name(Tensor::zeros(&[channels, h, w]))
            }

            pub fn channels(&self) -> usize {
                self.0.shape()[0]
            }

            pub fn height(&self) -> usize {
                self.0.shape()[1]
            }

            pub fn width(&self) -> usize {
                self.0.shape()[2]
            }

            pub fn channel(&self, c: usize) -> &[f64] {
                let plane = self.height() * self.width();
                &self.0.data()[c * plane..(c + 1) * plane]
            }

            fn channel_mut(&mut self, c: usize) -> &mut [f64] {
                let plane = self.height() * self.width();
                &mut self.0.data_mut()[c * plane..(c + 1) * plane]
            }

            pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
                self.channel(c)[y * self.width() + x]
            }
        }
    };
}

map_type!(Jhm);
map_type!(Paf);

/// Per-pixel max over persons of `exp(−‖p − x_c‖² / 2σ²)` for visible keypoints.
pub fn render_jhm(persons: &[Skeleton], sigma: f64, h: usize, w: usize) -> Jhm {
    let mut jhm = Jhm::zeros(N_KEYPOINTS, h, w);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for kind in KeypointKind::ALL {
        let plane = jhm.channel_mut(kind.index());
        for p in persons {
            let kp = p.get(kind);
            if !kp.visible {
                continue;
            }
            for y in 0..h {
                let dy = y as f64 - kp.y;
                for x in 0..w {
                    let dx = x as f64 - kp.x;
                    let v = (-(dx * dx + dy * dy) * inv).exp();
                    let cell = &mut plane[y * w + x];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
    jhm
}

/// Distance from `(px, py)` to the segment `a → b`.
fn segment_distance(px: f64, py: f64, a: &Keypoint, b: &Keypoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    (px - (a.x + t * dx)).hypot(py - (a.y + t * dy))
}

/// Unit limb vectors on pixels within `width` of each visible limb; overlapping
/// persons are averaged.
pub fn render_paf(
    persons: &[Skeleton],
    topology: &LimbTopology,
    width: f64,
    h: usize,
    w: usize,
) -> Paf {
    let mut paf = Paf::zeros(topology.paf_channels(), h, w);
    let mut count = vec![0u32; h * w];
    for (l, &(ka, kb)) in topology.limbs().iter().enumerate() {
        count.iter_mut().for_each(|c| *c = 0);
        let mut sum = vec![(0.0, 0.0); h * w];
        for p in persons {
            let (a, b) = (p.get(ka), p.get(kb));
            if !a.visible || !b.visible {
                continue;
            }
            let len = a.dist(b);
            if len == 0.0 {
                continue;
            }
            let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
            let x_lo = ((a.x.min(b.x) - width).floor().max(0.0)) as usize;
            let x_hi = ((a.x.max(b.x) + width).ceil().min((w - 1) as f64)).max(0.0) as usize;
            let y_lo = ((a.y.min(b.y) - width).floor().max(0.0)) as usize;
            let y_hi = ((a.y.max(b.y) + width).ceil().min((h - 1) as f64)).max(0.0) as usize;
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    if segment_distance(x as f64, y as f64, a, b) <= width {
                        let i = y * w + x;
                        sum[i].0 += ux;
                        sum[i].1 += uy;
                        count[i] += 1;
                    }
                }
            }
        }
        for (i, &n) in count.iter().enumerate() {
            if n > 0 {
                let nf = f64::from(n);
                paf.channel_mut(2 * l)[i] = sum[i].0 / nf;
                paf.channel_mut(2 * l + 1)[i] = sum[i].1 / nf;
            }
        }
    }
    paf
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Local maxima (≥ all 8 neighbours, > `threshold`). A plateau of equal
/// maxima reports only its first pixel in row-major order.
pub fn nms_peaks(channel: &[f64], h: usize, w: usize, threshold: f64) -> Vec<Peak> {
    let neighbours = |y: usize, x: usize| {
        let mut out = Vec::with_capacity(8);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dy == 0 && dx == 0 {
                    continue;
                }
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    out.push((ny as usize, nx as usize));
                }
            }
        }
        out
    };
    let is_max = |y: usize, x: usize| {
        let v = channel[y * w + x];
        v > threshold
            && neighbours(y, x)
                .iter()
                .all(|&(ny, nx)| v >= channel[ny * w + nx])
    };
    let mut seen = vec![false; h * w];
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if seen[y * w + x] || !is_max(y, x) {
                continue;
            }
            let v = channel[y * w + x];
            peaks.push(Peak {
                x: x as f64,
                y: y as f64,
                score: v,
            });
            // swallow the rest of this plateau
            let mut queue = VecDeque::from([(y, x)]);
            seen[y * w + x] = true;
            while let Some((cy, cx)) = queue.pop_front() {
                for (ny, nx) in neighbours(cy, cx) {
                    if !seen[ny * w + nx] && channel[ny * w + nx] == v {
                        seen[ny * w + nx] = true;
                        queue.push_back((ny, nx));
                    }
                }
            }
        }
    }
    peaks
}

/// Bilinear sample of one plane at real coordinates, clamped to the borders.
pub fn sample_bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Mean of `⟨PAF(p), û⟩` over `n_samples` evenly spaced points of `a → b`.
pub fn paf_line_score(
    a: (f64, f64),
    b: (f64, f64),
    paf: &Paf,
    limb: usize,
    n_samples: usize,
) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    if len < 1.0 || n_samples < 2 {
        return 0.0;
    }
    let (ux, uy) = (dx / len, dy / len);
    let (h, w) = (paf.height(), paf.width());
    let (px, py) = (paf.channel(2 * limb), paf.channel(2 * limb + 1));
    let total: f64 = (0..n_samples)
        .map(|i| {
            let t = i as f64 / (n_samples - 1) as f64;
            let (x, y) = (a.0 + t * dx, a.1 + t * dy);
            sample_bilinear(px, h, w, x, y) * ux + sample_bilinear(py, h, w, x, y) * uy
        })
        .sum();
    total / n_samples as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssemblyParams {
    pub nms_threshold: f64,
    pub score_threshold: f64,
    pub n_samples: usize,
    pub min_keypoints: usize,
    /// Keep only the highest-scoring skeletons (e.g. the known person count).
    pub max_skeletons: Option<usize>,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        AssemblyParams {
            nms_threshold: 0.1,
            score_threshold: 0.05,
            n_samples: 10,
            min_keypoints: 3,
            max_skeletons: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("map shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed map file: {0}")]
    BadMapFile(String),
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Decodes maps into skeletons: NMS peaks per kind, PAF-scored greedy limb
/// matching, then connected components of accepted limbs.
///
/// Output is ordered by descending total (peak + limb) score, ties broken by
/// the smallest `(kind, peak index)` in the group.
pub fn assemble_skeletons(
    jhm: &Jhm,
    paf: &Paf,
    topology: &LimbTopology,
    params: &AssemblyParams,
) -> Result<Vec<Skeleton>, PoseError> {
    if jhm.channels() != N_KEYPOINTS || paf.channels() != topology.paf_channels() {
        return Err(PoseError::ShapeMismatch(format!(
            "jhm {} channels, paf {} channels for {} limbs",
            jhm.channels(),
            paf.channels(),
            topology.len()
        )));
    }
    let (h, w) = (jhm.height(), jhm.width());
    let peaks: Vec<Vec<Peak>> = (0..N_KEYPOINTS)
        .map(|c| nms_peaks(jhm.channel(c), h, w, params.nms_threshold))
        .collect();
    // global node id for (kind, peak index)
    let mut offsets = [0; N_KEYPOINTS + 1];
    for c in 0..N_KEYPOINTS {
        offsets[c + 1] = offsets[c] + peaks[c].len();
    }
    let node = |kind: usize, i: usize| offsets[kind] + i;
    let n_nodes = offsets[N_KEYPOINTS];
    let mut parent: Vec<usize> = (0..n_nodes).collect();
    let mut limb_score = vec![0.0; n_nodes];

    for (l, &(ka, kb)) in topology.limbs().iter().enumerate() {
        let (pa, pb) = (&peaks[ka.index()], &peaks[kb.index()]);
        let mut cands = Vec::with_capacity(pa.len() * pb.len());
        for (i, a) in pa.iter().enumerate() {
            for (j, b) in pb.iter().enumerate() {
                let s = paf_line_score((a.x, a.y), (b.x, b.y), paf, l, params.n_samples);
                if s >= params.score_threshold {
                    cands.push((s, i, j));
                }
            }
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut used_a = vec![false; pa.len()];
        let mut used_b = vec![false; pb.len()];
        for (s, i, j) in cands {
            if used_a[i] || used_b[j] {
                continue;
            }
            used_a[i] = true;
            used_b[j] = true;
            let (na, nb) = (node(ka.index(), i), node(kb.index(), j));
            let (ra, rb) = (find(&mut parent, na), find(&mut parent, nb));
            if ra != rb {
                let (lo, hi) = (ra.min(rb), ra.max(rb));
                parent[hi] = lo;
                limb_score[lo] += limb_score[hi];
            }
            limb_score[find(&mut parent, na)] += s;
        }
    }

    let mut groups: BTreeMap<usize, (Skeleton, f64)> = BTreeMap::new();
    for kind in 0..N_KEYPOINTS {
        for (i, p) in peaks[kind].iter().enumerate() {
            let root = find(&mut parent, node(kind, i));
            let entry = groups
                .entry(root)
                .or_insert_with(|| (Skeleton::default(), limb_score[root]));
            let kp = &mut entry.0.keypoints[kind];
            if !kp.visible || p.score > kp.confidence {
                *kp = Keypoint {
                    x: p.x,
                    y: p.y,
                    visible: true,
                    confidence: p.score,
                };
            }
        }
    }
    let mut out: Vec<(f64, usize, Skeleton)> = groups
        .into_iter()
        .filter(|(_, (s, _))| s.visible_count() >= params.min_keypoints)
        .map(|(root, (s, ls))| {
            let total = ls
                + s.keypoints
                    .iter()
                    .filter(|k| k.visible)
                    .map(|k| k.confidence)
                    .sum::<f64>();
            (total, root, s)
        })
        .collect();
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    if let Some(k) = params.max_skeletons {
        out.truncate(k);
    }
    Ok(out.into_iter().map(|(_, _, s)| s).collect())
}

/// Cached map encoding: `channels u16, H u16, W u16` (LE) then `f32` values.
pub fn encode_map(t: &Tensor) -> Result<Vec<u8>, PoseError> {
    let &[c, h, w] = t.shape() else {
        return Err(PoseError::ShapeMismatch(format!("{:?}", t.shape())));
    };
    if c > u16::MAX as usize || h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(PoseError::ShapeMismatch(format!("{c}x{h}x{w} exceeds u16")));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.len());
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<Tensor, PoseError> {
    if bytes.len() < 6 {
        return Err(PoseError::BadMapFile("short header".into()));
    }
    let dim = |i: usize| u16::from_le_bytes([bytes[2 * i], bytes[2 * i + 1]]) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let body = &bytes[6..];
    if body.len() != 4 * c * h * w {
        return Err(PoseError::BadMapFile(format!(
            "{} payload bytes for {c}x{h}x{w}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(&[c, h, w], data).map_err(|e| PoseError::BadMapFile(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: usize = 32;
    const W: usize = 64;

    fn one_keypoint(kind: KeypointKind, x: f64, y: f64) -> Skeleton {
        let mut s = Skeleton::default();
        s.keypoints[kind.index()] = Keypoint::at(x, y);
        s
    }

    fn limb_person(a: (f64, f64), b: (f64, f64)) -> Skeleton {
        // Neck → Nose is limb 0
        let mut s = Skeleton::default();
        s.keypoints[KeypointKind::Neck.index()] = Keypoint::at(a.0, a.1);
        s.keypoints[KeypointKind::Nose.index()] = Keypoint::at(b.0, b.1);
        s
    }

    /// Keypoints at least `sep` apart and `margin` from every border.
    fn random_skeleton(rng: &mut ChaCha8Rng, x0: f64, x1: f64, margin: f64, sep: f64) -> Skeleton {
        loop {
            let mut pts: Vec<(f64, f64)> = Vec::new();
            let mut tries = 0;
            while pts.len() < N_KEYPOINTS && tries < 2000 {
                tries += 1;
                let p = (
                    rng.random_range(x0 + margin..x1 - margin),
                    rng.random_range(margin..(H - 1) as f64 - margin),
                );
                if pts.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= sep) {
                    pts.push(p);
                }
            }
            if pts.len() == N_KEYPOINTS {
                return Skeleton::from_points(&pts);
            }
        }
    }

    #[test]
    fn kinds_are_ordered_and_named() {
        assert_eq!(KeypointKind::ALL.len(), 14);
        for (i, k) in KeypointKind::ALL.iter().enumerate() {
            assert_eq!(k.index(), i);
            assert_eq!(KeypointKind::from_index(i), Some(*k));
        }
        assert_eq!(KeypointKind::LAnkle.name(), "LAnkle");
        assert_eq!(LimbTopology::default().paf_channels(), 26);
    }

    #[test]
    fn jhm_peak_and_sigma_falloff() {
        let jhm = render_jhm(&[one_keypoint(KeypointKind::Nose, 10.0, 10.0)], 2.0, H, W);
        assert_eq!(jhm.at(0, 10, 10), 1.0);
        assert!((jhm.at(0, 10, 12) - (-0.5f64).exp()).abs() < 1e-15);
        assert!(jhm.channel(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jhm_two_persons_is_pointwise_max() {
        let persons = [
            one_keypoint(KeypointKind::Nose, 20.0, 15.0),
            one_keypoint(KeypointKind::Nose, 21.0, 15.0),
        ];
        let sigma = 2.0;
        let jhm = render_jhm(&persons, sigma, H, W);
        for y in 0..H {
            for x in 0..W {
                let g = |cx: f64, cy: f64| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    (-d2 / (2.0 * sigma * sigma)).exp()
                };
                let want = g(20.0, 15.0).max(g(21.0, 15.0));
                assert_eq!(jhm.at(0, y, x), want);
            }
        }
    }

    #[test]
    fn paf_horizontal_limb() {
        let topo = LimbTopology::default();
        let paf = render_paf(&[limb_person((2.0, 5.0), (8.0, 5.0))], &topo, 2.0, H, W);
        for x in 2..=8 {
            assert_eq!(paf.at(0, 5, x), 1.0);
            assert_eq!(paf.at(1, 5, x), 0.0);
        }
        // (11,5) is 3 px past the end; (5,8) is 3 px off the line
        assert_eq!(paf.at(0, 5, 11), 0.0);
        assert_eq!(paf.at(0, 8, 5), 0.0);
        assert_eq!(paf.at(0, 7, 5), 1.0);
        assert!(paf.0.data()[2 * H * W..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn paf_invisible_endpoint_contributes_nothing() {
        let mut p = limb_person((2.0, 5.0), (8.0, 5.0));
        p.keypoints[KeypointKind::Nose.index()].visible = false;
        let paf = render_paf(&[p], &LimbTopology::default(), 2.0, H, W);
        assert!(paf.0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn paf_overlap_averages() {
        let persons = [
            limb_person((10.0, 10.0), (20.0, 10.0)),
            limb_person((15.0, 5.0), (15.0, 15.0)),
        ];
        let paf = render_paf(&persons, &LimbTopology::default(), 2.0, H, W);
        assert_eq!(paf.at(0, 10, 15), 0.5);
        assert_eq!(paf.at(1, 10, 15), 0.5);
        assert_eq!(paf.at(0, 10, 11), 1.0);
        assert_eq!(paf.at(1, 6, 15), 1.0);
    }

    fn exhaustive_maxima(ch: &[f64], h: usize, w: usize, thr: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = ch[y * w + x];
                let mut ok = v > thr;
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        ok &= v >= ch[ny * w + nx];
                    }
                }
                if ok {
                    out.push((y, x));
                }
            }
        }
        out
    }

    #[test]
    fn nms_single_and_double_gaussians() {
        assert!(nms_peaks(&vec![0.0; H * W], H, W, 0.1).is_empty());
        let jhm = render_jhm(&[one_keypoint(KeypointKind::Nose, 30.0, 12.0)], 2.0, H, W);
        let peaks = nms_peaks(jhm.channel(0), H, W, 0.1);
        assert_eq!(
            peaks,
            vec![Peak {
                x: 30.0,
                y: 12.0,
                score: 1.0
            }]
        );

        let persons = [
            one_keypoint(KeypointKind::Nose, 20.0, 12.0),
            one_keypoint(KeypointKind::Nose, 30.0, 12.0),
        ];
        let jhm = render_jhm(&persons, 2.0, H, W);
        let peaks = nms_peaks(jhm.channel(0), H, W, 0.1);
        let got: Vec<(usize, usize)> = peaks.iter().map(|p| (p.y as usize, p.x as usize)).collect();
        assert_eq!(got, exhaustive_maxima(jhm.channel(0), H, W, 0.1));
        assert_eq!(got, vec![(12, 20), (12, 30)]);
    }

    #[test]
    fn nms_plateau_keeps_first_pixel() {
        let (h, w) = (5, 6);
        let mut ch = vec![0.0; h * w];
        // V-shaped plateau: (1,1), (2,2), (1,3)
        for (y, x) in [(1, 3), (2, 2), (1, 1)] {
            ch[y * w + x] = 0.8;
        }
        let peaks = nms_peaks(&ch, h, w, 0.1);
        assert_eq!(
            peaks,
            vec![Peak {
                x: 1.0,
                y: 1.0,
                score: 0.8
            }]
        );
    }

    #[test]
    fn line_score_aligned_perpendicular_and_degenerate() {
        let topo = LimbTopology::default();
        let paf = render_paf(&[limb_person((10.0, 16.0), (40.0, 16.0))], &topo, 2.0, H, W);
        let s = paf_line_score((12.0, 16.0), (38.0, 16.0), &paf, 0, 10);
        assert!(s >= 0.95, "{s}");
        let s = paf_line_score((25.0, 10.0), (25.0, 22.0), &paf, 0, 10);
        assert!(s.abs() < 0.05, "{s}");
        assert_eq!(paf_line_score((5.0, 5.0), (5.5, 5.5), &paf, 0, 10), 0.0);
        let rev = paf_line_score((38.0, 16.0), (12.0, 16.0), &paf, 0, 10);
        assert!(rev <= -0.95);
    }

    #[test]
    fn line_score_matches_dense_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let topo = LimbTopology::default();
        for _ in 0..50 {
            let s = random_skeleton(&mut rng, 0.0, W as f64, 6.0, 8.0);
            let paf = render_paf(std::slice::from_ref(&s), &topo, 2.0, H, W);
            for (l, &(ka, kb)) in topo.limbs().iter().enumerate() {
                let (a, b) = (s.get(ka), s.get(kb));
                let coarse = paf_line_score((a.x, a.y), (b.x, b.y), &paf, l, 10);
                let dense = paf_line_score((a.x, a.y), (b.x, b.y), &paf, l, 1000);
                assert!((coarse - dense).abs() < 0.02, "{coarse} vs {dense}");
            }
        }
    }

    fn maps_for(persons: &[Skeleton]) -> (Jhm, Paf) {
        (
            render_jhm(persons, 2.0, H, W),
            render_paf(persons, &LimbTopology::default(), 2.0, H, W),
        )
    }

    #[test]
    fn assemble_empty_maps() {
        let out = assemble_skeletons(
            &Jhm::zeros(14, H, W),
            &Paf::zeros(26, H, W),
            &LimbTopology::default(),
            &AssemblyParams::default(),
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn assemble_rejects_wrong_channel_count() {
        let err = assemble_skeletons(
            &Jhm::zeros(14, H, W),
            &Paf::zeros(24, H, W),
            &LimbTopology::default(),
            &AssemblyParams::default(),
        );
        assert!(matches!(err, Err(PoseError::ShapeMismatch(_))));
    }

    #[test]
    fn assemble_two_persons_keeps_grouping() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_skeleton(&mut rng, 0.0, 30.0, 3.0, 4.0);
            let b = random_skeleton(&mut rng, 34.0, 64.0, 3.0, 4.0);
            let (jhm, paf) = maps_for(&[a.clone(), b.clone()]);
            let out = assemble_skeletons(
                &jhm,
                &paf,
                &LimbTopology::default(),
                &AssemblyParams::default(),
            )
            .unwrap();
            assert_eq!(out.len(), 2);
            for truth in [&a, &b] {
                let hit = out
                    .iter()
                    .find(|s| {
                        s.keypoints[1].visible && s.keypoints[1].dist(&truth.keypoints[1]) <= 1.0
                    })
                    .expect("neck decoded");
                for (d, t) in hit.keypoints.iter().zip(&truth.keypoints) {
                    assert!(d.visible && d.dist(t) <= 1.0);
                }
            }
        }
    }

    #[test]
    fn map_file_round_trip() {
        let jhm = render_jhm(&[one_keypoint(KeypointKind::Neck, 3.5, 2.0)], 2.0, 8, 12);
        let bytes = encode_map(&jhm.0).unwrap();
        assert_eq!(bytes.len(), 6 + 4 * 14 * 8 * 12);
        assert_eq!(&bytes[..6], &[14, 0, 8, 0, 12, 0]);
        let back = decode_map(&bytes).unwrap();
        assert_eq!(back.shape(), &[14, 8, 12]);
        assert!(back.max_abs_diff(&jhm.0) < 1e-7);
        assert!(decode_map(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn single_skeleton_round_trip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_skeleton(&mut rng, 0.0, W as f64, 6.0, 8.0);
            let (jhm, paf) = maps_for(std::slice::from_ref(&s));
            let out = assemble_skeletons(&jhm, &paf, &LimbTopology::default(), &AssemblyParams::default())
                .unwrap();
            prop_assert_eq!(out.len(), 1);
            for (d, t) in out[0].keypoints.iter().zip(&s.keypoints) {
                prop_assert!(d.visible && d.dist(t) <= 1.0);
            }
            // rendered value ranges
            prop_assert!(jhm.0.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            for l in 0..13 {
                for (x, y) in paf.channel(2 * l).iter().zip(paf.channel(2 * l + 1)) {
                    prop_assert!(x.hypot(*y) <= 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn assembly_is_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_skeleton(&mut rng, 0.0, 40.0, 3.0, 3.0);
            let b = random_skeleton(&mut rng, 20.0, 64.0, 3.0, 3.0);
            let (jhm, paf) = maps_for(&[a, b]);
            let p = AssemblyParams::default();
            let topo = LimbTopology::default();
            prop_assert_eq!(
                assemble_skeletons(&jhm, &paf, &topo, &p).unwrap(),
                assemble_skeletons(&jhm, &paf, &topo, &p).unwrap()
            );
        }

        #[test]
        fn nms_matches_exhaustive_scan(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let persons: Vec<Skeleton> = (0..3)
                .map(|_| random_skeleton(&mut rng, 0.0, W as f64, 1.0, 2.0))
                .collect();
            let jhm = render_jhm(&persons, 2.0, H, W);
            for c in 0..N_KEYPOINTS {
                let all = exhaustive_maxima(jhm.channel(c), H, W, 0.1);
                for p in nms_peaks(jhm.channel(c), H, W, 0.1) {
                    prop_assert!(all.contains(&(p.y as usize, p.x as usize)));
                }
            }
        }
    }
}
