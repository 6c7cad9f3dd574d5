//! Cleaning, uniform resampling, frame pairing and tensorization of CSI streams.

use csi2video_nn::kernels::resize_forward;
use csi2video_nn::Tensor;
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::csi::{CsiHeader, CsiMeasurement, CsiSequence, CsilError};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("sequence has {got} records, need at least {need}")]
    SequenceTooShort { got: usize, need: usize },
    #[error("empty input: {0}")]
    EmptyInputs(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Csi(#[from] CsilError),
}

type Result<T> = std::result::Result<T, PreprocessError>;

/// Scale factor turning a median absolute deviation into a Gaussian σ estimate.
pub const MAD_SCALE: f64 = 1.4826;

fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Hampel outlier flags for one series, using a centred window truncated at the ends.
pub fn hampel_flags(series: &[f64], window_len: usize, n_mads: f64) -> Vec<bool> {
    let half = window_len / 2;
    let n = series.len();
    let mut win = Vec::with_capacity(window_len);
    let mut dev = Vec::with_capacity(window_len);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            win.clear();
            win.extend_from_slice(&series[lo..hi]);
            let med = median_in_place(&mut win);
            dev.clear();
            dev.extend(series[lo..hi].iter().map(|x| (x - med).abs()));
            let mad = median_in_place(&mut dev);
            (series[i] - med).abs() > n_mads * MAD_SCALE * mad
        })
        .collect()
}

/// Hampel filter applied independently to every (tx, rx, subcarrier) amplitude series.
///
/// Flagged samples are replaced by linear-in-time interpolation (re and im
/// separately) between the nearest unflagged neighbours of the same series.
pub fn remove_outliers(seq: &CsiSequence, window_len: usize, n_mads: f64) -> Result<CsiSequence> {
    if window_len < 3 || window_len.is_multiple_of(2) {
        return Err(PreprocessError::InvalidParameter(format!(
            "window_len must be odd and >= 3, got {window_len}"
        )));
    }
    if seq.len() < window_len {
        return Err(PreprocessError::SequenceTooShort {
            got: seq.len(),
            need: window_len,
        });
    }
    let records = seq.records();
    let ts = seq.timestamps();
    let mut out: Vec<CsiMeasurement> = records.to_vec();
    let n_series = seq.header.samples_per_record();
    let mut series = vec![0.0; records.len()];
    for s in 0..n_series {
        for (v, r) in series.iter_mut().zip(records) {
            *v = r.values()[s].norm();
        }
        let flags = hampel_flags(&series, window_len, n_mads);
        if !flags.iter().any(|&f| f) {
            continue;
        }
        for i in (0..records.len()).filter(|&i| flags[i]) {
            let prev = (0..i).rev().find(|&j| !flags[j]);
            let next = (i + 1..records.len()).find(|&j| !flags[j]);
            let value = match (prev, next) {
                (Some(a), Some(b)) => {
                    let t = (ts[i] - ts[a]) as f64 / (ts[b] - ts[a]) as f64;
                    records[a].values()[s].lerp(records[b].values()[s], t)
                }
                (Some(a), None) => records[a].values()[s],
                (None, Some(b)) => records[b].values()[s],
                (None, None) => continue,
            };
            out[i].values_mut()[s] = value;
        }
    }
    Ok(CsiSequence::new(seq.header, out)?)
}

/// Grid step in whole microseconds for a target rate.
pub fn grid_step_us(target_rate_hz: f64) -> u64 {
    (1e6 / target_rate_hz).round() as u64
}

/// Resamples onto `t₀ + k·step` (integer µs, never past the last input timestamp),
/// interpolating each complex element linearly between its bracketing samples.
pub fn resample_uniform(seq: &CsiSequence, target_rate_hz: f64) -> Result<CsiSequence> {
    if !(target_rate_hz > 0.0 && target_rate_hz.is_finite()) {
        return Err(PreprocessError::InvalidParameter(format!(
            "target rate {target_rate_hz}"
        )));
    }
    if seq.len() < 2 {
        return Err(PreprocessError::SequenceTooShort {
            got: seq.len(),
            need: 2,
        });
    }
    let step = grid_step_us(target_rate_hz);
    if step == 0 {
        return Err(PreprocessError::InvalidParameter(format!(
            "rate {target_rate_hz} Hz is finer than 1 us"
        )));
    }
    let recs = seq.records();
    let h = seq.header;
    let (t0, t_end) = (recs[0].timestamp_us, recs[recs.len() - 1].timestamp_us);
    let mut out = Vec::with_capacity(((t_end - t0) / step + 1) as usize);
    let mut j = 0;
    let mut t = t0;
    while t <= t_end {
        while recs[j + 1].timestamp_us < t {
            j += 1;
        }
        let (a, b) = (&recs[j], &recs[j + 1]);
        let values = if t == a.timestamp_us {
            a.values().to_vec()
        } else {
            let frac = (t - a.timestamp_us) as f64 / (b.timestamp_us - a.timestamp_us) as f64;
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x.lerp(*y, frac))
                .collect()
        };
        out.push(CsiMeasurement::new(t, h.n_tx, h.n_rx, h.n_c, values)?);
        t += step;
    }
    let header = CsiHeader {
        nominal_rate_hz: target_rate_hz,
        ..h
    };
    Ok(CsiSequence::new(header, out)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameIndexEntry {
    pub frame_id: u64,
    pub timestamp_us: u64,
}

/// How the K measurements of a frame are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairingMode {
    /// The K consecutive samples with the smallest timestamps ≥ the frame time.
    #[default]
    AtOrAfter,
    /// K samples spread evenly over `[frame time, next frame time)`.
    UniformSubsample,
}

impl PairingMode {
    pub fn name(self) -> &'static str {
        match self {
            PairingMode::AtOrAfter => "at_or_after",
            PairingMode::UniformSubsample => "uniform_subsample",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "at_or_after" => Some(PairingMode::AtOrAfter),
            "uniform_subsample" => Some(PairingMode::UniformSubsample),
            _ => None,
        }
    }
}

/// K amplitude measurements paired with one video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiWindow {
    pub frame_id: u64,
    pub start_timestamp_us: u64,
    /// Indices of the chosen records in the source sequence.
    pub indices: Vec<usize>,
    pub k: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_c: usize,
    /// `k × n_tx × n_rx × n_c`, row-major.
    pub amplitudes: Vec<f64>,
}

impl CsiWindow {
    pub fn amplitude(&self, step: usize, tx: usize, rx: usize, c: usize) -> f64 {
        self.amplitudes[((step * self.n_tx + tx) * self.n_rx + rx) * self.n_c + c]
    }
}

pub fn pair_windows(
    seq: &CsiSequence,
    frames: &[FrameIndexEntry],
    k: usize,
    mode: PairingMode,
) -> Result<Vec<CsiWindow>> {
    if seq.is_empty() {
        return Err(PreprocessError::EmptyInputs("CSI sequence"));
    }
    if frames.is_empty() {
        return Err(PreprocessError::EmptyInputs("frame index"));
    }
    if k == 0 {
        return Err(PreprocessError::InvalidParameter("K must be >= 1".into()));
    }
    let ts = seq.timestamps();
    let n = ts.len();
    let h = seq.header;
    let mut out = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        let start = ts.partition_point(|&t| t < f.timestamp_us);
        let indices: Vec<usize> = match mode {
            PairingMode::AtOrAfter => {
                if start + k > n {
                    continue;
                }
                (start..start + k).collect()
            }
            PairingMode::UniformSubsample => {
                let next_t = match (frames.get(fi + 1), fi.checked_sub(1).map(|p| frames[p])) {
                    (Some(nf), _) => nf.timestamp_us,
                    (None, Some(pf)) => f.timestamp_us + (f.timestamp_us - pf.timestamp_us),
                    (None, None) => continue,
                };
                let end = ts.partition_point(|&t| t < next_t);
                if next_t > ts[n - 1] + 1 || end < start + k {
                    continue;
                }
                let count = end - start;
                (0..k)
                    .map(|j| {
                        if k == 1 {
                            start
                        } else {
                            start + (j * (count - 1) + (k - 1) / 2) / (k - 1)
                        }
                    })
                    .collect()
            }
        };
        let mut amplitudes = Vec::with_capacity(k * h.samples_per_record());
        for &i in &indices {
            amplitudes.extend(seq.records()[i].values().iter().map(|v| v.norm()));
        }
        out.push(CsiWindow {
            frame_id: f.frame_id,
            start_timestamp_us: ts[indices[0]],
            indices,
            k,
            n_tx: h.n_tx,
            n_rx: h.n_rx,
            n_c: h.n_c,
            amplitudes,
        });
    }
    Ok(out)
}

/// Network input: one channel per antenna pair, `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputTensor {
    pub frame_id: u64,
    pub data: Tensor,
}

/// Each antenna pair's time × subcarrier plane, bilinearly resized to `h × w`
/// (align-corners convention, so an equal-size plane is copied unchanged).
pub fn to_input_tensor(window: &CsiWindow, h: usize, w: usize) -> Result<InputTensor> {
    if h < 2 || w < 2 {
        return Err(PreprocessError::InvalidParameter(format!(
            "tensor size {h}x{w}"
        )));
    }
    let pairs = window.n_tx * window.n_rx;
    let (kk, nc) = (window.k, window.n_c);
    let mut planes = vec![0.0; pairs * kk * nc];
    for step in 0..kk {
        for p in 0..pairs {
            for c in 0..nc {
                planes[(p * kk + step) * nc + c] = window.amplitudes[(step * pairs + p) * nc + c];
            }
        }
    }
    let data = resize_forward(&planes, pairs, kk, nc, h, w);
    Ok(InputTensor {
        frame_id: window.frame_id,
        data: Tensor::from_vec(&[pairs, h, w], data).expect("sized above"),
    })
}

/// Chronological split: the first `⌊n·train_fraction⌋` items train, the rest test.
pub fn split_dataset<T: Clone>(pairs: &[T], train_fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if pairs.is_empty() {
        return Err(PreprocessError::EmptyInputs("dataset"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(PreprocessError::InvalidParameter(format!(
            "train fraction {train_fraction}"
        )));
    }
    let cut = (pairs.len() as f64 * train_fraction).floor() as usize;
    Ok((pairs[..cut].to_vec(), pairs[cut..].to_vec()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub hampel_window: usize,
    pub hampel_n_mads: f64,
    pub rate_hz: f64,
    pub k: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub pairing: PairingMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            hampel_window: 11,
            hampel_n_mads: 3.0,
            rate_hz: 100.0,
            k: 5,
            input_h: 64,
            input_w: 128,
            pairing: PairingMode::AtOrAfter,
        }
    }
}

const KEYS: &[&str] = &[
    "hampel_window",
    "hampel_n_mads",
    "rate_hz",
    "k",
    "input_h",
    "input_w",
    "pairing",
];

impl PreprocessConfig {
    pub fn known_keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn from_kv(kv: &KeyValues) -> std::result::Result<Self, ConfigError> {
        kv.reject_unknown(KEYS)?;
        let mut c = PreprocessConfig::default();
        kv.read("hampel_window", &mut c.hampel_window)?;
        kv.read("hampel_n_mads", &mut c.hampel_n_mads)?;
        kv.read("rate_hz", &mut c.rate_hz)?;
        kv.read("k", &mut c.k)?;
        kv.read("input_h", &mut c.input_h)?;
        kv.read("input_w", &mut c.input_w)?;
        if let Some(v) = kv.get_raw("pairing") {
            c.pairing = PairingMode::parse(v).ok_or_else(|| ConfigError::BadValue {
                key: "pairing".into(),
                value: v.into(),
            })?;
        }
        c.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("hampel_window", self.hampel_window);
        kv.set("hampel_n_mads", self.hampel_n_mads);
        kv.set("rate_hz", self.rate_hz);
        kv.set("k", self.k);
        kv.set("input_h", self.input_h);
        kv.set("input_w", self.input_w);
        kv.set("pairing", self.pairing.name());
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.hampel_window < 3 || self.hampel_window.is_multiple_of(2) {
            return Err(PreprocessError::InvalidParameter(format!(
                "hampel window {} must be odd and >= 3",
                self.hampel_window
            )));
        }
        if !(self.hampel_n_mads > 0.0 && self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(PreprocessError::InvalidParameter(
                "hampel_n_mads and rate_hz must be > 0".into(),
            ));
        }
        if self.k == 0 || self.input_h < 2 || self.input_w < 2 {
            return Err(PreprocessError::InvalidParameter(format!(
                "k = {}, input {}x{}",
                self.k, self.input_h, self.input_w
            )));
        }
        Ok(())
    }
}

/// Clean → resample → pair → tensorize.
pub fn prepare_inputs(
    seq: &CsiSequence,
    frames: &[FrameIndexEntry],
    cfg: &PreprocessConfig,
) -> Result<Vec<InputTensor>> {
    let cleaned = remove_outliers(seq, cfg.hampel_window, cfg.hampel_n_mads)?;
    let uniform = resample_uniform(&cleaned, cfg.rate_hz)?;
    pair_windows(&uniform, frames, cfg.k, cfg.pairing)?
        .iter()
        .map(|w| to_input_tensor(w, cfg.input_h, cfg.input_w))
        .collect()
}
