//! CSI domain types and the CSIL binary log format.
//!
//! CSIL layout (little-endian):
//!
//! ```text
//! header (18 bytes)
//!   magic            "CSIL"
//!   version          u16 = 1
//!   n_tx             u8
//!   n_rx             u8
//!   n_c              u16
//!   nominal_rate_hz  f64
//! records (zero or more, each 8 + 8·n_tx·n_rx·n_c bytes)
//!   timestamp_us     u64
//!   samples          (re f32, im f32) × n_tx·n_rx·n_c, tx-major, then rx, then subcarrier
//! ```
//!
//! Samples are held as `f64` in memory and rounded to `f32` on write.

use std::ops::{Add, Mul};

use thiserror::Error;

pub const CSIL_MAGIC: &[u8; 4] = b"CSIL";
pub const CSIL_VERSION: u16 = 1;
pub const CSIL_HEADER_LEN: usize = 18;

#[derive(Debug, Error, PartialEq)]
pub enum CsilError {
    #[error("not a CSIL stream (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported CSIL version {0}")]
    UnsupportedVersion(u16),
    #[error("stream shorter than the {CSIL_HEADER_LEN}-byte header")]
    TruncatedHeader,
    #[error("record {index} truncated: {available} of {needed} bytes present")]
    TruncatedRecord {
        index: usize,
        needed: usize,
        available: usize,
    },
    #[error("timestamp of record {index} ({ts} us) does not exceed its predecessor")]
    NonMonotonicTimestamps { index: usize, ts: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("record {index} holds a non-finite sample")]
    NonFiniteSample { index: usize },
}

/// One complex channel gain.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComplexSample {
    pub re: f64,
    pub im: f64,
}

impl ComplexSample {
    pub const ZERO: ComplexSample = ComplexSample { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        ComplexSample { re, im }
    }

    /// `magnitude · e^{i·phase}`
    pub fn from_polar(magnitude: f64, phase: f64) -> Self {
        let (s, c) = phase.sin_cos();
        ComplexSample {
            re: magnitude * c,
            im: magnitude * s,
        }
    }

    pub fn norm(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn scale(self, k: f64) -> Self {
        ComplexSample {
            re: self.re * k,
            im: self.im * k,
        }
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    /// Linear interpolation `(1 − t)·self + t·other`, component-wise.
    pub fn lerp(self, other: Self, t: f64) -> Self {
        ComplexSample {
            re: self.re + (other.re - self.re) * t,
            im: self.im + (other.im - self.im) * t,
        }
    }
}

impl Add for ComplexSample {
    type Output = ComplexSample;
    fn add(self, o: Self) -> Self {
        ComplexSample {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl Mul for ComplexSample {
    type Output = ComplexSample;
    fn mul(self, o: Self) -> Self {
        ComplexSample {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsiHeader {
    pub nominal_rate_hz: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_c: usize,
}

impl CsiHeader {
    /// 3×3 antennas, 30 subcarriers.
    pub fn intel5300(nominal_rate_hz: f64) -> Self {
        CsiHeader {
            nominal_rate_hz,
            n_tx: 3,
            n_rx: 3,
            n_c: 30,
        }
    }

    pub fn samples_per_record(&self) -> usize {
        self.n_tx * self.n_rx * self.n_c
    }

    pub fn record_len(&self) -> usize {
        8 + 8 * self.samples_per_record()
    }
}

/// One timestamped `n_tx × n_rx × n_c` channel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiMeasurement {
    pub timestamp_us: u64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_c: usize,
    values: Vec<ComplexSample>,
}

impl CsiMeasurement {
    pub fn new(
        timestamp_us: u64,
        n_tx: usize,
        n_rx: usize,
        n_c: usize,
        values: Vec<ComplexSample>,
    ) -> Result<Self, CsilError> {
        if n_tx == 0 || n_rx == 0 || n_c == 0 {
            return Err(CsilError::DimensionMismatch(format!(
                "zero dimension {n_tx}x{n_rx}x{n_c}"
            )));
        }
        if values.len() != n_tx * n_rx * n_c {
            return Err(CsilError::DimensionMismatch(format!(
                "{} values for {n_tx}x{n_rx}x{n_c}",
                values.len()
            )));
        }
        Ok(CsiMeasurement {
            timestamp_us,
            n_tx,
            n_rx,
            n_c,
            values,
        })
    }

    pub fn values(&self) -> &[ComplexSample] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ComplexSample] {
        &mut self.values
    }

    pub fn index(&self, tx: usize, rx: usize, c: usize) -> usize {
        (tx * self.n_rx + rx) * self.n_c + c
    }

    pub fn get(&self, tx: usize, rx: usize, c: usize) -> ComplexSample {
        self.values[self.index(tx, rx, c)]
    }

    fn matches(&self, h: &CsiHeader) -> bool {
        (self.n_tx, self.n_rx, self.n_c) == (h.n_tx, h.n_rx, h.n_c)
    }
}

/// Element-wise modulus of a measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeMeasurement {
    pub timestamp_us: u64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_c: usize,
    pub amplitudes: Vec<f64>,
}

pub fn amplitude(m: &CsiMeasurement) -> AmplitudeMeasurement {
    AmplitudeMeasurement {
        timestamp_us: m.timestamp_us,
        n_tx: m.n_tx,
        n_rx: m.n_rx,
        n_c: m.n_c,
        amplitudes: m.values.iter().map(|v| v.norm()).collect(),
    }
}

/// A CSI stream sharing one header; timestamps strictly increase.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiSequence {
    pub header: CsiHeader,
    records: Vec<CsiMeasurement>,
}

impl CsiSequence {
    pub fn new(header: CsiHeader, records: Vec<CsiMeasurement>) -> Result<Self, CsilError> {
        let seq = CsiSequence { header, records };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), CsilError> {
        let h = &self.header;
        if h.n_tx == 0 || h.n_rx == 0 || h.n_c == 0 || h.n_tx > 255 || h.n_rx > 255 || h.n_c > 65535
        {
            return Err(CsilError::DimensionMismatch(format!(
                "header dimensions {}x{}x{}",
                h.n_tx, h.n_rx, h.n_c
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            if !r.matches(h) {
                return Err(CsilError::DimensionMismatch(format!(
                    "record {i} is {}x{}x{}, header {}x{}x{}",
                    r.n_tx, r.n_rx, r.n_c, h.n_tx, h.n_rx, h.n_c
                )));
            }
            if i > 0 && r.timestamp_us <= self.records[i - 1].timestamp_us {
                return Err(CsilError::NonMonotonicTimestamps {
                    index: i,
                    ts: r.timestamp_us,
                });
            }
            if !r.values.iter().all(|v| v.is_finite()) {
                return Err(CsilError::NonFiniteSample { index: i });
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[CsiMeasurement] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.timestamp_us).collect()
    }

    pub fn amplitudes(&self) -> Vec<AmplitudeMeasurement> {
        self.records.iter().map(amplitude).collect()
    }
}

pub fn write_csil(seq: &CsiSequence) -> Result<Vec<u8>, CsilError> {
    seq.validate()?;
    let h = &seq.header;
    let mut out = Vec::with_capacity(CSIL_HEADER_LEN + seq.records.len() * h.record_len());
    out.extend_from_slice(CSIL_MAGIC);
    out.extend_from_slice(&CSIL_VERSION.to_le_bytes());
    out.push(h.n_tx as u8);
    out.push(h.n_rx as u8);
    out.extend_from_slice(&(h.n_c as u16).to_le_bytes());
    out.extend_from_slice(&h.nominal_rate_hz.to_le_bytes());
    for r in &seq.records {
        out.extend_from_slice(&r.timestamp_us.to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&(v.re as f32).to_le_bytes());
            out.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_csil(bytes: &[u8]) -> Result<CsiSequence, CsilError> {
    if bytes.len() < 4 {
        return Err(CsilError::TruncatedHeader);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != CSIL_MAGIC {
        return Err(CsilError::BadMagic(magic));
    }
    if bytes.len() < CSIL_HEADER_LEN {
        return Err(CsilError::TruncatedHeader);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CSIL_VERSION {
        return Err(CsilError::UnsupportedVersion(version));
    }
    let header = CsiHeader {
        n_tx: bytes[6] as usize,
        n_rx: bytes[7] as usize,
        n_c: u16::from_le_bytes([bytes[8], bytes[9]]) as usize,
        nominal_rate_hz: f64::from_le_bytes(bytes[10..18].try_into().unwrap()),
    };
    if header.samples_per_record() == 0 {
        return Err(CsilError::DimensionMismatch(format!(
            "header dimensions {}x{}x{}",
            header.n_tx, header.n_rx, header.n_c
        )));
    }
    let rec_len = header.record_len();
    let body = &bytes[CSIL_HEADER_LEN..];
    let mut records = Vec::with_capacity(body.len() / rec_len);
    for (index, chunk) in body.chunks(rec_len).enumerate() {
        if chunk.len() < rec_len {
            return Err(CsilError::TruncatedRecord {
                index,
                needed: rec_len,
                available: chunk.len(),
            });
        }
        let ts = u64::from_le_bytes(chunk[..8].try_into().unwrap());
        let values = chunk[8..]
            .chunks_exact(8)
            .map(|p| {
                let re = f32::from_le_bytes(p[..4].try_into().unwrap());
                let im = f32::from_le_bytes(p[4..].try_into().unwrap());
                ComplexSample::new(re as f64, im as f64)
            })
            .collect();
        records.push(CsiMeasurement::new(
            ts,
            header.n_tx,
            header.n_rx,
            header.n_c,
            values,
        )?);
    }
    CsiSequence::new(header, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> CsiSequence {
        let h = CsiHeader::intel5300(100.0);
        let records = (0..n)
            .map(|i| {
                let vals = (0..270)
                    .map(|k| ComplexSample::new(k as f64 * 0.25, -(i as f64) - 0.5))
                    .collect();
                CsiMeasurement::new(i as u64 * 10_000, 3, 3, 30, vals).unwrap()
            })
            .collect();
        CsiSequence::new(h, records).unwrap()
    }

    #[test]
    fn header_only_file() {
        let bytes = write_csil(&seq(0)).unwrap();
        assert_eq!(bytes.len(), CSIL_HEADER_LEN);
        assert_eq!(&bytes[..4], b"CSIL");
        assert_eq!(parse_csil(&bytes).unwrap(), seq(0));
    }

    #[test]
    fn one_record_file_size() {
        let bytes = write_csil(&seq(1)).unwrap();
        assert_eq!(bytes.len(), CSIL_HEADER_LEN + 8 + 270 * 8);
    }

    #[test]
    fn writing_is_deterministic_and_round_trips() {
        let s = seq(4);
        let a = write_csil(&s).unwrap();
        let b = write_csil(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_csil(&a).unwrap(), s);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = write_csil(&seq(1)).unwrap();
        bytes[..4].copy_from_slice(b"QSIL");
        assert_eq!(parse_csil(&bytes), Err(CsilError::BadMagic(*b"QSIL")));
    }

    #[test]
    fn half_record_is_truncated() {
        let bytes = write_csil(&seq(1)).unwrap();
        let cut = CSIL_HEADER_LEN + (8 + 270 * 8) / 2;
        assert!(matches!(
            parse_csil(&bytes[..cut]),
            Err(CsilError::TruncatedRecord { index: 0, .. })
        ));
    }

    #[test]
    fn non_monotonic_timestamps_rejected() {
        let mut bytes = write_csil(&seq(2)).unwrap();
        let second = CSIL_HEADER_LEN + 8 + 270 * 8;
        bytes[second..second + 8].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(
            parse_csil(&bytes),
            Err(CsilError::NonMonotonicTimestamps { index: 1, .. })
        ));
    }

    #[test]
    fn mismatched_record_rejected_on_write() {
        let mut s = seq(1);
        s.records
            .push(CsiMeasurement::new(99_999, 1, 1, 2, vec![ComplexSample::ZERO; 2]).unwrap());
        assert!(matches!(
            write_csil(&s),
            Err(CsilError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn amplitude_examples() {
        let m = CsiMeasurement::new(
            7,
            1,
            1,
            3,
            vec![
                ComplexSample::new(3.0, 4.0),
                ComplexSample::ZERO,
                ComplexSample::new(-1.0, 0.0),
            ],
        )
        .unwrap();
        let a = amplitude(&m);
        assert_eq!(a.amplitudes, vec![5.0, 0.0, 1.0]);
        assert_eq!(a.timestamp_us, 7);
    }
}
