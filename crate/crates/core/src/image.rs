//! RGB frames and binary person masks, with 8-bit PNG encoding.

use std::io::Cursor;

use csi2video_nn::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, ImageError>;

/// 8-bit quantisation used for every PNG write.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f64 {
    f64::from(v) / 255.0
}

/// Planar RGB frame, `[3, h, w]`, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(pub Tensor);

impl Frame {
    pub fn filled(h: usize, w: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * h * w);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, h * w));
        }
        Frame(Tensor::from_vec(&[3, h, w], data).expect("sized above"))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.shape() {
            [3, _, _] => Ok(Frame(t)),
            [1, 3, h, w] => {
                let (h, w) = (*h, *w);
                Ok(Frame(t.reshape(&[3, h, w]).expect("same size")))
            }
            s => Err(ImageError::ShapeMismatch(format!("frame tensor {s:?}"))),
        }
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let (h, w) = (self.height(), self.width());
        let data = self.0.data_mut();
        for (c, v) in rgb.into_iter().enumerate() {
            data[(c * h + y) * w + x] = v;
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    /// Interleaved 8-bit RGB bytes, row-major.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::with_capacity(3 * h * w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out.push(to_u8(self.get(c, y, x)));
                }
            }
        }
        out
    }

    pub fn from_rgb8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * h * w {
            return Err(ImageError::ShapeMismatch(format!(
                "{} bytes for {h}x{w} rgb",
                bytes.len()
            )));
        }
        let mut f = Frame::filled(h, w, [0.0; 3]);
        for (i, px) in bytes.chunks_exact(3).enumerate() {
            f.set_pixel(
                i / w,
                i % w,
                [from_u8(px[0]), from_u8(px[1]), from_u8(px[2])],
            );
        }
        Ok(f)
    }

    /// The frame after an 8-bit PNG round trip.
    pub fn quantized(&self) -> Frame {
        let mut f = self.clone();
        f.0.data_mut()
            .iter_mut()
            .for_each(|v| *v = from_u8(to_u8(*v)));
        f
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode(
            self.width(),
            self.height(),
            png::ColorType::Rgb,
            &self.to_rgb8(),
        )
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, color, data) = decode(bytes)?;
        let rgb: Vec<u8> = match color {
            png::ColorType::Rgb => data,
            png::ColorType::Rgba => data
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
            other => return Err(ImageError::Unsupported(format!("{other:?}"))),
        };
        Frame::from_rgb8(h, w, &rgb)
    }
}

/// Binary person mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl MaskImage {
    pub fn empty(h: usize, w: usize) -> Self {
        MaskImage {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(ImageError::ShapeMismatch(format!(
                "{} mask cells for {h}x{w}",
                data.len()
            )));
        }
        Ok(MaskImage { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn union(&self, other: &MaskImage) -> Result<MaskImage> {
        self.check_same(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(MaskImage { data, ..*self })
    }

    pub(crate) fn check_same(&self, other: &MaskImage) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(ImageError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        Ok(())
    }

    /// Pixels whose colour differs from `background` by more than `tolerance`
    /// in any channel.
    pub fn from_difference(frame: &Frame, background: &Frame, tolerance: f64) -> Result<MaskImage> {
        if frame.0.shape() != background.0.shape() {
            return Err(ImageError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                frame.0.shape(),
                background.0.shape()
            )));
        }
        let (h, w) = (frame.height(), frame.width());
        let mut m = MaskImage::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                let differs = (0..3)
                    .any(|c| (frame.get(c, y, x) - background.get(c, y, x)).abs() > tolerance);
                m.set(y, x, differs);
            }
        }
        Ok(m)
    }

    /// `[1, h, w]` tensor of 0/1 values.
    pub fn to_tensor(&self) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect();
        Tensor::from_vec(&[1, self.h, self.w], data).expect("sized above")
    }

    /// 8-bit grayscale PNG, 0 = background, 255 = person.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        encode(self.w, self.h, png::ColorType::Grayscale, &bytes)
    }

    /// Any non-zero gray level counts as person.
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, color, data) = decode(bytes)?;
        let stride = match color {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => return Err(ImageError::Unsupported(format!("{other:?}"))),
        };
        let cells = data.chunks_exact(stride).map(|p| p[0] != 0).collect();
        MaskImage::from_vec(h, w, cells)
    }
}

fn encode(w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(bytes)?;
        writer.finish()?;
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((
        info.width as usize,
        info.height as usize,
        info.color_type,
        buf,
    ))
}
