//! H×W×3 float images with explicit value-range metadata, plus PNG I/O and
//! the center-crop/bilinear resize policy used at inference time.

use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{ImageFormat, RgbImage};
use tint_autograd::{Real, Tensor};

use crate::colorlab::{srgb_channels_to_lab, LabColor};
use crate::error::{Error, Result};

/// Value convention of an [`ImageTensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRange {
    /// sRGB-encoded values in `[0, 1]`.
    Unit,
    /// The same values mapped affinely to `[-1, 1]`, as the networks see them.
    Signed,
}

/// Row-major H×W×3 image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    range: ValueRange,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, range: ValueRange, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{}x{}x3 image needs {} values, got {}",
                height,
                width,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            range,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            range: ValueRange::Unit,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// The same image in `[0, 1]`.
    pub fn to_unit(&self) -> Self {
        match self.range {
            ValueRange::Unit => self.clone(),
            ValueRange::Signed => Self {
                range: ValueRange::Unit,
                data: self.data.iter().map(|&v| (v + 1.0) * 0.5).collect(),
                ..*self
            },
        }
    }

    /// The same image in `[-1, 1]`.
    pub fn to_signed(&self) -> Self {
        match self.range {
            ValueRange::Signed => self.clone(),
            ValueRange::Unit => Self {
                range: ValueRange::Signed,
                data: self.data.iter().map(|&v| v * 2.0 - 1.0).collect(),
                ..*self
            },
        }
    }

    /// Lab color of pixel `(x, y)`; the image must be in unit range.
    pub fn lab_at(&self, x: usize, y: usize) -> LabColor {
        debug_assert_eq!(self.range, ValueRange::Unit);
        srgb_channels_to_lab(self.pixel(x, y).map(|v| (v as f64).clamp(0.0, 1.0)))
    }

    /// Packs images of identical size into an NCHW tensor, keeping their ranges.
    pub fn batch_to_tensor<R: Real>(images: &[&ImageTensor]) -> Result<Tensor<R>> {
        let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (w, h) = first.dims();
        let plane = w * h;
        let mut data = vec![R::zero(); images.len() * 3 * plane];
        for (s, img) in images.iter().enumerate() {
            if img.dims() != (w, h) {
                return Err(Error::Shape(format!("batch mixes {:?} and {:?}", (w, h), img.dims())));
            }
            let dst = &mut data[s * 3 * plane..(s + 1) * 3 * plane];
            for (p, px) in img.data.chunks(3).enumerate() {
                for c in 0..3 {
                    dst[c * plane + p] = R::lit(px[c] as f64);
                }
            }
        }
        Ok(Tensor::from_vec(&[images.len(), 3, h, w], data))
    }

    /// Unpacks sample `index` of an NCHW tensor.
    pub fn from_tensor<R: Real>(t: &Tensor<R>, index: usize, range: ValueRange) -> Self {
        let (_, c, h, w) = t.dims4();
        assert_eq!(c, 3, "expected 3 channels");
        let plane = h * w;
        let src = &t.data()[index * 3 * plane..(index + 1) * 3 * plane];
        let mut data = vec![0f32; 3 * plane];
        for p in 0..plane {
            for ch in 0..3 {
                data[p * 3 + ch] = src[ch * plane + p].as_f64() as f32;
            }
        }
        Self {
            width: w,
            height: h,
            range,
            data,
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            range: ValueRange::Unit,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    /// 8-bit encoding with round-to-nearest.
    pub fn to_rgb8(&self) -> RgbImage {
        let unit = self.to_unit();
        let raw = unit
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer sized from dims")
    }

    /// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(&self.to_rgb8())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }

    /// Decodes any supported encoded image into unit range.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    /// Center-crops to a square, then resizes bilinearly to `side`×`side`.
    /// Images already at the target size pass through untouched.
    pub fn center_crop_resize(&self, side: usize) -> Self {
        let unit = self.to_unit();
        if unit.width == side && unit.height == side {
            return unit;
        }
        let s = unit.width.min(unit.height);
        let (x0, y0) = ((unit.width - s) / 2, (unit.height - s) / 2);
        let mut buf = image::Rgb32FImage::new(s as u32, s as u32);
        for y in 0..s {
            for x in 0..s {
                buf.put_pixel(x as u32, y as u32, image::Rgb(unit.pixel(x0 + x, y0 + y)));
            }
        }
        let resized = image::imageops::resize(&buf, side as u32, side as u32, FilterType::Triangle);
        Self {
            width: side,
            height: side,
            range: ValueRange::Unit,
            data: resized.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Nearest-neighbour upscaling by an integer factor.
    pub fn upscale_nearest(&self, factor: usize) -> Self {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&self.pixel(x / factor, y / factor));
            }
        }
        Self {
            width: w,
            height: h,
            range: self.range,
            data,
        }
    }

    /// Mean absolute difference over all values, both images in unit range.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        let (a, b) = (self.to_unit(), other.to_unit());
        let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs() as f64).sum();
        Ok(sum / a.data.len() as f64)
    }
}
