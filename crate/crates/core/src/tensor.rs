//! Channel-last floating point images.

use std::fmt;
use std::path::Path;

use image::{ImageBuffer, Rgb, Rgb32FImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `H×W×C` image with `f64` samples stored row-major, channel-last.
///
/// Public constructors only check shape; values are expected to live in
/// `[0, 1]` for anything read from disk, but intermediate results (network
/// activations, gradients) may leave that range.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageTensor({})", self.shape())
    }
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                left: format!("{height}x{width}x{channels}"),
                right: format!("buffer of {} values", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        Shape {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    /// Number of pixels, `H·W`.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                left: self.shape().to_string(),
                right: other.shape().to_string(),
            });
        }
        Ok(())
    }

    pub fn ensure_channels(&self, allowed: &[usize]) -> Result<()> {
        if !allowed.contains(&self.channels) {
            let expected = allowed.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" or ");
            return Err(Error::ChannelCount {
                expected,
                actual: self.channels,
            });
        }
        Ok(())
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> ImageTensor {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageTensor, f: impl Fn(f64, f64) -> f64) -> Result<ImageTensor> {
        self.ensure_same_shape(other)?;
        Ok(ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &ImageTensor) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn clamp01(&self) -> ImageTensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Loads an image file as a 3-channel tensor in `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<ImageTensor> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> ImageTensor {
        match img {
            image::DynamicImage::ImageRgb16(buf) => {
                ImageTensor::from_fn(buf.height() as usize, buf.width() as usize, 3, |y, x, c| {
                    f64::from(buf.get_pixel(x as u32, y as u32)[c]) / 65535.0
                })
            }
            _ => {
                let buf = img.to_rgb8();
                ImageTensor::from_fn(buf.height() as usize, buf.width() as usize, 3, |y, x, c| {
                    f64::from(buf.get_pixel(x as u32, y as u32)[c]) / 255.0
                })
            }
        }
    }

    /// Quantizes to 8-bit RGB. Single-channel tensors are replicated.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            if self.channels == 1 {
                let v = q(self.get(y, x, 0));
                image::Rgb([v, v, v])
            } else {
                image::Rgb([q(self.get(y, x, 0)), q(self.get(y, x, 1)), q(self.get(y, x, 2))])
            }
        })
    }

    /// Writes an 8-bit PNG (lossless for values on the `k/255` grid).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Rounds every sample to the 8-bit grid, i.e. what a PNG round trip yields.
    pub fn quantize8(&self) -> ImageTensor {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    /// Bilinear resize of a 3-channel tensor.
    pub fn resize(&self, height: usize, width: usize) -> Result<ImageTensor> {
        self.ensure_channels(&[3])?;
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let buf: Rgb32FImage = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([
                self.get(y, x, 0) as f32,
                self.get(y, x, 1) as f32,
                self.get(y, x, 2) as f32,
            ])
        });
        let out = image::imageops::resize(&buf, width as u32, height as u32, image::imageops::FilterType::Triangle);
        Ok(ImageTensor::from_fn(height, width, 3, |y, x, c| {
            f64::from(out.get_pixel(x as u32, y as u32)[c])
        }))
    }

    /// Central square (or the given aspect) crop.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImageTensor> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::validation(
                "crop",
                format!("window {height}x{width}+{top}+{left} exceeds {}", self.shape()),
            ));
        }
        Ok(ImageTensor::from_fn(height, width, self.channels, |y, x, c| {
            self.get(y + top, x + left, c)
        }))
    }
}

/// How images are brought to the network's fixed input size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizePolicy {
    #[default]
    Scale,
    CenterCrop,
}

impl ResizePolicy {
    /// `(top, left, height, width)` of the largest centred window of an
    /// `h × w` image with the aspect ratio of `height × width`.
    pub fn crop_window(h: usize, w: usize, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let target = width as f64 / height as f64;
        let (ch, cw) = if (w as f64 / h as f64) > target {
            (h, ((h as f64 * target).round() as usize).clamp(1, w))
        } else {
            (((w as f64 / target).round() as usize).clamp(1, h), w)
        };
        ((h - ch) / 2, (w - cw) / 2, ch, cw)
    }

    pub fn apply(self, img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
        match self {
            ResizePolicy::Scale => img.resize(height, width),
            ResizePolicy::CenterCrop => {
                let (top, left, ch, cw) = Self::crop_window(img.height(), img.width(), height, width);
                img.crop(top, left, ch, cw)?.resize(height, width)
            }
        }
    }

    /// Maps a network output back onto the geometry of `source`. Under
    /// `CenterCrop` the area outside the window keeps the source pixels.
    pub fn restore(self, output: &ImageTensor, source: &ImageTensor) -> Result<ImageTensor> {
        match self {
            ResizePolicy::Scale => output.resize(source.height(), source.width()),
            ResizePolicy::CenterCrop => {
                let (top, left, ch, cw) =
                    Self::crop_window(source.height(), source.width(), output.height(), output.width());
                let inner = output.resize(ch, cw)?;
                let mut out = source.clone();
                for y in 0..ch {
                    for x in 0..cw {
                        for c in 0..out.channels() {
                            out.set(top + y, left + x, c, inner.get(y, x, c));
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}
