//! Image container and file IO.

use std::path::Path;

use candle_core::{Device, Tensor};
use image::{imageops, DynamicImage, RgbImage};

use crate::error::{Error, Result};

/// An `H x W x C` image with values in `[0, 1]`, stored row-major (HWC).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Wrap raw HWC data. Fails on shape mismatch or non-finite values.
    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid_input(format!(
                "image data has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Convert to a `[C, H, W]` tensor.
    pub fn to_chw_tensor(&self, device: &Device) -> Result<Tensor> {
        let mut chw = vec![0.0f32; self.data.len()];
        let plane = self.height * self.width;
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    chw[c * plane + y * self.width + x] = self.get(y, x, c);
                }
            }
        }
        Ok(Tensor::from_vec(chw, (self.channels, self.height, self.width), device)?)
    }

    /// Build from a `[C, H, W]` tensor, clamping values into `[0, 1]`.
    pub fn from_chw_tensor(t: &Tensor) -> Result<Self> {
        let (channels, height, width) = t.dims3()?;
        let chw = t.flatten_all()?.to_vec1::<f32>()?;
        if !chw.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("decoded image contains non-finite values".into()));
        }
        let plane = height * width;
        let mut data = vec![0.0f32; chw.len()];
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data[(y * width + x) * channels + c] = chw[c * plane + y * width + x].clamp(0.0, 1.0);
                }
            }
        }
        Ok(Self { height, width, channels, data })
    }

    /// Stack images of identical shape into a `[B, C, H, W]` tensor.
    pub fn batch_to_tensor(images: &[ImageTensor], device: &Device) -> Result<Tensor> {
        if images.is_empty() {
            return Err(Error::invalid_input("cannot batch zero images"));
        }
        let first = &images[0];
        let mut planes = Vec::with_capacity(images.len());
        for img in images {
            if !img.same_shape(first) {
                return Err(Error::invalid_input("batch images differ in shape"));
            }
            planes.push(img.to_chw_tensor(device)?);
        }
        Ok(Tensor::stack(&planes, 0)?)
    }

    /// Mean absolute difference against another image of the same shape.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<f32> {
        if !self.same_shape(other) {
            return Err(Error::invalid_input("image shape mismatch"));
        }
        let sum: f32 = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len() as f32)
    }

    /// Load from an image file as RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())
            .map_err(|e| Error::ingestion(format!("cannot read {:?}: {e}", path.as_ref())))?;
        Ok(Self::from_rgb(&img.to_rgb8()))
    }

    /// Load and fit to a square `size`: resize the short side to `size`
    /// (bilinear) and center-crop the long side.
    pub fn load_fitted(path: impl AsRef<Path>, size: usize) -> Result<Self> {
        let img = image::open(path.as_ref())
            .map_err(|e| Error::ingestion(format!("cannot read {:?}: {e}", path.as_ref())))?;
        let rgb = fit_to_square(&img.to_rgb8(), size);
        Ok(Self::from_rgb(&rgb))
    }

    pub fn from_rgb(rgb: &RgbImage) -> Self {
        let (width, height) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self { height, width, channels: 3, data }
    }

    pub fn to_rgb(&self) -> Result<RgbImage> {
        if self.channels != 3 {
            return Err(Error::invalid_input(format!("expected 3 channels, found {}", self.channels)));
        }
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::invalid_input("image buffer size mismatch"))
    }

    /// Write as PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb()?.save(path.as_ref())?;
        Ok(())
    }

    /// Extract a `h x w` sub-image with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::invalid_input("crop outside image bounds"));
        }
        let mut out = Self::zeros(h, w, self.channels);
        for dy in 0..h {
            for dx in 0..w {
                for c in 0..self.channels {
                    out.set(dy, dx, c, self.get(y + dy, x + dx, c));
                }
            }
        }
        Ok(out)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = Self::zeros(self.height, self.width, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(y, self.width - 1 - x, c, self.get(y, x, c));
                }
            }
        }
        out
    }

    /// Bilinear resize to `h x w`.
    pub fn resize(&self, h: usize, w: usize) -> Result<Self> {
        let rgb = self.to_rgb()?;
        let resized = imageops::resize(&rgb, w as u32, h as u32, imageops::FilterType::Triangle);
        Ok(Self::from_rgb(&resized))
    }
}

fn fit_to_square(rgb: &RgbImage, size: usize) -> RgbImage {
    let (w, h) = (rgb.width(), rgb.height());
    if w as usize == size && h as usize == size {
        return rgb.clone();
    }
    let scale = size as f64 / w.min(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).max(size as u32);
    let nh = ((h as f64 * scale).round() as u32).max(size as u32);
    let resized = imageops::resize(rgb, nw, nh, imageops::FilterType::Triangle);
    let x0 = (nw - size as u32) / 2;
    let y0 = (nh - size as u32) / 2;
    DynamicImage::ImageRgb8(resized)
        .crop_imm(x0, y0, size as u32, size as u32)
        .to_rgb8()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_roundtrip() {
        let dev = Device::Cpu;
        let mut img = ImageTensor::zeros(4, 5, 3);
        for y in 0..4 {
            for x in 0..5 {
                for c in 0..3 {
                    img.set(y, x, c, ((y * 5 + x) * 3 + c) as f32 / 60.0);
                }
            }
        }
        let t = img.to_chw_tensor(&dev).unwrap();
        assert_eq!(t.dims(), &[3, 4, 5]);
        let back = ImageTensor::from_chw_tensor(&t).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn rejects_non_finite() {
        let r = ImageTensor::from_data(1, 1, 1, vec![f32::NAN]);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn crop_bounds_checked() {
        let img = ImageTensor::zeros(8, 8, 3);
        assert!(img.crop(4, 4, 4, 4).is_ok());
        assert!(img.crop(5, 0, 4, 4).is_err());
    }

    #[test]
    fn flip_is_involutive() {
        let mut img = ImageTensor::zeros(2, 3, 1);
        for x in 0..3 {
            img.set(0, x, 0, x as f32 / 3.0);
        }
        let flipped = img.flip_horizontal();
        assert_eq!(flipped.get(0, 0, 0), img.get(0, 2, 0));
        assert_eq!(flipped.flip_horizontal(), img);
    }
}
