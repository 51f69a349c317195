//! Image containers and the small amount of image processing the pipeline
//! needs (grayscale conversion, separable Gaussian blur, bilinear lookups,
//! PNG I/O for 8-bit color and 16-bit depth).

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

pub type RgbImage = image::RgbImage;

/// Metric depth map. A value of `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "depth buffer has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, depth: f32) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, depth: f32) {
        self.data[y as usize * self.width as usize + x as usize] = depth;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Converts millimeter samples (0 = invalid) to meters.
    pub fn from_millimeters(img: &ImageBuffer<Luma<u16>, Vec<u16>>) -> Self {
        let data = img.as_raw().iter().map(|&mm| mm as f32 / 1000.0).collect();
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    /// Quantizes to millimeters. Depths that do not fit in 16 bits become invalid.
    pub fn to_millimeters(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        let raw = self
            .data
            .iter()
            .map(|&d| {
                let mm = (d as f64 * 1000.0).round();
                if d.is_finite() && mm > 0.0 && mm <= u16::MAX as f64 {
                    mm as u16
                } else {
                    0
                }
            })
            .collect();
        ImageBuffer::from_raw(self.width, self.height, raw).expect("buffer size matches")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_error(path, e))?;
        match img {
            image::DynamicImage::ImageLuma16(buf) => Ok(Self::from_millimeters(&buf)),
            other => Err(Error::Image {
                path: path.to_path_buf(),
                reason: format!("expected 16-bit single-channel depth, got {:?}", other.color()),
            }),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_millimeters()
            .save(path)
            .map_err(|e| image_error(path, e))
    }
}

pub(crate) fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_error(path, e))?.to_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| image_error(path, e))
}

/// BT.601 luma on the 0..255 scale.
#[inline]
pub fn luma(p: &Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Single-channel floating point plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn luma_of(img: &RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(luma).collect(),
        }
    }

    pub fn channel_of(img: &RgbImage, channel: usize) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| p[channel] as f64).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Normalized 1-D Gaussian taps, truncated at `radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur of every channel, clamp-to-edge borders. Returns
/// interleaved RGB as `f32` so callers can blend without quantizing twice.
pub fn gaussian_blur_rgb(img: &RgbImage, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let kernel = gaussian_kernel(sigma, radius);
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.as_raw();
    let mut tmp = vec![0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (t, &kv) in kernel.iter().enumerate() {
                let sx = (x as isize + t as isize - radius as isize).clamp(0, w as isize - 1) as usize;
                let base = (y * w + sx) * 3;
                for c in 0..3 {
                    acc[c] += kv * src[base + c] as f64;
                }
            }
            tmp[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0f32; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (t, &kv) in kernel.iter().enumerate() {
                let sy = (y as isize + t as isize - radius as isize).clamp(0, h as isize - 1) as usize;
                let base = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += kv * tmp[base + c];
                }
            }
            for c in 0..3 {
                out[(y * w + x) * 3 + c] = acc[c] as f32;
            }
        }
    }
    out
}

pub fn gaussian_blur_image(img: &RgbImage, sigma: f64) -> RgbImage {
    let blurred = gaussian_blur_rgb(img, sigma);
    let raw = blurred
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_raw(img.width(), img.height(), raw).expect("buffer size matches")
}

/// Bilinear RGB lookup in 0..1 units at continuous pixel coordinates, where
/// integer coordinates are pixel centers. `None` outside `[0, w-1] x [0, h-1]`.
pub fn sample_rgb_bilinear(img: &RgbImage, u: f64, v: f64) -> Option<[f32; 3]> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
        return None;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let x0 = x0 as u32;
    let y0 = y0 as u32;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let p00 = img.get_pixel(x0, y0);
    let p10 = img.get_pixel(x1, y0);
    let p01 = img.get_pixel(x0, y1);
    let p11 = img.get_pixel(x1, y1);
    let mut out = [0f32; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = ((top * (1.0 - fy) + bottom * fy) / 255.0) as f32;
    }
    Some(out)
}

/// Quantizes a 0..1 color to 8 bits.
#[inline]
pub fn to_rgb8(c: [f32; 3]) -> Rgb<u8> {
    Rgb([
        (c[0] * 255.0).round().clamp(0.0, 255.0) as u8,
        (c[1] * 255.0).round().clamp(0.0, 255.0) as u8,
        (c[2] * 255.0).round().clamp(0.0, 255.0) as u8,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn millimeter_round_trip() {
        let mut d = DepthImage::new(3, 2);
        d.set(0, 0, 1.234);
        d.set(2, 1, 65.535);
        d.set(1, 1, 70.0);
        let back = DepthImage::from_millimeters(&d.to_millimeters());
        assert!((back.get(0, 0) - 1.234).abs() < 1e-6);
        assert!((back.get(2, 1) - 65.535).abs() < 1e-4);
        assert_eq!(back.get(1, 1), 0.0, "out of range depth becomes invalid");
        assert_eq!(back.get(1, 0), 0.0);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = RgbImage::from_pixel(9, 7, Rgb([10, 200, 33]));
        assert_eq!(gaussian_blur_image(&img, 1.5), img);
    }

    #[test]
    fn bilinear_midpoint() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, Rgb([0, 0, 0]));
        img.put_pixel(1, 0, Rgb([255, 255, 255]));
        let c = sample_rgb_bilinear(&img, 0.5, 0.0).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-6);
        assert!(sample_rgb_bilinear(&img, 1.01, 0.0).is_none());
    }
}
