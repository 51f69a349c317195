//! Full-reference image quality: PSNR and single-scale SSIM.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{gaussian_kernel, Plane, RgbImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    /// Zero mean squared error.
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => write!(f, "identical"),
            Psnr::Db(v) => write!(f, "{v:.2}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    #[default]
    Luma,
    /// Mean of the per-channel R, G, B scores.
    PerChannel,
}

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::invalid(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// PSNR over all channels of two equally sized buffers.
pub fn psnr_slices(a: &[u8], b: &[u8], max_value: f64) -> Result<Psnr> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("buffer lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("PSNR of empty images"));
    }
    let sse: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(Psnr::Identical);
    }
    let mse = sse as f64 / a.len() as f64;
    Ok(Psnr::Db(10.0 * (max_value * max_value / mse).log10()))
}

pub fn psnr(a: &RgbImage, b: &RgbImage, max_value: f64) -> Result<Psnr> {
    check_dims(a, b)?;
    psnr_slices(a.as_raw(), b.as_raw(), max_value)
}

/// Separable Gaussian filter over the valid region only: output is
/// `(w - 10) × (h - 10)`.
fn filter_valid(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let n = kernel.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = kernel.iter().zip(&src[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| kernel[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 windows of two planes.
pub fn ssim_plane(a: &Plane, b: &Plane, max_value: f64) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::invalid("plane sizes differ"));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {}×{}",
            a.width, a.height
        )));
    }
    let (w, h) = (a.width, a.height);
    let kernel = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&a.data, w, h, &kernel);
    let mu_b = filter_valid(&b.data, w, h, &kernel);
    let e_aa = filter_valid(&prod(&a.data, &a.data), w, h, &kernel);
    let e_bb = filter_valid(&prod(&b.data, &b.data), w, h, &kernel);
    let e_ab = filter_valid(&prod(&a.data, &b.data), w, h, &kernel);
    let c1 = (K1 * max_value).powi(2);
    let c2 = (K2 * max_value).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| window_ssim(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i], c1, c2))
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[inline]
fn window_ssim(ma: f64, mb: f64, eaa: f64, ebb: f64, eab: f64, c1: f64, c2: f64) -> f64 {
    let va = eaa - ma * ma;
    let vb = ebb - mb * mb;
    let cov = eab - ma * mb;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

pub fn ssim(a: &RgbImage, b: &RgbImage, max_value: f64) -> Result<f64> {
    ssim_with(a, b, max_value, SsimMode::Luma)
}

pub fn ssim_with(a: &RgbImage, b: &RgbImage, max_value: f64, mode: SsimMode) -> Result<f64> {
    check_dims(a, b)?;
    match mode {
        SsimMode::Luma => ssim_plane(&Plane::luma_of(a), &Plane::luma_of(b), max_value),
        SsimMode::PerChannel => {
            let mut sum = 0.0;
            for c in 0..3 {
                sum += ssim_plane(&Plane::channel_of(a, c), &Plane::channel_of(b, c), max_value)?;
            }
            Ok(sum / 3.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameScore {
    pub frame_index: usize,
    /// `inf` for identical frames.
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    pub frames: Vec<FrameScore>,
    /// Mean over frames with finite PSNR; `Identical` if every frame matched.
    pub mean_psnr: Psnr,
    pub mean_ssim: f64,
}

impl SequenceReport {
    /// `label: PSNR | SSIM`, two decimals each.
    pub fn table_line(&self, label: &str) -> String {
        format!("{label}: {} | {:.2}", self.mean_psnr, self.mean_ssim)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for f in &self.frames {
            w.serialize(f).map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn evaluate_sequence(renders: &[RgbImage], ground_truth: &[RgbImage], mode: SsimMode) -> Result<SequenceReport> {
    if renders.len() != ground_truth.len() {
        return Err(Error::invalid(format!(
            "{} renders but {} ground-truth images",
            renders.len(),
            ground_truth.len()
        )));
    }
    if renders.is_empty() {
        return Err(Error::invalid("no frames to evaluate"));
    }
    let frames = renders
        .par_iter()
        .zip(ground_truth)
        .enumerate()
        .map(|(i, (r, g))| {
            let p = psnr(r, g, 255.0)?;
            let s = ssim_with(r, g, 255.0, mode)?;
            Ok(FrameScore {
                frame_index: i,
                psnr_db: p.db(),
                ssim: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = frames.iter().map(|f| f.psnr_db).filter(|v| v.is_finite()).collect();
    let mean_psnr = if finite.is_empty() {
        Psnr::Identical
    } else {
        Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    let mean_ssim = frames.iter().map(|f| f.ssim).sum::<f64>() / frames.len() as f64;
    Ok(SequenceReport {
        frames,
        mean_psnr,
        mean_ssim,
    })
}
