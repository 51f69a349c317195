//! Frame selection by sharpness, unsharp-mask boosting, and pose export for
//! radiance-field trainers.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur_rgb, save_rgb, Plane, RgbImage};

pub const MANIFEST_FILE: &str = "nerf_transforms.json";
pub const UNSHARP_SIGMA: f64 = 1.5;
pub const MAX_UNSHARP_AMOUNT: f64 = 5.0;
const SEARCH_STEPS: usize = 24;

/// Variance of the 4-neighbor Laplacian of the 0..255 luma, over pixels
/// whose full 3×3 neighborhood is inside the image.
pub fn sharpness_score(img: &RgbImage) -> f64 {
    let luma = Plane::luma_of(img);
    let (w, h) = (luma.width, luma.height);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let l = luma.at(x, y - 1) + luma.at(x - 1, y) + luma.at(x + 1, y) + luma.at(x, y + 1)
                - 4.0 * luma.at(x, y);
            sum += l;
            sum_sq += l * l;
        }
    }
    let n = ((w - 2) * (h - 2)) as f64;
    let mean = sum / n;
    (sum_sq / n - mean * mean).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sharpened {
    pub image: RgbImage,
    /// Unsharp-mask amount applied.
    pub amount: f64,
    pub sharpness: f64,
    /// The threshold was not met even at the maximum amount.
    pub unreached: bool,
}

fn unsharp(img: &RgbImage, blurred: &[f32], amount: f64) -> RgbImage {
    let mut out = img.clone();
    for (o, (&v, &b)) in out.iter_mut().zip(img.as_raw().iter().zip(blurred)) {
        let s = v as f64 + amount * (v as f64 - b as f64);
        *o = s.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Smallest unsharp-mask amount in `[0, 5]` bringing the sharpness score to
/// `threshold`, found by bisection.
pub fn sharpen_to_threshold(img: &RgbImage, threshold: f64) -> Result<Sharpened> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("sharpness threshold must be positive, got {threshold}")));
    }
    let base = sharpness_score(img);
    if base >= threshold {
        return Ok(Sharpened {
            image: img.clone(),
            amount: 0.0,
            sharpness: base,
            unreached: false,
        });
    }
    let blurred = gaussian_blur_rgb(img, UNSHARP_SIGMA);
    let max_img = unsharp(img, &blurred, MAX_UNSHARP_AMOUNT);
    let max_score = sharpness_score(&max_img);
    if max_score < threshold {
        return Ok(Sharpened {
            image: max_img,
            amount: MAX_UNSHARP_AMOUNT,
            sharpness: max_score,
            unreached: true,
        });
    }
    let (mut lo, mut hi) = (0.0, MAX_UNSHARP_AMOUNT);
    let (mut best, mut best_score) = (max_img, max_score);
    for _ in 0..SEARCH_STEPS {
        let mid = 0.5 * (lo + hi);
        let candidate = unsharp(img, &blurred, mid);
        let s = sharpness_score(&candidate);
        if s >= threshold {
            hi = mid;
            best = candidate;
            best_score = s;
        } else {
            lo = mid;
        }
    }
    if best_score < threshold {
        return Err(Error::Degenerate("unsharp mask search lost the threshold".into()));
    }
    Ok(Sharpened {
        image: best,
        amount: hi,
        sharpness: best_score,
        unreached: false,
    })
}

/// `[start, end)` of each of `n` contiguous groups; earlier groups take the
/// remainder.
pub fn group_bounds(len: usize, n: usize) -> Result<Vec<(usize, usize)>> {
    if n == 0 || len < n {
        return Err(Error::invalid(format!("cannot select {n} frames from {len}")));
    }
    let (base, extra) = (len / n, len % n);
    let mut start = 0;
    Ok((0..n)
        .map(|g| {
            let size = base + usize::from(g < extra);
            let b = (start, start + size);
            start += size;
            b
        })
        .collect())
}

/// Index of the sharpest frame per group, earliest on ties.
pub fn select_indices(scores: &[f64], n: usize) -> Result<Vec<usize>> {
    Ok(group_bounds(scores.len(), n)?
        .into_iter()
        .map(|(s, e)| {
            (s..e).fold(s, |best, i| if scores[i] > scores[best] { i } else { best })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFrame {
    /// Position in the input sequence.
    pub index: usize,
    pub original_sharpness: f64,
    pub output: Sharpened,
}

pub fn select_sharp_frames(frames: &[RgbImage], n: usize, threshold: f64) -> Result<Vec<SelectedFrame>> {
    let scores: Vec<f64> = frames.par_iter().map(sharpness_score).collect();
    let picks = select_indices(&scores, n)?;
    picks
        .into_par_iter()
        .map(|i| {
            Ok(SelectedFrame {
                index: i,
                original_sharpness: scores[i],
                output: sharpen_to_threshold(&frames[i], threshold)?,
            })
        })
        .collect()
}

/// Maps +Z-forward/+Y-down camera axes to -Z-forward/+Y-up.
pub fn axis_flip() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentTransform {
    pub rotation_convention: Matrix3<f64>,
    pub translation_offset: Vector3<f64>,
    pub scale: f64,
}

impl AlignmentTransform {
    /// Camera-to-world matrix in the trainer's convention.
    pub fn apply(&self, pose: &Pose) -> Matrix4<f64> {
        let r = pose.rotation() * self.rotation_convention;
        let c = (pose.center() + self.translation_offset) * self.scale;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
        m
    }

    pub fn invert(&self, m: &Matrix4<f64>) -> Result<Pose> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let c: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
        let inv = self
            .rotation_convention
            .try_inverse()
            .ok_or_else(|| Error::invalid("axis convention matrix is singular"))?;
        Pose::with_tolerance(r * inv, c / self.scale - self.translation_offset, 1e-5)
    }
}

pub fn compute_alignment(train_poses: &[Pose]) -> Result<AlignmentTransform> {
    compute_alignment_with_target(train_poses, 1.0)
}

/// Centers the cameras on their centroid and scales the mean center
/// distance to `target`.
pub fn compute_alignment_with_target(train_poses: &[Pose], target: f64) -> Result<AlignmentTransform> {
    if train_poses.len() < 2 {
        return Err(Error::invalid("alignment needs at least two poses"));
    }
    if !(target > 0.0) {
        return Err(Error::invalid(format!("scale target must be positive, got {target}")));
    }
    let centers: Vec<Vector3<f64>> = train_poses.iter().map(|p| p.center()).collect();
    let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let mean = centers.iter().map(|c| (c - centroid).norm()).sum::<f64>() / centers.len() as f64;
    if !(mean > 1e-12) {
        return Err(Error::Degenerate("all camera centers coincide".into()));
    }
    Ok(AlignmentTransform {
        rotation_convention: axis_flip(),
        translation_offset: -centroid,
        scale: target / mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerfFrame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBlock {
    pub offset: [f64; 3],
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerfManifest {
    pub w: u32,
    pub h: u32,
    pub fl_x: f64,
    pub fl_y: f64,
    pub cx: f64,
    pub cy: f64,
    pub camera_angle_x: f64,
    pub alignment: AlignmentBlock,
    pub frames: Vec<NerfFrame>,
}

fn to_rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

impl NerfManifest {
    pub fn alignment(&self) -> AlignmentTransform {
        AlignmentTransform {
            rotation_convention: axis_flip(),
            translation_offset: Vector3::from(self.alignment.offset),
            scale: self.alignment.scale,
        }
    }

    /// Poses back in the capture convention.
    pub fn poses(&self) -> Result<Vec<Pose>> {
        let a = self.alignment();
        self.frames
            .iter()
            .map(|f| a.invert(&Matrix4::from_fn(|r, c| f.transform_matrix[r][c])))
            .collect()
    }

    pub fn build(intr: &CameraIntrinsics, alignment: &AlignmentTransform, frames: &[(String, Pose)]) -> Self {
        Self {
            w: intr.width,
            h: intr.height,
            fl_x: intr.fx,
            fl_y: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            camera_angle_x: 2.0 * (intr.width as f64 / (2.0 * intr.fx)).atan(),
            alignment: AlignmentBlock {
                offset: alignment.translation_offset.into(),
                scale: alignment.scale,
            },
            frames: frames
                .iter()
                .map(|(path, pose)| NerfFrame {
                    file_path: path.clone(),
                    transform_matrix: to_rows(&alignment.apply(pose)),
                })
                .collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A frame to export: output file stem, image and capture pose.
pub struct ExportFrame<'a> {
    pub name: String,
    pub image: &'a RgbImage,
    pub pose: Pose,
}

/// Writes `images/<name>.png` plus the manifest into `out_dir`.
pub fn export_nerf_dataset(
    frames: &[ExportFrame<'_>],
    alignment: &AlignmentTransform,
    intr: &CameraIntrinsics,
    out_dir: &Path,
) -> Result<PathBuf> {
    if !(alignment.scale > 0.0) || !alignment.scale.is_finite() {
        return Err(Error::invalid("alignment scale must be positive"));
    }
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        if f.image.dimensions() != (intr.width, intr.height) {
            return Err(Error::invalid(format!(
                "frame {} is {:?}, intrinsics expect {}x{}",
                f.name,
                f.image.dimensions(),
                intr.width,
                intr.height
            )));
        }
        let rel = format!("images/{}.png", f.name);
        save_rgb(f.image, &out_dir.join(&rel))?;
        entries.push((rel, f.pose));
    }
    let manifest = NerfManifest::build(intr, alignment, &entries);
    let path = out_dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::gaussian_blur_image;
    use image::Rgb;

    fn checker(w: u32, h: u32, cell: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = if (x / cell + y / cell) % 2 == 0 { 40 } else { 210 };
            Rgb([v, v, v])
        })
    }

    #[test]
    fn constant_image_scores_zero() {
        assert_eq!(sharpness_score(&RgbImage::from_pixel(20, 20, Rgb([7, 7, 7]))), 0.0);
    }

    #[test]
    fn blur_lowers_sharpness() {
        let c = checker(32, 32, 1);
        let s = sharpness_score(&c);
        for sigma in [0.5, 1.0, 2.0] {
            assert!(s > sharpness_score(&gaussian_blur_image(&c, sigma)));
        }
    }

    #[test]
    fn sharpening_hits_threshold_closely() {
        let soft = gaussian_blur_image(&checker(64, 64, 4), 2.0);
        assert!(sharpness_score(&soft) < 150.0);
        let out = sharpen_to_threshold(&soft, 150.0).unwrap();
        assert!(!out.unreached);
        assert!(out.sharpness >= 150.0 && out.sharpness <= 157.5, "{}", out.sharpness);
        assert!((sharpness_score(&out.image) - out.sharpness).abs() < 1e-9);
    }

    #[test]
    fn sharp_or_flat_inputs() {
        let c = checker(16, 16, 1);
        let out = sharpen_to_threshold(&c, 10.0).unwrap();
        assert_eq!(out.amount, 0.0);
        assert_eq!(out.image, c);
        let flat = RgbImage::from_pixel(16, 16, Rgb([90, 90, 90]));
        assert!(sharpen_to_threshold(&flat, 1.0).unwrap().unreached);
        assert!(sharpen_to_threshold(&flat, 0.0).is_err());
    }

    #[test]
    fn groups_partition_and_pick_argmax() {
        let b = group_bounds(11, 4).unwrap();
        assert_eq!(b, vec![(0, 3), (3, 6), (6, 9), (9, 11)]);
        let scores = [1.0, 5.0, 5.0, 2.0, 2.0, 0.0, 9.0, 1.0, 1.0, 3.0, 4.0];
        assert_eq!(select_indices(&scores, 4).unwrap(), vec![1, 3, 6, 10]);
        assert_eq!(select_indices(&scores, 11).unwrap(), (0..11).collect::<Vec<_>>());
        assert_eq!(select_indices(&[0.0; 10], 5).unwrap(), vec![0, 2, 4, 6, 8]);
        assert!(select_indices(&scores, 12).is_err());
        assert!(select_indices(&scores, 0).is_err());
    }

    fn at(c: Vector3<f64>) -> Pose {
        Pose::from_translation(c)
    }

    #[test]
    fn alignment_examples() {
        let a = compute_alignment(&[
            at(Vector3::new(1.0, 0.0, 0.0)),
            at(Vector3::new(-1.0, 0.0, 0.0)),
            at(Vector3::new(0.0, 1.0, 0.0)),
            at(Vector3::new(0.0, -1.0, 0.0)),
        ])
        .unwrap();
        assert!(a.translation_offset.norm() < 1e-12);
        assert!((a.scale - 1.0).abs() < 1e-12);
        let b = compute_alignment(&[at(Vector3::new(2.0, 2.0, 2.0)), at(Vector3::new(4.0, 2.0, 2.0))]).unwrap();
        assert!((b.translation_offset - Vector3::new(-3.0, -2.0, -2.0)).norm() < 1e-12);
        assert!((b.scale - 1.0).abs() < 1e-12);
        assert!(compute_alignment(&[at(Vector3::repeat(1.0)); 3]).is_err());
        assert!(compute_alignment(&[at(Vector3::zeros())]).is_err());

        let m = b.apply(&Pose::identity());
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        assert_eq!(r, axis_flip());
        assert!((m.fixed_view::<3, 1>(0, 3).into_owned() - b.translation_offset * b.scale).norm() < 1e-12);
    }

    #[test]
    fn manifest_round_trip() {
        let poses: Vec<Pose> = (0..6)
            .map(|i| {
                let t = i as f64;
                Pose::look_at(
                    Vector3::new(t.cos() * 2.0, t.sin() * 2.0, 1.0 + 0.1 * t),
                    Vector3::zeros(),
                    Vector3::z(),
                )
                .unwrap()
            })
            .collect();
        let a = compute_alignment(&poses).unwrap();
        let intr = CameraIntrinsics::from_hfov(32, 24, 64.69).unwrap();
        let frames: Vec<(String, Pose)> = poses.iter().enumerate().map(|(i, p)| (format!("{i}"), *p)).collect();
        let m = NerfManifest::build(&intr, &a, &frames);
        let back = m.poses().unwrap();
        let again = NerfManifest::build(
            &intr,
            &m.alignment(),
            &back.iter().enumerate().map(|(i, p)| (format!("{i}"), *p)).collect::<Vec<_>>(),
        );
        for (f, g) in m.frames.iter().zip(&again.frames) {
            for r in 0..4 {
                for c in 0..4 {
                    assert!((f.transform_matrix[r][c] - g.transform_matrix[r][c]).abs() < 1e-6);
                }
            }
        }
        let centers: Vec<Vector3<f64>> = m
            .frames
            .iter()
            .map(|f| Vector3::new(f.transform_matrix[0][3], f.transform_matrix[1][3], f.transform_matrix[2][3]))
            .collect();
        let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
        assert!(centroid.norm() < 1e-9);
        let mean = centers.iter().map(|c| c.norm()).sum::<f64>() / centers.len() as f64;
        assert!((mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn export_writes_images_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let img = checker(8, 6, 2);
        let intr = CameraIntrinsics::from_hfov(8, 6, 60.0).unwrap();
        let poses = [at(Vector3::zeros()), at(Vector3::new(1.0, 0.0, 0.0))];
        let a = compute_alignment(&poses).unwrap();
        let frames: Vec<ExportFrame> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| ExportFrame {
                name: format!("{i:04}"),
                image: &img,
                pose: *p,
            })
            .collect();
        let path = export_nerf_dataset(&frames, &a, &intr, dir.path()).unwrap();
        let m = NerfManifest::read(&path).unwrap();
        assert_eq!(m.frames.len(), 2);
        assert!(dir.path().join("images/0001.png").exists());
        let test_dir = dir.path().join("test");
        let p2 = export_nerf_dataset(&frames[..1], &a, &intr, &test_dir).unwrap();
        let m2 = NerfManifest::read(&p2).unwrap();
        assert_eq!(
            serde_json::to_string(&m.alignment).unwrap(),
            serde_json::to_string(&m2.alignment).unwrap()
        );
    }
}
