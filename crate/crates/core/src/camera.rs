//! Pinhole camera with Brown-Conrady distortion, rigid poses, and the
//! field-of-view to focal-length conversion used for widened renders.
//!
//! Conventions are fixed for the whole crate: camera frame is +Z forward,
//! +X right, +Y down, and poses map camera coordinates into world
//! coordinates (their translation is the camera center).

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{sample_rgb_bilinear, DepthImage, RgbImage};

/// Points closer than this along the optical axis do not project.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

const UNDISTORT_MAX_ITERS: usize = 20;
const UNDISTORT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Camera with the principal point at the image center and square pixels.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Result<Self> {
        check_fov(hfov_deg)?;
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn hfov_deg(&self) -> f64 {
        2.0 * ((self.width as f64 / 2.0) / self.fx).atan().to_degrees()
    }

    pub fn vfov_deg(&self) -> f64 {
        2.0 * ((self.height as f64 / 2.0) / self.fy).atan().to_degrees()
    }
}

/// Brown-Conrady coefficients. All zero means no distortion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Distortion {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn radial(k1: f64, k2: f64, k3: f64) -> Self {
        Self {
            k1,
            k2,
            k3,
            ..Self::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if [self.k1, self.k2, self.k3, self.p1, self.p2].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("distortion coefficients must be finite"))
        }
    }

    /// Maps an ideal normalized point to its distorted position.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        if self.is_zero() {
            return (x, y);
        }
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Inverts [`Distortion::distort`] by fixed-point iteration.
    pub fn undistort(&self, xd: f64, yd: f64) -> (f64, f64) {
        if self.is_zero() {
            return (xd, yd);
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_MAX_ITERS {
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            let nx = (xd - dx) / radial;
            let ny = (yd - dy) / radial;
            let step = (nx - x).abs().max((ny - y).abs());
            x = nx;
            y = ny;
            if step < UNDISTORT_TOL {
                break;
            }
        }
        (x, y)
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

pub const ROTATION_TOLERANCE: f64 = 1e-6;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose has non-finite entries"));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > tol {
            return Err(Error::invalid(format!("rotation not orthonormal (max |RᵀR-I| = {err:.3e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::invalid(format!("rotation determinant {det} is not +1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Camera at `eye` looking at `target`. `up` is the world up direction;
    /// image +Y ends up pointing along `-up` as the camera convention requires.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("look_at eye and target coincide"));
        }
        let z = forward.normalize();
        let x = (-up).cross(&z);
        if x.norm() < 1e-9 {
            return Err(Error::invalid("look_at direction parallel to up"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye)
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Camera frame to world frame.
    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World frame to camera frame.
    #[inline]
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }
}

/// Projects a camera-frame point to pixel coordinates. `None` means the point
/// is behind (or on) the image plane.
pub fn project_point(p_cam: &Vector3<f64>, intr: &CameraIntrinsics, dist: &Distortion) -> Option<Point2<f64>> {
    if !(p_cam.z > MIN_PROJECTION_DEPTH) {
        return None;
    }
    let (xd, yd) = dist.distort(p_cam.x / p_cam.z, p_cam.y / p_cam.z);
    Some(Point2::new(intr.cx + intr.fx * xd, intr.cy + intr.fy * yd))
}

/// Lifts a pixel with metric depth into the camera frame.
pub fn back_project_pixel(
    u: f64,
    v: f64,
    depth: f64,
    intr: &CameraIntrinsics,
    dist: &Distortion,
) -> Result<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::invalid(format!("depth must be positive, got {depth}")));
    }
    let (x, y) = dist.undistort((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy);
    Ok(Vector3::new(x * depth, y * depth, depth))
}

/// Same focal ratio and principal point, focal length chosen so the image
/// spans `target_hfov_deg` horizontally.
pub fn intrinsics_for_fov(base: &CameraIntrinsics, target_hfov_deg: f64) -> Result<CameraIntrinsics> {
    check_fov(target_hfov_deg)?;
    let fx = (base.width as f64 / 2.0) / (target_hfov_deg.to_radians() / 2.0).tan();
    let ratio = fx / base.fx;
    Ok(CameraIntrinsics {
        fx,
        fy: base.fy * ratio,
        ..*base
    })
}

fn check_fov(fov_deg: f64) -> Result<()> {
    if fov_deg > 0.0 && fov_deg < 180.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("field of view must be in (0, 180) degrees, got {fov_deg}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

/// A 2-D grid that can be resampled by [`undistort_image`].
pub trait PixelGrid: Sized {
    type Pixel: Copy;

    fn dimensions(&self) -> (u32, u32);
    /// A grid of the same size filled with the invalid value.
    fn invalid_like(&self) -> Self;
    fn put(&mut self, x: u32, y: u32, p: Self::Pixel);
    fn sample(&self, u: f64, v: f64, interpolation: Interpolation) -> Option<Self::Pixel>;
}

fn nearest_index(u: f64, v: f64, w: u32, h: u32) -> Option<(u32, u32)> {
    let (x, y) = (u.round(), v.round());
    if x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64 {
        Some((x as u32, y as u32))
    } else {
        None
    }
}

impl PixelGrid for RgbImage {
    type Pixel = image::Rgb<u8>;

    fn dimensions(&self) -> (u32, u32) {
        (self.width(), self.height())
    }

    fn invalid_like(&self) -> Self {
        RgbImage::new(self.width(), self.height())
    }

    fn put(&mut self, x: u32, y: u32, p: Self::Pixel) {
        self.put_pixel(x, y, p);
    }

    fn sample(&self, u: f64, v: f64, interpolation: Interpolation) -> Option<Self::Pixel> {
        match interpolation {
            Interpolation::Nearest => {
                nearest_index(u, v, self.width(), self.height()).map(|(x, y)| *self.get_pixel(x, y))
            }
            Interpolation::Bilinear => sample_rgb_bilinear(self, u, v).map(crate::imaging::to_rgb8),
        }
    }
}

impl PixelGrid for DepthImage {
    type Pixel = f32;

    fn dimensions(&self) -> (u32, u32) {
        (self.width(), self.height())
    }

    fn invalid_like(&self) -> Self {
        DepthImage::new(self.width(), self.height())
    }

    fn put(&mut self, x: u32, y: u32, p: f32) {
        self.set(x, y, p);
    }

    fn sample(&self, u: f64, v: f64, interpolation: Interpolation) -> Option<f32> {
        let (w, h) = (self.width(), self.height());
        match interpolation {
            Interpolation::Nearest => nearest_index(u, v, w, h).map(|(x, y)| self.get(x, y)),
            Interpolation::Bilinear => {
                if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
                    return None;
                }
                let (x0, y0) = (u.floor() as u32, v.floor() as u32);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = ((u - x0 as f64) as f32, (v - y0 as f64) as f32);
                let corners = [self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1)];
                // blending across an invalid sample would invent geometry
                if corners.iter().any(|&d| d <= 0.0) {
                    return Some(0.0);
                }
                let top = corners[0] * (1.0 - fx) + corners[1] * fx;
                let bottom = corners[2] * (1.0 - fx) + corners[3] * fx;
                Some(top * (1.0 - fy) + bottom * fy)
            }
        }
    }
}

/// Resamples a distorted image onto the ideal pinhole grid of `intr`.
/// Output pixels whose source falls outside the input get the invalid value.
pub fn undistort_image<I: PixelGrid>(
    img: &I,
    intr: &CameraIntrinsics,
    dist: &Distortion,
    interpolation: Interpolation,
) -> Result<I> {
    let (w, h) = img.dimensions();
    if (w, h) != (intr.width, intr.height) {
        return Err(Error::invalid(format!(
            "image is {w}x{h} but intrinsics describe {}x{}",
            intr.width, intr.height
        )));
    }
    let mut out = img.invalid_like();
    for y in 0..h {
        for x in 0..w {
            let xn = (x as f64 - intr.cx) / intr.fx;
            let yn = (y as f64 - intr.cy) / intr.fy;
            let (xd, yd) = dist.distort(xn, yn);
            let (su, sv) = (intr.cx + intr.fx * xd, intr.cy + intr.fy * yd);
            if let Some(p) = img.sample(su, sv, interpolation) {
                out.put(x, y, p);
            }
        }
    }
    Ok(out)
}
