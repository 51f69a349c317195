//! Software rendering of colored point clouds (z-buffered splats) and
//! triangle meshes (scanline rasterization) from any pose and field of view.
//!
//! Both paths ignore lens distortion and paint stored colors without
//! lighting. Depth buffers hold camera-frame z, with 0 for empty pixels.

use std::sync::atomic::{AtomicU64, Ordering};

use image::Rgb;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::imaging::{to_rgb8, DepthImage, RgbImage};
use crate::meshing::TriangleMesh;
use crate::pointcloud::PointCloud;

pub const DEFAULT_SPLAT_RADIUS: f64 = 2.0;
pub const DEFAULT_NEAR: f64 = 0.05;
pub const DEFAULT_FAR: f64 = 100.0;

const STRIP_ROWS: usize = 16;
const EMPTY: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub intr: CameraIntrinsics,
    /// Splat radius in pixels; 0 paints only the nearest pixel.
    pub splat_radius: f64,
    pub background: [u8; 3],
    pub near: f64,
    pub far: f64,
}

impl RenderConfig {
    pub fn new(intr: CameraIntrinsics) -> Self {
        Self {
            intr,
            splat_radius: DEFAULT_SPLAT_RADIUS,
            background: [0, 0, 0],
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intr.validate()?;
        if !(self.splat_radius >= 0.0) || !self.splat_radius.is_finite() {
            return Err(Error::invalid(format!("splat radius must be >= 0, got {}", self.splat_radius)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid(format!(
                "clip planes must satisfy 0 < near < far (near={}, far={})",
                self.near, self.far
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: RgbImage,
    pub depth: DepthImage,
}

impl RenderOutput {
    /// Pixels that received any geometry.
    pub fn coverage(&self) -> usize {
        self.depth.as_slice().iter().filter(|&&d| d > 0.0).count()
    }
}

#[inline]
fn pack(depth: f32, index: u32) -> u64 {
    ((depth.to_bits() as u64) << 32) | index as u64
}

pub fn render_pointcloud(pc: &PointCloud, pose: &Pose, cfg: &RenderConfig) -> Result<RenderOutput> {
    cfg.validate()?;
    let intr = &cfg.intr;
    let (w, h) = (intr.width as usize, intr.height as usize);
    if pc.len() > u32::MAX as usize {
        return Err(Error::invalid("point cloud too large to render"));
    }
    let zbuf: Vec<AtomicU64> = (0..w * h).map(|_| AtomicU64::new(EMPTY)).collect();
    let r = cfg.splat_radius;
    let r2 = r * r;
    let reach = r.floor() as i64;
    pc.positions().par_iter().enumerate().for_each(|(i, p)| {
        let q = pose.inverse_transform_point(p);
        if !(q.z >= cfg.near && q.z <= cfg.far) {
            return;
        }
        let u = intr.cx + intr.fx * q.x / q.z;
        let v = intr.cy + intr.fy * q.y / q.z;
        let key = pack(q.z as f32, i as u32);
        let paint = |x: i64, y: i64| {
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                zbuf[y as usize * w + x as usize].fetch_min(key, Ordering::Relaxed);
            }
        };
        if reach == 0 && r2 < 0.25 {
            paint(u.round() as i64, v.round() as i64);
            return;
        }
        let (x0, y0) = ((u - r).ceil() as i64, (v - r).ceil() as i64);
        for y in y0..=(v + r).floor() as i64 {
            let dy = y as f64 - v;
            for x in x0..=(u + r).floor() as i64 {
                let dx = x as f64 - u;
                if dx * dx + dy * dy <= r2 {
                    paint(x, y);
                }
            }
        }
    });

    let colors = pc.colors();
    let bg = Rgb(cfg.background);
    let mut image = RgbImage::from_pixel(intr.width, intr.height, bg);
    let mut depth = DepthImage::new(intr.width, intr.height);
    for (idx, cell) in zbuf.iter().enumerate() {
        let key = cell.load(Ordering::Relaxed);
        if key == EMPTY {
            continue;
        }
        let (x, y) = ((idx % w) as u32, (idx / w) as u32);
        let point = (key & 0xffff_ffff) as usize;
        depth.set(x, y, f32::from_bits((key >> 32) as u32));
        let c = colors.map_or([1.0; 3], |c| c[point]);
        image.put_pixel(x, y, to_rgb8(c));
    }
    Ok(RenderOutput { image, depth })
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vector3<f64>,
    c: [f64; 3],
}

fn lerp(a: &ClipVertex, b: &ClipVertex, t: f64) -> ClipVertex {
    ClipVertex {
        p: a.p + (b.p - a.p) * t,
        c: [0, 1, 2].map(|k| a.c[k] + (b.c[k] - a.c[k]) * t),
    }
}

/// Sutherland-Hodgman against the plane `z = near`.
fn clip_near(tri: [ClipVertex; 3], near: f64) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = &tri[i];
        let b = &tri[(i + 1) % 3];
        let (ina, inb) = (a.p.z >= near, b.p.z >= near);
        if ina {
            out.push(*a);
        }
        if ina != inb {
            let t = (near - a.p.z) / (b.p.z - a.p.z);
            let mut v = lerp(a, b, t);
            v.p.z = near;
            out.push(v);
        }
    }
    out
}

/// Screen-space triangle: pixel coordinates, inverse depth and color / z.
#[derive(Clone, Copy)]
struct ScreenTri {
    xy: [[f64; 2]; 3],
    inv_z: [f64; 3],
    c_over_z: [[f64; 3]; 3],
    area: f64,
    ymin: i64,
    ymax: i64,
    xmin: i64,
    xmax: i64,
}

/// Edge function evaluated with the endpoints in a canonical order so that
/// the two triangles sharing an edge get exactly opposite values.
#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (s, t, sign) = if (a[0], a[1]) <= (b[0], b[1]) { (a, b, 1.0) } else { (b, a, -1.0) };
    sign * ((t[0] - s[0]) * (p[1] - s[1]) - (t[1] - s[1]) * (p[0] - s[0]))
}

/// Tie-break for pixels exactly on an edge: of the two directions along a
/// shared edge, exactly one owns it.
#[inline]
fn owns_edge(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

fn screen_triangles(mesh: &TriangleMesh, pose: &Pose, cfg: &RenderConfig) -> Vec<ScreenTri> {
    let intr = &cfg.intr;
    let cam: Vec<Vector3<f64>> = mesh.vertices.par_iter().map(|v| pose.inverse_transform_point(v)).collect();
    let (w, h) = (intr.width as i64, intr.height as i64);
    mesh.triangles
        .par_iter()
        .flat_map_iter(|t| {
            let tri = t.map(|i| ClipVertex {
                p: cam[i as usize],
                c: mesh.vertex_colors[i as usize].map(|c| c as f64),
            });
            let poly = if tri.iter().all(|v| v.p.z >= cfg.near) {
                tri.to_vec()
            } else if tri.iter().all(|v| v.p.z < cfg.near) {
                Vec::new()
            } else {
                clip_near(tri, cfg.near)
            };
            let proj: Vec<([f64; 2], f64, [f64; 3])> = poly
                .iter()
                .map(|v| {
                    let iz = 1.0 / v.p.z;
                    (
                        [intr.cx + intr.fx * v.p.x * iz, intr.cy + intr.fy * v.p.y * iz],
                        iz,
                        v.c.map(|c| c * iz),
                    )
                })
                .collect();
            let mut out = Vec::new();
            for k in 1..proj.len().saturating_sub(1) {
                let mut vs = [proj[0], proj[k], proj[k + 1]];
                let mut area = edge(vs[0].0, vs[1].0, vs[2].0);
                if area == 0.0 || !area.is_finite() {
                    continue;
                }
                if area < 0.0 {
                    vs.swap(1, 2);
                    area = -area;
                }
                let xs = vs.map(|v| v.0[0]);
                let ys = vs.map(|v| v.0[1]);
                let xmin = (xs.iter().cloned().fold(f64::INFINITY, f64::min).ceil() as i64).max(0);
                let xmax = (xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(w - 1);
                let ymin = (ys.iter().cloned().fold(f64::INFINITY, f64::min).ceil() as i64).max(0);
                let ymax = (ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor() as i64).min(h - 1);
                if xmin > xmax || ymin > ymax {
                    continue;
                }
                out.push(ScreenTri {
                    xy: vs.map(|v| v.0),
                    inv_z: vs.map(|v| v.1),
                    c_over_z: vs.map(|v| v.2),
                    area,
                    ymin,
                    ymax,
                    xmin,
                    xmax,
                });
            }
            out
        })
        .collect()
}

/// Rasterizes with barycentric, perspective-correct color and depth.
/// Triangles crossing the near plane are clipped; nothing is culled.
pub fn render_mesh(mesh: &TriangleMesh, pose: &Pose, cfg: &RenderConfig) -> Result<RenderOutput> {
    cfg.validate()?;
    mesh.validate()?;
    let intr = &cfg.intr;
    let (w, h) = (intr.width as usize, intr.height as usize);
    let tris = screen_triangles(mesh, pose, cfg);

    let strips = h.div_ceil(STRIP_ROWS);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); strips];
    for (i, t) in tris.iter().enumerate() {
        for s in t.ymin as usize / STRIP_ROWS..=t.ymax as usize / STRIP_ROWS {
            bins[s].push(i as u32);
        }
    }

    let bg = cfg.background.map(|c| c as f32 / 255.0);
    let mut color = vec![[0f32; 3]; w * h];
    let mut depth = vec![0f32; w * h];
    color
        .par_chunks_mut(STRIP_ROWS * w)
        .zip(depth.par_chunks_mut(STRIP_ROWS * w))
        .enumerate()
        .for_each(|(s, (cstrip, dstrip))| {
            let y0 = s * STRIP_ROWS;
            let rows = cstrip.len() / w;
            let mut zbest = vec![f64::INFINITY; rows * w];
            for &ti in &bins[s] {
                let t = &tris[ti as usize];
                let ylo = (t.ymin as usize).max(y0);
                let yhi = (t.ymax as usize).min(y0 + rows - 1);
                let [a, b, c] = t.xy;
                let edges = [(b, c), (c, a), (a, b)];
                for y in ylo..=yhi {
                    for x in t.xmin as usize..=t.xmax as usize {
                        let p = [x as f64, y as f64];
                        let mut bary = [0.0; 3];
                        let mut inside = true;
                        for (k, &(e0, e1)) in edges.iter().enumerate() {
                            let e = edge(e0, e1, p);
                            if e < 0.0 || (e == 0.0 && !owns_edge(e0, e1)) {
                                inside = false;
                                break;
                            }
                            bary[k] = e / t.area;
                        }
                        if !inside {
                            continue;
                        }
                        let inv_z: f64 = (0..3).map(|k| bary[k] * t.inv_z[k]).sum();
                        let z = 1.0 / inv_z;
                        let slot = (y - y0) * w + x;
                        if !(z >= cfg.near && z <= cfg.far) || z >= zbest[slot] {
                            continue;
                        }
                        zbest[slot] = z;
                        dstrip[slot] = z as f32;
                        cstrip[slot] = [0, 1, 2].map(|ch| {
                            let v: f64 = (0..3).map(|k| bary[k] * t.c_over_z[k][ch]).sum();
                            (v * z) as f32
                        });
                    }
                }
            }
            for (slot, d) in dstrip.iter().enumerate() {
                if *d == 0.0 {
                    cstrip[slot] = bg;
                }
            }
        });

    let image = RgbImage::from_fn(intr.width, intr.height, |x, y| to_rgb8(color[y as usize * w + x as usize]));
    let depth = DepthImage::from_vec(intr.width, intr.height, depth)?;
    Ok(RenderOutput { image, depth })
}
