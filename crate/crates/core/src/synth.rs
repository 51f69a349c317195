//! Synthetic capture of a textured room: a ground-truth mesh, RGB and depth
//! frames rendered from it along a walking trajectory, and a held-out test
//! sequence in `test/`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::camera::{CameraIntrinsics, Distortion, Pose};
use crate::dataset::{CaptureDataset, FrameKind, FrameRecord, SensorCalibration};
use crate::error::{Error, Result};
use crate::imaging::{save_rgb, DepthImage};
use crate::meshing::TriangleMesh;
use crate::ply;
use crate::render::{render_mesh, RenderConfig};

pub const GT_MESH_FILE: &str = "gt_mesh.ply";
pub const TEST_DIR: &str = "test";
pub const ROOM_SIZE: [f64; 3] = [4.0, 3.0, 2.5];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rgb_width: u32,
    pub rgb_height: u32,
    pub rgb_hfov_deg: f64,
    pub depth_width: u32,
    pub depth_height: u32,
    pub depth_hfov_deg: f64,
    /// Training RGB frames at 25 Hz; every fifth also gets a depth frame.
    pub train_frames: usize,
    pub test_frames: usize,
    /// Edge length of the ground-truth mesh grid.
    pub mesh_spacing: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rgb_width: 640,
            rgb_height: 360,
            rgb_hfov_deg: 64.69,
            depth_width: 320,
            depth_height: 288,
            depth_hfov_deg: 75.0,
            train_frames: 300,
            test_frames: 12,
            mesh_spacing: 0.025,
        }
    }
}

pub const RGB_PERIOD_US: u64 = 40_000;
pub const DEPTH_EVERY: usize = 5;
const START_US: u64 = 1_000_000;

/// Smooth procedural albedo; each surface gets its own base tint.
pub fn room_color(p: &Vector3<f64>, face: usize) -> [f32; 3] {
    const BASE: [[f64; 3]; 6] = [
        [0.55, 0.45, 0.35],
        [0.75, 0.75, 0.70],
        [0.60, 0.35, 0.30],
        [0.35, 0.50, 0.60],
        [0.45, 0.60, 0.40],
        [0.65, 0.55, 0.70],
    ];
    let tau = std::f64::consts::TAU;
    let (x, y, z) = (p.x, p.y, p.z);
    let a = (tau * (x + 0.3 * y) / 1.1).sin() * (tau * (z + 0.5 * y) / 0.9).cos();
    let b = (tau * (y - 0.4 * z) / 1.3).sin() * (tau * (x - z) / 1.7).sin();
    let c = (tau * (x + y + z) / 0.8).cos();
    let base = BASE[face];
    [
        (base[0] + 0.20 * a + 0.08 * c).clamp(0.02, 0.98) as f32,
        (base[1] + 0.18 * b - 0.06 * c).clamp(0.02, 0.98) as f32,
        (base[2] + 0.15 * a * b + 0.10 * c).clamp(0.02, 0.98) as f32,
    ]
}

/// Closed box `[0, size]` tessellated on a shared lattice so the six faces
/// are welded along their edges.
pub fn room_mesh(size: [f64; 3], spacing: f64) -> TriangleMesh {
    let n = size.map(|s| (s / spacing).ceil().max(1.0) as i64);
    let pos = |c: [i64; 3]| Vector3::from_fn(|a, _| size[a] * c[a] as f64 / n[a] as f64);
    let mut ids: FxHashMap<[i64; 3], u32> = FxHashMap::default();
    let mut mesh = TriangleMesh::default();
    let mut face_id = 0;
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n[axis]] {
            for i in 0..n[u] {
                for j in 0..n[v] {
                    let corner = |di: i64, dj: i64| {
                        let mut c = [0i64; 3];
                        c[axis] = side;
                        c[u] = i + di;
                        c[v] = j + dj;
                        c
                    };
                    let quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    let idx = quad.map(|c| {
                        *ids.entry(c).or_insert_with(|| {
                            let p = pos(c);
                            mesh.vertices.push(p);
                            mesh.vertex_colors.push(room_color(&p, face_id));
                            (mesh.vertices.len() - 1) as u32
                        })
                    });
                    mesh.triangles.push([idx[0], idx[1], idx[2]]);
                    mesh.triangles.push([idx[0], idx[2], idx[3]]);
                }
            }
            face_id += 1;
        }
    }
    mesh
}

fn room_center() -> Vector3<f64> {
    Vector3::new(ROOM_SIZE[0] / 2.0, ROOM_SIZE[1] / 2.0, 1.3)
}

/// Head-height loop near the room center, turning three times while the
/// pitch sweeps from looking down to looking up.
pub fn train_trajectory(frames: usize) -> Vec<Pose> {
    (0..frames)
        .map(|i| {
            let s = i as f64 / frames as f64;
            let tau = std::f64::consts::TAU;
            let eye = room_center()
                + Vector3::new(0.45 * (tau * s).cos(), 0.35 * (tau * s).sin(), 0.12 * (2.0 * tau * s).sin());
            look(eye, 3.0 * tau * s, -0.3 * (std::f64::consts::PI * s).cos())
        })
        .collect()
}

/// Poses between the training ones: different radius, phase and pitch.
pub fn test_trajectory(frames: usize) -> Vec<Pose> {
    (0..frames)
        .map(|i| {
            let s = (i as f64 + 0.5) / frames as f64;
            let tau = std::f64::consts::TAU;
            let eye = room_center() + Vector3::new(0.3 * (tau * s).cos(), 0.25 * (tau * s).sin(), 0.05);
            look(eye, tau * s + 0.2, 0.12 * (2.0 * tau * s).cos())
        })
        .collect()
}

fn look(eye: Vector3<f64>, yaw: f64, pitch: f64) -> Pose {
    let dir = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
    Pose::look_at(eye, eye + dir, Vector3::z()).expect("pitch stays away from vertical")
}

/// Depth sensor mounted 3 cm to the right of the color camera.
fn depth_pose(rgb: &Pose) -> Pose {
    rgb.compose(&Pose::from_translation(Vector3::new(0.03, 0.0, 0.0)))
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub train_root: PathBuf,
    pub test_root: PathBuf,
    pub mesh_path: PathBuf,
    pub train_rgb: usize,
    pub train_depth: usize,
    pub test_rgb: usize,
}

fn write_sequence(
    root: &Path,
    mesh: &TriangleMesh,
    poses: &[Pose],
    rgb: &SensorCalibration,
    depth: &SensorCalibration,
) -> Result<(usize, usize)> {
    for kind in [FrameKind::Rgb, FrameKind::Depth] {
        let dir = root.join(kind.dir());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let rgb_frames: Vec<FrameRecord> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| FrameRecord::new(START_US + i as u64 * RGB_PERIOD_US, FrameKind::Rgb, *p))
        .collect();
    let depth_frames: Vec<FrameRecord> = rgb_frames
        .iter()
        .step_by(DEPTH_EVERY)
        .map(|r| FrameRecord::new(r.timestamp_us, FrameKind::Depth, depth_pose(&r.pose)))
        .collect();
    let ds = CaptureDataset {
        root: root.to_path_buf(),
        rgb_frames,
        depth_frames,
        rgb: *rgb,
        depth: *depth,
    };
    let rgb_cfg = RenderConfig::new(rgb.intrinsics);
    let depth_cfg = RenderConfig::new(depth.intrinsics);
    ds.rgb_frames.par_iter().try_for_each(|rec| {
        let out = render_mesh(mesh, &rec.pose, &rgb_cfg)?;
        save_rgb(&out.image, &ds.path_of(rec))
    })?;
    ds.depth_frames.par_iter().try_for_each(|rec| {
        let out = render_mesh(mesh, &rec.pose, &depth_cfg)?;
        let d: DepthImage = out.depth;
        d.save_png(&ds.path_of(rec))
    })?;
    ds.write_metadata(root)?;
    Ok((ds.rgb_frames.len(), ds.depth_frames.len()))
}

/// Writes the training capture at `out`, the held-out capture at
/// `out/test`, and the ground-truth mesh.
pub fn write_synthetic_dataset(out: &Path, cfg: &SynthConfig) -> Result<SynthSummary> {
    if cfg.train_frames < DEPTH_EVERY || cfg.test_frames == 0 {
        return Err(Error::invalid("synthetic capture needs at least 5 training frames and 1 test frame"));
    }
    let rgb = SensorCalibration {
        intrinsics: CameraIntrinsics::from_hfov(cfg.rgb_width, cfg.rgb_height, cfg.rgb_hfov_deg)?,
        distortion: Distortion::none(),
    };
    let depth = SensorCalibration {
        intrinsics: CameraIntrinsics::from_hfov(cfg.depth_width, cfg.depth_height, cfg.depth_hfov_deg)?,
        distortion: Distortion::none(),
    };
    let mesh = room_mesh(ROOM_SIZE, cfg.mesh_spacing);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mesh_path = out.join(GT_MESH_FILE);
    ply::write_mesh(&mesh_path, &mesh)?;
    let (train_rgb, train_depth) = write_sequence(out, &mesh, &train_trajectory(cfg.train_frames), &rgb, &depth)?;
    let test_root = out.join(TEST_DIR);
    let (test_rgb, _) = write_sequence(&test_root, &mesh, &test_trajectory(cfg.test_frames), &rgb, &depth)?;
    Ok(SynthSummary {
        train_root: out.to_path_buf(),
        test_root,
        mesh_path,
        train_rgb,
        train_depth,
        test_rgb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn room_is_closed() {
        let m = room_mesh([1.0, 0.8, 0.6], 0.1);
        m.validate().unwrap();
        assert!(m.is_watertight());
        let (lo, hi) = m.vertices.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(l, h), v| (l.inf(v), h.sup(v)),
        );
        assert_eq!(lo, Vector3::zeros());
        assert!((hi - Vector3::new(1.0, 0.8, 0.6)).norm() < 1e-12);
    }

    #[test]
    fn cameras_stay_inside_room() {
        for p in train_trajectory(50).iter().chain(&test_trajectory(10)) {
            let c = p.center();
            for a in 0..3 {
                assert!(c[a] > 0.8 && c[a] < ROOM_SIZE[a] - 0.8);
            }
        }
    }

    #[test]
    fn small_capture_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            rgb_width: 64,
            rgb_height: 36,
            depth_width: 32,
            depth_height: 28,
            train_frames: 10,
            test_frames: 2,
            mesh_spacing: 0.2,
            ..Default::default()
        };
        let s = write_synthetic_dataset(dir.path(), &cfg).unwrap();
        assert_eq!((s.train_rgb, s.train_depth, s.test_rgb), (10, 2, 2));
        let ds = crate::dataset::load_dataset(dir.path(), Default::default()).unwrap();
        let d = ds.load_depth(&ds.depth_frames[0]).unwrap();
        assert!(d.as_slice().iter().all(|&z| z > 0.5 && z < 4.0));
        let img = ds.load_rgb(&ds.rgb_frames[3]).unwrap();
        assert_eq!(img.dimensions(), (64, 36));
        assert!(crate::dataset::load_dataset(&s.test_root, Default::default()).is_ok());
    }
}
