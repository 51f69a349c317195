//! Scene-level orchestration: depth frames to one colored cloud, and that
//! cloud to a trimmed mesh.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::dataset::{associate_within, CaptureDataset, FrameRecord};
use crate::error::{Error, Result};
use crate::meshing::{
    estimate_normals, orient_normals_with_k, poisson_reconstruct_with, trim_mesh, Aabb, PoissonConfig,
    PoissonReport, TriangleMesh,
};
use crate::pointcloud::{
    build_frame_cloud, colorize_frame_cloud, dedup_merge, radius_outlier_filter, statistical_outlier_filter,
    voxel_downsample, DepthRange, PointCloud,
};

/// Largest RGB/depth timestamp gap accepted when pairing frames.
pub const DEFAULT_MAX_GAP_US: u64 = 250_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub depth_range: DepthRange,
    pub radius: f64,
    pub radius_min_neighbors: usize,
    pub stat_k: usize,
    pub stat_alpha: f64,
    pub voxel_size: f64,
    /// Defaults to the voxel size.
    pub min_separation: Option<f64>,
    pub edge_margin: f64,
    pub max_gap_us: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            depth_range: DepthRange::default(),
            radius: 0.05,
            radius_min_neighbors: 5,
            stat_k: 20,
            stat_alpha: 2.0,
            voxel_size: 0.01,
            min_separation: None,
            edge_margin: 0.1,
            max_gap_us: DEFAULT_MAX_GAP_US,
        }
    }
}

impl SceneConfig {
    pub fn min_separation(&self) -> f64 {
        self.min_separation.unwrap_or(self.voxel_size)
    }

    pub fn validate(&self) -> Result<()> {
        DepthRange::new(self.depth_range.z_min, self.depth_range.z_max)?;
        if !(self.radius > 0.0) || self.radius_min_neighbors == 0 {
            return Err(Error::invalid("radius filter needs radius > 0 and min_neighbors >= 1"));
        }
        if self.stat_k == 0 || !(self.stat_alpha > 0.0) {
            return Err(Error::invalid("statistical filter needs k >= 1 and alpha > 0"));
        }
        if !(self.voxel_size > 0.0) || !(self.min_separation() > 0.0) {
            return Err(Error::invalid("voxel size and min separation must be positive"));
        }
        if !(0.0..0.5).contains(&self.edge_margin) {
            return Err(Error::invalid("edge margin must be in [0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SceneReport {
    pub cloud: PointCloud,
    pub frames_used: usize,
    pub frames_total: usize,
    /// One line per skipped frame.
    pub warnings: Vec<String>,
}

fn frame_cloud(ds: &CaptureDataset, depth_rec: &FrameRecord, cfg: &SceneConfig) -> Result<PointCloud> {
    let rgb_rec = associate_within(depth_rec, &ds.rgb_frames, cfg.max_gap_us)
        .ok_or_else(|| Error::invalid(format!("no rgb frame within {} us", cfg.max_gap_us)))?;
    let depth = ds.load_depth(depth_rec)?;
    let rgb = ds.load_rgb(rgb_rec)?;
    let cam = build_frame_cloud(&depth, &ds.depth.intrinsics, &ds.depth.distortion, cfg.depth_range)?;
    let cam = radius_outlier_filter(&cam, cfg.radius, cfg.radius_min_neighbors)?;
    let cam = if cam.len() > cfg.stat_k {
        statistical_outlier_filter(&cam, cfg.stat_k, cfg.stat_alpha)?
    } else {
        cam
    };
    let world = colorize_frame_cloud(
        &cam,
        &depth_rec.pose,
        &rgb_rec.pose,
        &rgb,
        &ds.rgb.intrinsics,
        &ds.rgb.distortion,
        cfg.edge_margin,
    )?;
    voxel_downsample(&world, cfg.voxel_size)
}

/// Builds, filters and colors each depth frame, then stitches the frames in
/// timestamp order, keeping only points not already represented. Frames
/// that fail are skipped with a warning.
pub fn build_scene_cloud(ds: &CaptureDataset, cfg: &SceneConfig) -> Result<SceneReport> {
    cfg.validate()?;
    let mut frames: Vec<&FrameRecord> = ds.depth_frames.iter().collect();
    frames.sort_by_key(|f| f.timestamp_us);
    let batch = (rayon::current_num_threads() * 2).max(1);
    let mut scene = PointCloud::new(Vec::new()).with_colors(Vec::new())?;
    let mut warnings = Vec::new();
    let mut used = 0;
    for chunk in frames.chunks(batch) {
        let clouds: Vec<Result<PointCloud>> = chunk.par_iter().map(|f| frame_cloud(ds, f, cfg)).collect();
        for (rec, cloud) in chunk.iter().zip(clouds) {
            match cloud {
                Ok(c) if !c.is_empty() => {
                    scene = dedup_merge(&scene, &c, cfg.min_separation())?;
                    used += 1;
                }
                Ok(_) => warnings.push(format!("depth frame {}: no points survived", rec.timestamp_us)),
                Err(e) => warnings.push(format!("depth frame {}: {e}", rec.timestamp_us)),
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if used == 0 {
        return Err(Error::Degenerate("no depth frame produced points".into()));
    }
    if scene.len() > cfg.stat_k {
        scene = statistical_outlier_filter(&scene, cfg.stat_k, cfg.stat_alpha)?;
    }
    Ok(SceneReport {
        cloud: scene,
        frames_used: used,
        frames_total: frames.len(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub normal_k: usize,
    pub orient_k: usize,
    pub poisson: PoissonConfig,
    pub density_quantile: f64,
    /// Relative growth of the cloud's bounding box used for trimming.
    pub bbox_expand: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            normal_k: 20,
            orient_k: 10,
            poisson: PoissonConfig::default(),
            density_quantile: 0.01,
            bbox_expand: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeshReport {
    pub mesh: TriangleMesh,
    pub poisson: PoissonReport,
    pub components: usize,
    pub vertices_before_trim: usize,
}

/// Normals, orientation (toward `camera_centers` when given), Poisson
/// surface, and density/bounding-box trimming.
pub fn mesh_scene(cloud: &PointCloud, camera_centers: Option<&[Vector3<f64>]>, cfg: &MeshConfig) -> Result<MeshReport> {
    let with_normals = estimate_normals(cloud, cfg.normal_k)?;
    let (oriented, orient) = orient_normals_with_k(&with_normals, camera_centers, cfg.orient_k)?;
    let (mesh, poisson) = poisson_reconstruct_with(&oriented, &cfg.poisson)?;
    let bbox = Aabb::from_points(cloud.positions())
        .ok_or_else(|| Error::invalid("empty cloud"))?
        .expanded(cfg.bbox_expand);
    let vertices_before_trim = mesh.vertices.len();
    let mesh = trim_mesh(&mesh, cfg.density_quantile, &bbox)?;
    Ok(MeshReport {
        mesh,
        poisson,
        components: orient.components,
        vertices_before_trim,
    })
}
