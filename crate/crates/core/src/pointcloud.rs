//! Point clouds and the per-frame processing that turns depth maps into one
//! colored scene cloud: back-projection with a depth window, radius and
//! statistical outlier removal, colorization from the associated RGB frame,
//! voxel downsampling, and duplicate-free stitching.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::{back_project_pixel, project_point, CameraIntrinsics, Distortion, Pose};
use crate::error::{Error, Result};
use crate::imaging::{sample_rgb_bilinear, DepthImage, RgbImage};
use crate::spatial::{HashGrid, KdTree};

/// Positions in meters with optional per-point colors (0..1 RGB) and unit normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vector3<f64>>,
    colors: Option<Vec<[f32; 3]>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vector3<f64>>) -> Self {
        Self {
            positions,
            colors: None,
            normals: None,
        }
    }

    pub fn with_colors(mut self, colors: Vec<[f32; 3]>) -> Result<Self> {
        if colors.len() != self.positions.len() {
            return Err(Error::invalid(format!(
                "{} colors for {} points",
                colors.len(),
                self.positions.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.positions.len() {
            return Err(Error::invalid(format!(
                "{} normals for {} points",
                normals.len(),
                self.positions.len()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    #[inline]
    pub fn colors(&self) -> Option<&[[f32; 3]]> {
        self.colors.as_deref()
    }

    #[inline]
    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    /// Checks the documented invariants: finite positions, parallel
    /// attribute arrays, unit normals.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(format!("non-finite position at index {i}")));
        }
        if let Some(n) = &self.normals {
            if let Some(i) = n.iter().position(|n| (n.norm() - 1.0).abs() > 1e-4) {
                return Err(Error::invalid(format!("normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    /// Sub-cloud at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            positions: self.positions.par_iter().map(|p| pose.transform_point(p)).collect(),
            colors: self.colors.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.par_iter().map(|v| pose.rotation() * v).collect()),
        }
    }

    /// Concatenation. Attributes survive only when both sides carry them,
    /// except that an empty side never strips the other's attributes.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        if self.is_empty() {
            return other.clone();
        }
        if other.is_empty() {
            return self.clone();
        }
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let colors = match (&self.colors, &other.colors) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        PointCloud {
            positions,
            colors,
            normals,
        }
    }

    /// Axis-aligned bounds, `None` when empty.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.positions.first()?;
        Some(self.positions.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub(crate) fn normals_mut(&mut self) -> Option<&mut Vec<Vector3<f64>>> {
        self.normals.as_mut()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub z_min: f64,
    pub z_max: f64,
}

impl DepthRange {
    pub fn new(z_min: f64, z_max: f64) -> Result<Self> {
        if !(z_min > 0.0 && z_max > z_min) {
            return Err(Error::invalid(format!("invalid depth range [{z_min}, {z_max}]")));
        }
        Ok(Self { z_min, z_max })
    }
}

impl Default for DepthRange {
    fn default() -> Self {
        Self {
            z_min: 0.3,
            z_max: 10.0,
        }
    }
}

/// Back-projects every valid depth pixel inside `range` into the camera frame.
/// Output order is row-major pixel order.
pub fn build_frame_cloud(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    dist: &Distortion,
    range: DepthRange,
) -> Result<PointCloud> {
    if (depth.width(), depth.height()) != (intr.width, intr.height) {
        return Err(Error::invalid(format!(
            "depth image is {}x{} but intrinsics describe {}x{}",
            depth.width(),
            depth.height(),
            intr.width,
            intr.height
        )));
    }
    DepthRange::new(range.z_min, range.z_max)?;
    let rows: Vec<Vec<Vector3<f64>>> = (0..depth.height())
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::new();
            for x in 0..depth.width() {
                let z = depth.get(x, y) as f64;
                if z > 0.0 && z >= range.z_min && z <= range.z_max {
                    row.push(back_project_pixel(x as f64, y as f64, z, intr, dist).expect("positive depth"));
                }
            }
            row
        })
        .collect();
    Ok(PointCloud::new(rows.concat()))
}

/// Indices of points with at least `min_neighbors` other points within `radius`.
pub fn radius_outlier_indices(pc: &PointCloud, radius: f64, min_neighbors: usize) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    if min_neighbors < 1 {
        return Err(Error::invalid("min_neighbors must be at least 1"));
    }
    let grid = HashGrid::new(pc.positions(), radius);
    Ok((0..pc.len())
        .into_par_iter()
        .filter(|&i| {
            let mut count = 0usize;
            grid.for_each_within(&pc.positions[i], radius, |j| {
                if j as usize != i {
                    count += 1;
                }
            });
            count >= min_neighbors
        })
        .collect())
}

pub fn radius_outlier_filter(pc: &PointCloud, radius: f64, min_neighbors: usize) -> Result<PointCloud> {
    Ok(pc.select(&radius_outlier_indices(pc, radius, min_neighbors)?))
}

/// Mean distance from each point to its `k` nearest neighbors (self excluded),
/// summed in ascending distance order.
pub fn mean_knn_distances(pc: &PointCloud, k: usize) -> Vec<f64> {
    let tree = KdTree::new(pc.positions());
    (0..pc.len())
        .into_par_iter()
        .map(|i| {
            let nn = tree.knn(&pc.positions[i], k, Some(i as u32));
            nn.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / k as f64
        })
        .collect()
}

/// Mean and population standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Indices of points whose mean k-NN distance is at most `mean + alpha * std`.
pub fn statistical_outlier_indices(pc: &PointCloud, k: usize, alpha: f64) -> Result<Vec<usize>> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if pc.len() <= k {
        return Err(Error::invalid(format!(
            "statistical filter needs more than k={k} points, cloud has {}",
            pc.len()
        )));
    }
    let d = mean_knn_distances(pc, k);
    let (mean, std) = mean_std(&d);
    let threshold = mean + alpha * std;
    Ok((0..pc.len()).filter(|&i| d[i] <= threshold).collect())
}

pub fn statistical_outlier_filter(pc: &PointCloud, k: usize, alpha: f64) -> Result<PointCloud> {
    Ok(pc.select(&statistical_outlier_indices(pc, k, alpha)?))
}

/// Moves a camera-frame depth cloud into the world, projects it into the RGB
/// camera, and keeps only the points that receive a color away from the
/// image border.
#[allow(clippy::too_many_arguments)]
pub fn colorize_frame_cloud(
    pc_cam: &PointCloud,
    depth_pose: &Pose,
    rgb_pose: &Pose,
    rgb_img: &RgbImage,
    rgb_intr: &CameraIntrinsics,
    rgb_dist: &Distortion,
    edge_margin: f64,
) -> Result<PointCloud> {
    if !(0.0..0.5).contains(&edge_margin) {
        return Err(Error::invalid(format!("edge margin must be in [0, 0.5), got {edge_margin}")));
    }
    if (rgb_img.width(), rgb_img.height()) != (rgb_intr.width, rgb_intr.height) {
        return Err(Error::invalid("rgb image does not match its intrinsics"));
    }
    let margin = edge_margin * rgb_intr.width.min(rgb_intr.height) as f64;
    let (w, h) = ((rgb_intr.width - 1) as f64, (rgb_intr.height - 1) as f64);
    let colored: Vec<Option<(Vector3<f64>, [f32; 3])>> = pc_cam
        .positions()
        .par_iter()
        .map(|p| {
            let world = depth_pose.transform_point(p);
            let in_rgb = rgb_pose.inverse_transform_point(&world);
            let px = project_point(&in_rgb, rgb_intr, rgb_dist)?;
            let border = px.x.min(px.y).min(w - px.x).min(h - px.y);
            if !(border >= margin) {
                return None;
            }
            sample_rgb_bilinear(rgb_img, px.x, px.y).map(|c| (world, c))
        })
        .collect();
    let (positions, colors): (Vec<_>, Vec<_>) = colored.into_iter().flatten().unzip();
    PointCloud::new(positions).with_colors(colors)
}

pub type VoxelKey = (i64, i64, i64);

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelStats {
    pub count: u32,
    pub position_sum: Vector3<f64>,
    pub color_sum: Option<[f64; 3]>,
    pub normal_sum: Option<Vector3<f64>>,
}

/// Sparse voxel occupancy, sorted by voxel index.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    cells: Vec<(VoxelKey, VoxelStats)>,
}

#[inline]
pub fn voxel_key(p: &Vector3<f64>, voxel_size: f64) -> VoxelKey {
    crate::spatial::cell_of(p, voxel_size)
}

impl VoxelGrid {
    /// Bins every point. Members of a voxel are accumulated in ascending
    /// point order, so the result is bit-reproducible.
    pub fn build(pc: &PointCloud, voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
        }
        let mut keyed: Vec<(VoxelKey, u32)> = pc
            .positions
            .par_iter()
            .enumerate()
            .map(|(i, p)| (voxel_key(p, voxel_size), i as u32))
            .collect();
        keyed.par_sort_unstable();

        // run boundaries, then accumulate runs in parallel
        let mut starts: Vec<usize> = Vec::new();
        for i in 0..keyed.len() {
            if i == 0 || keyed[i].0 != keyed[i - 1].0 {
                starts.push(i);
            }
        }
        let colors = pc.colors.as_deref();
        let normals = pc.normals.as_deref();
        let cells = starts
            .par_iter()
            .enumerate()
            .map(|(r, &s)| {
                let e = starts.get(r + 1).copied().unwrap_or(keyed.len());
                let run = &keyed[s..e];
                let mut stats = VoxelStats {
                    count: run.len() as u32,
                    position_sum: Vector3::zeros(),
                    color_sum: colors.map(|_| [0.0; 3]),
                    normal_sum: normals.map(|_| Vector3::zeros()),
                };
                for &(_, i) in run {
                    let i = i as usize;
                    stats.position_sum += pc.positions[i];
                    if let (Some(acc), Some(c)) = (stats.color_sum.as_mut(), colors) {
                        for ch in 0..3 {
                            acc[ch] += c[i][ch] as f64;
                        }
                    }
                    if let (Some(acc), Some(n)) = (stats.normal_sum.as_mut(), normals) {
                        *acc += n[i];
                    }
                }
                (run[0].0, stats)
            })
            .collect();
        Ok(Self { voxel_size, cells })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, key: VoxelKey) -> Option<&VoxelStats> {
        self.cells
            .binary_search_by(|(k, _)| k.cmp(&key))
            .ok()
            .map(|i| &self.cells[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(VoxelKey, VoxelStats)> {
        self.cells.iter()
    }

    /// One point per voxel at the member centroid, attributes averaged.
    pub fn to_cloud(&self) -> PointCloud {
        let positions = self
            .cells
            .iter()
            .map(|(_, s)| s.position_sum / s.count as f64)
            .collect();
        let has_colors = self.cells.first().is_some_and(|(_, s)| s.color_sum.is_some());
        let has_normals = self.cells.first().is_some_and(|(_, s)| s.normal_sum.is_some());
        let colors = has_colors.then(|| {
            self.cells
                .iter()
                .map(|(_, s)| {
                    let c = s.color_sum.expect("uniform attributes");
                    let n = s.count as f64;
                    [(c[0] / n) as f32, (c[1] / n) as f32, (c[2] / n) as f32]
                })
                .collect()
        });
        let normals = has_normals.then(|| {
            self.cells
                .iter()
                .map(|(_, s)| {
                    let sum = s.normal_sum.expect("uniform attributes");
                    let norm = sum.norm();
                    // opposing normals cancel; fall back to +z rather than NaN
                    if norm > 1e-12 {
                        sum / norm
                    } else {
                        Vector3::z()
                    }
                })
                .collect()
        });
        PointCloud {
            positions,
            colors,
            normals,
        }
    }
}

pub fn voxel_downsample(pc: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    Ok(VoxelGrid::build(pc, voxel_size)?.to_cloud())
}

/// Indices of `incoming` points with no `scene` point strictly closer than
/// `min_separation`.
pub fn dedup_indices(scene: &PointCloud, incoming: &PointCloud, min_separation: f64) -> Result<Vec<usize>> {
    if !(min_separation > 0.0) {
        return Err(Error::invalid(format!("min separation must be positive, got {min_separation}")));
    }
    if scene.is_empty() {
        return Ok((0..incoming.len()).collect());
    }
    let grid = HashGrid::new(scene.positions(), min_separation);
    Ok((0..incoming.len())
        .into_par_iter()
        .filter(|&i| !grid.any_closer_than(&incoming.positions[i], min_separation))
        .collect())
}

/// Appends the incoming points that do not duplicate an existing scene point.
/// Scene points are never modified.
pub fn dedup_merge(scene: &PointCloud, incoming: &PointCloud, min_separation: f64) -> Result<PointCloud> {
    let keep = dedup_indices(scene, incoming, min_separation)?;
    if !scene.is_empty() && !incoming.is_empty() && (scene.colors.is_some() != incoming.colors.is_some()) {
        return Err(Error::invalid("cannot merge colored and uncolored clouds"));
    }
    Ok(scene.concat(&incoming.select(&keep)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn lattice(n: i32, spacing: f64) -> Vec<Vector3<f64>> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    v.push(Vector3::new(i as f64, j as f64, k as f64) * spacing);
                }
            }
        }
        v
    }

    #[test]
    fn frame_cloud_respects_range_and_invalid() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 1.0, 1.0, 2, 2).unwrap();
        let d = DepthImage::filled(2, 2, 2.0);
        let pc = build_frame_cloud(&d, &intr, &Distortion::none(), DepthRange::new(0.3, 10.0).unwrap()).unwrap();
        assert_eq!(pc.len(), 4);
        assert!(pc.positions().iter().all(|p| p.z == 2.0));

        let mut d = DepthImage::filled(2, 2, 2.0);
        d.set(0, 0, 0.1);
        d.set(1, 1, 0.0);
        d.set(0, 1, 12.0);
        let pc = build_frame_cloud(&d, &intr, &Distortion::none(), DepthRange::default()).unwrap();
        assert_eq!(pc.len(), 1);

        let wrong = DepthImage::filled(3, 2, 1.0);
        assert!(build_frame_cloud(&wrong, &intr, &Distortion::none(), DepthRange::default()).is_err());
        assert!(DepthRange::new(1.0, 0.5).is_err());
        assert!(DepthRange::new(0.0, 0.5).is_err());
    }

    #[test]
    fn plane_depth_yields_coplanar_points() {
        // plane n·X = d with n = (0.2, -0.1, 1)/|.|: depth along ray r is d / (n·r)
        let intr = CameraIntrinsics::new(120.0, 120.0, 40.0, 30.0, 80, 60).unwrap();
        let n = Vector3::new(0.2, -0.1, 1.0).normalize();
        let dplane = 2.0;
        let mut depth = DepthImage::new(80, 60);
        for y in 0..60 {
            for x in 0..80 {
                let ray = Vector3::new((x as f64 - 40.0) / 120.0, (y as f64 - 30.0) / 120.0, 1.0);
                depth.set(x, y, (dplane / n.dot(&ray)) as f32);
            }
        }
        let pc = build_frame_cloud(&depth, &intr, &Distortion::none(), DepthRange::default()).unwrap();
        assert_eq!(pc.len(), 80 * 60);
        // least-squares plane fit through the centroid
        let c = pc.positions().iter().sum::<Vector3<f64>>() / pc.len() as f64;
        let mut cov = nalgebra::Matrix3::zeros();
        for p in pc.positions() {
            let d = p - c;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let fitted = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
        // depth is stored as f32, so residuals sit at f32 precision of ~2 m
        let worst = pc.positions().iter().map(|p| (p - c).dot(&fitted).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "plane residual {worst}");
    }

    #[test]
    fn radius_filter_examples() {
        let mut pts = lattice(5, 0.02);
        pts.truncate(100);
        pts.push(Vector3::new(10.0, 0.0, 0.0));
        let pc = PointCloud::new(pts);
        let kept = radius_outlier_indices(&pc, 0.1, 3).unwrap();
        assert_eq!(kept, (0..100).collect::<Vec<_>>());

        let single = PointCloud::new(vec![Vector3::zeros()]);
        assert!(radius_outlier_filter(&single, 1.0, 1).unwrap().is_empty());
        assert!(radius_outlier_filter(&single, 1.0, 0).is_err());
        assert!(radius_outlier_filter(&single, 0.0, 1).is_err());
        assert!(radius_outlier_filter(&PointCloud::default(), 1.0, 1).unwrap().is_empty());
    }

    #[test]
    fn statistical_filter_examples() {
        let mut pts = lattice(5, 1.0);
        pts.push(Vector3::new(100.0, 100.0, 100.0));
        let pc = PointCloud::new(pts);
        let kept = statistical_outlier_indices(&pc, 10, 2.0).unwrap();
        assert_eq!(kept, (0..125).collect::<Vec<_>>());

        // every corner of a unit cube sees three neighbors at distance 1: σ = 0
        let cube = PointCloud::new(lattice(2, 1.0));
        assert_eq!(statistical_outlier_indices(&cube, 3, 2.0).unwrap().len(), 8);

        assert!(statistical_outlier_filter(&cube, 8, 2.0).is_err());
        assert!(statistical_outlier_filter(&cube, 0, 2.0).is_err());
        assert!(statistical_outlier_filter(&cube, 3, 0.0).is_err());
    }

    #[test]
    fn colorize_optical_axis_point_red() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 160.0, 120.0, 320, 240).unwrap();
        let img = RgbImage::from_pixel(320, 240, Rgb([255, 0, 0]));
        let depth_pose = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let pc = PointCloud::new(vec![Vector3::new(0.0, 0.0, 2.0)]);
        let out = colorize_frame_cloud(&pc, &depth_pose, &depth_pose, &img, &intr, &Distortion::none(), 0.1).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.positions()[0] - Vector3::new(1.0, 2.0, 5.0)).norm() < 1e-12);
        assert_eq!(out.colors().unwrap()[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn colorize_drops_border_and_behind() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 160.0, 120.0, 320, 240).unwrap();
        let img = RgbImage::from_pixel(320, 240, Rgb([0, 255, 0]));
        // u = 5 px from the left border; threshold 0.1 * 240 = 24 px
        let x = (5.0 - 160.0) / 100.0 * 2.0;
        let pts = vec![
            Vector3::new(x, 0.0, 2.0),
            Vector3::new(0.0, 0.0, -2.0),
            Vector3::new(100.0, 0.0, 2.0),
            Vector3::new(0.1, 0.1, 2.0),
        ];
        let pc = PointCloud::new(pts);
        let id = Pose::identity();
        let out = colorize_frame_cloud(&pc, &id, &id, &img, &intr, &Distortion::none(), 0.1).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.positions()[0] - Vector3::new(0.1, 0.1, 2.0)).norm() < 1e-12);
        assert!(colorize_frame_cloud(&pc, &id, &id, &img, &intr, &Distortion::none(), 0.5).is_err());
    }

    #[test]
    fn colorize_samples_gradient() {
        let intr = CameraIntrinsics::new(80.0, 80.0, 64.0, 48.0, 128, 96).unwrap();
        let mut img = RgbImage::new(128, 96);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([(x * 2) as u8, (y * 2) as u8, 100]);
        }
        let id = Pose::identity();
        let pts: Vec<_> = (0..50)
            .map(|i| Vector3::new(-0.5 + i as f64 * 0.02, 0.3 - i as f64 * 0.011, 1.5))
            .collect();
        let out = colorize_frame_cloud(&PointCloud::new(pts), &id, &id, &img, &intr, &Distortion::none(), 0.05).unwrap();
        assert!(!out.is_empty());
        for (p, c) in out.positions().iter().zip(out.colors().unwrap()) {
            let u = 64.0 + 80.0 * p.x / p.z;
            let v = 48.0 + 80.0 * p.y / p.z;
            assert!((c[0] as f64 - 2.0 * u / 255.0).abs() <= 1.0 / 255.0);
            assert!((c[1] as f64 - 2.0 * v / 255.0).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn voxel_examples() {
        let pc = PointCloud::new(vec![Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.02, 0.0, 0.0)]);
        let out = voxel_downsample(&pc, 0.05).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.positions()[0] - Vector3::new(0.015, 0.0, 0.0)).norm() < 1e-15);

        let spread = PointCloud::new(lattice(3, 0.1));
        assert_eq!(voxel_downsample(&spread, 0.05).unwrap().len(), 27);
        assert!(voxel_downsample(&spread, 0.0).is_err());
    }

    #[test]
    fn voxel_averages_attributes() {
        let pc = PointCloud::new(vec![Vector3::new(0.01, 0.01, 0.01), Vector3::new(0.02, 0.02, 0.02)])
            .with_colors(vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
            .unwrap()
            .with_normals(vec![Vector3::x(), Vector3::y()])
            .unwrap();
        let out = voxel_downsample(&pc, 0.1).unwrap();
        assert_eq!(out.colors().unwrap()[0], [0.5, 0.0, 0.5]);
        let n = out.normals().unwrap()[0];
        assert!((n - Vector3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-12);
    }

    #[test]
    fn dedup_examples() {
        let scene = PointCloud::new(vec![Vector3::zeros()]);
        let dup = PointCloud::new(vec![Vector3::zeros()]);
        assert_eq!(dedup_merge(&scene, &dup, 0.01).unwrap().len(), 1);
        let far = PointCloud::new(vec![Vector3::new(0.0101, 0.0, 0.0)]);
        let merged = dedup_merge(&scene, &far, 0.01).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.positions()[0], Vector3::zeros());
        assert!(dedup_merge(&scene, &far, 0.0).is_err());
        // empty scene adopts incoming as-is
        let colored = far.clone().with_colors(vec![[0.2, 0.3, 0.4]]).unwrap();
        let m = dedup_merge(&PointCloud::default(), &colored, 0.01).unwrap();
        assert_eq!(m, colored);
        assert!(dedup_merge(&scene, &colored, 0.01).is_err());
    }
}
