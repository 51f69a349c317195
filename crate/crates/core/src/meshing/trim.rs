use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.min.iter().chain(self.max.iter()).all(|v| v.is_finite());
        if !finite || (0..3).any(|a| self.min[a] > self.max[a]) {
            return Err(Error::invalid(format!("invalid bounding box {:?}..{:?}", self.min, self.max)));
        }
        Ok(())
    }

    pub fn from_points(points: &[Vector3<f64>]) -> Option<Self> {
        let first = points.first()?;
        let (mut min, mut max) = (*first, *first);
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Self { min, max })
    }

    /// Grows the box about its center so each side is `1 + fraction` times longer.
    pub fn expanded(&self, fraction: f64) -> Self {
        let pad = (self.max - self.min) * (fraction * 0.5);
        Self {
            min: self.min - pad,
            max: self.max + pad,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Linearly interpolated quantile (the common "linear" definition).
pub fn density_threshold(densities: &[f64], quantile: f64) -> Option<f64> {
    if densities.is_empty() {
        return None;
    }
    let mut sorted = densities.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let pos = quantile.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Drops vertices whose density falls below the `density_quantile` quantile
/// or that lie outside `bbox`, along with every triangle touching them.
/// Vertices left without triangles are dropped too.
pub fn trim_mesh(mesh: &TriangleMesh, density_quantile: f64, bbox: &Aabb) -> Result<TriangleMesh> {
    if !(0.0..1.0).contains(&density_quantile) {
        return Err(Error::invalid(format!("density quantile must be in [0, 1), got {density_quantile}")));
    }
    bbox.validate()?;
    mesh.validate()?;
    let threshold = match (&mesh.vertex_density, density_quantile > 0.0) {
        (Some(d), true) => density_threshold(d, density_quantile),
        _ => None,
    };
    let keep_vertex: Vec<bool> = (0..mesh.vertices.len())
        .map(|i| {
            let dense = match (threshold, &mesh.vertex_density) {
                (Some(t), Some(d)) => d[i] >= t,
                _ => true,
            };
            dense && bbox.contains(&mesh.vertices[i])
        })
        .collect();

    let triangles: Vec<[u32; 3]> = mesh
        .triangles
        .iter()
        .filter(|t| t.iter().all(|&i| keep_vertex[i as usize]))
        .copied()
        .collect();
    let mut used = vec![false; mesh.vertices.len()];
    for t in &triangles {
        for &i in t {
            used[i as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut out = TriangleMesh {
        vertex_density: mesh.vertex_density.as_ref().map(|_| Vec::new()),
        ..Default::default()
    };
    for (i, _) in used.iter().enumerate().filter(|(_, u)| **u) {
        remap[i] = out.vertices.len() as u32;
        out.vertices.push(mesh.vertices[i]);
        out.vertex_colors.push(mesh.vertex_colors[i]);
        if let (Some(dst), Some(src)) = (out.vertex_density.as_mut(), mesh.vertex_density.as_ref()) {
            dst.push(src[i]);
        }
    }
    out.triangles = triangles.into_iter().map(|t| t.map(|i| remap[i as usize])).collect();
    Ok(out)
}
