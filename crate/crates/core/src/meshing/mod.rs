//! Surface reconstruction from oriented point clouds.
//!
//! The flow is [`estimate_normals`] → [`orient_normals`] →
//! [`poisson_reconstruct`] → [`trim_mesh`].

mod marching;
mod normals;
mod poisson;
mod trim;

pub use marching::{extract_isosurface, IsoSurface};
pub use normals::{estimate_normals, orient_normals, orient_normals_with_k, OrientReport, DEFAULT_ORIENT_K};
pub use poisson::{
    poisson_reconstruct, poisson_reconstruct_with, Octree, OctreeNode, PoissonConfig, PoissonReport,
};
pub use trim::{density_threshold, trim_mesh, Aabb};

use nalgebra::Vector3;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// 0..1 RGB per vertex.
    pub vertex_colors: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Input-sample support around each vertex.
    pub vertex_density: Option<Vec<f64>>,
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<()> {
        let m = self.vertices.len();
        if self.vertex_colors.len() != m {
            return Err(Error::invalid(format!("{} colors for {m} vertices", self.vertex_colors.len())));
        }
        if let Some(d) = &self.vertex_density {
            if d.len() != m {
                return Err(Error::invalid(format!("{} densities for {m} vertices", d.len())));
            }
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("vertex {i} is not finite")));
        }
        for (ti, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i as usize >= m) {
                return Err(Error::invalid(format!("triangle {ti} references a missing vertex")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::invalid(format!("triangle {ti} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Number of triangles using each undirected edge.
    pub fn edge_use_counts(&self) -> FxHashMap<(u32, u32), u32> {
        let mut counts = FxHashMap::default();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    /// Vertices not referenced by any triangle.
    pub fn orphan_count(&self) -> usize {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        used.iter().filter(|u| !**u).count()
    }
}
