use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::spatial::KdTree;

/// Neighbors per point in the orientation graph.
pub const DEFAULT_ORIENT_K: usize = 10;

/// Per-point PCA normal: the smallest-eigenvalue direction of the covariance
/// of the point and its `k` nearest neighbors. Signs are arbitrary.
pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::invalid(format!("normal estimation needs k >= 3, got {k}")));
    }
    if pc.len() <= k {
        return Err(Error::invalid(format!(
            "normal estimation with k={k} needs more than {k} points, cloud has {}",
            pc.len()
        )));
    }
    let pts = pc.positions();
    let tree = KdTree::new(pts);
    let normals = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let nn = tree.knn(&pts[i], k, Some(i as u32));
            let members = std::iter::once(i).chain(nn.iter().map(|n| n.index as usize));
            let count = (nn.len() + 1) as f64;
            let centroid = members.clone().map(|j| pts[j]).sum::<Vector3<f64>>() / count;
            let mut cov = Matrix3::zeros();
            for j in members {
                let d = pts[j] - centroid;
                cov += d * d.transpose();
            }
            let eig = cov.symmetric_eigen();
            let n = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vector3::z()
            }
        })
        .collect();
    pc.clone().with_normals(normals)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrientReport {
    /// Connected components of the neighbor graph, each oriented on its own.
    pub components: usize,
    /// Points whose normal changed sign.
    pub flipped: usize,
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Greater => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb as usize] = ra;
                self.rank[ra as usize] += 1;
            }
        }
        true
    }
}

pub fn orient_normals(pc: &PointCloud, camera_centers: Option<&[Vector3<f64>]>) -> Result<(PointCloud, OrientReport)> {
    orient_normals_with_k(pc, camera_centers, DEFAULT_ORIENT_K)
}

/// Makes normal signs consistent by propagation along a minimum spanning
/// tree of the k-NN graph (edge cost `1 - |n_i·n_j|`), seeded at the highest
/// point of each component with its normal pointing up. With camera centers,
/// each component is then flipped as a whole if most of its normals face
/// away from their nearest camera.
pub fn orient_normals_with_k(
    pc: &PointCloud,
    camera_centers: Option<&[Vector3<f64>]>,
    k: usize,
) -> Result<(PointCloud, OrientReport)> {
    let normals = pc
        .normals()
        .ok_or_else(|| Error::invalid("orient_normals requires normals"))?;
    let n = pc.len();
    if n == 0 {
        return Ok((pc.clone(), OrientReport { components: 0, flipped: 0 }));
    }
    let pts = pc.positions();
    let k = k.min(n - 1).max(1);
    let tree = KdTree::new(pts);
    let mut edges: Vec<(f64, u32, u32)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let nn = if n > 1 { tree.knn(&pts[i], k, Some(i as u32)) } else { Vec::new() };
            nn.into_iter().map(move |nb| {
                let j = nb.index as usize;
                let w = 1.0 - normals[i].dot(&normals[j]).abs();
                (w.max(0.0), i.min(j) as u32, i.max(j) as u32)
            })
        })
        .collect();
    edges.par_sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    edges.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);

    // Kruskal
    let mut dsu = DisjointSet::new(n);
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(_, a, b) in &edges {
        if dsu.union(a, b) {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
    }

    let mut out = normals.to_vec();
    let mut component = vec![u32::MAX; n];
    let mut seeds: Vec<usize> = Vec::new();
    // seed = highest point (lowest index on ties) of each component
    let mut best: rustc_hash::FxHashMap<u32, usize> = Default::default();
    for i in 0..n {
        let root = dsu.find(i as u32);
        best.entry(root)
            .and_modify(|b| {
                if pts[i].z > pts[*b].z {
                    *b = i;
                }
            })
            .or_insert(i);
    }
    seeds.extend(best.values().copied());
    seeds.sort_unstable();

    let mut queue = VecDeque::new();
    for (c, &seed) in seeds.iter().enumerate() {
        if out[seed].z < 0.0 {
            out[seed] = -out[seed];
        }
        component[seed] = c as u32;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                let j = j as usize;
                if component[j] != u32::MAX {
                    continue;
                }
                component[j] = c as u32;
                if out[i].dot(&out[j]) < 0.0 {
                    out[j] = -out[j];
                }
                queue.push_back(j);
            }
        }
    }

    if let Some(centers) = camera_centers.filter(|c| !c.is_empty()) {
        let mut facing = vec![0usize; seeds.len()];
        let mut sizes = vec![0usize; seeds.len()];
        for i in 0..n {
            let nearest = centers
                .iter()
                .min_by(|a, b| (*a - pts[i]).norm_squared().total_cmp(&(*b - pts[i]).norm_squared()))
                .expect("non-empty");
            let c = component[i] as usize;
            sizes[c] += 1;
            if out[i].dot(&(nearest - pts[i])) > 0.0 {
                facing[c] += 1;
            }
        }
        for i in 0..n {
            let c = component[i] as usize;
            if 2 * facing[c] < sizes[c] {
                out[i] = -out[i];
            }
        }
    }

    let flipped = out.iter().zip(normals).filter(|(a, b)| a.dot(b) < 0.0).count();
    let components = seeds.len();
    let mut result = pc.clone();
    *result.normals_mut().expect("normals present") = out;
    Ok((result, OrientReport { components, flipped }))
}
