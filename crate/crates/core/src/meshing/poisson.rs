//! Poisson surface reconstruction on an adaptive, 2:1-balanced octree.
//!
//! Unknowns live at leaf centers. The Laplacian is a finite-volume stencil
//! over leaf faces, the right-hand side is the divergence of the sample
//! normals splatted onto finest-level faces, and the system is solved with
//! Jacobi-preconditioned conjugate gradients. The surface is extracted on the
//! finest lattice near the samples.

use nalgebra::Vector3;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};

use super::marching::extract_isosurface;
use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::spatial::{HashGrid, KdTree};

type Cell = [i64; 3];

pub const MIN_DEPTH: u32 = 4;
pub const MAX_DEPTH: u32 = 10;
const MIN_POINTS: usize = 4;
const DOT_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonConfig {
    pub max_depth: u32,
    /// Domain cube edge relative to the largest extent of the input.
    pub scale: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            scale: 1.25,
            tolerance: 1e-7,
            max_iterations: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonReport {
    pub leaves: usize,
    pub iterations: usize,
    pub relative_residual: f64,
    pub iso_value: f64,
    pub cells_visited: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeNode {
    pub center: Vector3<f64>,
    pub half_width: f64,
    pub depth: u32,
    pub children: Option<[u32; 8]>,
}

/// Octree over a cube domain. Level-`l` cells are addressed by integer
/// coordinates in `[0, 2^l)`.
#[derive(Debug, Clone)]
pub struct Octree {
    origin: Vector3<f64>,
    size: f64,
    max_depth: u32,
    /// Subdivided cells per level.
    refined: Vec<FxHashSet<Cell>>,
    leaves: Vec<(u32, Cell)>,
    leaf_index: FxHashMap<(u32, Cell), u32>,
}

fn parent(c: Cell) -> Cell {
    [c[0] >> 1, c[1] >> 1, c[2] >> 1]
}

fn dilate(cells: &FxHashSet<Cell>, r: i64, n: i64) -> FxHashSet<Cell> {
    let mut out = FxHashSet::default();
    out.reserve(cells.len() * 4);
    for c in cells {
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    let d = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if d.iter().all(|&v| v >= 0 && v < n) {
                        out.insert(d);
                    }
                }
            }
        }
    }
    out
}

impl Octree {
    /// Refines every finest cell within two cells of a sample, then closes
    /// the refinement upward with a one-cell halo per level, which keeps
    /// neighboring leaves within one level of each other.
    pub fn build(points: &[Vector3<f64>], max_depth: u32, scale: f64) -> Result<Self> {
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&max_depth) {
            return Err(Error::invalid(format!(
                "octree depth must be in [{MIN_DEPTH}, {MAX_DEPTH}], got {max_depth}"
            )));
        }
        if points.is_empty() {
            return Err(Error::invalid("octree needs at least one point"));
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).max();
        if !extent.is_finite() || extent <= 0.0 {
            return Err(Error::invalid("input points have no spatial extent"));
        }
        let size = extent * scale;
        let origin = (lo + hi) * 0.5 - Vector3::repeat(size * 0.5);
        let d = max_depth as usize;
        let mut tree = Self {
            origin,
            size,
            max_depth,
            refined: vec![FxHashSet::default(); d],
            leaves: Vec::new(),
            leaf_index: FxHashMap::default(),
        };

        let n = 1i64 << max_depth;
        let sample_cells: FxHashSet<Cell> = points.iter().map(|p| tree.finest_cell(p)).collect();
        let finest = dilate(&sample_cells, 2, n);
        tree.refined[d - 1] = finest.iter().map(|&c| parent(c)).collect();
        for l in (0..d - 1).rev() {
            let halo = dilate(&tree.refined[l + 1], 1, 1i64 << (l + 1));
            tree.refined[l] = halo.into_iter().map(parent).collect();
        }

        let mut leaves = Vec::new();
        for l in 0..d {
            for c in &tree.refined[l] {
                for child in children_of(*c) {
                    let lc = l as u32 + 1;
                    if lc == max_depth || !tree.refined[l + 1].contains(&child) {
                        leaves.push((lc, child));
                    }
                }
            }
        }
        leaves.sort_unstable();
        tree.leaf_index = leaves.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect();
        tree.leaves = leaves;
        Ok(tree)
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    /// Edge length of the domain cube.
    pub fn size(&self) -> f64 {
        self.size
    }

    /// Edge length of a finest-level cell.
    pub fn finest_width(&self) -> f64 {
        self.size / (1u64 << self.max_depth) as f64
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Continuous position in finest-cell units.
    fn grid(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.origin) / self.finest_width()
    }

    fn finest_cell(&self, p: &Vector3<f64>) -> Cell {
        let g = self.grid(p);
        let n = (1i64 << self.max_depth) - 1;
        [0, 1, 2].map(|a| (g[a].floor() as i64).clamp(0, n))
    }

    /// Leaf containing a finest-level cell.
    fn leaf_of(&self, c: Cell) -> Option<u32> {
        let n = 1i64 << self.max_depth;
        if c.iter().any(|&v| v < 0 || v >= n) {
            return None;
        }
        for l in (1..=self.max_depth).rev() {
            let shift = self.max_depth - l;
            let key = (l, [c[0] >> shift, c[1] >> shift, c[2] >> shift]);
            if let Some(&i) = self.leaf_index.get(&key) {
                return Some(i);
            }
        }
        None
    }

    fn is_refined(&self, level: u32, c: Cell) -> bool {
        (level as usize) < self.refined.len() && self.refined[level as usize].contains(&c)
    }

    /// Explicit node list, root first; children follow their parents.
    pub fn nodes(&self) -> Vec<OctreeNode> {
        let mut nodes = Vec::new();
        let mut stack = vec![(0u32, [0i64; 3], None::<(usize, usize)>)];
        while let Some((level, c, slot)) = stack.pop() {
            let width = self.size / (1u64 << level) as f64;
            let center = self.origin + Vector3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * width;
            let id = nodes.len();
            nodes.push(OctreeNode {
                center,
                half_width: width * 0.5,
                depth: level,
                children: None,
            });
            if let Some((p, k)) = slot {
                let parent: &mut OctreeNode = &mut nodes[p];
                parent.children.get_or_insert([0; 8])[k] = id as u32;
            }
            if self.is_refined(level, c) {
                for (k, child) in children_of(c).into_iter().enumerate().rev() {
                    stack.push((level + 1, child, Some((id, k))));
                }
            }
        }
        nodes
    }
}

fn children_of(c: Cell) -> [Cell; 8] {
    std::array::from_fn(|k| {
        [
            2 * c[0] + (k & 1) as i64,
            2 * c[1] + ((k >> 1) & 1) as i64,
            2 * c[2] + ((k >> 2) & 1) as i64,
        ]
    })
}

struct Csr {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Csr {
    fn mul(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            let (s, e) = (self.offsets[r], self.offsets[r + 1]);
            *out = self.cols[s..e]
                .iter()
                .zip(&self.vals[s..e])
                .map(|(&c, &v)| v * x[c as usize])
                .sum();
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.offsets.len() - 1)
            .map(|r| {
                let (s, e) = (self.offsets[r], self.offsets[r + 1]);
                (s..e)
                    .find(|&i| self.cols[i] as usize == r)
                    .map(|i| self.vals[i])
                    .unwrap_or(0.0)
            })
            .collect()
    }
}

/// Fixed-shape reduction so results do not depend on the thread count.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(DOT_CHUNK)
        .zip(b.par_chunks(DOT_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

fn assemble(tree: &Octree) -> Csr {
    let rows: Vec<Vec<(u32, f64)>> = tree
        .leaves
        .par_iter()
        .enumerate()
        .map(|(row, &(level, c))| {
            let width = (1i64 << (tree.max_depth - level)) as f64;
            let n = 1i64 << level;
            let mut diag = 0.0;
            let mut entries: Vec<(u32, f64)> = Vec::with_capacity(12);
            for axis in 0..3 {
                for dir in [-1i64, 1] {
                    let mut nb = c;
                    nb[axis] += dir;
                    if nb[axis] < 0 || nb[axis] >= n {
                        diag += 2.0 * width;
                        continue;
                    }
                    if let Some(&j) = tree.leaf_index.get(&(level, nb)) {
                        diag += width;
                        entries.push((j, -width));
                    } else if tree.is_refined(level, nb) {
                        // four finer leaves across the face
                        let w = width * 0.5 / 1.5;
                        for child in children_of(nb) {
                            let touching = if dir > 0 {
                                child[axis] == 2 * nb[axis]
                            } else {
                                child[axis] == 2 * nb[axis] + 1
                            };
                            if touching {
                                let j = tree.leaf_index[&(level + 1, child)];
                                diag += w;
                                entries.push((j, -w));
                            }
                        }
                    } else {
                        let w = width / 1.5;
                        let j = tree.leaf_index[&(level - 1, parent(nb))];
                        diag += w;
                        entries.push((j, -w));
                    }
                }
            }
            entries.push((row as u32, diag));
            entries.sort_unstable_by_key(|e| e.0);
            entries
        })
        .collect();
    let mut offsets = Vec::with_capacity(rows.len() + 1);
    offsets.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for r in rows {
        for (c, v) in r {
            cols.push(c);
            vals.push(v);
        }
        offsets.push(cols.len());
    }
    Csr { offsets, cols, vals }
}

/// Divergence of the splatted normal field, negated to match the positive
/// definite operator.
fn right_hand_side(tree: &Octree, points: &[Vector3<f64>], normals: &[Vector3<f64>]) -> Vec<f64> {
    // face (axis, i, j, k) separates finest cells c - e_axis and c
    let mut faces: FxHashMap<(u8, Cell), f64> = FxHashMap::default();
    for (p, nrm) in points.iter().zip(normals) {
        let g = tree.grid(p);
        for axis in 0..3 {
            let x = Vector3::from_fn(|a, _| if a == axis { g[a] } else { g[a] - 0.5 });
            let base = [0, 1, 2].map(|a| x[a].floor() as i64);
            let frac = Vector3::from_fn(|a, _| x[a] - base[a] as f64);
            for k in 0..8 {
                let bits = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
                let mut w = 1.0;
                let mut key = base;
                for a in 0..3 {
                    key[a] += bits[a] as i64;
                    w *= if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                if w > 0.0 {
                    *faces.entry((axis as u8, key)).or_insert(0.0) += w * nrm[axis];
                }
            }
        }
    }
    let mut sorted: Vec<((u8, Cell), f64)> = faces.into_iter().collect();
    sorted.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let mut b = vec![0.0; tree.leaf_count()];
    for ((axis, upper), f) in sorted {
        let mut lower = upper;
        lower[axis as usize] -= 1;
        if let Some(i) = tree.leaf_of(lower) {
            b[i as usize] -= f;
        }
        if let Some(i) = tree.leaf_of(upper) {
            b[i as usize] += f;
        }
    }
    b
}

fn conjugate_gradient(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Err(Error::Degenerate("normals produce no divergence".into()));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        a.mul(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.par_iter_mut().zip(&ap).for_each(|(r, q)| *r -= alpha * q);
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            return Ok((x, it, rel));
        }
        z.par_iter_mut()
            .zip(&r)
            .zip(&inv_diag)
            .for_each(|((z, r), d)| *z = r * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: rel,
    })
}

pub fn poisson_reconstruct(pc: &PointCloud, max_depth: u32) -> Result<TriangleMesh> {
    let cfg = PoissonConfig {
        max_depth,
        ..PoissonConfig::default()
    };
    poisson_reconstruct_with(pc, &cfg).map(|(mesh, _)| mesh)
}

/// Reconstructs a closed surface from an oriented cloud. Mesh normals (by
/// winding) point the same way as the input normals.
pub fn poisson_reconstruct_with(pc: &PointCloud, cfg: &PoissonConfig) -> Result<(TriangleMesh, PoissonReport)> {
    if pc.len() < MIN_POINTS {
        return Err(Error::invalid(format!(
            "Poisson reconstruction needs at least {MIN_POINTS} points, got {}",
            pc.len()
        )));
    }
    let normals = pc
        .normals()
        .ok_or_else(|| Error::invalid("Poisson reconstruction requires oriented normals"))?;
    if normals.iter().any(|n| !n.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("normals must be finite"));
    }
    if !(cfg.scale >= 1.0) {
        return Err(Error::invalid("domain scale must be at least 1"));
    }
    let points = pc.positions();
    let tree = Octree::build(points, cfg.max_depth, cfg.scale)?;
    let a = assemble(&tree);
    let b = right_hand_side(&tree, points, normals);
    let (u, iterations, relative_residual) = conjugate_gradient(&a, &b, cfg.tolerance, cfg.max_iterations)?;
    log::debug!(
        "poisson: {} leaves, {} iterations, residual {:.3e}",
        tree.leaf_count(),
        iterations,
        relative_residual
    );

    let cell_value = |c: Cell| tree.leaf_of(c).map_or(0.0, |i| u[i as usize]);
    let iso_value = points
        .par_iter()
        .map(|p| {
            let x = tree.grid(p) - Vector3::repeat(0.5);
            let base = [0, 1, 2].map(|a| x[a].floor() as i64);
            let f = Vector3::from_fn(|a, _| x[a] - base[a] as f64);
            (0..8)
                .map(|k| {
                    let bits = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
                    let w: f64 = (0..3)
                        .map(|a| if bits[a] == 1 { f[a] } else { 1.0 - f[a] })
                        .product();
                    let c = [0, 1, 2].map(|a| base[a] + bits[a] as i64);
                    w * cell_value(c)
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        / points.len() as f64;

    let corner_value = |c: Cell| {
        let mut s = 0.0;
        for k in 0..8 {
            s += cell_value([c[0] - (k & 1), c[1] - ((k >> 1) & 1), c[2] - ((k >> 2) & 1)]);
        }
        s / 8.0
    };
    let n = 1i64 << cfg.max_depth;
    let sample_cells: FxHashSet<Cell> = points.iter().map(|p| tree.finest_cell(p)).collect();
    let mut seeds: Vec<Cell> = dilate(&sample_cells, 1, n).into_iter().collect();
    seeds.sort_unstable();
    let surface = extract_isosurface([n, n, n], seeds, iso_value, corner_value);

    let h = tree.finest_width();
    let vertices: Vec<Vector3<f64>> = surface.vertices.iter().map(|v| tree.origin + v * h).collect();
    let radius = 2.0 * h;
    let grid = HashGrid::new(points, radius);
    let vertex_density: Vec<f64> = vertices
        .par_iter()
        .map(|v| {
            let mut count = 0usize;
            grid.for_each_within(v, radius, |_| count += 1);
            count as f64
        })
        .collect();
    let vertex_colors: Vec<[f32; 3]> = match pc.colors() {
        Some(colors) => {
            let kd = KdTree::new(points);
            vertices
                .par_iter()
                .map(|v| colors[kd.nearest(v).expect("non-empty").index as usize])
                .collect()
        }
        None => vec![[0.5; 3]; vertices.len()],
    };
    let mesh = TriangleMesh {
        vertices,
        vertex_colors,
        triangles: surface.triangles,
        vertex_density: Some(vertex_density),
    };
    let report = PoissonReport {
        leaves: tree.leaf_count(),
        iterations,
        relative_residual,
        iso_value,
        cells_visited: surface.cells_visited,
    };
    Ok((mesh, report))
}
