//! Surface-following marching cubes over a sparse uniform lattice.
//!
//! Instead of a 256-case lookup table, each cube's polygons are assembled
//! from per-face segments. A face's segments depend only on the signs of its
//! four corners (ambiguous faces always separate the positive corners), so
//! two cubes sharing a face always agree on the contour there and the output
//! has no cracks. Polygons with a diagonal that could coincide with a
//! neighbor's edge are fanned around an added centroid vertex, which keeps
//! every edge shared by exactly two triangles on closed surfaces.

use std::collections::VecDeque;
use std::sync::OnceLock;

use nalgebra::Vector3;
use rustc_hash::{FxHashMap, FxHashSet};

type Cell = [i64; 3];

const CORNERS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

#[derive(Clone, Copy)]
struct Edge {
    c0: usize,
    c1: usize,
    axis: usize,
}

struct Face {
    /// Corners in cyclic order around the face.
    corners: [usize; 4],
    /// `edges[k]` joins `corners[k]` and `corners[k + 1]`.
    edges: [usize; 4],
    neighbor: [i64; 3],
}

struct Tables {
    edges: Vec<Edge>,
    faces: Vec<Face>,
    edge_faces: Vec<[usize; 2]>,
}

fn corner_index(bits: [i64; 3]) -> usize {
    (bits[0] + 2 * bits[1] + 4 * bits[2]) as usize
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut edges = Vec::with_capacity(12);
        for c0 in 0..8 {
            for axis in 0..3 {
                if CORNERS[c0][axis] == 0 {
                    let mut b = CORNERS[c0];
                    b[axis] = 1;
                    edges.push(Edge {
                        c0,
                        c1: corner_index(b),
                        axis,
                    });
                }
            }
        }
        let edge_between = |a: usize, b: usize| -> usize {
            edges
                .iter()
                .position(|e| (e.c0 == a && e.c1 == b) || (e.c0 == b && e.c1 == a))
                .expect("corners are adjacent")
        };
        let mut faces = Vec::with_capacity(6);
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in 0..2i64 {
                let mut corners = [0usize; 4];
                for (k, (du, dv)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                    let mut b = [0i64; 3];
                    b[axis] = side;
                    b[u] = du;
                    b[v] = dv;
                    corners[k] = corner_index(b);
                }
                let edges = [0, 1, 2, 3].map(|k| edge_between(corners[k], corners[(k + 1) % 4]));
                let mut neighbor = [0i64; 3];
                neighbor[axis] = if side == 0 { -1 } else { 1 };
                faces.push(Face {
                    corners,
                    edges,
                    neighbor,
                });
            }
        }
        let mut edge_faces = vec![[usize::MAX; 2]; 12];
        for (fi, f) in faces.iter().enumerate() {
            for &e in &f.edges {
                let slot = if edge_faces[e][0] == usize::MAX { 0 } else { 1 };
                edge_faces[e][slot] = fi;
            }
        }
        Tables {
            edges,
            faces,
            edge_faces,
        }
    })
}

/// Isosurface in lattice units: corner `(i, j, k)` sits at `(i, j, k)`.
#[derive(Debug, Clone, Default)]
pub struct IsoSurface {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub cells_visited: usize,
}

/// Extracts the `iso` level set by flood-filling from `seeds` through cube
/// faces that the surface crosses. Cubes are restricted to
/// `[0, dims)` per axis; `corner_value` is queried once per lattice corner.
/// Triangles are wound so their normals point toward increasing values.
pub fn extract_isosurface<F>(dims: [i64; 3], seeds: impl IntoIterator<Item = Cell>, iso: f64, mut corner_value: F) -> IsoSurface
where
    F: FnMut(Cell) -> f64,
{
    let t = tables();
    let in_bounds = |c: &Cell| (0..3).all(|a| c[a] >= 0 && c[a] < dims[a]);

    let mut values: FxHashMap<Cell, f64> = FxHashMap::default();
    let mut vertex_ids: FxHashMap<(Cell, u8), u32> = FxHashMap::default();
    let mut out = IsoSurface::default();
    let mut visited: FxHashSet<Cell> = FxHashSet::default();
    let mut queue: VecDeque<Cell> = VecDeque::new();
    for s in seeds {
        if in_bounds(&s) && visited.insert(s) {
            queue.push_back(s);
        }
    }

    while let Some(cell) = queue.pop_front() {
        out.cells_visited += 1;
        let mut v = [0f64; 8];
        for (c, off) in CORNERS.iter().enumerate() {
            let key = [cell[0] + off[0], cell[1] + off[1], cell[2] + off[2]];
            v[c] = *values.entry(key).or_insert_with(|| corner_value(key));
        }
        let pos: [bool; 8] = v.map(|x| x >= iso);
        if pos.iter().all(|&p| p) || pos.iter().all(|&p| !p) {
            continue;
        }

        let mut adj = [[usize::MAX; 2]; 12];
        let mut link = |a: usize, b: usize| {
            for (x, y) in [(a, b), (b, a)] {
                let slot = if adj[x][0] == usize::MAX { 0 } else { 1 };
                adj[x][slot] = y;
            }
        };
        for f in &t.faces {
            let crossing: Vec<usize> = (0..4)
                .filter(|&k| pos[f.corners[k]] != pos[f.corners[(k + 1) % 4]])
                .collect();
            match crossing.len() {
                0 => continue,
                2 => link(f.edges[crossing[0]], f.edges[crossing[1]]),
                4 => {
                    // cut off each positive corner separately
                    for k in 0..4 {
                        if pos[f.corners[k]] {
                            link(f.edges[(k + 3) % 4], f.edges[k]);
                        }
                    }
                }
                _ => unreachable!("a face has an even number of crossings"),
            }
            let nb = [cell[0] + f.neighbor[0], cell[1] + f.neighbor[1], cell[2] + f.neighbor[2]];
            if in_bounds(&nb) && visited.insert(nb) {
                queue.push_back(nb);
            }
        }

        let gradient = Vector3::from_fn(|a, _| {
            (0..8)
                .map(|c| if CORNERS[c][a] == 1 { v[c] } else { -v[c] })
                .sum::<f64>()
        });

        let mut used = [false; 12];
        for start in 0..12 {
            if adj[start][0] == usize::MAX || used[start] {
                continue;
            }
            let mut cycle = Vec::with_capacity(8);
            let (mut prev, mut cur) = (usize::MAX, start);
            loop {
                used[cur] = true;
                cycle.push(cur);
                let next = if adj[cur][0] != prev { adj[cur][0] } else { adj[cur][1] };
                prev = cur;
                cur = next;
                if cur == start {
                    break;
                }
            }

            let ids: Vec<u32> = cycle
                .iter()
                .map(|&e| {
                    let edge = t.edges[e];
                    let base = [
                        cell[0] + CORNERS[edge.c0][0],
                        cell[1] + CORNERS[edge.c0][1],
                        cell[2] + CORNERS[edge.c0][2],
                    ];
                    *vertex_ids.entry((base, edge.axis as u8)).or_insert_with(|| {
                        let (a, b) = (v[edge.c0], v[edge.c1]);
                        let s = ((iso - a) / (b - a)).clamp(0.0, 1.0);
                        let mut p = Vector3::new(base[0] as f64, base[1] as f64, base[2] as f64);
                        p[edge.axis] += s;
                        out.vertices.push(p);
                        (out.vertices.len() - 1) as u32
                    })
                })
                .collect();

            // Newell normal
            let mut normal = Vector3::zeros();
            for k in 0..ids.len() {
                let a = out.vertices[ids[k] as usize];
                let b = out.vertices[ids[(k + 1) % ids.len()] as usize];
                normal += Vector3::new(
                    (a.y - b.y) * (a.z + b.z),
                    (a.z - b.z) * (a.x + b.x),
                    (a.x - b.x) * (a.y + b.y),
                );
            }
            let (ids, cycle): (Vec<u32>, Vec<usize>) = if normal.dot(&gradient) < 0.0 {
                (ids.into_iter().rev().collect(), cycle.into_iter().rev().collect())
            } else {
                (ids, cycle)
            };

            let n = ids.len();
            if n == 3 {
                out.triangles.push([ids[0], ids[1], ids[2]]);
                continue;
            }
            let shares_face = |a: usize, b: usize| {
                t.edge_faces[a].iter().any(|f| t.edge_faces[b].contains(f))
            };
            let fan_ok = (2..n - 1).all(|k| !shares_face(cycle[0], cycle[k]));
            if fan_ok {
                for k in 1..n - 1 {
                    out.triangles.push([ids[0], ids[k], ids[k + 1]]);
                }
            } else {
                let centroid = ids.iter().map(|&i| out.vertices[i as usize]).sum::<Vector3<f64>>() / n as f64;
                out.vertices.push(centroid);
                let c = (out.vertices.len() - 1) as u32;
                for k in 0..n {
                    out.triangles.push([c, ids[k], ids[(k + 1) % n]]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshing::TriangleMesh;

    fn as_mesh(s: &IsoSurface) -> TriangleMesh {
        TriangleMesh {
            vertices: s.vertices.clone(),
            vertex_colors: vec![[0.0; 3]; s.vertices.len()],
            triangles: s.triangles.clone(),
            vertex_density: None,
        }
    }

    #[test]
    fn tables_are_consistent() {
        let t = tables();
        assert_eq!(t.edges.len(), 12);
        assert_eq!(t.faces.len(), 6);
        assert!(t.edge_faces.iter().all(|f| f[0] != usize::MAX && f[1] != usize::MAX && f[0] != f[1]));
    }

    #[test]
    fn sphere_field_is_watertight_and_accurate() {
        let r = 7.3;
        let c = 10.0;
        let surf = extract_isosurface([20, 20, 20], [[17, 10, 10]], 0.0, |p| {
            let d = Vector3::new(p[0] as f64 - c, p[1] as f64 - c, p[2] as f64 - c);
            d.norm() - r
        });
        let mesh = as_mesh(&surf);
        mesh.validate().unwrap();
        assert!(mesh.is_watertight());
        for v in &surf.vertices {
            assert!(((v - Vector3::repeat(c)).norm() - r).abs() < 0.15);
        }
        // outward winding: signed volume positive
        let vol: f64 = surf
            .triangles
            .iter()
            .map(|t| {
                let [a, b, cc] = t.map(|i| surf.vertices[i as usize] - Vector3::repeat(c));
                a.dot(&b.cross(&cc)) / 6.0
            })
            .sum();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        assert!((vol - exact).abs() / exact < 0.02, "{vol} vs {exact}");
    }

    #[test]
    fn ambiguous_saddles_stay_watertight() {
        // random-ish trigonometric field with many saddle configurations
        let f = |p: Cell| {
            let (x, y, z) = (p[0] as f64 * 0.9, p[1] as f64 * 0.8, p[2] as f64 * 0.7);
            (x.sin() * y.cos() + (y * 1.3).sin() * z.cos() + (z * 0.7).sin() * (x * 1.1).cos()) * 1.0
        };
        let dims = [24, 24, 24];
        let seeds: Vec<Cell> = (1..23)
            .flat_map(|i| (1..23).flat_map(move |j| (1..23).map(move |k| [i, j, k])))
            .collect();
        // clamp the field to positive on the boundary shell so every component closes
        let g = |p: Cell| {
            if p.iter().any(|&c| c <= 0 || c >= 24) {
                5.0
            } else {
                f(p)
            }
        };
        let surf = extract_isosurface(dims, seeds, 0.1, g);
        let mesh = as_mesh(&surf);
        mesh.validate().unwrap();
        assert!(!mesh.triangles.is_empty());
        assert!(mesh.is_watertight());
    }
}
