//! Neighbor queries over point sets: a uniform hash grid for fixed-radius
//! searches and a kd-tree for k-nearest-neighbor searches.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

pub type CellKey = (i64, i64, i64);

#[inline]
pub fn cell_of(p: &Vector3<f64>, cell: f64) -> CellKey {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Points bucketed into cubic cells. Indices are stored contiguously per cell
/// in ascending order, so iteration order is deterministic.
pub struct HashGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    order: Vec<u32>,
    ranges: FxHashMap<CellKey, (u32, u32)>,
}

impl<'a> HashGrid<'a> {
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let keys: Vec<CellKey> = points.par_iter().map(|p| cell_of(p, cell)).collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        order.par_sort_unstable_by_key(|&i| (keys[i as usize], i));
        let mut ranges = FxHashMap::default();
        ranges.reserve(points.len() / 4 + 1);
        let mut start = 0usize;
        while start < order.len() {
            let key = keys[order[start] as usize];
            let mut end = start + 1;
            while end < order.len() && keys[order[end] as usize] == key {
                end += 1;
            }
            ranges.insert(key, (start as u32, end as u32));
            start = end;
        }
        Self {
            points,
            cell,
            order,
            ranges,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn points(&self) -> &'a [Vector3<f64>] {
        self.points
    }

    #[inline]
    pub fn cell_members(&self, key: CellKey) -> &[u32] {
        match self.ranges.get(&key) {
            Some(&(s, e)) => &self.order[s as usize..e as usize],
            None => &[],
        }
    }

    /// Calls `f` with every indexed point within `radius` of `q` (inclusive).
    /// `radius` must not exceed the cell size.
    pub fn for_each_within(&self, q: &Vector3<f64>, radius: f64, mut f: impl FnMut(u32)) {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let r2 = radius * radius;
        let (cx, cy, cz) = cell_of(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    for &j in self.cell_members((cx + dx, cy + dy, cz + dz)) {
                        if (self.points[j as usize] - q).norm_squared() <= r2 {
                            f(j);
                        }
                    }
                }
            }
        }
    }

    /// True if some indexed point lies strictly closer than `radius` to `q`.
    pub fn any_closer_than(&self, q: &Vector3<f64>, radius: f64) -> bool {
        let r2 = radius * radius;
        let (cx, cy, cz) = cell_of(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    for &j in self.cell_members((cx + dx, cy + dy, cz + dz)) {
                        if (self.points[j as usize] - q).norm_squared() < r2 {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Neighbor returned by [`KdTree::knn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: u32,
    pub dist_sq: f64,
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

const LEAF_SIZE: usize = 12;

enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Static kd-tree over a borrowed point slice.
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    indices: Vec<u32>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut tree = Self {
            points,
            indices: (0..points.len() as u32).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.indices[start..end] {
            let p = &self.points[i as usize];
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // all coincident
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let mid = (start + end) / 2;
        let pts = self.points;
        self.indices[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis].total_cmp(&pts[b as usize][axis])
        });
        let value = pts[self.indices[mid] as usize][axis];
        self.nodes.push(Node::Split {
            axis: axis as u8,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id as usize]
        {
            *l = left;
            *r = right;
        }
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `q`, ascending by (distance, index).
    /// `exclude` removes one index from consideration (the query point itself).
    pub fn knn(&self, q: &Vector3<f64>, k: usize, exclude: Option<u32>) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, exclude, &mut heap);
        let mut out = heap.into_vec();
        out.sort_unstable();
        out
    }

    fn search(&self, node: u32, q: &Vector3<f64>, k: usize, exclude: Option<u32>, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.indices[start as usize..end as usize] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        dist_sq: (self.points[i as usize] - q).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("non-empty") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // `<=` so equal-distance candidates with smaller indices are still found
                if heap.len() < k || diff * diff <= heap.peek().expect("non-empty").dist_sq {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }

    pub fn nearest(&self, q: &Vector3<f64>) -> Option<Neighbor> {
        self.knn(q, 1, None).into_iter().next()
    }
}
