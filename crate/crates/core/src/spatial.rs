use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// k nearest points to `query` by Euclidean distance, ascending, ties broken
/// by lower index. The query point itself is returned if it is in the cloud.
pub fn knn_query(p: &PointCloud, query: &Vector3<f64>, k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > p.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} out of range 1..={}",
            p.len()
        )));
    }
    let mut all: Vec<(usize, f64)> = p
        .points()
        .iter()
        .enumerate()
        .map(|(i, x)| (i, (x - query).norm()))
        .collect();
    all.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    Ok(all)
}

// Max-heap entry ordered so the worst candidate (largest distance, then
// largest index) sits on top.
#[derive(PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Uniform-grid spatial index for repeated neighbor queries.
///
/// Results are deterministic: distance ties are always resolved toward the
/// lower point index.
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    origin: Vector3<f64>,
    cell: f64,
    dims: [i64; 3],
    // CSR-style buckets: point ids grouped by cell.
    starts: Vec<u32>,
    ids: Vec<u32>,
}

impl SpatialIndex {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        assert!(!points.is_empty(), "spatial index needs at least one point");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (hi - lo).amax().max(0.0);
        let per_axis = ((points.len() as f64 / 2.0).cbrt().ceil() as i64).clamp(1, 100);
        let cell = if extent > 0.0 {
            extent / per_axis as f64
        } else {
            1.0
        };
        let dims = [
            ((hi.x - lo.x) / cell).floor() as i64 + 1,
            ((hi.y - lo.y) / cell).floor() as i64 + 1,
            ((hi.z - lo.z) / cell).floor() as i64 + 1,
        ];
        let ncells = (dims[0] * dims[1] * dims[2]) as usize;

        let cell_of = |p: &Vector3<f64>| -> usize {
            let cx = (((p.x - lo.x) / cell).floor() as i64).clamp(0, dims[0] - 1);
            let cy = (((p.y - lo.y) / cell).floor() as i64).clamp(0, dims[1] - 1);
            let cz = (((p.z - lo.z) / cell).floor() as i64).clamp(0, dims[2] - 1);
            ((cx * dims[1] + cy) * dims[2] + cz) as usize
        };

        let mut counts = vec![0u32; ncells + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut cursor = counts;
        let mut ids = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            ids[cursor[c] as usize] = i as u32;
            cursor[c] += 1;
        }

        Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            starts,
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cell_coords(&self, p: &Vector3<f64>) -> [i64; 3] {
        [
            ((p.x - self.origin.x) / self.cell).floor() as i64,
            ((p.y - self.origin.y) / self.cell).floor() as i64,
            ((p.z - self.origin.z) / self.cell).floor() as i64,
        ]
    }

    fn bucket(&self, c: [i64; 3]) -> &[u32] {
        if c.iter().zip(&self.dims).any(|(&x, &d)| x < 0 || x >= d) {
            return &[];
        }
        let idx = ((c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]) as usize;
        let s = self.starts[idx] as usize;
        let e = self.starts[idx + 1] as usize;
        &self.ids[s..e]
    }

    /// k nearest points, ascending by (distance, index).
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let c0 = self.cell_coords(query);
        let max_ring = c0
            .iter()
            .zip(&self.dims)
            .map(|(&c, &d)| c.abs().max((d - 1 - c).abs()))
            .max()
            .unwrap();

        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for r in 0..=max_ring {
            // Before scanning ring r, every unscanned point sits in a ring
            // ≥ r and is strictly farther than (r−1)·cell from the query, so
            // once the current k-th best is at or below that bound nothing
            // unscanned can displace it (the strict inequality also protects
            // the tie-break toward lower indices).
            if heap.len() == k && r >= 1 {
                let bound = (r - 1) as f64 * self.cell;
                if heap.peek().unwrap().d2 <= bound * bound {
                    break;
                }
            }
            self.for_ring(c0, r, |cell| {
                for &id in self.bucket(cell) {
                    let d2 = (self.points[id as usize] - query).norm_squared();
                    let cand = Candidate {
                        d2,
                        idx: id as usize,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            });
        }
        let mut out: Vec<(usize, f64)> = heap
            .into_iter()
            .map(|c| (c.idx, c.d2.sqrt()))
            .collect();
        out.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// All points with distance ≤ radius, ascending by (distance, index).
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let r2 = radius * radius;
        let lo = self.cell_coords(&(query - Vector3::repeat(radius)));
        let hi = self.cell_coords(&(query + Vector3::repeat(radius)));
        let mut out = Vec::new();
        for cx in lo[0].max(0)..=hi[0].min(self.dims[0] - 1) {
            for cy in lo[1].max(0)..=hi[1].min(self.dims[1] - 1) {
                for cz in lo[2].max(0)..=hi[2].min(self.dims[2] - 1) {
                    for &id in self.bucket([cx, cy, cz]) {
                        let d2 = (self.points[id as usize] - query).norm_squared();
                        if d2 <= r2 {
                            out.push((id as usize, d2.sqrt()));
                        }
                    }
                }
            }
        }
        out.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        self.knn(query, 1)[0]
    }

    // Visits every in-bounds cell whose Chebyshev distance from c0 is
    // exactly r.
    fn for_ring(&self, c0: [i64; 3], r: i64, mut f: impl FnMut([i64; 3])) {
        if r == 0 {
            f(c0);
            return;
        }
        for dx in -r..=r {
            for dy in -r..=r {
                let on_shell_xy = dx.abs() == r || dy.abs() == r;
                if on_shell_xy {
                    for dz in -r..=r {
                        f([c0[0] + dx, c0[1] + dy, c0[2] + dz]);
                    }
                } else {
                    f([c0[0] + dx, c0[1] + dy, c0[2] - r]);
                    f([c0[0] + dx, c0[1] + dy, c0[2] + r]);
                }
            }
        }
    }
}

/// Per-point lists of the k nearest *other* points, each sorted ascending by
/// (distance, index).
pub fn knn_lists(points: &[Vector3<f64>], k: usize) -> Result<Vec<Vec<(u32, f64)>>> {
    if k == 0 || k >= points.len() {
        return Err(Error::InvalidParameter(format!(
            "neighbor count {k} out of range 1..{}",
            points.len()
        )));
    }
    let index = SpatialIndex::build(points);
    let mut lists = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut nn = index.knn(p, k + 1);
        nn.retain(|&(j, _)| j != i);
        nn.truncate(k);
        lists.push(nn.into_iter().map(|(j, d)| (j as u32, d)).collect());
    }
    Ok(lists)
}

/// Symmetric closure of kNN lists: i~j if either lists the other.
pub fn symmetric_adjacency(lists: &[Vec<(u32, f64)>]) -> Vec<Vec<u32>> {
    let n = lists.len();
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, list) in lists.iter().enumerate() {
        for &(j, _) in list {
            adj[i].push(j);
            adj[j as usize].push(i as u32);
        }
    }
    for row in &mut adj {
        row.sort_unstable();
        row.dedup();
    }
    adj
}

/// Number of connected components of an undirected adjacency structure.
pub fn component_count(adj: &[Vec<u32>]) -> usize {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut stack = Vec::new();
    let mut components = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        components += 1;
        seen[s] = true;
        stack.push(s as u32);
        while let Some(u) = stack.pop() {
            for &v in &adj[u as usize] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.push(v);
                }
            }
        }
    }
    components
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn brute_knn(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, x)| (i, (x - q).norm()))
            .collect();
        all.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn knn_query_self_is_first() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let out = knn_query(&cloud, &pts[0], 1).unwrap();
        assert_eq!(out, vec![(0, 0.0)]);
    }

    #[test]
    fn knn_query_full_list_sorted() {
        let pts = random_points(20, 7);
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let q = Vector3::new(0.1, 0.2, -0.3);
        let out = knn_query(&cloud, &q, 20).unwrap();
        assert_eq!(out, brute_knn(&pts, &q, 20));
    }

    #[test]
    fn knn_query_range_check() {
        let cloud = PointCloud::new(random_points(5, 0)).unwrap();
        assert!(knn_query(&cloud, &Vector3::zeros(), 0).is_err());
        assert!(knn_query(&cloud, &Vector3::zeros(), 6).is_err());
    }

    #[test]
    fn grid_knn_matches_brute_force() {
        for seed in 0..6u64 {
            let pts = random_points(300, seed);
            let index = SpatialIndex::build(&pts);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            for _ in 0..25 {
                let q = Vector3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                );
                let k = rng.random_range(1..20);
                assert_eq!(index.knn(&q, k), brute_knn(&pts, &q, k));
            }
        }
    }

    #[test]
    fn grid_knn_handles_ties_on_lattice() {
        // Integer lattice produces many exact distance ties.
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    pts.push(Vector3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let index = SpatialIndex::build(&pts);
        for (i, q) in pts.iter().enumerate() {
            let got = index.knn(q, 9);
            let want = brute_knn(&pts, q, 9);
            assert_eq!(got, want, "query {i}");
        }
    }

    #[test]
    fn within_radius_matches_filter() {
        let pts = random_points(200, 3);
        let index = SpatialIndex::build(&pts);
        let q = Vector3::new(0.2, -0.1, 0.4);
        let r = 0.45;
        let got = index.within_radius(&q, r);
        let mut want: Vec<(usize, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, x)| (i, (x - q).norm()))
            .filter(|&(_, d)| d <= r)
            .collect();
        want.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0);
            assert_relative_eq!(g.1, w.1);
        }
    }

    #[test]
    fn knn_lists_exclude_self() {
        let pts = random_points(50, 4);
        let lists = knn_lists(&pts, 5).unwrap();
        for (i, list) in lists.iter().enumerate() {
            assert_eq!(list.len(), 5);
            assert!(list.iter().all(|&(j, _)| j as usize != i));
        }
    }

    #[test]
    fn components_counted() {
        // Two clusters far apart, k=2 inside each.
        let mut pts = random_points(10, 5);
        for p in random_points(10, 6) {
            pts.push(p + Vector3::new(100.0, 0.0, 0.0));
        }
        let lists = knn_lists(&pts, 2).unwrap();
        let adj = symmetric_adjacency(&lists);
        assert_eq!(component_count(&adj), 2);

        let single = random_points(30, 8);
        let lists = knn_lists(&single, 8).unwrap();
        assert_eq!(component_count(&symmetric_adjacency(&lists)), 1);
    }

    #[test]
    fn degenerate_extents() {
        // All points on a line: grid must still answer correctly.
        let pts: Vec<_> = (0..40)
            .map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0))
            .collect();
        let index = SpatialIndex::build(&pts);
        let q = Vector3::new(1.95, 0.0, 0.0);
        assert_eq!(index.knn(&q, 3), brute_knn(&pts, &q, 3));
    }
}
