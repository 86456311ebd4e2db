mod lanczos;

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial;

/// Sparse symmetric matrix in CSR form (both triangles stored).
#[derive(Debug, Clone)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// Builds from per-row (column, value) lists, each sorted by column.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let s = self.row_ptr[i];
        let e = self.row_ptr[i + 1];
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let s = self.row_ptr[i];
        let e = self.row_ptr[i + 1];
        match self.cols[s..e].binary_search(&(j as u32)) {
            Ok(pos) => self.vals[s + pos],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let s = self.row_ptr[i];
            let e = self.row_ptr[i + 1];
            let mut acc = 0.0;
            for t in s..e {
                acc += self.vals[t] * x[self.cols[t] as usize];
            }
            y[i] = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j as usize)] = v;
            }
        }
        m
    }
}

/// A graph Laplacian L = D − W together with a diagonal mass matrix M
/// (stored as its diagonal), defining the pencil Lφ = λMφ.
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    l: SparseSym,
    mass: Vec<f64>,
}

impl LaplacianPair {
    /// Validates symmetry, zero row sums, non-positive off-diagonals, and
    /// strictly positive masses.
    pub fn from_parts(l: SparseSym, mass: Vec<f64>) -> Result<Self> {
        let n = l.n();
        if mass.len() != n {
            return Err(Error::InvalidParameter(format!(
                "mass length {} does not match matrix size {n}",
                mass.len()
            )));
        }
        if mass.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidParameter(
                "mass entries must be positive".into(),
            ));
        }
        for i in 0..n {
            let mut sum = 0.0;
            for (j, v) in l.row(i) {
                sum += v;
                let ju = j as usize;
                if ju != i && v > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "positive off-diagonal at ({i}, {ju})"
                    )));
                }
                if (l.get(ju, i) - v).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "asymmetry at ({i}, {ju})"
                    )));
                }
            }
            if sum.abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!(
                    "row {i} sums to {sum:e}, expected 0"
                )));
            }
        }
        Ok(Self { l, mass })
    }

    pub fn l(&self) -> &SparseSym {
        &self.l
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn n(&self) -> usize {
        self.l.n()
    }
}

/// Builds a symmetric kNN heat-kernel graph Laplacian.
///
/// An edge joins i and j when either point lists the other among its
/// `neighbors` nearest; its weight is exp(−‖x_i−x_j‖² / (4t)) with t the
/// squared bandwidth. When `bandwidth` is `None`, t is the mean squared
/// distance to the ⌈neighbors/2⌉-th nearest neighbor. Masses are
/// degree-proportional and normalized so trace(M) = n.
pub fn build_laplacian(
    p: &PointCloud,
    neighbors: usize,
    bandwidth: Option<f64>,
) -> Result<LaplacianPair> {
    let n = p.len();
    if neighbors < 1 || neighbors >= n {
        return Err(Error::InvalidParameter(format!(
            "neighbors = {neighbors} out of range 1..{n}"
        )));
    }
    let lists = spatial::knn_lists(p.points(), neighbors)?;

    let t = match bandwidth {
        Some(b) => {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::InvalidParameter(format!("bandwidth = {b}")));
            }
            b * b
        }
        None => {
            let rank = neighbors.div_ceil(2) - 1;
            let mean_sq: f64 = lists.iter().map(|l| l[rank].1 * l[rank].1).sum::<f64>()
                / n as f64;
            mean_sq
        }
    };
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(
            "auto bandwidth collapsed to zero; the cloud has too many duplicate points".into(),
        ));
    }

    // Symmetric closure with deterministic (i, j) edge order.
    let mut edges: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (i, list) in lists.iter().enumerate() {
        let i = i as u32;
        for &(j, d) in list {
            let key = (i.min(j), i.max(j));
            edges.insert(key, d);
        }
    }

    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(i, j) in edges.keys() {
        adj[i as usize].push(j);
        adj[j as usize].push(i);
    }
    let components = spatial::component_count(&adj);
    if components > 1 {
        return Err(Error::DisconnectedGraph { components });
    }

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    let mut degree = vec![0.0f64; n];
    for (&(i, j), &d) in &edges {
        let w = (-d * d / (4.0 * t)).exp();
        rows[i as usize].push((j, -w));
        rows[j as usize].push((i, -w));
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row.sort_unstable_by_key(|&(c, _)| c);
        let deg: f64 = row.iter().map(|&(_, w)| -w).sum();
        degree[i] = deg;
        let pos = row.partition_point(|&(c, _)| (c as usize) < i);
        row.insert(pos, (i as u32, deg));
    }

    let total_degree: f64 = degree.iter().sum();
    let mass: Vec<f64> = degree
        .iter()
        .map(|&d| d * n as f64 / total_degree)
        .collect();

    LaplacianPair::from_parts(SparseSym::from_rows(rows), mass)
}

/// Ascending eigenvalues and M-orthonormal eigenfunctions of Lφ = λMφ.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    /// n×k, one eigenfunction per column.
    pub eigenfunctions: DMatrix<f64>,
    pub mass: Vec<f64>,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.eigenfunctions.nrows()
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// First eigenvalue above `floor`, with its position.
    pub fn first_positive_eigenvalue(&self, floor: f64) -> Option<(usize, f64)> {
        self.eigenvalues
            .iter()
            .enumerate()
            .find(|&(_, &l)| l > floor)
            .map(|(i, &l)| (i, l))
    }
}

/// Solves for the first k eigenpairs of Lφ = λMφ.
///
/// The pencil is symmetrized to B = M^{−1/2} L M^{−1/2}; small problems go
/// through a dense solve, larger ones through thick-restart Lanczos with
/// full reorthogonalization. Eigenvector signs are fixed by making the
/// largest-magnitude component positive.
pub fn solve_eigens(lap: &LaplacianPair, k: usize) -> Result<SpectralBasis> {
    let n = lap.n();
    if k < 2 || k > n {
        return Err(Error::InvalidParameter(format!(
            "k = {k} out of range 2..={n}"
        )));
    }
    let inv_sqrt_m: Vec<f64> = lap.mass.iter().map(|&m| 1.0 / m.sqrt()).collect();

    let (values, mut vectors) = if n <= 300 || k * 2 >= n {
        if n > 3000 {
            return Err(Error::InvalidParameter(format!(
                "k = {k} too close to n = {n} for the iterative solver"
            )));
        }
        lanczos::dense_standardized(lap.l(), &inv_sqrt_m, k)
    } else {
        match lanczos::thick_restart(lap.l(), &inv_sqrt_m, k, 30 * k) {
            Ok(pair) => pair,
            Err(err) if n <= 3000 => {
                // Desk-scale rescue: the dense path cannot stagnate.
                let _ = err;
                lanczos::dense_standardized(lap.l(), &inv_sqrt_m, k)
            }
            Err(err) => return Err(err),
        }
    };

    // Residual guarantee in the original pencil: ‖Lφ − λMφ‖ / max(λ, 1).
    let mut lx = vec![0.0; n];
    for (j, &lambda) in values.iter().enumerate() {
        let phi = vectors.column(j);
        lap.l().matvec(phi.as_slice(), &mut lx);
        let mut res2 = 0.0;
        for i in 0..n {
            let r = lx[i] - lambda * lap.mass[i] * phi[i];
            res2 += r * r;
        }
        let rel = res2.sqrt() / lambda.max(1.0);
        if rel > 1e-8 {
            return Err(Error::EigenNonConvergence(format!(
                "eigenpair {j}: relative residual {rel:e} exceeds 1e-8"
            )));
        }
    }

    for j in 0..k {
        canonicalize_sign(&mut vectors, j);
    }

    Ok(SpectralBasis {
        eigenvalues: values,
        eigenfunctions: vectors,
        mass: lap.mass.clone(),
    })
}

fn canonicalize_sign(vectors: &mut DMatrix<f64>, j: usize) {
    let col = vectors.column(j);
    let mut best = 0usize;
    let mut best_abs = col[0].abs();
    for i in 1..col.len() {
        if col[i].abs() > best_abs {
            best_abs = col[i].abs();
            best = i;
        }
    }
    if vectors[(best, j)] < 0.0 {
        for i in 0..vectors.nrows() {
            vectors[(i, j)] = -vectors[(i, j)];
        }
    }
}

/// Debug dump of the pencil and basis as CSV blocks.
pub fn dump_csv<W: Write>(
    w: &mut W,
    lap: &LaplacianPair,
    basis: Option<&SpectralBasis>,
) -> std::io::Result<()> {
    writeln!(w, "section,i,j,value")?;
    for i in 0..lap.n() {
        for (j, v) in lap.l().row(i) {
            writeln!(w, "L,{i},{j},{v}")?;
        }
    }
    for (i, m) in lap.mass().iter().enumerate() {
        writeln!(w, "M,{i},{i},{m}")?;
    }
    if let Some(basis) = basis {
        for (j, lambda) in basis.eigenvalues.iter().enumerate() {
            writeln!(w, "lambda,{j},,{lambda}")?;
        }
        for j in 0..basis.k() {
            for i in 0..basis.n() {
                writeln!(w, "phi,{i},{j},{}", basis.eigenfunctions[(i, j)])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DVector, Vector3};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    /// Dense generalized eigensolver oracle: eigenvalues of
    /// M^{−1/2} L M^{−1/2} via nalgebra, sorted ascending.
    fn dense_oracle(lap: &LaplacianPair) -> Vec<f64> {
        let n = lap.n();
        let mut b = lap.l().to_dense();
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] /= (lap.mass()[i] * lap.mass()[j]).sqrt();
            }
        }
        let mut ev: Vec<f64> = b.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_unstable_by(f64::total_cmp);
        ev
    }

    fn path3() -> LaplacianPair {
        // Unit-weight 3-point path; M = I.
        let rows = vec![
            vec![(0u32, 1.0), (1u32, -1.0)],
            vec![(0u32, -1.0), (1u32, 2.0), (2u32, -1.0)],
            vec![(1u32, -1.0), (2u32, 1.0)],
        ];
        LaplacianPair::from_parts(SparseSym::from_rows(rows), vec![1.0; 3]).unwrap()
    }

    #[test]
    fn two_point_laplacian_by_hand() {
        let cloud = PointCloud::new(vec![Vector3::zeros(), Vector3::x()]).unwrap();
        let lap = build_laplacian(&cloud, 1, None).unwrap();
        // Auto bandwidth: t = mean squared distance to the 1st neighbor = 1.
        let w = (-1.0f64 / 4.0).exp();
        assert_relative_eq!(lap.l().get(0, 0), w, epsilon = 1e-15);
        assert_relative_eq!(lap.l().get(0, 1), -w, epsilon = 1e-15);
        assert_relative_eq!(lap.l().get(1, 0), -w, epsilon = 1e-15);
        assert_relative_eq!(lap.l().get(1, 1), w, epsilon = 1e-15);
        assert_relative_eq!(lap.mass()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn laplacian_structure_invariants() {
        let cloud = random_cloud(120, 1);
        let lap = build_laplacian(&cloud, 6, None).unwrap();
        let n = lap.n();
        for i in 0..n {
            let sum: f64 = lap.l().row(i).map(|(_, v)| v).sum();
            assert!(sum.abs() < 1e-10, "row {i} sums to {sum}");
            for (j, v) in lap.l().row(i) {
                assert_relative_eq!(lap.l().get(j as usize, i), v, epsilon = 1e-12);
                if j as usize != i {
                    assert!(v <= 0.0);
                }
            }
        }
        let trace: f64 = lap.mass().iter().sum();
        assert_relative_eq!(trace, n as f64, epsilon = 1e-9);
        // PSD: smallest dense eigenvalue of the standardized pencil.
        let ev = dense_oracle(&lap);
        assert!(ev[0] > -1e-10);
    }

    #[test]
    fn disconnected_graph_reports_components() {
        let mut pts = random_cloud(30, 2).into_points();
        for p in random_cloud(30, 3).into_points() {
            pts.push(p + Vector3::new(50.0, 0.0, 0.0));
        }
        let cloud = PointCloud::new(pts).unwrap();
        match build_laplacian(&cloud, 4, None) {
            Err(Error::DisconnectedGraph { components }) => assert_eq!(components, 2),
            other => panic!("expected disconnection, got {other:?}"),
        }
    }

    #[test]
    fn path_eigenvalues_zero_one_three() {
        let lap = path3();
        let basis = solve_eigens(&lap, 3).unwrap();
        let want = [0.0, 1.0, 3.0];
        for (got, want) in basis.eigenvalues.iter().zip(want) {
            assert_relative_eq!(*got, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn first_eigenfunction_constant() {
        let cloud = random_cloud(150, 4);
        let lap = build_laplacian(&cloud, 7, None).unwrap();
        let basis = solve_eigens(&lap, 4).unwrap();
        assert!(basis.eigenvalues[0].abs() < 1e-8);
        let phi0 = basis.eigenfunctions.column(0);
        let mean = phi0.iter().sum::<f64>() / phi0.len() as f64;
        for v in phi0.iter() {
            assert_relative_eq!(*v, mean, epsilon = 1e-7);
        }
    }

    #[test]
    fn lanczos_matches_dense_oracle() {
        // Large enough to route through the iterative path.
        let cloud = random_cloud(450, 5);
        let lap = build_laplacian(&cloud, 8, None).unwrap();
        let k = 10;
        let basis = solve_eigens(&lap, k).unwrap();
        let oracle = dense_oracle(&lap);
        for j in 0..k {
            assert_relative_eq!(
                basis.eigenvalues[j],
                oracle[j],
                epsilon = 1e-6,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn small_cloud_matches_dense_oracle() {
        let cloud = random_cloud(50, 6);
        let lap = build_laplacian(&cloud, 5, None).unwrap();
        let basis = solve_eigens(&lap, 10).unwrap();
        let oracle = dense_oracle(&lap);
        for j in 0..10 {
            assert_relative_eq!(
                basis.eigenvalues[j],
                oracle[j],
                epsilon = 1e-6,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn basis_is_mass_orthonormal_with_small_residuals() {
        let cloud = random_cloud(400, 7);
        let lap = build_laplacian(&cloud, 8, None).unwrap();
        let k = 12;
        let basis = solve_eigens(&lap, k).unwrap();
        for a in 0..k {
            for b in 0..k {
                let mut dot = 0.0;
                for i in 0..lap.n() {
                    dot += basis.eigenfunctions[(i, a)]
                        * lap.mass()[i]
                        * basis.eigenfunctions[(i, b)];
                }
                let want = if a == b { 1.0 } else { 0.0 };
                assert_relative_eq!(dot, want, epsilon = 1e-8);
            }
        }
        let mut lx = vec![0.0; lap.n()];
        for j in 0..k {
            let phi: DVector<f64> = basis.eigenfunctions.column(j).into();
            lap.l().matvec(phi.as_slice(), &mut lx);
            let mut res2 = 0.0;
            for i in 0..lap.n() {
                let r = lx[i] - basis.eigenvalues[j] * lap.mass()[i] * phi[i];
                res2 += r * r;
            }
            assert!(res2.sqrt() / basis.eigenvalues[j].max(1.0) <= 1e-8);
        }
    }

    #[test]
    fn spectrum_invariant_under_rigid_motion() {
        let cloud = random_cloud(200, 8);
        let lap = build_laplacian(&cloud, 6, None).unwrap();
        let ev = solve_eigens(&lap, 8).unwrap().eigenvalues;

        let axis = nalgebra::Unit::new_normalize(Vector3::new(0.3, 1.0, -0.5));
        let rot = nalgebra::Rotation3::from_axis_angle(&axis, 1.1);
        let moved: Vec<Vector3<f64>> = cloud
            .points()
            .iter()
            .map(|p| rot * p + Vector3::new(4.0, -2.0, 7.0))
            .collect();
        let moved = PointCloud::new(moved).unwrap();
        let lap2 = build_laplacian(&moved, 6, None).unwrap();
        let ev2 = solve_eigens(&lap2, 8).unwrap().eigenvalues;
        for (a, b) in ev.iter().zip(&ev2) {
            assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-8);
        }

        // Mirror reflection leaves the spectrum unchanged too.
        let mirrored: Vec<Vector3<f64>> = cloud
            .points()
            .iter()
            .map(|p| Vector3::new(-p.x, p.y, p.z))
            .collect();
        let mirrored = PointCloud::new(mirrored).unwrap();
        let lap3 = build_laplacian(&mirrored, 6, None).unwrap();
        let ev3 = solve_eigens(&lap3, 8).unwrap().eigenvalues;
        for (a, b) in ev.iter().zip(&ev3) {
            assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn auto_bandwidth_keeps_eigenvalue_ratios_under_scaling() {
        let cloud = random_cloud(200, 9);
        let lap = build_laplacian(&cloud, 6, None).unwrap();
        let ev = solve_eigens(&lap, 8).unwrap().eigenvalues;
        let doubled: Vec<Vector3<f64>> =
            cloud.points().iter().map(|p| p * 2.0).collect();
        let doubled = PointCloud::new(doubled).unwrap();
        let lap2 = build_laplacian(&doubled, 6, None).unwrap();
        let ev2 = solve_eigens(&lap2, 8).unwrap().eigenvalues;
        for j in 1..8 {
            let r1 = ev[j] / ev[1];
            let r2 = ev2[j] / ev2[1];
            assert_relative_eq!(r1, r2, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn sign_canonicalization_deterministic_and_idempotent() {
        let lap = path3();
        let a = solve_eigens(&lap, 3).unwrap();
        let b = solve_eigens(&lap, 3).unwrap();
        assert_eq!(a.eigenfunctions, b.eigenfunctions);
        for j in 0..3 {
            let col = a.eigenfunctions.column(j);
            let mut best = 0;
            for i in 1..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            assert!(col[best] > 0.0);
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        let lap = path3();
        assert!(solve_eigens(&lap, 1).is_err());
        assert!(solve_eigens(&lap, 4).is_err());
    }

    #[test]
    fn from_parts_rejects_bad_input() {
        let rows = vec![vec![(0u32, 1.0), (1u32, -0.5)], vec![(0u32, -1.0), (1u32, 1.0)]];
        let asym = SparseSym::from_rows(rows);
        assert!(LaplacianPair::from_parts(asym, vec![1.0, 1.0]).is_err());

        let rows = vec![vec![(0u32, 1.0), (1u32, -1.0)], vec![(0u32, -1.0), (1u32, 1.0)]];
        let ok = SparseSym::from_rows(rows);
        assert!(LaplacianPair::from_parts(ok.clone(), vec![1.0, 0.0]).is_err());
        assert!(LaplacianPair::from_parts(ok, vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn dump_csv_emits_sections() {
        let lap = path3();
        let basis = solve_eigens(&lap, 2).unwrap();
        let mut buf = Vec::new();
        dump_csv(&mut buf, &lap, Some(&basis)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("L,0,0,"));
        assert!(text.contains("lambda,0,,"));
        assert!(text.contains("phi,2,1,"));
    }
}
