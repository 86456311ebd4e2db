//! Symmetry-aware keypoint matching: a cost matrix over descriptor
//! distances with a sign-vector penalty, and an exact minimum-cost
//! selection of q disjoint pairs.

mod blossom;

use std::io::Write;

use nalgebra::{DMatrix, Vector3};

use crate::descriptors::{HksDescriptor, SignVector};
use crate::error::{Error, Result};
use crate::plane::CorrespondenceSet;

pub use blossom::max_weight_matching;

/// Pairwise matching costs between keypoints. The diagonal is `+∞`:
/// a keypoint never matches itself.
#[derive(Debug, Clone)]
pub struct MatchCost {
    pub matrix: DMatrix<f64>,
    pub penalty_b: f64,
}

/// Parameters for pair selection.
#[derive(Debug, Clone)]
pub struct MatchParams {
    /// Number of pairs to select.
    pub q: usize,
    /// Cost added when two keypoints share an identical sign vector; pairs
    /// at or above this cost are excluded outright.
    pub penalty_b: f64,
    /// Minimum Euclidean separation between matched keypoints, if set.
    pub spatial_guard: Option<f64>,
}

pub const DEFAULT_PENALTY_B: f64 = 1000.0;
pub const DEFAULT_SPATIAL_GUARD: f64 = 0.05;

/// Default pair count for `a` keypoints.
pub fn default_q(a: usize) -> usize {
    (a / 2).min(50)
}

impl MatchParams {
    pub fn for_count(a: usize) -> Self {
        MatchParams {
            q: default_q(a),
            penalty_b: DEFAULT_PENALTY_B,
            spatial_guard: None,
        }
    }
}

/// Builds the a×a cost matrix a_ij = ‖h_i − h_j‖₂ + ψ_ij, where ψ_ij is
/// `penalty_b` when the sign vectors of i and j are identical and 0
/// otherwise.
pub fn build_cost_matrix(
    hks: &[HksDescriptor],
    signs: &[SignVector],
    penalty_b: f64,
) -> Result<MatchCost> {
    let a = hks.len();
    if a != signs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} descriptors vs {} sign vectors",
            a,
            signs.len()
        )));
    }
    if a < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 keypoints, got {a}"
        )));
    }
    if !(penalty_b > 0.0) {
        return Err(Error::InvalidParameter(format!("penalty_b = {penalty_b}")));
    }
    let p = hks[0].values.len();
    if hks.iter().any(|h| h.values.len() != p) {
        return Err(Error::InvalidParameter(
            "descriptors have mixed lengths".into(),
        ));
    }
    let mut matrix = DMatrix::zeros(a, a);
    for i in 0..a {
        matrix[(i, i)] = f64::INFINITY;
        for j in i + 1..a {
            let mut d2 = 0.0;
            for (x, y) in hks[i].values.iter().zip(&hks[j].values) {
                d2 += (x - y) * (x - y);
            }
            let mut c = d2.sqrt();
            if signs[i] == signs[j] {
                c += penalty_b;
            }
            matrix[(i, j)] = c;
            matrix[(j, i)] = c;
        }
    }
    Ok(MatchCost { matrix, penalty_b })
}

/// Quantization grid for reducing f64 costs to the even integer weights the
/// matching solver works on. 2^40 steps keep the rounding error far below
/// any realistic cost gap.
const WEIGHT_STEPS: f64 = (1u64 << 40) as f64;

/// Selects the q disjoint keypoint pairs of minimum total cost.
///
/// Pairs with cost ≥ `penalty_b` are infeasible (this excludes every
/// identical-sign pair), as are pairs closer than `spatial_guard` when it is
/// set — `positions` must then be supplied. Fewer than q feasible disjoint
/// pairs is an error reporting the feasible maximum.
pub fn solve_matching(
    cost: &MatchCost,
    params: &MatchParams,
    positions: Option<&[Vector3<f64>]>,
) -> Result<CorrespondenceSet> {
    let a = cost.matrix.nrows();
    if cost.matrix.ncols() != a || a < 2 {
        return Err(Error::InvalidParameter(format!(
            "cost matrix is {}×{}",
            a,
            cost.matrix.ncols()
        )));
    }
    if params.q < 1 || params.q > a / 2 {
        return Err(Error::InvalidParameter(format!(
            "q = {} out of range for {a} keypoints",
            params.q
        )));
    }
    if let Some(guard) = params.spatial_guard {
        match positions {
            Some(pos) if pos.len() == a => {}
            Some(pos) => {
                return Err(Error::InvalidParameter(format!(
                    "{} positions for {a} keypoints",
                    pos.len()
                )))
            }
            None => {
                return Err(Error::InvalidParameter(format!(
                    "spatial_guard = {guard} requires keypoint positions"
                )))
            }
        }
    }

    let mut feasible: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..a {
        for j in i + 1..a {
            let c = cost.matrix[(i, j)];
            if !c.is_finite() || c >= cost.penalty_b {
                continue;
            }
            if let (Some(guard), Some(pos)) = (params.spatial_guard, positions) {
                if (pos[i] - pos[j]).norm() < guard {
                    continue;
                }
            }
            feasible.push((i, j, c));
        }
    }

    let cardinality_edges: Vec<(usize, usize, i64)> =
        feasible.iter().map(|&(i, j, _)| (i, j, 2)).collect();
    let mate = max_weight_matching(a, &cardinality_edges, true);
    let max_pairs = mate.iter().flatten().count() / 2;
    if max_pairs < params.q {
        return Err(Error::MatchingInfeasible {
            feasible: max_pairs,
            requested: params.q,
        });
    }

    // Exactly-q reduction: a − 2q dummy vertices absorb the unmatched
    // keypoints. Every perfect matching of the extended graph contains
    // exactly q real pairs, and maximizing Σ(ceiling − cost) over them
    // minimizes the selected cost.
    let dummies = a - 2 * params.q;
    let ceiling = feasible
        .iter()
        .map(|&(_, _, c)| c)
        .fold(0.0f64, f64::max)
        + 1.0;
    let scale = WEIGHT_STEPS / ceiling;
    let quantize = |w: f64| 2 * (w * scale).round() as i64;
    let mut edges: Vec<(usize, usize, i64)> = feasible
        .iter()
        .map(|&(i, j, c)| (i, j, quantize(ceiling - c)))
        .collect();
    for d in 0..dummies {
        for i in 0..a {
            edges.push((i, a + d, quantize(ceiling)));
        }
    }
    let mate = max_weight_matching(a + dummies, &edges, true);
    debug_assert!(mate.iter().all(|m| m.is_some()), "matching not perfect");
    let mut pairs = Vec::with_capacity(params.q);
    for i in 0..a {
        if let Some(j) = mate[i] {
            if j < a && i < j {
                pairs.push((i, j));
            }
        }
    }
    debug_assert_eq!(pairs.len(), params.q);
    CorrespondenceSet::new(pairs)
}

/// CSV rows (i, j, cost) for the selected pairs.
pub fn export_correspondences_csv<W: Write>(
    w: &mut W,
    set: &CorrespondenceSet,
    cost: &MatchCost,
) -> std::io::Result<()> {
    writeln!(w, "i,j,cost")?;
    for &(i, j) in set.pairs() {
        writeln!(w, "{i},{j},{}", cost.matrix[(i, j)])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn hks(values: &[f64]) -> HksDescriptor {
        HksDescriptor {
            values: values.to_vec(),
            times: vec![0.0; values.len()],
        }
    }

    fn sv(signs: &[i8]) -> SignVector {
        SignVector {
            signs: signs.to_vec(),
        }
    }

    #[test]
    fn cost_matrix_penalty_rules() {
        let h = vec![hks(&[1.0, 2.0]), hks(&[1.0, 2.0])];
        // Identical descriptors, identical signs: the full penalty.
        let c = build_cost_matrix(&h, &[sv(&[1, -1]), sv(&[1, -1])], 1000.0).unwrap();
        assert_relative_eq!(c.matrix[(0, 1)], 1000.0);
        // Identical descriptors, differing signs: free.
        let c = build_cost_matrix(&h, &[sv(&[1, -1]), sv(&[1, 1])], 1000.0).unwrap();
        assert_relative_eq!(c.matrix[(0, 1)], 0.0);
        // Descriptor distance 0.5, differing signs.
        let h = vec![hks(&[0.3, 0.4]), hks(&[0.0, 0.0])];
        let c = build_cost_matrix(&h, &[sv(&[1]), sv(&[-1])], 1000.0).unwrap();
        assert_relative_eq!(c.matrix[(0, 1)], 0.5);
        assert_relative_eq!(c.matrix[(1, 0)], 0.5);
        assert!(c.matrix[(0, 0)].is_infinite());
        assert!(c.matrix[(1, 1)].is_infinite());
    }

    #[test]
    fn two_keypoints_single_pair() {
        let h = vec![hks(&[1.0]), hks(&[1.2])];
        let s = vec![sv(&[1, 1]), sv(&[1, -1])];
        let cost = build_cost_matrix(&h, &s, 1000.0).unwrap();
        let set = solve_matching(&cost, &MatchParams { q: 1, penalty_b: 1000.0, spatial_guard: None }, None)
            .unwrap();
        assert_eq!(set.pairs(), &[(0, 1)]);
    }

    #[test]
    fn infeasible_q_reports_maximum() {
        // Sign classes {0..4} vs {5, 6}: only cross-class pairs are
        // feasible, so at most 2 disjoint pairs exist.
        let h: Vec<_> = (0..7).map(|_| hks(&[0.0])).collect();
        let s: Vec<_> = (0..7)
            .map(|i| if i < 5 { sv(&[1]) } else { sv(&[-1]) })
            .collect();
        let cost = build_cost_matrix(&h, &s, 1000.0).unwrap();
        let err = solve_matching(&cost, &MatchParams { q: 3, penalty_b: 1000.0, spatial_guard: None }, None)
            .unwrap_err();
        match err {
            Error::MatchingInfeasible { feasible, requested } => {
                assert_eq!(feasible, 2);
                assert_eq!(requested, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    /// Minimum total cost over every way of choosing `q` disjoint feasible
    /// pairs, by exhaustive recursion.
    fn brute_min(cost: &MatchCost, q: usize) -> Option<(f64, Vec<(usize, usize)>)> {
        let a = cost.matrix.nrows();
        fn rec(
            v: usize,
            a: usize,
            q: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            acc: f64,
            cost: &MatchCost,
            best: &mut Option<(f64, Vec<(usize, usize)>)>,
        ) {
            if cur.len() == q {
                if best.as_ref().is_none_or(|(b, _)| acc < *b) {
                    *best = Some((acc, cur.clone()));
                }
                return;
            }
            if v == a {
                return;
            }
            if used[v] {
                rec(v + 1, a, q, used, cur, acc, cost, best);
                return;
            }
            rec(v + 1, a, q, used, cur, acc, cost, best);
            for j in v + 1..a {
                let c = cost.matrix[(v, j)];
                if !used[j] && c.is_finite() && c < cost.penalty_b {
                    used[v] = true;
                    used[j] = true;
                    cur.push((v, j));
                    rec(v + 1, a, q, used, cur, acc + c, cost, best);
                    cur.pop();
                    used[v] = false;
                    used[j] = false;
                }
            }
        }
        let mut best = None;
        rec(0, a, q, &mut vec![false; a], &mut Vec::new(), 0.0, cost, &mut best);
        best
    }

    #[test]
    fn exact_q_selection_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let a = rng.random_range(4..=8);
            let h: Vec<_> = (0..a)
                .map(|_| hks(&[rng.random::<f64>(), rng.random::<f64>()]))
                .collect();
            // Two sign classes at random; some in-class pairs become
            // infeasible via the penalty.
            let s: Vec<_> = (0..a)
                .map(|_| sv(&[if rng.random_bool(0.5) { 1 } else { -1 }]))
                .collect();
            let cost = build_cost_matrix(&h, &s, 1000.0).unwrap();
            for q in 1..=a / 2 {
                let params = MatchParams { q, penalty_b: 1000.0, spatial_guard: None };
                let got = solve_matching(&cost, &params, None);
                let want = brute_min(&cost, q);
                match (got, want) {
                    (Ok(set), Some((best, _))) => {
                        let total: f64 = set
                            .pairs()
                            .iter()
                            .map(|&(i, j)| cost.matrix[(i, j)])
                            .sum();
                        assert_relative_eq!(total, best, epsilon = 1e-6);
                        assert_eq!(set.len(), q);
                        for &(i, j) in set.pairs() {
                            assert_ne!(s[i], s[j], "identical-sign pair selected");
                        }
                    }
                    (Err(Error::MatchingInfeasible { feasible, .. }), None) => {
                        assert!(feasible < q, "trial {trial}");
                    }
                    (g, w) => panic!("trial {trial} q={q}: solver {g:?} vs oracle {w:?}"),
                }
            }
        }
    }

    #[test]
    fn permutation_changes_labels_not_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = 8;
        let h: Vec<_> = (0..a)
            .map(|_| hks(&[rng.random::<f64>(), rng.random::<f64>()]))
            .collect();
        let s: Vec<_> = (0..a)
            .map(|i| sv(&[if i % 2 == 0 { 1 } else { -1 }]))
            .collect();
        let cost = build_cost_matrix(&h, &s, 1000.0).unwrap();
        let params = MatchParams { q: 3, penalty_b: 1000.0, spatial_guard: None };
        let base = solve_matching(&cost, &params, None).unwrap();

        let mut perm: Vec<usize> = (0..a).collect();
        perm.shuffle(&mut rng);
        let hp: Vec<_> = perm.iter().map(|&i| h[i].clone()).collect();
        let sp: Vec<_> = perm.iter().map(|&i| s[i].clone()).collect();
        let costp = build_cost_matrix(&hp, &sp, 1000.0).unwrap();
        let setp = solve_matching(&costp, &params, None).unwrap();
        let mut mapped: Vec<(usize, usize)> = setp
            .pairs()
            .iter()
            .map(|&(i, j)| {
                let (oi, oj) = (perm[i], perm[j]);
                (oi.min(oj), oi.max(oj))
            })
            .collect();
        mapped.sort_unstable();
        assert_eq!(base.pairs(), &mapped[..]);
    }

    #[test]
    fn spatial_guard_excludes_close_pairs() {
        let h = vec![hks(&[0.0]), hks(&[0.0]), hks(&[0.0]), hks(&[0.0])];
        let s = vec![sv(&[1]), sv(&[-1]), sv(&[1]), sv(&[-1])];
        let cost = build_cost_matrix(&h, &s, 1000.0).unwrap();
        let pos = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.01, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.01, 0.0, 0.0),
        ];
        // Without the guard, two zero-cost pairs exist.
        let params = MatchParams { q: 2, penalty_b: 1000.0, spatial_guard: None };
        assert!(solve_matching(&cost, &params, Some(&pos)).is_ok());
        // The guard removes the two short pairs; only cross pairs remain.
        let params = MatchParams { q: 2, penalty_b: 1000.0, spatial_guard: Some(0.05) };
        let set = solve_matching(&cost, &params, Some(&pos)).unwrap();
        for &(i, j) in set.pairs() {
            assert!((pos[i] - pos[j]).norm() >= 0.05);
        }
        // Guard without positions is rejected.
        assert!(solve_matching(&cost, &params, None).is_err());
    }

    #[test]
    fn csv_export_lists_selected_pairs() {
        let h = vec![hks(&[0.0]), hks(&[0.25])];
        let s = vec![sv(&[1]), sv(&[-1])];
        let cost = build_cost_matrix(&h, &s, 1000.0).unwrap();
        let set = solve_matching(&cost, &MatchParams { q: 1, penalty_b: 1000.0, spatial_guard: None }, None)
            .unwrap();
        let mut buf = Vec::new();
        export_correspondences_csv(&mut buf, &set, &cost).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,cost\n0,1,0.25\n");
    }
}
