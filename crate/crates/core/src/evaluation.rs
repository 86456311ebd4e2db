//! Metrics for scoring detected symmetry planes against ground truth:
//! deviation angle, the matching criterion behind precision/recall/F-score
//! curves, the plane-parameter ground-truth error (GTE), and the symmetry
//! distance error (SDE).

use std::io::Write;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::plane::SymmetryPlane;
use crate::spatial::SpatialIndex;

/// Spacing of the synthesized on-plane points: half the unit bounding-box
/// diagonal of a normalized cloud.
pub const PLANE_POINT_SCALE: f64 = 0.5;

/// Default distance threshold 2s for normalized clouds.
pub const DEFAULT_T_D: f64 = 2.0 * PLANE_POINT_SCALE;

/// Number of angle thresholds in a precision/recall sweep.
pub const SWEEP_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalThresholds {
    /// Angle threshold in radians, within [0, π/4].
    pub t_a: f64,
    /// Center-distance threshold, nonnegative.
    pub t_d: f64,
}

impl EvalThresholds {
    pub fn new(t_a: f64, t_d: f64) -> Result<Self> {
        if !(0.0..=std::f64::consts::FRAC_PI_4).contains(&t_a) {
            return Err(Error::InvalidParameter(format!("t_a = {t_a} rad")));
        }
        if !(t_d >= 0.0) {
            return Err(Error::InvalidParameter(format!("t_d = {t_d}")));
        }
        Ok(EvalThresholds { t_a, t_d })
    }
}

impl Default for EvalThresholds {
    fn default() -> Self {
        EvalThresholds {
            t_a: std::f64::consts::FRAC_PI_4,
            t_d: DEFAULT_T_D,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub angle_deg: f64,
    pub gte: f64,
    pub sde: f64,
}

/// cos⁻¹(|v_estᵀ v_gt|) in degrees; sign-insensitive, in [0°, 90°].
pub fn deviation_angle(v_est: &Vector3<f64>, v_gt: &Vector3<f64>) -> f64 {
    v_est.dot(v_gt).abs().min(1.0).acos().to_degrees()
}

/// Projection of the cloud centroid onto the plane: the plane "center" the
/// distance criterion compares against.
pub fn plane_center(plane: &SymmetryPlane, cloud: &PointCloud) -> Vector3<f64> {
    plane.project_point(&cloud.centroid())
}

/// Three non-collinear points on the plane in the dataset convention,
/// spaced at half-diagonal scale around the projected centroid.
pub fn plane_points(plane: &SymmetryPlane, cloud: &PointCloud) -> [Vector3<f64>; 3] {
    plane.three_points(&cloud.centroid(), PLANE_POINT_SCALE)
}

/// Match criterion: deviation angle ≤ t_a and the estimated plane center
/// within t_d of the ground-truth center.
pub fn plane_match(
    est: &SymmetryPlane,
    gt: &SymmetryPlane,
    gt_center: &Vector3<f64>,
    cloud: &PointCloud,
    thresholds: &EvalThresholds,
) -> bool {
    let angle = est.normal().dot(&gt.normal()).abs().min(1.0).acos();
    if angle > thresholds.t_a {
        return false;
    }
    (plane_center(est, cloud) - gt_center).norm() <= thresholds.t_d
}

/// Precision, recall, and F-score with the zero-denominator → 0 convention.
pub fn precision_recall_fscore(tp: usize, fp: usize, fneg: usize) -> EvalReport {
    let ratio = |num: usize, den: usize| if den > 0 { num as f64 / den as f64 } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    EvalReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        precision,
        recall,
        fscore,
    }
}

/// Ground-truth error: squared distance between the 4-parameter plane
/// vectors (v, ω), minimized over the joint sign flip.
pub fn gte(est: &SymmetryPlane, gt: &SymmetryPlane) -> f64 {
    let a = (est.normal(), est.offset());
    let b = (gt.normal(), gt.offset());
    let direct = (a.0 - b.0).norm_squared() + (a.1 - b.1).powi(2);
    let flipped = (a.0 + b.0).norm_squared() + (a.1 + b.1).powi(2);
    direct.min(flipped)
}

/// Symmetry distance error: mean squared distance from each reflected point
/// to its nearest original point.
pub fn sde(p: &PointCloud, est: &SymmetryPlane) -> f64 {
    let index = SpatialIndex::build(p.points());
    let mut acc = 0.0;
    for x in p.points() {
        let r = est.reflect_point(x);
        let (j, _) = index.nearest(&r);
        acc += (p.points()[j] - r).norm_squared();
    }
    acc / p.len() as f64
}

/// One model's inputs to the evaluation protocol.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub id: String,
    pub est: SymmetryPlane,
    pub gt: SymmetryPlane,
    pub gt_center: Vector3<f64>,
    pub cloud: PointCloud,
}

/// Per-case error metrics.
pub fn evaluate_case(case: &EvalCase) -> ErrorMetrics {
    ErrorMetrics {
        angle_deg: deviation_angle(&case.est.normal(), &case.gt.normal()),
        gte: gte(&case.est, &case.gt),
        sde: sde(&case.cloud, &case.est),
    }
}

/// Scores every case at fixed thresholds. Returns per-case metrics with the
/// match flag, plus the aggregate report (one prediction per model: a miss
/// counts as one false positive and one false negative).
pub fn evaluate_batch(
    cases: &[EvalCase],
    thresholds: &EvalThresholds,
) -> (Vec<(ErrorMetrics, bool)>, EvalReport) {
    let mut rows = Vec::with_capacity(cases.len());
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for case in cases {
        let matched = plane_match(&case.est, &case.gt, &case.gt_center, &case.cloud, thresholds);
        if matched {
            tp += 1;
        } else {
            fp += 1;
            fneg += 1;
        }
        rows.push((evaluate_case(case), matched));
    }
    (rows, precision_recall_fscore(tp, fp, fneg))
}

/// Precision/recall curve over uniformly spaced angle thresholds in
/// [0, π/4] at a fixed distance threshold.
pub fn pr_sweep(cases: &[EvalCase], t_d: f64, steps: usize) -> Result<Vec<(f64, EvalReport)>> {
    if steps < 2 {
        return Err(Error::InvalidParameter(format!("sweep steps = {steps}")));
    }
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let t_a = std::f64::consts::FRAC_PI_4 * i as f64 / (steps - 1) as f64;
        let thresholds = EvalThresholds { t_a, t_d };
        let (_, report) = evaluate_batch(cases, &thresholds);
        out.push((t_a, report));
    }
    Ok(out)
}

/// Per-model metrics CSV: `id,angle_deg,gte,sde,matched`.
pub fn write_metrics_csv<W: Write>(
    w: &mut W,
    cases: &[EvalCase],
    rows: &[(ErrorMetrics, bool)],
) -> Result<()> {
    writeln!(w, "id,angle_deg,gte,sde,matched")?;
    for (case, (m, matched)) in cases.iter().zip(rows) {
        writeln!(w, "{},{},{},{},{}", case.id, m.angle_deg, m.gte, m.sde, matched)?;
    }
    Ok(())
}

/// Sweep CSV: `t_a_rad,precision,recall,fscore`.
pub fn write_sweep_csv<W: Write>(w: &mut W, sweep: &[(f64, EvalReport)]) -> Result<()> {
    writeln!(w, "t_a_rad,precision,recall,fscore")?;
    for (t_a, r) in sweep {
        writeln!(w, "{},{},{},{}", t_a, r.precision, r.recall, r.fscore)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn deviation_angle_basics() {
        let v = Vector3::new(1.0, 2.0, 3.0).normalize();
        assert_relative_eq!(deviation_angle(&v, &v), 0.0);
        assert_relative_eq!(deviation_angle(&v, &-v), 0.0);
        assert_relative_eq!(deviation_angle(&Vector3::x(), &Vector3::y()), 90.0);
        let diag = Vector3::new(1.0, 1.0, 0.0).normalize();
        assert_relative_eq!(deviation_angle(&Vector3::x(), &diag), 45.0, epsilon = 1e-12);
    }

    #[test]
    fn plane_match_criteria() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.3, 0.1, -0.2),
            Vector3::new(-0.4, 0.2, 0.3),
            Vector3::new(0.1, -0.3, 0.1),
        ])
        .unwrap();
        let gt = SymmetryPlane::from_unit(Vector3::z(), 0.0);
        let gt_center = plane_center(&gt, &cloud);

        // Identical planes match at any thresholds.
        let tight = EvalThresholds::new(0.0, 0.0).unwrap();
        assert!(plane_match(&gt, &gt, &gt_center, &cloud, &tight));

        // 30° apart with t_a = 15° fails no matter the distance threshold.
        let tilted = SymmetryPlane::from_unit(
            Vector3::new(30f64.to_radians().sin(), 0.0, 30f64.to_radians().cos()),
            0.0,
        );
        let thr = EvalThresholds::new(15f64.to_radians(), f64::MAX).unwrap();
        assert!(!plane_match(&tilted, &gt, &gt_center, &cloud, &thr));

        // Same normal, centers 0.3 apart, t_d = 0.1 fails.
        let shifted = SymmetryPlane::from_unit(Vector3::z(), 0.3);
        let thr = EvalThresholds::new(std::f64::consts::FRAC_PI_4, 0.1).unwrap();
        assert!(!plane_match(&shifted, &gt, &gt_center, &cloud, &thr));

        // Sign conventions cannot change the verdict: a flipped ground
        // truth canonicalizes to the same plane.
        let flipped = SymmetryPlane::new(-gt.normal(), -gt.offset()).unwrap();
        let thr = EvalThresholds::default();
        assert_eq!(
            plane_match(&gt, &flipped, &gt_center, &cloud, &thr),
            plane_match(&gt, &gt, &gt_center, &cloud, &thr)
        );
    }

    #[test]
    fn precision_recall_fscore_examples() {
        let r = precision_recall_fscore(1, 0, 0);
        assert_eq!((r.precision, r.recall, r.fscore), (1.0, 1.0, 1.0));
        let r = precision_recall_fscore(1, 1, 1);
        assert_eq!((r.precision, r.recall, r.fscore), (0.5, 0.5, 0.5));
        let r = precision_recall_fscore(0, 0, 0);
        assert_eq!((r.precision, r.recall, r.fscore), (0.0, 0.0, 0.0));
        assert_eq!(precision_recall_fscore(0, 3, 0).precision, 0.0);
    }

    #[test]
    fn fscore_is_bounded_by_twice_each_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let tp = rng.random_range(0..20);
            let fp = rng.random_range(0..20);
            let fneg = rng.random_range(0..20);
            let r = precision_recall_fscore(tp, fp, fneg);
            assert!(r.fscore <= 2.0 * r.precision + 1e-12);
            assert!(r.fscore <= 2.0 * r.recall + 1e-12);
            let swapped = precision_recall_fscore(tp, fneg, fp);
            assert_relative_eq!(swapped.fscore, r.fscore, epsilon = 1e-12);
        }
    }

    #[test]
    fn gte_examples_and_symmetry() {
        let a = SymmetryPlane::new(Vector3::new(1.0, 2.0, -0.5), 0.3).unwrap();
        assert_eq!(gte(&a, &a), 0.0);

        let flipped = SymmetryPlane::new(-a.normal(), -a.offset()).unwrap();
        assert!(gte(&a, &flipped) < 1e-15);

        let shifted = SymmetryPlane::from_unit(a.normal(), a.offset() + 0.1);
        assert_relative_eq!(gte(&a, &shifted), 0.01, epsilon = 1e-12);

        // Canonicalization can leave near-identical planes with nearly
        // opposite parameter vectors; the sign-flip minimum repairs that.
        let p1 = SymmetryPlane::new(Vector3::new(1e-3, 1.0, 0.0), 0.2).unwrap();
        let p2 = SymmetryPlane::new(Vector3::new(-1e-3, 1.0, 0.0), 0.2).unwrap();
        assert!(gte(&p1, &p2) < 1e-4, "gte = {}", gte(&p1, &p2));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let pa = SymmetryPlane::new(rand_vec(&mut rng, 1.0), rng.random_range(-0.5..0.5));
            let pb = SymmetryPlane::new(rand_vec(&mut rng, 1.0), rng.random_range(-0.5..0.5));
            let (Ok(pa), Ok(pb)) = (pa, pb) else { continue };
            assert_relative_eq!(gte(&pa, &pb), gte(&pb, &pa), epsilon = 1e-14);
        }
    }

    #[test]
    fn sde_closure_and_single_point() {
        // A perfectly mirrored cloud scores zero against its own plane.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plane = SymmetryPlane::from_unit(Vector3::new(0.6, 0.0, 0.8), 0.1);
        let mut pts = Vec::new();
        for _ in 0..60 {
            let x = rand_vec(&mut rng, 1.0);
            pts.push(x);
            pts.push(plane.reflect_point(&x));
        }
        let cloud = PointCloud::new(pts).unwrap();
        assert!(sde(&cloud, &plane) < 1e-12);

        // One point at distance d: its reflection is 2d from the original.
        let single = PointCloud::new(vec![Vector3::new(0.0, 0.0, 0.7)]).unwrap();
        let z0 = SymmetryPlane::from_unit(Vector3::z(), 0.0);
        assert_relative_eq!(sde(&single, &z0), (2.0 * 0.7f64).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn sde_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let pts: Vec<_> = (0..80).map(|_| rand_vec(&mut rng, 1.0)).collect();
            let cloud = PointCloud::new(pts.clone()).unwrap();
            let plane =
                SymmetryPlane::new(rand_vec(&mut rng, 1.0), rng.random_range(-0.3..0.3));
            let Ok(plane) = plane else { continue };
            let brute: f64 = pts
                .iter()
                .map(|x| {
                    let r = plane.reflect_point(x);
                    pts.iter()
                        .map(|y| (y - r).norm_squared())
                        .min_by(f64::total_cmp)
                        .unwrap()
                })
                .sum::<f64>()
                / pts.len() as f64;
            assert_relative_eq!(sde(&cloud, &plane), brute, epsilon = 1e-12);
        }
    }

    #[test]
    fn sde_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (0..50).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let plane = SymmetryPlane::new(Vector3::new(0.2, 1.0, -0.4), 0.15).unwrap();
        let base = sde(&PointCloud::new(pts.clone()).unwrap(), &plane);

        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(Vector3::new(0.3, -1.0, 0.7)),
            1.1,
        );
        let t = Vector3::new(0.4, 0.8, -0.3);
        let moved: Vec<_> = pts.iter().map(|x| rot * x + t).collect();
        let n2 = rot * plane.normal();
        let moved_plane = SymmetryPlane::new(n2, plane.offset() + n2.dot(&t)).unwrap();
        let moved_sde = sde(&PointCloud::new(moved).unwrap(), &moved_plane);
        assert_relative_eq!(base, moved_sde, epsilon = 1e-10);
    }

    fn toy_cases() -> Vec<EvalCase> {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cases = Vec::new();
        for i in 0..6 {
            let gt = SymmetryPlane::from_unit(Vector3::z(), 0.0);
            // Half the estimates are tilted progressively off the truth.
            let tilt = (i as f64) * 8f64.to_radians();
            let est =
                SymmetryPlane::from_unit(Vector3::new(tilt.sin(), 0.0, tilt.cos()), 0.0);
            let pts: Vec<_> = (0..30).map(|_| rand_vec(&mut rng, 0.5)).collect();
            let cloud = PointCloud::new(pts).unwrap();
            let gt_center = plane_center(&gt, &cloud);
            cases.push(EvalCase {
                id: format!("m{i}"),
                est,
                gt,
                gt_center,
                cloud,
            });
        }
        cases
    }

    #[test]
    fn sweep_is_monotone_in_angle_threshold() {
        let cases = toy_cases();
        let sweep = pr_sweep(&cases, DEFAULT_T_D, SWEEP_STEPS).unwrap();
        assert_eq!(sweep.len(), SWEEP_STEPS);
        assert_eq!(sweep[0].0, 0.0);
        assert_relative_eq!(sweep.last().unwrap().0, std::f64::consts::FRAC_PI_4);
        for w in sweep.windows(2) {
            assert!(w[1].1.true_positives >= w[0].1.true_positives);
        }
        // The widest threshold at 45° accepts tilts up to 40°.
        assert_eq!(sweep.last().unwrap().1.true_positives, cases.len());
    }

    #[test]
    fn csv_outputs_are_structured() {
        let cases = toy_cases();
        let (rows, report) = evaluate_batch(&cases, &EvalThresholds::default());
        assert_eq!(
            report.true_positives + report.false_positives,
            cases.len()
        );
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &cases, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,angle_deg,gte,sde,matched\n"));
        assert_eq!(text.lines().count(), cases.len() + 1);
        assert!(text.contains("m0,0,0,"));

        let sweep = pr_sweep(&cases, DEFAULT_T_D, 5).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &sweep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_a_rad,precision,recall,fscore\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
