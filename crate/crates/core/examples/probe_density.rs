//! Real-gate rehearsal: raw keypoints + SOR-core graph at several gate
//! factors; descriptors snapped to the nearest core node.

use nalgebra::Vector3;
use symcloud::cloud::{normalize_cloud, PointCloud, PointLabel};
use symcloud::descriptors::{
    compute_hks, compute_sign_vectors, default_iss_radius, detect_iss_keypoints,
};
use symcloud::estimator::{estimate_plane, EstimatorParams};
use symcloud::evaluation::deviation_angle;
use symcloud::matching::{build_cost_matrix, default_q, solve_matching, MatchParams};
use symcloud::plane::CorrespondenceSet;
use symcloud::spatial::SpatialIndex;
use symcloud::spectral::{build_laplacian, solve_eigens};
use symcloud::synth::{add_outliers, generate_symmetric_cloud, remove_connected_part, GroundTruth, SynthShape, SynthSpec};

fn build(seed: u64, n: usize) -> (PointCloud, GroundTruth) {
    let shapes = [
        SynthShape::MirroredBlob,
        SynthShape::Ellipsoid,
        SynthShape::Box,
        SynthShape::CylinderUnion,
    ];
    let spec = SynthSpec {
        shape: shapes[(seed % 4) as usize],
        n,
        pose: true,
        seed,
        ..SynthSpec::default()
    };
    generate_symmetric_cloud(&spec).unwrap()
}

fn run(seed: u64, factor: f64, alpha: f64, gamma: f64, n0: usize) {
    let (cloud, gt) = build(seed, n0);
    let noisy = if alpha > 0.0 {
        add_outliers(&cloud, alpha, seed + 1000).unwrap()
    } else if gamma > 0.0 {
        remove_connected_part(&cloud, gamma, seed + 2000).unwrap()
    } else {
        cloud.clone()
    };
    let labels = noisy.labels().unwrap().to_vec();
    let (p, norm) = normalize_cloud(&noisy).unwrap();
    let (lo, hi) = p.bbox();
    let diag = (hi - lo).norm();
    let radius = default_iss_radius(&p).max(0.04 * diag);

    let mut keypoints = Vec::new();
    for gamma in [0.975, 0.99, 0.999] {
        keypoints = detect_iss_keypoints(&p, radius, gamma, gamma, radius).unwrap();
        if keypoints.len() >= 4 {
            break;
        }
    }

    // SOR core
    let n = p.len();
    let tree_all = SpatialIndex::build(p.points());
    let d6: Vec<f64> = p
        .points()
        .iter()
        .map(|q| {
            let nn = tree_all.knn(q, 7);
            nn.iter().skip(1).map(|&(_, d)| d).sum::<f64>() / (nn.len() - 1) as f64
        })
        .collect();
    let mut sorted = d6.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let gate = factor * sorted[n / 4];
    let kept: Vec<usize> = (0..n).filter(|&i| d6[i] <= gate).collect();
    let core_outl = kept
        .iter()
        .filter(|&&i| labels[i] == PointLabel::Outlier)
        .count();

    let rows: std::collections::HashMap<usize, usize> =
        kept.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let sub = PointCloud::new(kept.iter().map(|&i| p.points()[i]).collect()).unwrap();
    let tree = SpatialIndex::build(sub.points());
    let lap = match build_laplacian(&sub, 12, None) {
        Ok(l) => l,
        Err(e) => {
            println!("s{seed} f{factor}: laplacian failed: {e}");
            return;
        }
    };
    let basis = solve_eigens(&lap, 100.min(lap.n())).unwrap();
    let spectral_indices: Vec<usize> = keypoints
        .iter()
        .map(|k| {
            rows.get(&k.index)
                .copied()
                .unwrap_or_else(|| tree.nearest(&k.position).0)
        })
        .collect();
    let hks = compute_hks(&basis, &spectral_indices, 64).unwrap();
    let signs = compute_sign_vectors(&basis, &spectral_indices, 6).unwrap();
    let cost = build_cost_matrix(&hks, &signs, 1000.0).unwrap();
    let a = keypoints.len();
    let q = default_q(a).clamp(1, a / 2);
    let positions: Vec<Vector3<f64>> = keypoints.iter().map(|k| k.position).collect();
    let params = MatchParams {
        q,
        penalty_b: 1000.0,
        spatial_guard: Some(0.05),
    };
    let kp_pairs = match solve_matching(&cost, &params, Some(&positions)) {
        Ok(s) => s,
        Err(e) => {
            println!("s{seed} f{factor}: matching failed: {e}");
            return;
        }
    };
    let corrs = CorrespondenceSet::new(
        kp_pairs
            .pairs()
            .iter()
            .map(|&(i, j)| (keypoints[i].index, keypoints[j].index))
            .collect(),
    )
    .unwrap();
    let (plane_n, _) = estimate_plane(&p, &corrs, &EstimatorParams::default()).unwrap();
    let plane = norm.to_original_plane(&plane_n);
    let dev = deviation_angle(&plane.normal(), &gt.plane.normal());
    println!(
        "s{seed} f{factor}: dev {dev:6.2}°  core {}({} outl)/{}  kp {a:3}",
        kept.len(),
        core_outl,
        n
    );
}

fn main() {
    println!("== n=5000, alpha 100, SOR factor 1.5 ==");
    for seed in 1..=6 {
        run(seed, 1.5, 100.0, 0.0, 5000);
    }
    println!("== n=5000, gamma 0.28, gate off ==");
    for seed in 1..=6 {
        run(seed, 1e9, 0.0, 0.28, 5000);
    }
    println!("== n=2400, gamma 0.28, gate off ==");
    for seed in 1..=6 {
        run(seed, 1e9, 0.0, 0.28, 2400);
    }
}
