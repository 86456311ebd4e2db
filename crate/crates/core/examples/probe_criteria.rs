//! Stage-by-stage dissection of detect() under outliers (alpha) and
//! missing parts (gamma): keypoint purity, HKS twin quality, matched-pair
//! quality, RGA init quality, final deviation.

use nalgebra::Vector3;
use symcloud::cloud::{normalize_cloud, PointCloud, PointLabel};
use symcloud::descriptors::compute_hks;
use symcloud::evaluation::deviation_angle;
use symcloud::pipeline::{detect, DetectConfig};
use symcloud::plane::SymmetryPlane;
use symcloud::spectral::{build_laplacian, solve_eigens};
use symcloud::synth::{
    add_outliers, generate_symmetric_cloud, remove_connected_part, GroundTruth, SynthShape,
    SynthSpec,
};

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

fn good_pair(cloud: &PointCloud, plane: &SymmetryPlane, i: usize, j: usize, tol: f64) -> bool {
    let r = plane.reflect_point(&cloud.points()[i]);
    (r - cloud.points()[j]).norm() <= tol
}

fn dissect(tag: &str, cloud: &PointCloud, gt: &GroundTruth, config: &DetectConfig) {
    let (lo, hi) = cloud.bbox();
    let diag = (hi - lo).norm();
    let tol = 0.05 * diag;
    let labels = cloud.labels();
    let det = match detect(cloud, config) {
        Ok(d) => d,
        Err(e) => {
            println!("{tag}: detect FAILED: {e}");
            return;
        }
    };
    let dev = deviation_angle(&det.plane.normal(), &gt.plane.normal());
    let n_kp = det.keypoints.len();
    let kp_outliers = det
        .keypoints
        .iter()
        .filter(|k| labels.map(|l| l[k.index] == PointLabel::Outlier).unwrap_or(false))
        .count();
    // keypoints whose mirror image lies near any other keypoint
    let kp_pos: Vec<Vector3<f64>> = det.keypoints.iter().map(|k| cloud.points()[k.index]).collect();
    let closed = kp_pos
        .iter()
        .filter(|p| {
            let r = gt.plane.reflect_point(p);
            kp_pos.iter().any(|q| (r - q).norm() <= tol)
        })
        .count();
    let good = det
        .correspondences
        .pairs()
        .iter()
        .filter(|&&(i, j)| good_pair(cloud, &gt.plane, i, j, tol) || good_pair(cloud, &gt.plane, j, i, tol))
        .count();
    let init_dev = deviation_angle(&det.diagnostics.init_vector, &gt.plane.normal());
    println!(
        "{tag}: dev {dev:6.2}°  kp {n_kp:3} (outlier {kp_outliers:2}, closed {closed:3})  pairs {:2} good {good:2}  init_dev {init_dev:6.2}°",
        det.correspondences.len()
    );
}

fn hks_twin_quality(tag: &str, cloud: &PointCloud, gt: &GroundTruth, config: &DetectConfig) {
    let (normalized, _) = normalize_cloud(cloud).unwrap();
    let lap = match build_laplacian(&normalized, config.neighbors, None) {
        Ok(l) => l,
        Err(e) => {
            println!("{tag}: laplacian FAILED: {e}");
            return;
        }
    };
    let k = config.k_eig.clamp(2, lap.n());
    let basis = match solve_eigens(&lap, k) {
        Ok(b) => b,
        Err(e) => {
            println!("{tag}: eigens FAILED: {e}");
            return;
        }
    };
    // rel diff of HKS at construction twins (both surface points)
    let pairs = gt.pairs.pairs();
    let sample: Vec<(usize, usize)> = pairs.iter().step_by(pairs.len().div_ceil(60)).copied().collect();
    let mut idx = Vec::new();
    for &(i, j) in &sample {
        idx.push(i);
        idx.push(j);
    }
    let hks = compute_hks(&basis, &idx, config.p_times).unwrap();
    let mut rels: Vec<f64> = Vec::new();
    for c in 0..sample.len() {
        let a = &hks[2 * c].values;
        let b = &hks[2 * c + 1].values;
        let rel = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
            .fold(0.0f64, f64::max);
        rels.push(rel);
    }
    rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = rels[rels.len() / 2];
    let q90 = rels[(rels.len() * 9) / 10];
    println!("{tag}: HKS twin rel diff med {med:.3e} q90 {q90:.3e}");
}

fn main() {
    let config = DetectConfig::default();
    println!("== alpha = 100 ==");
    for seed in 1..=6u64 {
        let (cloud, gt) = build(seed, 600);
        let noisy = add_outliers(&cloud, 100.0, seed + 1000).unwrap();
        dissect(&format!("a100 s{seed}"), &noisy, &gt, &config);
    }
    println!("== alpha = 100 HKS quality ==");
    for seed in 1..=3u64 {
        let (cloud, gt) = build(seed, 600);
        let noisy = add_outliers(&cloud, 100.0, seed + 1000).unwrap();
        hks_twin_quality(&format!("a100 s{seed}"), &noisy, &gt, &config);
    }
    println!("== gamma = 0.28 ==");
    for seed in 1..=6u64 {
        let (cloud, gt) = build(seed, 600);
        let cut = remove_connected_part(&cloud, 0.28, seed + 2000).unwrap();
        dissect(&format!("g28 s{seed}"), &cut, &gt, &config);
    }
    println!("== gamma = 0.28 HKS quality (surviving twins) ==");
    for seed in 1..=3u64 {
        let (cloud, gt) = build(seed, 600);
        let cut = remove_connected_part(&cloud, 0.28, seed + 2000).unwrap();
        // indices shift after removal; rebuild twin list by position
        let tolp = 1e-9;
        let mut surv = Vec::new();
        'outer: for &(i, j) in gt.pairs.pairs() {
            let (a, b) = (cloud.points()[i], cloud.points()[j]);
            let mut ia = None;
            let mut ib = None;
            for (t, p) in cut.points().iter().enumerate() {
                if (p - a).norm() < tolp {
                    ia = Some(t);
                }
                if (p - b).norm() < tolp {
                    ib = Some(t);
                }
                if ia.is_some() && ib.is_some() {
                    surv.push((ia.unwrap(), ib.unwrap()));
                    continue 'outer;
                }
            }
        }
        let gt2 = GroundTruth {
            plane: gt.plane.clone(),
            center: gt.center,
            pairs: symcloud::plane::CorrespondenceSet::new(surv).unwrap(),
        };
        hks_twin_quality(&format!("g28 s{seed}"), &cut, &gt2, &config);
    }
}
