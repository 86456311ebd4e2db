//! End-to-end plane detection: normalization, graph Laplacian, eigenbasis,
//! ISS keypoints, Sym-HKS descriptors, pair matching, and the robust
//! estimator, with per-stage wall timings.

use std::time::Instant;

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{normalize_cloud, PointCloud, RigidNormalization};
use crate::descriptors::{
    compute_hks, compute_sign_vectors, default_iss_radius, detect_iss_keypoints, Keypoint,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_plane, EstimateDiagnostics, EstimatorParams};
use crate::matching::{
    build_cost_matrix, default_q, solve_matching, MatchParams, DEFAULT_PENALTY_B,
    DEFAULT_SPATIAL_GUARD,
};
use crate::plane::{CorrespondenceSet, SymmetryPlane};
use crate::spatial::SpatialIndex;
use crate::spectral::{build_laplacian, solve_eigens, LaplacianPair};

/// Graph-build retries double the neighbor count up to this cap before the
/// disconnection error propagates.
const NEIGHBOR_CAP: usize = 48;
/// ISS selectivity ladder, relaxed step by step when too few keypoints
/// survive.
const ISS_GAMMAS: [f64; 3] = [0.975, 0.99, 0.999];
/// Floor on the ISS radius as a fraction of the bbox diagonal. The
/// sampling-derived radius shrinks as 1/√n, and below this scale the
/// neighborhood covariance reads jitter instead of curvature, so dense
/// clouds would pick noise peaks whose mirror twins never co-occur.
const ISS_RADIUS_FRACTION: f64 = 0.04;
/// Core points may exceed the cloud's 25th-percentile mean 6-NN distance
/// by at most this factor. Scattered volumetric points sit several times
/// farther from their neighbors than any sampled surface patch; left in,
/// their isotropic scatter wins the keypoint saliency contest and their
/// graph edges scramble the eigenfunctions the descriptors are read from.
const SOR_FACTOR: f64 = 1.8;
/// How many nearest neighbors the core gate averages over.
const SOR_NEIGHBORS: usize = 6;
/// Fewest keypoints worth building a cost matrix for.
const MIN_KEYPOINTS: usize = 4;
/// Decorrelates the subsample stream from the estimator's.
const SPECTRAL_SAMPLE_SALT: u64 = 0x7370_6563;

#[derive(Debug, Clone)]
pub struct DetectConfig {
    pub neighbors: usize,
    /// Eigenpairs to solve for (clamped to the cloud size).
    pub k_eig: usize,
    /// HKS diffusion-time samples.
    pub p_times: usize,
    /// Sign-vector coordinates (clamped to k_eig − 1).
    pub k_signs: usize,
    /// Pairs to select; `None` takes min(a/2, 50) for a keypoints.
    pub q: Option<usize>,
    pub penalty_b: f64,
    /// The eigenproblem runs on a seeded subsample of at most this many
    /// core points (keypoints always included), so descriptors are read
    /// at each keypoint's own node. Low-end spectral gaps close as the
    /// sampling refines, so an uncapped solve would grow superlinearly
    /// with no benefit to the 200-odd keypoints that consume the basis.
    pub spectral_cap: usize,
    pub estimator: EstimatorParams,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            neighbors: 12,
            k_eig: 100,
            p_times: 64,
            k_signs: 6,
            q: None,
            penalty_b: DEFAULT_PENALTY_B,
            spectral_cap: 6000,
            estimator: EstimatorParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageTiming {
    pub name: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Detection {
    /// Plane in the input's coordinate frame.
    pub plane: SymmetryPlane,
    /// The same plane in normalized coordinates (centroid 0, diagonal 1).
    pub plane_normalized: SymmetryPlane,
    pub normalization: RigidNormalization,
    pub keypoints: Vec<Keypoint>,
    /// Matched pairs as cloud indices, aligned with `pair_costs`.
    pub correspondences: CorrespondenceSet,
    /// (i, j, matching cost) rows in the order of `correspondences`.
    pub pair_costs: Vec<(usize, usize, f64)>,
    pub diagnostics: EstimateDiagnostics,
    pub timings: Vec<StageTiming>,
    pub neighbors_used: usize,
    pub k_eig_used: usize,
}

/// Where the eigenproblem lives: the full cloud, or the gated (and, past
/// the cap, seeded-subsampled) core that always contains every keypoint,
/// so descriptors are read at the keypoints' own nodes.
enum SpectralDomain {
    Full,
    Sampled {
        cloud: PointCloud,
        /// Full-cloud index → subsample row.
        rows: std::collections::HashMap<usize, usize>,
    },
}

impl SpectralDomain {
    fn cloud<'a>(&'a self, full: &'a PointCloud) -> &'a PointCloud {
        match self {
            SpectralDomain::Full => full,
            SpectralDomain::Sampled { cloud, .. } => cloud,
        }
    }

    fn locate(&self, keypoints: &[Keypoint]) -> Vec<usize> {
        match self {
            SpectralDomain::Full => keypoints.iter().map(|k| k.index).collect(),
            SpectralDomain::Sampled { rows, .. } => keypoints
                .iter()
                .map(|k| rows[&k.index])
                .collect(),
        }
    }
}

fn spectral_subsample(
    p: &PointCloud,
    config: &DetectConfig,
    keypoints: &[Keypoint],
    kept: &[usize],
) -> Result<SpectralDomain> {
    let cap = config.spectral_cap;
    let uncapped = cap == 0 || kept.len() <= cap;
    if kept.len() == p.len() && uncapped {
        return Ok(SpectralDomain::Full);
    }
    if !uncapped && cap < 64 {
        return Err(Error::InvalidParameter(format!(
            "spectral_cap = {cap}, need at least 64"
        )));
    }
    let mut chosen: std::collections::BTreeSet<usize> =
        keypoints.iter().map(|k| k.index).collect();
    if uncapped {
        chosen.extend(kept.iter().copied());
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.estimator.seed ^ SPECTRAL_SAMPLE_SALT);
        let mut idx: Vec<usize> = kept.to_vec();
        let mut cursor = 0;
        while chosen.len() < cap && cursor < idx.len() {
            let j = rng.random_range(cursor..idx.len());
            idx.swap(cursor, j);
            chosen.insert(idx[cursor]);
            cursor += 1;
        }
    }
    let pts: Vec<Vector3<f64>> = chosen.iter().map(|&i| p.points()[i]).collect();
    let rows = chosen.iter().enumerate().map(|(row, &i)| (i, row)).collect();
    Ok(SpectralDomain::Sampled {
        cloud: PointCloud::new(pts)?,
        rows,
    })
}

fn build_graph(p: &PointCloud, start: usize) -> Result<(LaplacianPair, usize)> {
    let n = p.len();
    let cap = NEIGHBOR_CAP.min(n.saturating_sub(1));
    let mut neighbors = start.min(cap).max(1);
    loop {
        match build_laplacian(p, neighbors, None) {
            Ok(lap) => return Ok((lap, neighbors)),
            // Sparse sampling can fragment the graph; a denser one usually
            // stitches it back together.
            Err(Error::DisconnectedGraph { .. }) if neighbors < cap => {
                neighbors = (neighbors * 2).min(cap);
            }
            Err(e) => return Err(e),
        }
    }
}

/// The core of the cloud: indices whose mean distance to their
/// `SOR_NEIGHBORS` nearest neighbors stays within `SOR_FACTOR` of the
/// 25th percentile. The percentile anchors in the surface population as
/// long as scattered points stay under three quarters of the cloud; if
/// the gate would still cut deeper than that, it is clearly misreading
/// the shape and steps aside.
fn surface_core(p: &PointCloud) -> (Vec<usize>, PointCloud) {
    let n = p.len();
    let whole = || ((0..n).collect(), p.clone());
    if n <= SOR_NEIGHBORS + 1 {
        return whole();
    }
    let tree = SpatialIndex::build(p.points());
    let mean_dist: Vec<f64> = p
        .points()
        .iter()
        .map(|q| {
            let nn = tree.knn(q, SOR_NEIGHBORS + 1);
            nn.iter().skip(1).map(|&(_, d)| d).sum::<f64>() / (nn.len() - 1) as f64
        })
        .collect();
    let mut sorted = mean_dist.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let gate = SOR_FACTOR * sorted[n / 4];
    let kept: Vec<usize> = (0..n).filter(|&i| mean_dist[i] <= gate).collect();
    if kept.len() < n / 4 || kept.len() == n {
        return whole();
    }
    let cloud = PointCloud::new(kept.iter().map(|&i| p.points()[i]).collect())
        .expect("core is nonempty");
    (kept, cloud)
}

fn pick_keypoints(core: &PointCloud, kept: &[usize]) -> Result<Vec<Keypoint>> {
    let (lo, hi) = core.bbox();
    let diag = (hi - lo).norm();
    let radius = default_iss_radius(core).max(ISS_RADIUS_FRACTION * diag);
    let mut keypoints = Vec::new();
    for &gamma in &ISS_GAMMAS {
        keypoints = detect_iss_keypoints(core, radius, gamma, gamma, radius)?;
        if keypoints.len() >= MIN_KEYPOINTS {
            break;
        }
    }
    if keypoints.len() < 2 {
        return Err(Error::NoKeypoints);
    }
    for k in &mut keypoints {
        k.index = kept[k.index];
    }
    Ok(keypoints)
}

/// Runs the full detection pipeline on a cloud.
pub fn detect(cloud: &PointCloud, config: &DetectConfig) -> Result<Detection> {
    let mut timings = Vec::new();
    let mut stage = Instant::now();
    let lap_time = |timings: &mut Vec<StageTiming>, name, stage: &mut Instant| {
        timings.push(StageTiming {
            name,
            seconds: stage.elapsed().as_secs_f64(),
        });
        *stage = Instant::now();
    };

    let (normalized, norm) = normalize_cloud(cloud)?;
    lap_time(&mut timings, "normalize", &mut stage);

    let (kept, core) = surface_core(&normalized);
    lap_time(&mut timings, "filter", &mut stage);

    let keypoints = pick_keypoints(&core, &kept)?;
    lap_time(&mut timings, "keypoints", &mut stage);

    let spectral = spectral_subsample(&normalized, config, &keypoints, &kept)?;
    let (lap, neighbors_used) = build_graph(spectral.cloud(&normalized), config.neighbors)?;
    lap_time(&mut timings, "laplacian", &mut stage);

    let k_eig = config.k_eig.clamp(2, lap.n());
    let basis = solve_eigens(&lap, k_eig)?;
    lap_time(&mut timings, "eigens", &mut stage);

    let spectral_indices = spectral.locate(&keypoints);
    let hks = compute_hks(&basis, &spectral_indices, config.p_times)?;
    let k_signs = config.k_signs.min(basis.k() - 1).max(1);
    let signs = compute_sign_vectors(&basis, &spectral_indices, k_signs)?;
    lap_time(&mut timings, "descriptors", &mut stage);

    let cost = build_cost_matrix(&hks, &signs, config.penalty_b)?;
    let a = keypoints.len();
    let q = config.q.unwrap_or_else(|| default_q(a)).clamp(1, a / 2);
    let positions: Vec<Vector3<f64>> = keypoints.iter().map(|k| k.position).collect();
    let solve = |q: usize, guard: Option<f64>| {
        let params = MatchParams {
            q,
            penalty_b: config.penalty_b,
            spatial_guard: guard,
        };
        solve_matching(&cost, &params, Some(&positions))
    };
    // Ask with the spatial guard first; fall back to fewer pairs, then to
    // no guard, before giving up.
    let kp_pairs = match solve(q, Some(DEFAULT_SPATIAL_GUARD)) {
        Ok(s) => s,
        Err(Error::MatchingInfeasible { feasible, .. }) if feasible >= 1 => {
            solve(feasible.min(q), Some(DEFAULT_SPATIAL_GUARD))?
        }
        Err(Error::MatchingInfeasible { .. }) => match solve(q, None) {
            Ok(s) => s,
            Err(Error::MatchingInfeasible { feasible, .. }) if feasible >= 1 => {
                solve(feasible.min(q), None)?
            }
            Err(e) => return Err(e),
        },
        Err(e) => return Err(e),
    };
    let mut pair_costs: Vec<(usize, usize, f64)> = kp_pairs
        .pairs()
        .iter()
        .map(|&(i, j)| {
            let c = cost.matrix[(i, j)];
            let (a, b) = (keypoints[i].index, keypoints[j].index);
            (a.min(b), a.max(b), c)
        })
        .collect();
    pair_costs.sort_unstable_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let correspondences =
        CorrespondenceSet::new(pair_costs.iter().map(|&(i, j, _)| (i, j)).collect())?;
    lap_time(&mut timings, "matching", &mut stage);

    let (plane_normalized, diagnostics) =
        estimate_plane(&normalized, &correspondences, &config.estimator)?;
    let plane = norm.to_original_plane(&plane_normalized);
    lap_time(&mut timings, "estimate", &mut stage);

    Ok(Detection {
        plane,
        plane_normalized,
        normalization: norm,
        keypoints,
        correspondences,
        pair_costs,
        diagnostics,
        timings,
        neighbors_used,
        k_eig_used: k_eig,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{deviation_angle, sde};
    use crate::synth::{generate_symmetric_cloud, SynthShape, SynthSpec};

    fn blob(seed: u64, n: usize) -> (PointCloud, SymmetryPlane) {
        let spec = SynthSpec {
            shape: SynthShape::MirroredBlob,
            n,
            pose: true,
            seed,
            ..SynthSpec::default()
        };
        let (cloud, gt) = generate_symmetric_cloud(&spec).unwrap();
        (cloud, gt.plane)
    }

    #[test]
    fn detects_plane_on_clean_synthetic_cloud() {
        let (cloud, gt) = blob(42, 900);
        let detection = detect(&cloud, &DetectConfig::default()).unwrap();
        let angle = deviation_angle(&detection.plane.normal(), &gt.normal());
        assert!(angle < 1.0, "deviation {angle}°");
        assert!(detection.diagnostics.converged);
        // Reflecting through the detected plane closes onto the cloud. A
        // sub-degree normal error already costs ~1e-4 at unit lever arm,
        // so the bound sits an order above that.
        let closure = sde(&cloud, &detection.plane);
        assert!(closure < 1e-3, "sde {closure}");
    }

    #[test]
    fn detection_is_deterministic() {
        let (cloud, _) = blob(7, 600);
        let a = detect(&cloud, &DetectConfig::default()).unwrap();
        let b = detect(&cloud, &DetectConfig::default()).unwrap();
        assert_eq!(a.plane, b.plane);
        assert_eq!(a.correspondences.pairs(), b.correspondences.pairs());
        assert_eq!(
            a.diagnostics.objective_trace.last(),
            b.diagnostics.objective_trace.last()
        );
    }

    #[test]
    fn normalized_and_original_planes_agree() {
        let (cloud, _) = blob(3, 500);
        let d = detect(&cloud, &DetectConfig::default()).unwrap();
        let back = d.normalization.to_original_plane(&d.plane_normalized);
        assert_eq!(back, d.plane);
        let angle = deviation_angle(&d.plane.normal(), &d.plane_normalized.normal());
        assert!(angle < 1e-9, "normalization must not rotate the plane");
    }

    #[test]
    fn timings_cover_every_stage() {
        let (cloud, _) = blob(1, 400);
        let d = detect(&cloud, &DetectConfig::default()).unwrap();
        let names: Vec<&str> = d.timings.iter().map(|t| t.name).collect();
        assert_eq!(
            names,
            [
                "normalize",
                "filter",
                "keypoints",
                "laplacian",
                "eigens",
                "descriptors",
                "matching",
                "estimate"
            ]
        );
        assert!(d.timings.iter().all(|t| t.seconds >= 0.0));
        assert!(!d.pair_costs.is_empty());
        assert_eq!(d.pair_costs.len(), d.correspondences.len());
    }
}
