use std::io::Write;

use nalgebra::{Matrix3, Vector3};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;
use crate::spectral::SpectralBasis;

/// Eigenvalues at or below this floor count as the zero eigenvalue of a
/// connected graph.
pub const ZERO_EIGENVALUE_FLOOR: f64 = 1e-8;

/// Hard cap on detected keypoints, keeping the matching stage quadratic in a
/// small constant.
pub const MAX_KEYPOINTS: usize = 200;

/// A detected interest point.
#[derive(Debug, Clone, Copy)]
pub struct Keypoint {
    pub index: usize,
    pub position: Vector3<f64>,
    /// Smallest neighborhood-covariance eigenvalue.
    pub saliency: f64,
}

/// Heat-kernel signature sampled at p diffusion times.
#[derive(Debug, Clone)]
pub struct HksDescriptor {
    pub values: Vec<f64>,
    pub times: Vec<f64>,
}

/// Signs (±1) of the first k_s non-constant eigenfunctions at a point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignVector {
    pub signs: Vec<i8>,
}

/// ISS keypoint detection.
///
/// For each point, the covariance of neighbors within `radius` (scattered
/// about the point itself) is eigendecomposed into λ₁ ≥ λ₂ ≥ λ₃; keypoints
/// satisfy λ₂/λ₁ < gamma21 and λ₃/λ₂ < gamma32 and survive non-maximum
/// suppression on saliency λ₃ within `nms_radius`. The result is sorted by
/// descending saliency (ties toward the lower index) and capped at
/// [`MAX_KEYPOINTS`].
pub fn detect_iss_keypoints(
    p: &PointCloud,
    radius: f64,
    gamma21: f64,
    gamma32: f64,
    nms_radius: f64,
) -> Result<Vec<Keypoint>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius = {radius}")));
    }
    for (name, g) in [("gamma21", gamma21), ("gamma32", gamma32)] {
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::InvalidParameter(format!("{name} = {g}")));
        }
    }
    if p.is_empty() {
        return Err(Error::EmptyCloud);
    }

    let index = SpatialIndex::build(p.points());
    let mut candidates: Vec<Keypoint> = Vec::new();
    for (i, x) in p.points().iter().enumerate() {
        let nbrs = index.within_radius(x, radius);
        if nbrs.len() < 4 {
            continue;
        }
        let mut cov = Matrix3::zeros();
        let mut count = 0usize;
        for &(j, _) in &nbrs {
            if j == i {
                continue;
            }
            let d = p.points()[j] - x;
            cov += d * d.transpose();
            count += 1;
        }
        cov /= count as f64;
        let mut ev: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_unstable_by(|a, b| b.total_cmp(a));
        let (l1, l2, l3) = (ev[0], ev[1], ev[2]);
        if l1 <= 0.0 || l2 <= 0.0 || l3 <= 0.0 {
            continue;
        }
        if l2 / l1 < gamma21 && l3 / l2 < gamma32 {
            candidates.push(Keypoint {
                index: i,
                position: *x,
                saliency: l3,
            });
        }
    }

    candidates.sort_unstable_by(|a, b| {
        b.saliency.total_cmp(&a.saliency).then(a.index.cmp(&b.index))
    });

    let mut kept: Vec<Keypoint> = Vec::new();
    for cand in candidates {
        let suppressed = kept
            .iter()
            .any(|k| (k.position - cand.position).norm() < nms_radius);
        if !suppressed {
            kept.push(cand);
            if kept.len() == MAX_KEYPOINTS {
                break;
            }
        }
    }

    if kept.is_empty() {
        return Err(Error::NoKeypoints);
    }
    Ok(kept)
}

/// Default ISS scales: radius 4× the mean nearest-neighbor spacing, NMS at
/// the same radius.
pub fn default_iss_radius(p: &PointCloud) -> f64 {
    let index = SpatialIndex::build(p.points());
    let mut acc = 0.0;
    for (i, x) in p.points().iter().enumerate() {
        let nn = index.knn(x, 2);
        let d = if nn[0].0 == i { nn[1].1 } else { nn[0].1 };
        acc += d;
    }
    4.0 * acc / p.len() as f64
}

/// p diffusion times uniformly (linearly) spaced over
/// [10 ln10 / λ_k, 10 ln10 / λ₂], ascending.
pub fn hks_time_samples(lambda2: f64, lambdak: f64, p: usize) -> Result<Vec<f64>> {
    if lambda2 <= 0.0 {
        return Err(Error::DegenerateSpectrum(0.0));
    }
    if lambdak < lambda2 {
        return Err(Error::InvalidParameter(format!(
            "lambdak = {lambdak} below lambda2 = {lambda2}"
        )));
    }
    if p < 2 {
        return Err(Error::InvalidParameter(format!("p = {p}, need at least 2")));
    }
    let scale = 10.0 * 10.0f64.ln();
    let lo = scale / lambdak;
    let hi = scale / lambda2;
    let step = (hi - lo) / (p - 1) as f64;
    Ok((0..p).map(|g| lo + g as f64 * step).collect())
}

/// Heat-kernel signatures h_i[g] = Σ_j exp(−t_g λ_j) φ_j(o_i)² at the given
/// point indices. Times come from [`hks_time_samples`] with λ₂ taken as the
/// first eigenvalue above [`ZERO_EIGENVALUE_FLOOR`]; the zero eigenvalue
/// still contributes its (constant) term to the sum.
pub fn compute_hks(
    basis: &SpectralBasis,
    indices: &[usize],
    p: usize,
) -> Result<Vec<HksDescriptor>> {
    if basis.k() < 2 {
        return Err(Error::InvalidParameter(
            "basis needs at least 2 eigenpairs".into(),
        ));
    }
    let (_, lambda2) = basis
        .first_positive_eigenvalue(ZERO_EIGENVALUE_FLOOR)
        .ok_or(Error::DegenerateSpectrum(ZERO_EIGENVALUE_FLOOR))?;
    let lambdak = *basis.eigenvalues.last().unwrap();
    let times = hks_time_samples(lambda2, lambdak, p)?;

    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= basis.n() {
            return Err(Error::IndexOutOfBounds {
                index: i,
                len: basis.n(),
            });
        }
        let mut values = Vec::with_capacity(p);
        for &t in &times {
            let mut h = 0.0;
            for (j, &lambda) in basis.eigenvalues.iter().enumerate() {
                let phi = basis.eigenfunctions[(i, j)];
                h += (-t * lambda.max(0.0)).exp() * phi * phi;
            }
            values.push(h);
        }
        out.push(HksDescriptor {
            values,
            times: times.clone(),
        });
    }
    Ok(out)
}

/// Sign vectors over the non-constant eigenfunctions φ₂ … φ_{k_s+1}:
/// +1 where φ_j(o_i) ≥ 0, −1 otherwise.
pub fn compute_sign_vectors(
    basis: &SpectralBasis,
    indices: &[usize],
    k_s: usize,
) -> Result<Vec<SignVector>> {
    if k_s + 1 > basis.k() {
        return Err(Error::InvalidParameter(format!(
            "k_s = {k_s} needs {} eigenpairs, basis has {}",
            k_s + 1,
            basis.k()
        )));
    }
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= basis.n() {
            return Err(Error::IndexOutOfBounds {
                index: i,
                len: basis.n(),
            });
        }
        let signs = (1..=k_s)
            .map(|j| {
                if basis.eigenfunctions[(i, j)] >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        out.push(SignVector { signs });
    }
    Ok(out)
}

/// CSV export: one row per keypoint with index, position, HKS values, and
/// signs.
pub fn export_descriptors_csv<W: Write>(
    w: &mut W,
    keypoints: &[Keypoint],
    hks: &[HksDescriptor],
    signs: &[SignVector],
) -> std::io::Result<()> {
    write!(w, "index,x,y,z")?;
    if let Some(h) = hks.first() {
        for g in 0..h.values.len() {
            write!(w, ",hks{g}")?;
        }
    }
    if let Some(s) = signs.first() {
        for j in 0..s.signs.len() {
            write!(w, ",sign{j}")?;
        }
    }
    writeln!(w)?;
    for (i, kp) in keypoints.iter().enumerate() {
        write!(w, "{},{},{},{}", kp.index, kp.position.x, kp.position.y, kp.position.z)?;
        for v in &hks[i].values {
            write!(w, ",{v}")?;
        }
        for s in &signs[i].signs {
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
