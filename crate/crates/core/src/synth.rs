//! Seeded generators for the benchmark: mirror-symmetric clouds with exact
//! ground truth, outlier injection, connected-part removal, and
//! correspondence corruption.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{PointCloud, PointLabel};
use crate::error::{Error, Result};
use crate::evaluation::PLANE_POINT_SCALE;
use crate::plane::{CorrespondenceSet, SymmetryPlane};
use crate::spatial::{component_count, knn_lists, symmetric_adjacency, SpatialIndex};

/// Neighbor count for the connectivity checks during part removal.
const REMOVAL_NEIGHBORS: usize = 12;
const REMOVAL_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthShape {
    MirroredBlob,
    Ellipsoid,
    Box,
    CylinderUnion,
}

impl fmt::Display for SynthShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SynthShape::MirroredBlob => "mirrored-blob",
            SynthShape::Ellipsoid => "ellipsoid",
            SynthShape::Box => "box",
            SynthShape::CylinderUnion => "cylinder-union",
        };
        f.write_str(name)
    }
}

impl FromStr for SynthShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mirrored-blob" => Ok(SynthShape::MirroredBlob),
            "ellipsoid" => Ok(SynthShape::Ellipsoid),
            "box" => Ok(SynthShape::Box),
            "cylinder-union" => Ok(SynthShape::CylinderUnion),
            other => Err(Error::InvalidParameter(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub shape: SynthShape,
    pub n: usize,
    /// Outlier percentage α: ⌊(α/100)·n⌋ points are appended.
    pub alpha: f64,
    /// Missing fraction γ: ⌊γ·n⌋ connected points are removed.
    pub gamma: f64,
    pub jitter_sigma: f64,
    pub pose: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shape: SynthShape::MirroredBlob,
            n: 1000,
            alpha: 0.0,
            gamma: 0.0,
            jitter_sigma: 0.002,
            pose: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::InvalidParameter(format!("n = {} < 100", self.n)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha = {}", self.alpha)));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!("gamma = {}", self.gamma)));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jitter_sigma = {}",
                self.jitter_sigma
            )));
        }
        Ok(())
    }
}

/// The exact symmetry the generator built in, recorded before jitter.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub plane: SymmetryPlane,
    pub center: Vector3<f64>,
    /// Mirror pairs by construction: (i, i + ⌈n/2⌉).
    pub pairs: CorrespondenceSet,
}

fn unit_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// A direction on the x ≥ 0 half-sphere.
fn half_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let mut d = unit_dir(rng);
    d.x = d.x.abs();
    d
}

trait HalfShape {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64>;
}

/// A unit sphere with a few seeded low-order radial ripples.
struct Blob {
    coeffs: [(f64, f64, f64); 3],
}

impl Blob {
    fn seeded(rng: &mut ChaCha8Rng) -> Self {
        let mut coeffs = [(0.0, 0.0, 0.0); 3];
        for c in &mut coeffs {
            *c = (
                rng.random_range(0.05..0.15),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            );
        }
        Blob { coeffs }
    }
}

impl HalfShape for Blob {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let d = half_dir(rng);
        let theta = d.z.clamp(-1.0, 1.0).acos();
        let phi = d.y.atan2(d.x);
        let mut r = 1.0;
        for (k, &(a, b, c)) in self.coeffs.iter().enumerate() {
            let k = (k + 1) as f64;
            r += a * (k * theta + b).sin() * (k * phi + c).cos();
        }
        d * r
    }
}

struct Ellipsoid {
    axes: Vector3<f64>,
}

impl HalfShape for Ellipsoid {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let d = half_dir(rng);
        d.component_mul(&self.axes)
    }
}

struct HalfBox {
    half: Vector3<f64>,
}

impl HalfShape for HalfBox {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let (a, b, c) = (self.half.x, self.half.y, self.half.z);
        // Faces of the x ≥ 0 half, weighted by area: the +x face and the
        // near halves of the four side faces.
        let weights = [4.0 * b * c, 2.0 * a * c, 2.0 * a * c, 2.0 * a * b, 2.0 * a * b];
        let total: f64 = weights.iter().sum();
        let mut pick = rng.random_range(0.0..total);
        let mut face = 0;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                face = i;
                break;
            }
            pick -= w;
        }
        let u = rng.random_range(-1.0..1.0);
        let v = rng.random_range(-1.0..1.0);
        let x = rng.random_range(0.0..1.0) * a;
        match face {
            0 => Vector3::new(a, u * b, v * c),
            1 => Vector3::new(x, b, v * c),
            2 => Vector3::new(x, -b, v * c),
            3 => Vector3::new(x, u * b, c),
            _ => Vector3::new(x, u * b, -c),
        }
    }
}

/// Two crossing cylinders, one along y and one along z.
struct CylinderPair {
    radius_y: f64,
    half_len_y: f64,
    radius_z: f64,
    half_len_z: f64,
}

impl HalfShape for CylinderPair {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        use std::f64::consts::{FRAC_PI_2, PI};
        let lat_y = PI * self.radius_y * 2.0 * self.half_len_y;
        let cap_y = PI * self.radius_y * self.radius_y / 2.0;
        let lat_z = PI * self.radius_z * 2.0 * self.half_len_z;
        let cap_z = PI * self.radius_z * self.radius_z / 2.0;
        let weights = [lat_y, cap_y, cap_y, lat_z, cap_z, cap_z];
        let total: f64 = weights.iter().sum();
        let mut pick = rng.random_range(0.0..total);
        let mut part = 0;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                part = i;
                break;
            }
            pick -= w;
        }
        let theta = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
        let along = rng.random_range(-1.0..1.0);
        let rho = rng.random_range(0.0f64..1.0).sqrt();
        match part {
            0 => Vector3::new(
                self.radius_y * theta.cos(),
                along * self.half_len_y,
                self.radius_y * theta.sin(),
            ),
            1 | 2 => {
                let sign = if part == 1 { 1.0 } else { -1.0 };
                let r = rho * self.radius_y;
                Vector3::new(r * theta.cos(), sign * self.half_len_y, r * theta.sin())
            }
            3 => Vector3::new(
                self.radius_z * theta.cos(),
                self.radius_z * theta.sin(),
                along * self.half_len_z,
            ),
            _ => {
                let sign = if part == 4 { 1.0 } else { -1.0 };
                let r = rho * self.radius_z;
                Vector3::new(r * theta.cos(), r * theta.sin(), sign * self.half_len_z)
            }
        }
    }
}

/// Samples ⌈n/2⌉ points on the x ≥ 0 half of the shape, mirrors them with
/// an exact sign flip, optionally applies a seeded rigid pose (carried into
/// the ground truth), and jitters last. For odd n the final half-sample is
/// placed on the plane so the cloud stays perfectly symmetric.
pub fn generate_symmetric_cloud(spec: &SynthSpec) -> Result<(PointCloud, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape: Box<dyn HalfShape> = match spec.shape {
        SynthShape::MirroredBlob => Box::new(Blob::seeded(&mut rng)),
        SynthShape::Ellipsoid => Box::new(Ellipsoid {
            axes: Vector3::new(
                rng.random_range(0.6..1.0),
                rng.random_range(0.6..1.0),
                rng.random_range(0.6..1.0),
            ),
        }),
        SynthShape::Box => Box::new(HalfBox {
            half: Vector3::new(
                rng.random_range(0.4..0.9),
                rng.random_range(0.4..0.9),
                rng.random_range(0.4..0.9),
            ),
        }),
        SynthShape::CylinderUnion => Box::new(CylinderPair {
            radius_y: rng.random_range(0.25..0.45),
            half_len_y: rng.random_range(0.7..1.0),
            radius_z: rng.random_range(0.25..0.45),
            half_len_z: rng.random_range(0.7..1.0),
        }),
    };

    let half = spec.n.div_ceil(2);
    let mirrored = spec.n - half;
    let mut points = Vec::with_capacity(spec.n);
    for i in 0..half {
        let mut p = shape.sample(&mut rng);
        if i == half - 1 && mirrored < half {
            p.x = 0.0;
        }
        points.push(p);
    }
    for i in 0..mirrored {
        let p = points[i];
        points.push(Vector3::new(-p.x, p.y, p.z));
    }

    let mut plane = SymmetryPlane::from_unit(Vector3::x(), 0.0);
    if spec.pose {
        let axis = Unit::new_normalize(unit_dir(&mut rng));
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let rot = Rotation3::from_axis_angle(&axis, angle);
        let t = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        for p in &mut points {
            *p = rot * *p + t;
        }
        let v = rot * Vector3::x();
        plane = SymmetryPlane::new(v, v.dot(&t))?;
    }

    if spec.jitter_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.jitter_sigma)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for p in &mut points {
            for a in 0..3 {
                p[a] += noise.sample(&mut rng);
            }
        }
    }

    let pairs = CorrespondenceSet::new((0..mirrored).map(|i| (i, i + half)).collect())?;
    let cloud = PointCloud::with_labels(points, vec![PointLabel::Surface; spec.n])?;
    let center = plane.project_point(&cloud.centroid());
    Ok((cloud, GroundTruth { plane, center, pairs }))
}

/// Appends ⌊(alpha/100)·n⌋ uniform points in the 1.2×-expanded bounding
/// box, labeled as outliers. Original points are untouched.
pub fn add_outliers(p: &PointCloud, alpha: f64, seed: u64) -> Result<PointCloud> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}")));
    }
    let count = (alpha / 100.0 * p.len() as f64).floor() as usize;
    let mut points = p.points().to_vec();
    let mut labels = match p.labels() {
        Some(l) => l.to_vec(),
        None => vec![PointLabel::Surface; p.len()],
    };
    if count > 0 {
        let (lo, hi) = p.bbox();
        let mid = (lo + hi) / 2.0;
        let half = (hi - lo) / 2.0 * 1.2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let q = Vector3::new(
                mid.x + half.x * rng.random_range(-1.0..1.0),
                mid.y + half.y * rng.random_range(-1.0..1.0),
                mid.z + half.z * rng.random_range(-1.0..1.0),
            );
            points.push(q);
            labels.push(PointLabel::Outlier);
        }
    }
    let mut out = PointCloud::with_labels(points, labels)?;
    out.id = p.id.clone();
    Ok(out)
}

/// Removes ⌊γ·n⌋ points grown from a random seed point outward through the
/// kNN graph by Euclidean priority, so the removed patch is connected.
/// Retries with a new seed point when the surviving cloud's kNN graph
/// falls apart.
pub fn remove_connected_part(p: &PointCloud, gamma: f64, seed: u64) -> Result<PointCloud> {
    if !(0.0..0.5).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma}")));
    }
    let m = (gamma * p.len() as f64).floor() as usize;
    if m == 0 {
        return Ok(p.clone());
    }
    let lists = knn_lists(p.points(), REMOVAL_NEIGHBORS)?;
    let adj = symmetric_adjacency(&lists);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _ in 0..REMOVAL_RETRIES {
        let start = rng.random_range(0..p.len());
        let origin = p.points()[start];
        // Priority growth: nonnegative distances compare correctly as bits.
        let mut heap = std::collections::BinaryHeap::new();
        let mut in_ball = vec![false; p.len()];
        heap.push(std::cmp::Reverse((0u64, start)));
        let mut picked = Vec::with_capacity(m);
        while picked.len() < m {
            let Some(std::cmp::Reverse((_, i))) = heap.pop() else {
                break;
            };
            if in_ball[i] {
                continue;
            }
            in_ball[i] = true;
            picked.push(i);
            for &j in &adj[i] {
                let j = j as usize;
                if !in_ball[j] {
                    let d = (p.points()[j] - origin).norm();
                    heap.push(std::cmp::Reverse((d.to_bits(), j)));
                }
            }
        }
        if picked.len() < m {
            continue;
        }
        let keep: Vec<usize> = (0..p.len()).filter(|&i| !in_ball[i]).collect();
        let points: Vec<_> = keep.iter().map(|&i| p.points()[i]).collect();
        let labels = p
            .labels()
            .map(|l| keep.iter().map(|&i| l[i]).collect::<Vec<_>>());
        let remaining_lists = knn_lists(&points, REMOVAL_NEIGHBORS.min(points.len() - 1))?;
        if component_count(&symmetric_adjacency(&remaining_lists)) != 1 {
            continue;
        }
        let mut out = match labels {
            Some(l) => PointCloud::with_labels(points, l)?,
            None => PointCloud::new(points)?,
        };
        out.id = p.id.clone();
        return Ok(out);
    }
    Err(Error::ConnectivityExhausted(REMOVAL_RETRIES))
}

/// Replaces ⌈frac·q⌉ pairs with random index pairs and re-targets the
/// surviving pairs through a Gaussian position perturbation snapped to the
/// nearest cloud point. Pair count and disjointness are preserved.
pub fn corrupt_correspondences(
    corrs: &CorrespondenceSet,
    outlier_frac: f64,
    perturb_sigma: f64,
    cloud: &PointCloud,
    seed: u64,
) -> Result<CorrespondenceSet> {
    if !(0.0..=1.0).contains(&outlier_frac) {
        return Err(Error::InvalidParameter(format!(
            "outlier_frac = {outlier_frac}"
        )));
    }
    if !(perturb_sigma >= 0.0 && perturb_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "perturb_sigma = {perturb_sigma}"
        )));
    }
    corrs.validate_against(cloud.len())?;
    let q = corrs.len();
    let n_replace = (outlier_frac * q as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut order: Vec<usize> = (0..q).collect();
    order.shuffle(&mut rng);
    let replaced: HashSet<usize> = order[..n_replace].iter().copied().collect();

    let mut used = vec![false; cloud.len()];
    let mut partner = vec![usize::MAX; cloud.len()];
    for (slot, &(i, j)) in corrs.pairs().iter().enumerate() {
        partner[i] = j;
        partner[j] = i;
        if !replaced.contains(&slot) {
            used[i] = true;
            used[j] = true;
        }
    }
    // Disjointness of the input pairs guarantees at least 2·n_replace free
    // indices, so drawing from the free list never starves.
    let mut free: Vec<usize> = (0..cloud.len()).filter(|&i| !used[i]).collect();

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(q);
    for (slot, &(i, j)) in corrs.pairs().iter().enumerate() {
        if replaced.contains(&slot) {
            let mut attempt = 0;
            let (a, b) = loop {
                let a = free.swap_remove(rng.random_range(0..free.len()));
                let b = free.swap_remove(rng.random_range(0..free.len()));
                // Redraw when chance reassembles a true pair; the cap keeps
                // the degenerate two-points-left case terminating.
                if partner[a] != b || attempt >= 64 {
                    break (a, b);
                }
                free.push(a);
                free.push(b);
                attempt += 1;
            };
            used[a] = true;
            used[b] = true;
            pairs.push((a, b));
        } else {
            pairs.push((i, j));
        }
    }

    if perturb_sigma > 0.0 {
        let noise = Normal::new(0.0, perturb_sigma)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let index = SpatialIndex::build(cloud.points());
        for (slot, pair) in pairs.iter_mut().enumerate() {
            if replaced.contains(&slot) {
                continue;
            }
            let (i, j) = *pair;
            let mut target = cloud.points()[j];
            for a in 0..3 {
                target[a] += noise.sample(&mut rng);
            }
            let (k, _) = index.nearest(&target);
            if k != i && (k == j || !used[k]) {
                used[j] = false;
                used[k] = true;
                *pair = (i, k);
            }
        }
    }

    CorrespondenceSet::new(pairs)
}

/// Writes the sidecar ground-truth record: spec echo, the plane as (v, ω)
/// and as three on-plane points, and the plane center.
pub fn write_ground_truth<W: Write>(
    w: &mut W,
    spec: &SynthSpec,
    gt: &GroundTruth,
) -> Result<()> {
    writeln!(w, "seed = {}", spec.seed)?;
    writeln!(w, "shape = {}", spec.shape)?;
    writeln!(w, "n = {}", spec.n)?;
    writeln!(w, "alpha = {}", spec.alpha)?;
    writeln!(w, "gamma = {}", spec.gamma)?;
    writeln!(w, "jitter-sigma = {}", spec.jitter_sigma)?;
    writeln!(w, "pose = {}", spec.pose)?;
    let v = gt.plane.normal();
    writeln!(w, "normal = {} {} {}", v.x, v.y, v.z)?;
    writeln!(w, "offset = {}", gt.plane.offset())?;
    writeln!(w, "center = {} {} {}", gt.center.x, gt.center.y, gt.center.z)?;
    let [a, b, c] = gt.plane.three_points(&gt.center, PLANE_POINT_SCALE);
    for (key, p) in [("point-a", a), ("point-b", b), ("point-c", c)] {
        writeln!(w, "{key} = {} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Ground truth as read back from a sidecar (pairs are not serialized).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub plane: SymmetryPlane,
    pub center: Vector3<f64>,
}

/// Parses a sidecar record. Accepts the plane either as `normal`/`offset`
/// or as three points in the dataset convention; `center` falls back to
/// the projected mean of the three points.
pub fn read_ground_truth<R: BufRead>(r: R, label: &str) -> Result<GroundTruthRecord> {
    let mut fields: std::collections::HashMap<String, String> = std::collections::HashMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: label.to_string(),
                line: lineno + 1,
                msg: "expected key = value".into(),
            });
        };
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let parse_vec = |key: &str| -> Result<Vector3<f64>> {
        let raw = fields
            .get(key)
            .ok_or_else(|| Error::Parse {
                path: label.to_string(),
                line: 0,
                msg: format!("missing key {key:?}"),
            })?;
        let parts: Vec<f64> = raw
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: label.to_string(),
                line: 0,
                msg: format!("{key}: {e}"),
            })?;
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: label.to_string(),
                line: 0,
                msg: format!("{key}: expected 3 components, got {}", parts.len()),
            });
        }
        Ok(Vector3::new(parts[0], parts[1], parts[2]))
    };

    let plane = if fields.contains_key("normal") {
        let v = parse_vec("normal")?;
        let offset: f64 = fields
            .get("offset")
            .ok_or_else(|| Error::Parse {
                path: label.to_string(),
                line: 0,
                msg: "missing key \"offset\"".into(),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                path: label.to_string(),
                line: 0,
                msg: format!("offset: {e}"),
            })?;
        SymmetryPlane::new(v, offset)?
    } else {
        let a = parse_vec("point-a")?;
        let b = parse_vec("point-b")?;
        let c = parse_vec("point-c")?;
        let n = (a - b).cross(&(a - c));
        SymmetryPlane::new(n, n.dot(&a))?
    };
    let center = if fields.contains_key("center") {
        parse_vec("center")?
    } else {
        let a = parse_vec("point-a")?;
        let b = parse_vec("point-b")?;
        let c = parse_vec("point-c")?;
        plane.project_point(&((a + b + c) / 3.0))
    };
    Ok(GroundTruthRecord { plane, center })
}
