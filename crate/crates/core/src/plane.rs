use std::collections::HashSet;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// A reflection plane {x : v·x = ω} with unit normal v and signed offset ω.
///
/// The stored representation is canonical: the first nonzero component of v
/// is positive, and (v, ω) / (−v, −ω) denote the same plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryPlane {
    normal: Vector3<f64>,
    offset: f64,
}

impl SymmetryPlane {
    /// Interprets (n, ω) as the plane equation n·x = ω, normalizes both by
    /// ‖n‖, and canonicalizes. Fails on a (near) zero normal.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let len = normal.norm();
        if !len.is_finite() || len < 1e-12 {
            return Err(Error::ZeroNormal);
        }
        // Skip the division for already-unit input so reconstruction from a
        // canonical plane is bit-stable.
        let plane = if (len - 1.0).abs() < 1e-12 {
            Self { normal, offset }
        } else {
            Self {
                normal: normal / len,
                offset: offset / len,
            }
        };
        Ok(plane.canonical())
    }

    /// Builds from an already-unit normal.
    pub fn from_unit(normal: Vector3<f64>, offset: f64) -> Self {
        debug_assert!((normal.norm() - 1.0).abs() < 1e-9);
        Self::new(normal, offset).expect("unit normal")
    }

    fn canonical(mut self) -> Self {
        // Scrub negative zeros so canonical planes print identically.
        self.normal = self.normal.map(|x| if x == 0.0 { 0.0 } else { x });
        for a in 0..3 {
            let c = self.normal[a];
            if c != 0.0 {
                if c < 0.0 {
                    self.normal = -self.normal;
                    self.offset = -self.offset;
                    self.normal = self.normal.map(|x| if x == 0.0 { 0.0 } else { x });
                }
                break;
            }
        }
        self
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed distance of x from the plane (positive on the normal side).
    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }

    /// Householder reflection: (I − 2vvᵀ)x + 2ωv.
    pub fn reflect_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        x - 2.0 * self.signed_distance(x) * self.normal
    }

    /// Orthogonal projection of x onto the plane.
    pub fn project_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        x - self.signed_distance(x) * self.normal
    }

    /// Pointwise reflection of a whole cloud; labels and id are kept.
    pub fn reflect_cloud(&self, p: &PointCloud) -> PointCloud {
        let points: Vec<_> = p.points().iter().map(|x| self.reflect_point(x)).collect();
        let mut out = match p.labels() {
            Some(labels) => PointCloud::with_labels(points, labels.to_vec()),
            None => PointCloud::new(points),
        }
        .expect("reflection preserves cloud validity");
        out.id = p.id.clone();
        out
    }

    /// Three non-collinear points on the plane, centered on `center`
    /// (which is projected onto the plane first), spaced by `scale`.
    pub fn three_points(&self, center: &Vector3<f64>, scale: f64) -> [Vector3<f64>; 3] {
        let c = self.project_point(center);
        let (u, w) = self.in_plane_basis();
        [c, c + u * scale, c + w * scale]
    }

    /// An orthonormal pair spanning the plane's direction space.
    pub fn in_plane_basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let v = self.normal;
        let seed = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
            Vector3::x()
        } else if v.y.abs() <= v.z.abs() {
            Vector3::y()
        } else {
            Vector3::z()
        };
        let u = (seed - v * seed.dot(&v)).normalize();
        let w = v.cross(&u);
        (u, w)
    }
}

/// Unordered, disjoint index pairs asserting mirror-symmetric point matches.
///
/// Pairs are stored with i < j, sorted ascending, and each index appears in
/// at most one pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidParameter(format!(
                    "correspondence pair ({a}, {b}) links an index to itself"
                )));
            }
            for idx in [a, b] {
                if !seen.insert(idx) {
                    return Err(Error::CorrespondenceConflict { index: idx });
                }
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        Ok(Self { pairs: out })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks every index against a cloud size.
    pub fn validate_against(&self, len: usize) -> Result<()> {
        for &(a, b) in &self.pairs {
            if b >= len {
                return Err(Error::IndexOutOfBounds {
                    index: a.max(b),
                    len,
                });
            }
        }
        Ok(())
    }
}
