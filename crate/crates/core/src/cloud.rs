use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::plane::SymmetryPlane;

/// Provenance of a point in a (possibly corrupted) cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Surface,
    Outlier,
}

/// An ordered set of 3D points with optional per-point provenance labels.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    labels: Option<Vec<PointLabel>>,
    pub id: String,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Self {
            points,
            labels: None,
            id: String::new(),
        })
    }

    pub fn with_labels(points: Vec<Vector3<f64>>, labels: Vec<PointLabel>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::LabelMismatch {
                labels: labels.len(),
                points: points.len(),
            });
        }
        let mut cloud = Self::new(points)?;
        cloud.labels = Some(labels);
        Ok(cloud)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[PointLabel]> {
        self.labels.as_deref()
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for p in &self.points {
            c += p;
        }
        c / self.points.len() as f64
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }
}

/// The similarity transform produced by [`normalize_cloud`]: subtract the
/// centroid, then scale by the reciprocal bounding-box diagonal.
#[derive(Debug, Clone, Copy)]
pub struct RigidNormalization {
    pub centroid: Vector3<f64>,
    pub scale: f64,
}

impl RigidNormalization {
    pub fn identity() -> Self {
        Self {
            centroid: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn to_normalized_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (x - self.centroid) * self.scale
    }

    pub fn to_original_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        x / self.scale + self.centroid
    }

    /// Maps a plane stated in original coordinates into normalized ones.
    /// The normal is unchanged; the offset becomes (ω − v·c)·s.
    pub fn to_normalized_plane(&self, plane: &SymmetryPlane) -> SymmetryPlane {
        let v = plane.normal();
        let w = (plane.offset() - v.dot(&self.centroid)) * self.scale;
        SymmetryPlane::from_unit(v, w)
    }

    pub fn to_original_plane(&self, plane: &SymmetryPlane) -> SymmetryPlane {
        let v = plane.normal();
        let w = plane.offset() / self.scale + v.dot(&self.centroid);
        SymmetryPlane::from_unit(v, w)
    }
}

/// Centers a cloud on its centroid and scales its bounding-box diagonal to 1.
/// Returns the transform so downstream planes can be mapped back.
pub fn normalize_cloud(p: &PointCloud) -> Result<(PointCloud, RigidNormalization)> {
    let diag = p.bbox_diagonal();
    if diag <= 0.0 {
        return Err(Error::DegenerateCloud(
            "all points coincide; bounding box has zero diagonal".into(),
        ));
    }
    let norm = RigidNormalization {
        centroid: p.centroid(),
        scale: 1.0 / diag,
    };
    let points = p
        .points()
        .iter()
        .map(|x| norm.to_normalized_point(x))
        .collect();
    let mut out = match p.labels() {
        Some(labels) => PointCloud::with_labels(points, labels.to_vec())?,
        None => PointCloud::new(points)?,
    };
    out.id = p.id.clone();
    Ok((out, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyCloud)));
        let bad = vec![Vector3::new(0.0, f64::NAN, 0.0)];
        assert!(matches!(PointCloud::new(bad), Err(Error::NonFinite(0))));
    }

    #[test]
    fn rejects_label_mismatch() {
        let pts = vec![Vector3::zeros(), Vector3::x()];
        let r = PointCloud::with_labels(pts, vec![PointLabel::Surface]);
        assert!(matches!(r, Err(Error::LabelMismatch { .. })));
    }

    #[test]
    fn normalize_scales_diagonal_to_one() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(6.0, 8.0, 0.0)];
        let cloud = PointCloud::new(pts).unwrap();
        assert_relative_eq!(cloud.bbox_diagonal(), 10.0);
        let (norm, _) = normalize_cloud(&cloud).unwrap();
        assert_relative_eq!(norm.bbox_diagonal(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(norm.centroid().norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_of_normalized_is_identity() {
        let cloud = random_cloud(40, 1);
        let (normed, _) = normalize_cloud(&cloud).unwrap();
        let (again, t) = normalize_cloud(&normed).unwrap();
        assert_relative_eq!(t.scale, 1.0, epsilon = 1e-12);
        assert_relative_eq!(t.centroid.norm(), 0.0, epsilon = 1e-12);
        for (a, b) in normed.points().iter().zip(again.points()) {
            assert_relative_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let pts = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        let cloud = PointCloud::new(pts).unwrap();
        assert!(matches!(
            normalize_cloud(&cloud),
            Err(Error::DegenerateCloud(_))
        ));
    }

    #[test]
    fn point_round_trip() {
        let cloud = random_cloud(30, 2);
        let (_, t) = normalize_cloud(&cloud).unwrap();
        for p in cloud.points() {
            let back = t.to_original_point(&t.to_normalized_point(p));
            assert_relative_eq!((back - p).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn plane_round_trip() {
        let cloud = random_cloud(30, 3);
        let (_, t) = normalize_cloud(&cloud).unwrap();
        let plane = SymmetryPlane::new(Vector3::new(0.3, -0.8, 0.52), 1.7).unwrap();
        let back = t.to_original_plane(&t.to_normalized_plane(&plane));
        assert_relative_eq!(
            (back.normal() - plane.normal()).norm(),
            0.0,
            epsilon = 1e-10
        );
        assert_relative_eq!(back.offset(), plane.offset(), epsilon = 1e-10);
    }

    #[test]
    fn normalized_plane_keeps_incidence() {
        // A point on the plane stays on the mapped plane.
        let cloud = random_cloud(30, 4);
        let (_, t) = normalize_cloud(&cloud).unwrap();
        let plane = SymmetryPlane::new(Vector3::new(1.0, 2.0, -1.0), 0.4).unwrap();
        let v = plane.normal();
        let x = v * plane.offset(); // closest point to origin, lies on the plane
        let np = t.to_normalized_plane(&plane);
        let nx = t.to_normalized_point(&x);
        assert_relative_eq!(np.normal().dot(&nx) - np.offset(), 0.0, epsilon = 1e-12);
    }
}
