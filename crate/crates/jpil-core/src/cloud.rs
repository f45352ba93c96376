//! Point clouds, mesh sampling and box clipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{BoundingBox, Point3, RigidTransform};
use crate::mesh::TriangleMesh;

/// An ordered collection of 3D points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        BoundingBox::from_points(self.points.iter())
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| t.apply(p)).collect() }
    }
}

/// Area-weighted uniform random sampling of a mesh surface.
///
/// Each sample picks a triangle with probability proportional to its area,
/// then a uniform barycentric point on it. The number of samples is
/// `round(density * surface_area)`, so the expected spatial density is
/// `density` points per square meter. Deterministic for a fixed seed.
pub fn sample_mesh(mesh: &TriangleMesh, density: f64, seed: u64) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !(density > 0.0) {
        return Err(Error::Validation(format!("sample density must be positive, got {density}")));
    }
    let n_tris = mesh.triangles().len();
    let mut cumulative = Vec::with_capacity(n_tris);
    let mut total = 0.0;
    for i in 0..n_tris {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    let count = (density * total).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.gen::<f64>() * total;
        let ti = cumulative.partition_point(|&c| c <= r).min(n_tris - 1);
        let [a, b, c] = mesh.triangle_points(ti);
        let mut u: f64 = rng.gen();
        let mut v: f64 = rng.gen();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = a.coords() + u * b.sub(&a) + v * c.sub(&a);
        points.push(Point3::from_coords(p));
    }
    Ok(PointCloud { points })
}

/// Keep exactly the points inside `b` (inclusive on all faces), preserving
/// input order.
pub fn clip_box(cloud: &PointCloud, b: &BoundingBox) -> PointCloud {
    PointCloud { points: cloud.points.iter().filter(|p| b.contains(p)).copied().collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::box_mesh;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn unit_quad() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn sample_count_matches_density() {
        let cloud = sample_mesh(&unit_quad(), 100.0, 1).unwrap();
        let n = cloud.len() as i64;
        assert!((n - 100).abs() <= 30, "count {n} outside Poisson bound");
        for p in &cloud.points {
            assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
            assert_eq!(p.z, 0.0);
        }
    }

    #[test]
    fn sample_deterministic() {
        let a = sample_mesh(&unit_quad(), 250.0, 7).unwrap();
        let b = sample_mesh(&unit_quad(), 250.0, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_mesh(&unit_quad(), 250.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_empty_mesh_errors() {
        let empty = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(sample_mesh(&empty, 100.0, 0).is_err());
    }

    #[test]
    fn sample_cube_faces_uniform() {
        // Chi-square uniformity over the 6 faces of a unit cube at density 100.
        let cube = box_mesh(Point3::ORIGIN, Vector3::new(1.0, 1.0, 1.0));
        let cloud = sample_mesh(&cube, 100.0, 3).unwrap();
        let mut counts = [0usize; 6];
        for p in &cloud.points {
            // Classify by which coordinate sits on a face plane.
            let face = if (p.x - 0.5).abs() < 1e-9 {
                0
            } else if (p.x + 0.5).abs() < 1e-9 {
                1
            } else if (p.y - 0.5).abs() < 1e-9 {
                2
            } else if (p.y + 0.5).abs() < 1e-9 {
                3
            } else if (p.z - 0.5).abs() < 1e-9 {
                4
            } else {
                assert!((p.z + 0.5).abs() < 1e-9);
                5
            };
            counts[face] += 1;
        }
        let total: usize = counts.iter().sum();
        assert_eq!(total, 600);
        let expected = total as f64 / 6.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Critical value for chi-square with 5 dof at p = 0.01.
        assert!(chi2 < 15.086, "chi2 {chi2} too high: {counts:?}");
        for &c in &counts {
            assert!((c as i64 - 100).abs() < 40, "face count {c} far from 100");
        }
    }

    #[test]
    fn clip_noop_when_inside() {
        let cloud = sample_mesh(&unit_quad(), 50.0, 2).unwrap();
        let b = BoundingBox::new(Point3::new(-1.0, -1.0, -1.0), Point3::new(2.0, 2.0, 2.0)).unwrap();
        assert_eq!(clip_box(&cloud, &b), cloud);
    }

    #[test]
    fn clip_disjoint_is_empty() {
        let cloud = sample_mesh(&unit_quad(), 50.0, 2).unwrap();
        let b = BoundingBox::new(Point3::new(5.0, 5.0, 5.0), Point3::new(6.0, 6.0, 6.0)).unwrap();
        assert!(clip_box(&cloud, &b).is_empty());
    }

    proptest! {
        #[test]
        fn clip_matches_brute_force_predicate(
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), 0..200),
            lo in (-1.5f64..0.5, -1.5f64..0.5, -1.5f64..0.5),
            size in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0),
        ) {
            let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
            let min = Point3::new(lo.0, lo.1, lo.2);
            let max = Point3::new(lo.0 + size.0, lo.1 + size.1, lo.2 + size.2);
            let b = BoundingBox::new(min, max).unwrap();
            let clipped = clip_box(&cloud, &b);
            let brute: Vec<Point3> = cloud.points.iter()
                .filter(|p| {
                    p.x >= min.x && p.x <= max.x
                        && p.y >= min.y && p.y <= max.y
                        && p.z >= min.z && p.z <= max.z
                })
                .copied()
                .collect();
            prop_assert_eq!(clipped.points, brute);
        }
    }
}
