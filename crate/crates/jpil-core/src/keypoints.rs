//! Keypoint extraction with eigen-feature tests and curvature non-max
//! suppression, plus the globally shared ENU local reference frame.
//!
//! Because both clouds are ENU-aligned, every keypoint carries the same
//! LRF triad (East, North, East x North). Using a fixed global frame instead
//! of per-point eigenvectors removes the 180-degree eigenvector ambiguity at
//! the price of making descriptors orientation specific, which is what allows
//! orientation priors to constrain matching.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::Point3;

/// Eigen decomposition features of a point neighborhood.
///
/// Covariances are taken about the *center point*, not the centroid, so the
/// features capture how the neighborhood spreads around the query point.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EigenFeatures {
    /// Eigenvalues of the 3D covariance, descending (m²).
    pub lambda3d: [f64; 3],
    /// Matching unit eigenvectors.
    pub evecs3d: [Vector3<f64>; 3],
    /// Eigenvalues of the planar (x, y) covariance, descending (m²).
    pub lambda2d: [f64; 2],
    /// Matching unit eigenvectors.
    pub evecs2d: [Vector2<f64>; 2],
    /// lambda3 / (lambda1 + lambda2 + lambda3), in [0, 1/3].
    pub curvature: f64,
}

impl EigenFeatures {
    /// Ratio of planar eigenvalues used by the keypoint test. Defined as 1
    /// (always failing the test) when the planar spread is degenerate.
    pub fn planar_ratio(&self) -> f64 {
        if self.lambda2d[0] > 1e-18 {
            (self.lambda2d[1] / self.lambda2d[0]).max(0.0)
        } else {
            1.0
        }
    }
}

/// A keypoint with its ENU local reference frame and neighborhood features.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OrientedKeypoint {
    pub position: Point3,
    /// LRF axes as matrix columns:x = East, y = North, z = East x North (Up).
    pub lrf: Matrix3<f64>,
    pub features: EigenFeatures,
    /// Index of the point in the cloud it was detected on.
    pub index: usize,
}

/// The ENU LRF shared by every keypoint: identity in world coordinates.
pub fn enu_lrf() -> Matrix3<f64> {
    Matrix3::identity()
}

/// Covariance eigen features of `neighborhood` about `center`.
///
/// The neighborhood is expected to contain the center point itself (its term
/// contributes zero); at least 5 points (center plus 4 neighbors) are
/// required for a full-rank decomposition.
pub fn eigen_features(neighborhood: &PointCloud, center: &Point3) -> Result<EigenFeatures> {
    eigen_features_of(&neighborhood.points, center)
}

fn eigen_features_of(points: &[Point3], center: &Point3) -> Result<EigenFeatures> {
    if points.len() < 5 {
        return Err(Error::TooFewPoints { got: points.len(), need: 5 });
    }
    let inv_n = 1.0 / points.len() as f64;
    let mut m3 = Matrix3::<f64>::zeros();
    let mut m2 = Matrix2::<f64>::zeros();
    for p in points {
        let d = p.sub(center);
        m3 += d * d.transpose() * inv_n;
        let d2 = Vector2::new(d.x, d.y);
        m2 += d2 * d2.transpose() * inv_n;
    }

    let e3 = nalgebra::SymmetricEigen::new(m3);
    let mut order3 = [0usize, 1, 2];
    order3.sort_by(|&a, &b| e3.eigenvalues[b].total_cmp(&e3.eigenvalues[a]));
    let lambda3d = [
        e3.eigenvalues[order3[0]],
        e3.eigenvalues[order3[1]],
        e3.eigenvalues[order3[2]],
    ];
    let evecs3d = [
        e3.eigenvectors.column(order3[0]).into_owned(),
        e3.eigenvectors.column(order3[1]).into_owned(),
        e3.eigenvectors.column(order3[2]).into_owned(),
    ];

    let e2 = nalgebra::SymmetricEigen::new(m2);
    let order2 = if e2.eigenvalues[0] >= e2.eigenvalues[1] { [0, 1] } else { [1, 0] };
    let lambda2d = [e2.eigenvalues[order2[0]], e2.eigenvalues[order2[1]]];
    let evecs2d = [
        e2.eigenvectors.column(order2[0]).into_owned(),
        e2.eigenvectors.column(order2[1]).into_owned(),
    ];

    let trace = lambda3d[0] + lambda3d[1] + lambda3d[2];
    let curvature = if trace > 1e-18 {
        (lambda3d[2].max(0.0) / trace).clamp(0.0, 1.0 / 3.0)
    } else {
        0.0
    };

    Ok(EigenFeatures { lambda3d, evecs3d, lambda2d, evecs2d, curvature })
}

/// Uniform-grid index over a point set for exact fixed-radius queries.
///
/// Results are identical to a brute-force radius scan (inclusive on the
/// boundary) and returned in ascending index order.
pub struct SpatialGrid<'a> {
    points: &'a [Point3],
    cell: f64,
    map: std::collections::HashMap<(i64, i64, i64), Vec<u32>>,
}

impl<'a> SpatialGrid<'a> {
    pub fn build(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        let mut map: std::collections::HashMap<(i64, i64, i64), Vec<u32>> =
            std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        SpatialGrid { points, cell, map }
    }

    fn key(p: &Point3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Indices of all points with `|p - center| <= radius`, ascending.
    pub fn neighbors_within(&self, center: &Point3, radius: f64) -> Vec<u32> {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = Self::key(center, self.cell);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.map.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            if self.points[i as usize].sub(center).norm_squared() <= r2 {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Detect keypoints: points whose planar eigenvalue ratio is below `k_ratio`
/// and whose curvature is a strict maximum over their `r_scale` neighborhood
/// (ties broken toward the lowest point index).
///
/// `min_curvature` is a noise floor: flat sampled surfaces have small
/// positive curvature whose maxima land at arbitrary sample positions, so
/// maxima below the floor are rejected as unrepeatable. Pass 0 to apply the
/// two keypoint criteria alone (a perfectly flat neighborhood is still never
/// a keypoint).
pub fn detect_keypoints(
    cloud: &PointCloud,
    r_scale: f64,
    k_ratio: f64,
    min_curvature: f64,
) -> Result<Vec<OrientedKeypoint>> {
    if !(r_scale > 0.0) {
        return Err(Error::Validation(format!("r_scale must be positive, got {r_scale}")));
    }
    if !(k_ratio > 0.0 && k_ratio < 1.0) {
        return Err(Error::Validation(format!("k_ratio must be in (0, 1), got {k_ratio}")));
    }
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let points = &cloud.points;
    let grid = SpatialGrid::build(points, r_scale);

    // Neighborhoods (inclusive of the point itself) and per-point features.
    let neighborhoods: Vec<Vec<u32>> = (0..points.len())
        .into_par_iter()
        .map(|i| grid.neighbors_within(&points[i], r_scale))
        .collect();
    let features: Vec<Option<EigenFeatures>> = neighborhoods
        .par_iter()
        .enumerate()
        .map(|(i, ns)| {
            if ns.len() < 5 {
                return None; // fewer than 4 neighbors: rank deficient
            }
            let pts: Vec<Point3> = ns.iter().map(|&j| points[j as usize]).collect();
            eigen_features_of(&pts, &points[i]).ok()
        })
        .collect();

    let mut keypoints = Vec::new();
    for i in 0..points.len() {
        let Some(feat) = &features[i] else { continue };
        if feat.planar_ratio() >= k_ratio {
            continue;
        }
        let c = feat.curvature;
        if c <= 0.0 || c < min_curvature {
            continue; // featureless: flat up to sampling noise
        }
        let is_max = neighborhoods[i].iter().all(|&j| {
            let j = j as usize;
            if j == i {
                return true;
            }
            match &features[j] {
                Some(fj) => c > fj.curvature || (c == fj.curvature && i < j),
                None => true, // neighbor has no defined curvature
            }
        });
        if is_max {
            keypoints.push(OrientedKeypoint {
                position: points[i],
                lrf: enu_lrf(),
                features: feat.clone(),
                index: i,
            });
        }
    }
    Ok(keypoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planar_grid(n: usize, step: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * step, j as f64 * step, 0.0));
            }
        }
        PointCloud::new(pts)
    }

    /// Direct summation oracle for the covariance features.
    fn brute_features(points: &[Point3], center: &Point3) -> (Matrix3<f64>, Matrix2<f64>) {
        let n = points.len() as f64;
        let mut m3 = Matrix3::zeros();
        let mut m2 = Matrix2::zeros();
        for p in points {
            let d = p.sub(center);
            m3 += d * d.transpose();
            let d2 = Vector2::new(d.x, d.y);
            m2 += d2 * d2.transpose();
        }
        (m3 / n, m2 / n)
    }

    #[test]
    fn planar_neighborhood_zero_curvature() {
        let cloud = planar_grid(5, 0.1);
        let center = cloud.points[12];
        let f = eigen_features(&cloud, &center).unwrap();
        assert!(f.lambda3d[2].abs() < 1e-15);
        assert_eq!(f.curvature, 0.0);
    }

    #[test]
    fn matches_direct_summation_on_sphere_octant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let center = Point3::new(0.3, -0.2, 0.9);
        let mut pts = vec![center];
        for _ in 0..200 {
            // Octant of a sphere around the center.
            let u: f64 = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
            let v: f64 = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
            pts.push(Point3::new(
                center.x + 0.5 * v.sin() * u.cos(),
                center.y + 0.5 * v.sin() * u.sin(),
                center.z + 0.5 * v.cos(),
            ));
        }
        let cloud = PointCloud::new(pts.clone());
        let f = eigen_features(&cloud, &center).unwrap();
        let (m3, m2) = brute_features(&pts, &center);
        // Eigenvalue sums equal matrix traces.
        assert_relative_eq!(
            f.lambda3d.iter().sum::<f64>(),
            m3.trace(),
            epsilon = 1e-12
        );
        assert_relative_eq!(f.lambda2d.iter().sum::<f64>(), m2.trace(), epsilon = 1e-12);
        // Eigenvectors diagonalize the brute-force matrix.
        for k in 0..3 {
            let residual = (m3 * f.evecs3d[k] - f.lambda3d[k] * f.evecs3d[k]).norm();
            assert!(residual < 1e-12, "eigenvector {k} residual {residual}");
        }
        assert!(f.curvature >= 0.0 && f.curvature <= 1.0 / 3.0);
    }

    #[test]
    fn isotropic_sample_ratio_tends_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let center = Point3::ORIGIN;
        let mut pts = vec![center];
        for _ in 0..20_000 {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.gen_range(0.0f64..1.0).sqrt();
            pts.push(Point3::new(r * a.cos(), r * a.sin(), rng.gen_range(-0.01..0.01)));
        }
        let f = eigen_features(&PointCloud::new(pts), &center).unwrap();
        assert!(f.planar_ratio() > 0.95, "ratio {}", f.planar_ratio());
    }

    #[test]
    fn too_few_points_errors() {
        let cloud = PointCloud::new(vec![Point3::ORIGIN; 4]);
        assert!(matches!(
            eigen_features(&cloud, &Point3::ORIGIN),
            Err(Error::TooFewPoints { got: 4, need: 5 })
        ));
    }

    #[test]
    fn flat_plane_has_no_keypoints() {
        let cloud = planar_grid(20, 0.1);
        let kps = detect_keypoints(&cloud, 0.4, 0.8, 0.0).unwrap();
        assert!(kps.is_empty(), "got {} keypoints on a plane", kps.len());
    }

    #[test]
    fn empty_cloud_is_empty_result() {
        let kps = detect_keypoints(&PointCloud::default(), 0.4, 0.8, 0.0).unwrap();
        assert!(kps.is_empty());
    }

    #[test]
    fn keypoints_invariant_under_translation() {
        let cloud = spike_scene();
        let kps = detect_keypoints(&cloud, 0.4, 0.8, 0.0).unwrap();
        let shift = nalgebra::Vector3::new(103.0, -47.0, 12.0);
        let moved = PointCloud::new(cloud.points.iter().map(|p| p.add(&shift)).collect());
        let kps2 = detect_keypoints(&moved, 0.4, 0.8, 0.0).unwrap();
        let idx: Vec<usize> = kps.iter().map(|k| k.index).collect();
        let idx2: Vec<usize> = kps2.iter().map(|k| k.index).collect();
        assert_eq!(idx, idx2);
    }

    #[test]
    fn lrf_is_global_enu_triad() {
        let kps = detect_keypoints(&spike_scene(), 0.4, 0.8, 0.0).unwrap();
        assert!(!kps.is_empty());
        for kp in &kps {
            assert_eq!(kp.lrf, Matrix3::identity());
        }
    }

    /// Ground plane with one elongated conical spike. The apex sits high
    /// enough that its neighborhood sees only the cone surface: a strongly
    /// anisotropic footprint with full 3D spread.
    pub(crate) fn spike_scene() -> PointCloud {
        let mut pts = Vec::new();
        let step = 0.09;
        for i in -10..=10 {
            for j in -10..=10 {
                pts.push(Point3::new(i as f64 * step, j as f64 * step + 0.004, 0.0));
            }
        }
        // Elliptical cone: apex 1.0 m up, base semi-axes 0.45 x 0.12. Tall
        // enough that the apex neighborhood sees cone surface only.
        let (cx, cy) = (0.0031, 0.0017);
        pts.push(Point3::new(cx, cy, 1.0));
        let rings = 20;
        for r in 1..=rings {
            let f = r as f64 / rings as f64;
            let z = 1.0 * (1.0 - f);
            let n_theta = 3 + 2 * r;
            for k in 0..n_theta {
                let th = std::f64::consts::TAU * (k as f64 + 0.13 * r as f64) / n_theta as f64;
                pts.push(Point3::new(cx + 0.45 * f * th.cos(), cy + 0.12 * f * th.sin(), z));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn spike_detected_and_matches_brute_force() {
        let cloud = spike_scene();
        let r = 0.4;
        let k = 0.8;
        let kps = detect_keypoints(&cloud, r, k, 0.0).unwrap();

        // Exhaustive per-point evaluation of both criteria.
        let pts = &cloud.points;
        let mut brute = Vec::new();
        let mut feats: Vec<Option<EigenFeatures>> = Vec::new();
        let mut hoods: Vec<Vec<usize>> = Vec::new();
        for i in 0..pts.len() {
            let hood: Vec<usize> = (0..pts.len())
                .filter(|&j| pts[j].sub(&pts[i]).norm_squared() <= r * r)
                .collect();
            let f = if hood.len() >= 5 {
                let hp: Vec<Point3> = hood.iter().map(|&j| pts[j]).collect();
                eigen_features_of(&hp, &pts[i]).ok()
            } else {
                None
            };
            hoods.push(hood);
            feats.push(f);
        }
        for i in 0..pts.len() {
            let Some(f) = &feats[i] else { continue };
            if f.planar_ratio() >= k || f.curvature <= 0.0 {
                continue;
            }
            let ok = hoods[i].iter().all(|&j| {
                j == i
                    || match &feats[j] {
                        Some(fj) => {
                            f.curvature > fj.curvature
                                || (f.curvature == fj.curvature && i < j)
                        }
                        None => true,
                    }
            });
            if ok {
                brute.push(i);
            }
        }
        let got: Vec<usize> = kps.iter().map(|k| k.index).collect();
        assert_eq!(got, brute, "detector disagrees with brute force");
        assert!(!kps.is_empty(), "the spike should be detected");

        // Covariance curvature peaks where surfaces mix, so a thin spike is
        // detected at its base junction: every keypoint lies on the spike
        // footprint, none out on the bare plane.
        for kp in &kps {
            let r = kp.position.x.hypot(kp.position.y);
            assert!(r < 0.55, "keypoint off the spike at {:?}", kp.position);
        }
    }

    #[test]
    fn grid_neighbors_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<Point3> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let grid = SpatialGrid::build(&pts, 0.4);
        for _ in 0..50 {
            let c = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            for radius in [0.15, 0.4, 1.1] {
                let got = grid.neighbors_within(&c, radius);
                let brute: Vec<u32> = (0..pts.len() as u32)
                    .filter(|&i| pts[i as usize].sub(&c).norm_squared() <= radius * radius)
                    .collect();
                assert_eq!(got, brute);
            }
        }
    }
}
