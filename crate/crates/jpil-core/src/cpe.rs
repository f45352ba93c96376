//! Camera pose estimation from 3D-2D correspondences on the projection
//! sphere, with a box constraint keeping the orientation near the sensor
//! prior.
//!
//! The cost is `C = 1/2 * sum_k |s_k(q, x) - ray_k|^2` where `s_k` is the
//! unit-sphere projection of `p_k - x` rotated into the camera frame and
//! `ray_k` the camera-frame unit ray of the real-image pixel. Orientation is
//! parameterized as a bounded deviation from the prior
//! (`delta = eps_q * sin(u)`), which keeps the box constraint exact while
//! the solver stays an unconstrained damped least squares.

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatcher;
use crate::geom::{OrientationENU, Point3};
use crate::spherical::{SphericalImage, SphericalRender};

/// A 3D point (from the synthetic backtrack buffer) paired with the real
/// image pixel that observed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence3d2d {
    /// 3D point in the reference frame.
    pub point: Point3,
    /// Observing pixel in the real image (continuous coordinates).
    pub pixel: (f64, f64),
    /// Backtrack spread at the synthetic pixel, meters.
    pub sigma: f64,
    /// Camera-frame unit ray of `pixel` (derived from the image size).
    pub ray: Vector3<f64>,
}

impl Correspondence3d2d {
    pub fn new(point: Point3, pixel: (f64, f64), sigma: f64, width: u32, height: u32) -> Self {
        let theta = std::f64::consts::TAU * pixel.0 / width as f64 - std::f64::consts::PI;
        let phi = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * pixel.1 / height as f64;
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Correspondence3d2d { point, pixel, sigma, ray: Vector3::new(cp * st, cp * ct, sp) }
    }
}

/// The pose recovered by [`solve_snp`] / [`ransac_snp`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub orientation: OrientationENU,
    pub position: Point3,
    /// Correspondences supporting the estimate.
    pub inliers: usize,
    /// Final cost value at the estimate.
    pub residual: f64,
}

/// Build 3D-2D correspondences: 2D-2D feature matches whose synthetic pixel
/// has a valid backtrack point with spread within `eps_sigma`. Matches at
/// miss pixels or above the spread threshold are rejected; the surviving
/// correspondences carry the 3D point and the *real-image* pixel.
pub fn build_correspondences(
    real: &SphericalImage,
    synth: &SphericalRender,
    eps_sigma: f64,
    matcher: &dyn FeatureMatcher,
) -> Result<Vec<Correspondence3d2d>> {
    let (w, h) = (synth.camera.width, synth.camera.height);
    if real.width() != w || real.height() != h {
        return Err(Error::Validation(format!(
            "image sizes differ: real {}x{}, synthetic {w}x{h}",
            real.width(),
            real.height()
        )));
    }
    let matches = matcher.match_images(real, &synth.image);
    let mut out = Vec::new();
    for m in matches {
        let ix = (m.synth.0.floor() as i64).clamp(0, w as i64 - 1) as u32;
        let iy = (m.synth.1.floor() as i64).clamp(0, h as i64 - 1) as u32;
        let Some(point) = synth.backtrack_at(ix, iy) else { continue };
        let sigma = synth.sigma_at(ix, iy);
        if sigma > eps_sigma {
            continue; // depth discontinuity: 3D point too uncertain
        }
        out.push(Correspondence3d2d::new(point, m.real, sigma, w, h));
    }
    Ok(out)
}

/// Rotation derivative generators evaluated at the current angles.
struct RotationParts {
    /// R(q)^T, camera <- world.
    rt: Matrix3<f64>,
    /// d(R^T v)/d(angle_rad) prefactor matrices for roll, pitch, yaw.
    d_roll: Matrix3<f64>,
    d_pitch: Matrix3<f64>,
    d_yaw: Matrix3<f64>,
}

fn rotation_parts(q: &OrientationENU) -> RotationParts {
    let roll = q.roll.to_radians();
    let pitch = q.pitch.to_radians();
    let yaw = q.yaw.to_radians();
    let ry = Matrix3::new(
        roll.cos(), 0.0, roll.sin(),
        0.0, 1.0, 0.0,
        -roll.sin(), 0.0, roll.cos(),
    );
    let rx = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, pitch.cos(), -pitch.sin(),
        0.0, pitch.sin(), pitch.cos(),
    );
    let rz_neg = Matrix3::new(
        (-yaw).cos(), -(-yaw).sin(), 0.0,
        (-yaw).sin(), (-yaw).cos(), 0.0,
        0.0, 0.0, 1.0,
    );
    let d_ry = Matrix3::new(
        -roll.sin(), 0.0, roll.cos(),
        0.0, 0.0, 0.0,
        -roll.cos(), 0.0, -roll.sin(),
    );
    let d_rx = Matrix3::new(
        0.0, 0.0, 0.0,
        0.0, -pitch.sin(), -pitch.cos(),
        0.0, pitch.cos(), -pitch.sin(),
    );
    // R^T = Ry^T Rx^T Rz(-yaw)^T; Rz(-yaw)^T = Rz(yaw).
    let rz_yaw = rz_neg.transpose();
    let d_rz_yaw = Matrix3::new(
        -yaw.sin(), -yaw.cos(), 0.0,
        yaw.cos(), -yaw.sin(), 0.0,
        0.0, 0.0, 0.0,
    );
    let rt = ry.transpose() * rx.transpose() * rz_yaw;
    RotationParts {
        rt,
        d_roll: d_ry.transpose() * rx.transpose() * rz_yaw,
        d_pitch: ry.transpose() * d_rx.transpose() * rz_yaw,
        d_yaw: ry.transpose() * rx.transpose() * d_rz_yaw,
    }
}

/// Residual of one correspondence and its Jacobian with respect to
/// (roll, pitch, yaw in degrees, x, y, z in meters).
pub fn residual_jacobian(
    corr: &Correspondence3d2d,
    q: &OrientationENU,
    x: &Point3,
) -> (Vector3<f64>, [Vector3<f64>; 6]) {
    let parts = rotation_parts(q);
    let v = corr.point.sub(x);
    let w = parts.rt * v;
    let norm = w.norm().max(1e-12);
    let s = w / norm;
    let residual = s - corr.ray;

    // ds/dw = (I - s s^T) / |w|
    let proj = (Matrix3::identity() - s * s.transpose()) / norm;
    let deg = std::f64::consts::PI / 180.0;
    let d_roll = proj * (parts.d_roll * v) * deg;
    let d_pitch = proj * (parts.d_pitch * v) * deg;
    let d_yaw = proj * (parts.d_yaw * v) * deg;
    let dx = -(proj * parts.rt.column(0));
    let dy = -(proj * parts.rt.column(1));
    let dz = -(proj * parts.rt.column(2));
    (residual, [d_roll, d_pitch, d_yaw, dx, dy, dz])
}

fn cost_at(corrs: &[Correspondence3d2d], q: &OrientationENU, x: &Point3) -> f64 {
    let parts = rotation_parts(q);
    let mut c = 0.0;
    for corr in corrs {
        let w = parts.rt * corr.point.sub(x);
        let s = w / w.norm().max(1e-12);
        c += (s - corr.ray).norm_squared();
    }
    0.5 * c
}

/// Angular residual (radians) between the projected point and the pixel ray.
pub fn angular_residual(corr: &Correspondence3d2d, q: &OrientationENU, x: &Point3) -> f64 {
    let w = q.rotation().transpose() * corr.point.sub(x);
    let s = w / w.norm().max(1e-12);
    s.cross(&corr.ray).norm().atan2(s.dot(&corr.ray))
}

fn check_not_collinear(corrs: &[Correspondence3d2d]) -> Result<()> {
    let n = corrs.len() as f64;
    let mean = corrs.iter().fold(Vector3::zeros(), |a, c| a + c.point.coords()) / n;
    let mut cov = Matrix3::zeros();
    for c in corrs {
        let d = c.point.coords() - mean;
        cov += d * d.transpose();
    }
    let mut eig: Vec<f64> = nalgebra::SymmetricEigen::new(cov / n).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    if eig[1] <= 1e-10 * eig[2].max(1e-30) {
        return Err(Error::DegenerateGeometry("correspondence points are collinear".into()));
    }
    Ok(())
}

/// Orientation parameters: the bounded deviation in degrees for `u`.
fn delta_of(u: &Vector6<f64>, eps_q: f64) -> [f64; 3] {
    [eps_q * u[0].sin(), eps_q * u[1].sin(), eps_q * u[2].sin()]
}

fn pose_of(u: &Vector6<f64>, q_prior: &OrientationENU, eps_q: f64, x_init: &Point3) -> (OrientationENU, Point3) {
    let d = delta_of(u, eps_q);
    let q = OrientationENU::new(q_prior.roll + d[0], q_prior.pitch + d[1], q_prior.yaw + d[2]);
    let x = Point3::new(x_init.x + u[3], x_init.y + u[4], x_init.z + u[5]);
    (q, x)
}

/// Minimize the spherical reprojection cost over orientation and position,
/// starting from `(q_prior, x_init)`, with each orientation angle confined
/// to `q_prior ± eps_q` degrees. Damped least squares with accept-on-descent
/// steps, so the returned cost never exceeds the cost at the start point.
pub fn solve_snp(
    corrs: &[Correspondence3d2d],
    q_prior: &OrientationENU,
    eps_q: f64,
    x_init: &Point3,
) -> Result<PoseEstimate> {
    if corrs.len() < 3 {
        return Err(Error::NoEstimate(format!("{} correspondences, need at least 3", corrs.len())));
    }
    check_not_collinear(corrs)?;

    let mut u = Vector6::zeros();
    let (mut q, mut x) = pose_of(&u, q_prior, eps_q, x_init);
    let mut cost = cost_at(corrs, &q, &x);
    if !cost.is_finite() {
        return Err(Error::NoEstimate("non-finite initial cost".into()));
    }
    let mut lambda = 1e-3;
    for _ in 0..100 {
        // Accumulate normal equations in the u parameterization.
        let mut jtj = nalgebra::Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        let chain = [
            eps_q * u[0].cos(),
            eps_q * u[1].cos(),
            eps_q * u[2].cos(),
            1.0,
            1.0,
            1.0,
        ];
        for corr in corrs {
            let (r, cols) = residual_jacobian(corr, &q, &x);
            let cols: Vec<Vector3<f64>> =
                cols.iter().zip(chain).map(|(c, ch)| c * ch).collect();
            for a in 0..6 {
                jtr[a] += cols[a].dot(&r);
                for b in a..6 {
                    let v = cols[a].dot(&cols[b]);
                    jtj[(a, b)] += v;
                    if a != b {
                        jtj[(b, a)] += v;
                    }
                }
            }
        }

        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = jtj;
            for k in 0..6 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = nalgebra::Cholesky::new(damped) else {
                lambda *= 4.0;
                continue;
            };
            let step = chol.solve(&(-jtr));
            let trial_u = u + step;
            let (tq, tx) = pose_of(&trial_u, q_prior, eps_q, x_init);
            let trial_cost = cost_at(corrs, &tq, &tx);
            if trial_cost.is_finite() && trial_cost < cost {
                u = trial_u;
                q = tq;
                x = tx;
                let drop = cost - trial_cost;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if step.amax() < 1e-13 || drop < 1e-18 * cost.max(1e-30) {
                    return Ok(finish(corrs, q, x, cost));
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            break; // converged: no descent direction left
        }
    }
    if !cost.is_finite() {
        return Err(Error::NoEstimate("diverged to non-finite cost".into()));
    }
    Ok(finish(corrs, q, x, cost))
}

fn finish(corrs: &[Correspondence3d2d], q: OrientationENU, x: Point3, cost: f64) -> PoseEstimate {
    PoseEstimate { orientation: q, position: x, inliers: corrs.len(), residual: cost }
}

/// RANSAC wrapper around [`solve_snp`]: repeated 3-sample hypotheses, inliers
/// counted by angular residual, final solve on the best inlier set.
/// Deterministic for a fixed seed.
pub fn ransac_snp(
    corrs: &[Correspondence3d2d],
    q_prior: &OrientationENU,
    eps_q: f64,
    x_init: &Point3,
    iters: usize,
    inlier_thresh: f64,
    seed: u64,
) -> Result<PoseEstimate> {
    if corrs.len() < 4 {
        return Err(Error::NoEstimate(format!("{} correspondences, need at least 4", corrs.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = corrs.len();
    let mut best: Option<(usize, Vec<usize>)> = None;
    for _ in 0..iters {
        let mut idx = [0usize; 3];
        idx[0] = rng.gen_range(0..n);
        loop {
            idx[1] = rng.gen_range(0..n);
            if idx[1] != idx[0] {
                break;
            }
        }
        loop {
            idx[2] = rng.gen_range(0..n);
            if idx[2] != idx[0] && idx[2] != idx[1] {
                break;
            }
        }
        let sample: Vec<Correspondence3d2d> = idx.iter().map(|&i| corrs[i].clone()).collect();
        let Ok(hypothesis) = solve_snp(&sample, q_prior, eps_q, x_init) else { continue };
        let inliers: Vec<usize> = (0..n)
            .filter(|&i| {
                angular_residual(&corrs[i], &hypothesis.orientation, &hypothesis.position)
                    < inlier_thresh
            })
            .collect();
        if best.as_ref().map_or(true, |(count, _)| inliers.len() > *count) {
            best = Some((inliers.len(), inliers));
        }
    }
    let Some((count, inlier_idx)) = best else {
        return Err(Error::NoEstimate("no RANSAC hypothesis succeeded".into()));
    };
    if count < 4 {
        return Err(Error::NoEstimate(format!("best hypothesis has {count} inliers, need 4")));
    }
    let inlier_set: Vec<Correspondence3d2d> = inlier_idx.iter().map(|&i| corrs[i].clone()).collect();
    let mut estimate = solve_snp(&inlier_set, q_prior, eps_q, x_init)?;
    estimate.inliers = count;
    Ok(estimate)
}

/// Position disagreement between a registration candidate and the camera
/// pose estimate, meters.
pub fn c_image(x_candidate: &Point3, estimate: &PoseEstimate) -> f64 {
    x_candidate.distance(&estimate.position)
}

/// The confident-positive decision: the candidate agrees with the estimated
/// camera position within `eps_plus` (boundary inclusive).
pub fn confident_positive(dist: f64, eps_plus: f64) -> bool {
    dist <= eps_plus
}

/// Parse a correspondence file: one `px py X Y Z sigma` line per entry.
/// Blank lines and `#` comments are skipped. The image size is needed to
/// derive pixel rays.
pub fn read_correspondences(text: &str, width: u32, height: u32) -> Result<Vec<Correspondence3d2d>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::CorrespondenceParse {
                line: i + 1,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 6];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f.parse().map_err(|_| Error::CorrespondenceParse {
                line: i + 1,
                message: format!("bad number {f:?}"),
            })?;
        }
        out.push(Correspondence3d2d::new(
            Point3::new(vals[2], vals[3], vals[4]),
            (vals[0], vals[1]),
            vals[5],
            width,
            height,
        ));
    }
    Ok(out)
}

/// Serialize correspondences in the `px py X Y Z sigma` line format.
pub fn write_correspondences(corrs: &[Correspondence3d2d]) -> String {
    let mut s = String::new();
    for c in corrs {
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            c.pixel.0, c.pixel.1, c.point.x, c.point.y, c.point.z, c.sigma
        ));
    }
    s
}
