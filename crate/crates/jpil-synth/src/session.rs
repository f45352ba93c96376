//! Simulated inspection sessions: a cropped, perturbed spatial map expressed
//! in a session frame, plus the spherical image a headset at the true pose
//! would capture.

use jpil_core::geom::{BoundingBox, HeadsetState, OrientationENU, Point3, RigidTransform};
use jpil_core::mesh::{Bvh, TriangleMesh};
use jpil_core::pipeline::LocalizationRequest;
use jpil_core::spherical::render_spherical;
use jpil_core::{Error, JpilConfig, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What the simulated headset actually did, for scoring localizations.
#[derive(Debug, Clone)]
pub struct SessionTruth {
    /// Transform mapping observed session coordinates into the reference
    /// frame (orientation-sensor error folded in).
    pub a_eff: RigidTransform,
    /// True camera position in the reference frame.
    pub x_true: Point3,
    /// True camera orientation.
    pub q_true: OrientationENU,
}

/// Session generation parameters.
#[derive(Debug, Clone)]
pub struct SessionParams {
    /// Crop of the reference scene the user mapped.
    pub crop: BoundingBox,
    /// Gaussian vertex noise, meters.
    pub noise_sigma: f64,
    /// True session-to-reference transform (before sensor error).
    pub a_true: RigidTransform,
    /// Orientation sensor error (roll, pitch, yaw), degrees.
    pub orientation_err: [f64; 3],
    /// True camera position in the reference frame.
    pub x_true: Point3,
    /// True camera orientation.
    pub q_true: OrientationENU,
    /// Gaussian pixel intensity noise on the captured image (0 disables).
    pub pixel_noise: f64,
    pub seed: u64,
}

impl SessionParams {
    /// A camera standing `standoff` meters south of the crop center at
    /// mid-girder height, facing the crop.
    pub fn facing_crop(crop: BoundingBox, a_true: RigidTransform, seed: u64) -> SessionParams {
        let c = crop.center();
        let x_true = Point3::new(c.x, crop.min.y - 2.5, c.z.clamp(0.5, 1.5));
        SessionParams {
            crop,
            noise_sigma: 0.01,
            a_true,
            orientation_err: [0.0; 3],
            x_true,
            q_true: OrientationENU::identity(), // facing North = toward the crop
            pixel_noise: 0.0,
            seed,
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Crop the scene, perturb it, express it in the (error-rotated) session
/// frame and render the true camera view. Returns the request a headset
/// would upload plus the ground truth for scoring.
///
/// The orientation sensor error `E` rotates everything the headset reports:
/// the session map, its own position and its orientation estimate. The
/// effective truth transform becomes `a_true ∘ E⁻¹`.
pub fn simulate_session(
    scene_bvh: &Bvh,
    params: &SessionParams,
    cfg: &JpilConfig,
) -> Result<(LocalizationRequest, SessionTruth)> {
    let crop = scene_bvh.mesh().cropped(&params.crop);
    if crop.is_empty() {
        return Err(Error::Validation("crop box intersects no scene triangles".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let vertices: Vec<Point3> = crop
        .vertices()
        .iter()
        .map(|v| {
            Point3::new(
                v.x + params.noise_sigma * gaussian(&mut rng),
                v.y + params.noise_sigma * gaussian(&mut rng),
                v.z + params.noise_sigma * gaussian(&mut rng),
            )
        })
        .collect();
    let perturbed = TriangleMesh::new(vertices, crop.triangles().to_vec())?;

    let [er, ep, ey] = params.orientation_err;
    let err_rot = RigidTransform::new(OrientationENU::new(er, ep, ey).rotation(), Vector3::zeros())
        .expect("orientation matrices are orthonormal");
    // Observed session coordinates: p_obs = E * a_true^-1 * p_ref.
    let to_session = err_rot.compose(&params.a_true.invert());
    let a_eff = to_session.invert();
    let session_mesh = perturbed.transformed(&to_session);

    let mut render = render_spherical(
        scene_bvh,
        params.x_true,
        params.q_true,
        cfg.render_width,
        cfg.render_height,
        cfg.sigma_kernel,
    )?;
    if params.pixel_noise > 0.0 {
        let noisy: Vec<u8> = render
            .image
            .pixels()
            .iter()
            .map(|&p| {
                (p as f64 + params.pixel_noise * gaussian(&mut rng)).round().clamp(0.0, 255.0)
                    as u8
            })
            .collect();
        render.image =
            jpil_core::spherical::SphericalImage::new(cfg.render_width, cfg.render_height, noisy)?;
    }

    // The headset reports its pose in the observed (error-rotated) frame.
    let reported_pos = to_session.apply(&params.x_true);
    let reported_rot = err_rot.rotation() * params.q_true.rotation();
    let reported_q = OrientationENU::from_rotation(&reported_rot);
    let gaze_ref = params.q_true.rotation() * Vector3::new(0.0, 1.0, 0.0);
    let state = HeadsetState::new(reported_pos, reported_q, to_session.rotate(&gaze_ref))?;

    let request = LocalizationRequest::new(session_mesh, state, render.image)?;
    let truth =
        SessionTruth { a_eff, x_true: params.x_true, q_true: params.q_true };
    Ok((request, truth))
}

/// Headset position error of a localization against the session truth.
pub fn position_error(
    result: &jpil_core::pipeline::LocalizationResult,
    state: &HeadsetState,
    truth: &SessionTruth,
) -> f64 {
    result.transform.apply(&state.position).distance(&truth.x_true)
}
