//! Parameter sweeps: localization error as a function of orientation-sensor
//! error, of the orientation box width, and of the backtrack-uncertainty
//! rejection threshold.

use jpil_core::cpe::{c_image, ransac_snp, Correspondence3d2d};
use jpil_core::features::FeatureMatcher;
use jpil_core::geom::{OrientationENU, Point3, RigidTransform};
use jpil_core::mesh::Bvh;
use jpil_core::pipeline::{registration_candidates, ReferenceModel};
use jpil_core::spherical::{render_spherical, SphericalCamera};
use jpil_core::{Error, JpilConfig, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::Scene;
use crate::session::{simulate_session, SessionParams};

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    /// Injected orientation-sensor error magnitude, degrees.
    OrientationError,
    /// Orientation box half-width for pose estimation, degrees.
    EpsQ,
    /// Backtrack spread rejection threshold, meters.
    EpsSigma,
}

impl SweepParameter {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "orientation-error" => Ok(SweepParameter::OrientationError),
            "eps-q" | "eps_q" => Ok(SweepParameter::EpsQ),
            "eps-sigma" | "eps_sigma" => Ok(SweepParameter::EpsSigma),
            other => Err(Error::Validation(format!(
                "unknown sweep parameter {other:?} (orientation-error | eps-q | eps-sigma)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::OrientationError => "orientation-error",
            SweepParameter::EpsQ => "eps-q",
            SweepParameter::EpsSigma => "eps-sigma",
        }
    }
}

/// One sweep trial outcome.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub parameter: SweepParameter,
    pub value: f64,
    pub seed: u64,
    /// Position error, meters.
    pub error: f64,
    /// Correspondences supporting the estimate (where applicable).
    pub inliers: usize,
}

/// Everything the scene-backed sweeps need.
pub struct SweepContext<'a> {
    pub scene: &'a Scene,
    pub reference: &'a ReferenceModel,
    pub bvh: &'a Bvh,
    pub matcher: &'a dyn FeatureMatcher,
}

/// Per-trial CSV: `parameter,value,seed,error,inliers`.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut s = String::from("parameter,value,seed,error,inliers\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            r.parameter.name(),
            r.value,
            r.seed,
            r.error,
            r.inliers
        ));
    }
    s
}

/// Aggregate mean and standard deviation of the error per grid value,
/// CSV `value,mean,std,n`; gnuplot-friendly.
pub fn aggregate_csv(records: &[SweepRecord]) -> String {
    let mut values: Vec<f64> = records.iter().map(|r| r.value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut s = String::from("value,mean,std,n\n");
    for v in values {
        let errs: Vec<f64> =
            records.iter().filter(|r| r.value == v).map(|r| r.error).collect();
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        s.push_str(&format!("{},{:.6},{:.6},{}\n", v, mean, var.sqrt(), errs.len()));
    }
    s
}

/// Aggregate mean error for one grid value.
pub fn mean_error(records: &[SweepRecord], value: f64) -> f64 {
    let errs: Vec<f64> = records.iter().filter(|r| r.value == value).map(|r| r.error).collect();
    errs.iter().sum::<f64>() / errs.len().max(1) as f64
}

/// Run a sweep over `grid`, `seeds` trials per grid point.
pub fn sweep(
    parameter: SweepParameter,
    grid: &[f64],
    seeds: u64,
    ctx: &SweepContext,
    cfg: &JpilConfig,
) -> Result<Vec<SweepRecord>> {
    if grid.is_empty() {
        return Err(Error::Validation("empty sweep grid".into()));
    }
    match parameter {
        SweepParameter::OrientationError => sweep_orientation_error(grid, seeds, ctx, cfg),
        SweepParameter::EpsQ => Ok(sweep_eps_q(grid, seeds, cfg)),
        SweepParameter::EpsSigma => sweep_eps_sigma(grid, seeds, ctx, cfg),
    }
}

/// Registration error under injected orientation-sensor error. Per trial one
/// axis gets the full error magnitude with a random sign; the best candidate
/// (closest to the ground truth) is scored, isolating descriptor robustness
/// from candidate selection.
fn sweep_orientation_error(
    grid: &[f64],
    seeds: u64,
    ctx: &SweepContext,
    cfg: &JpilConfig,
) -> Result<Vec<SweepRecord>> {
    let mut records = Vec::new();
    for &value in grid {
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 7);
            let girder = rng.gen_range(0..ctx.scene.girder_x.len());
            let crop = girder_crop(ctx.scene, girder);
            let a_true = RigidTransform::from_translation(nalgebra::Vector3::new(
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-4.0..4.0),
            ));
            let mut params = SessionParams::facing_crop(crop, a_true, rng.gen());
            let axis = rng.gen_range(0..3);
            let sign = if rng.gen() { 1.0 } else { -1.0 };
            params.orientation_err[axis] = sign * value;
            let (req, truth) = simulate_session(ctx.bvh, &params, cfg)?;
            let candidates = registration_candidates(ctx.reference, &req, cfg)?;
            let error = candidates
                .iter()
                .map(|c| c.transform.apply(&req.state.position).distance(&truth.x_true))
                .min_by(f64::total_cmp)
                .unwrap_or(f64::INFINITY);
            records.push(SweepRecord {
                parameter: SweepParameter::OrientationError,
                value,
                seed,
                error,
                inliers: candidates.len(),
            });
        }
    }
    Ok(records)
}

/// Forward-generated pose-estimation fixture: points concentrated in a
/// narrow field of view (position and orientation trade off along the view
/// direction), pixel noise, and a share of gross outliers.
fn cpe_fixture(seed: u64, cfg: &JpilConfig) -> (Vec<Correspondence3d2d>, OrientationENU, Point3) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_true = OrientationENU::new(
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-180.0..180.0),
    );
    let x_true = Point3::new(
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-1.0..1.0),
    );
    let cam = SphericalCamera::new(x_true, q_true, cfg.render_width, cfg.render_height)
        .expect("2:1 render size");
    let rot = q_true.rotation();
    let mut corrs = Vec::new();
    for k in 0..60 {
        // A wall patch 8-14 m ahead, +-25 degrees around the view axis.
        let az: f64 = rng.gen_range(-25.0f64..25.0).to_radians();
        let el: f64 = rng.gen_range(-12.0f64..12.0).to_radians();
        let dist: f64 = rng.gen_range(8.0..14.0);
        let dir_cam = nalgebra::Vector3::new(
            el.cos() * az.sin(),
            el.cos() * az.cos(),
            el.sin(),
        );
        let p = Point3::from_coords(x_true.coords() + rot * dir_cam * dist);
        let (mut px, mut py) = cam.project(&p).expect("in view");
        if k % 7 == 0 {
            // Gross outlier: unrelated pixel.
            px = rng.gen_range(0.0..cfg.render_width as f64);
            py = rng.gen_range(0.0..cfg.render_height as f64);
        } else {
            px += 2.5 * gaussian(&mut rng);
            py += 2.5 * gaussian(&mut rng);
        }
        corrs.push(Correspondence3d2d::new(
            p,
            (px.rem_euclid(cfg.render_width as f64), py.clamp(0.0, cfg.render_height as f64)),
            0.1,
            cfg.render_width,
            cfg.render_height,
        ));
    }
    (corrs, q_true, x_true)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Pose estimation error as the orientation box widens. The prior carries a
/// small error; a wide box lets noise pull the estimate into false minima.
fn sweep_eps_q(grid: &[f64], seeds: u64, cfg: &JpilConfig) -> Vec<SweepRecord> {
    let mut records = Vec::new();
    for &value in grid {
        for seed in 0..seeds {
            let (corrs, q_true, x_true) = cpe_fixture(seed * 131 + 3, cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 17 + 1);
            let q_prior = OrientationENU::new(
                q_true.roll + rng.gen_range(-1.5..1.5),
                q_true.pitch + rng.gen_range(-1.5..1.5),
                q_true.yaw + rng.gen_range(-1.5..1.5),
            );
            let x_init = Point3::new(x_true.x + 0.5, x_true.y - 0.3, x_true.z + 0.2);
            let (error, inliers) = match ransac_snp(
                &corrs,
                &q_prior,
                value,
                &x_init,
                cfg.ransac_iters,
                cfg.ransac_thresh,
                seed,
            ) {
                Ok(est) => (est.position.distance(&x_true), est.inliers),
                Err(_) => (f64::INFINITY, 0),
            };
            records.push(SweepRecord {
                parameter: SweepParameter::EpsQ,
                value,
                seed,
                error,
                inliers,
            });
        }
    }
    records
}

/// Correspondence yield and image-distance error as the backtrack-spread
/// threshold loosens.
fn sweep_eps_sigma(
    grid: &[f64],
    seeds: u64,
    ctx: &SweepContext,
    cfg: &JpilConfig,
) -> Result<Vec<SweepRecord>> {
    let mut records = Vec::new();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 97 + 13);
        let girder = rng.gen_range(0..ctx.scene.girder_x.len());
        let crop = girder_crop(ctx.scene, girder);
        let a_true = RigidTransform::from_translation(nalgebra::Vector3::new(
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-3.0..3.0),
        ));
        let params = SessionParams::facing_crop(crop, a_true, rng.gen());
        let (req, truth) = simulate_session(ctx.bvh, &params, cfg)?;
        // Synthetic view at the true camera position (the correct candidate).
        let render = render_spherical(
            ctx.bvh,
            truth.x_true,
            req.state.orientation,
            cfg.render_width,
            cfg.render_height,
            cfg.sigma_kernel,
        )?;
        for &value in grid {
            let corrs =
                jpil_core::cpe::build_correspondences(&req.image, &render, value, ctx.matcher)?;
            let n = corrs.len();
            let (error, inliers) = if n >= 4 {
                match ransac_snp(
                    &corrs,
                    &req.state.orientation,
                    cfg.eps_q,
                    &truth.x_true,
                    cfg.ransac_iters,
                    cfg.ransac_thresh,
                    seed,
                ) {
                    Ok(est) => (c_image(&truth.x_true, &est), n),
                    Err(_) => (f64::INFINITY, n),
                }
            } else {
                (f64::INFINITY, n)
            };
            records.push(SweepRecord {
                parameter: SweepParameter::EpsSigma,
                value,
                seed,
                error,
                inliers,
            });
        }
    }
    Ok(records)
}

fn girder_crop(scene: &Scene, girder: usize) -> jpil_core::geom::BoundingBox {
    let x = scene.girder_x[girder];
    let h = &scene.girder_half;
    jpil_core::geom::BoundingBox::new(
        Point3::new(x - h.x, -h.y, -0.8),
        Point3::new(x + h.x, h.y, scene.deck_underside + 0.02),
    )
    .expect("valid crop")
}
