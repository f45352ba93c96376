//! End-to-end localization: keypoints, descriptors, candidate registration,
//! per-candidate synthetic render plus image gate, and the measurement
//! raycast.
//!
//! Candidates are evaluated in ascending alignment-cost order. The first one
//! whose camera-pose estimate agrees with the candidate position within
//! `eps_plus` wins (confident positive); if none passes, the lowest-cost
//! candidate is returned with an explicit fallback label so downstream
//! consumers see the reduced confidence.

use serde::{Deserialize, Serialize};

use crate::cloud::{sample_mesh, PointCloud};
use crate::config::JpilConfig;
use crate::cpe::{build_correspondences, c_image, confident_positive, ransac_snp};
use crate::descriptor::{compute_tbsc, TbscDescriptor};
use crate::error::{Error, Result};
use crate::features::FeatureMatcher;
use crate::geom::{HeadsetState, Point3, RigidTransform};
use crate::keypoints::{detect_keypoints, OrientedKeypoint};
use crate::mesh::{Bvh, TriangleMesh};
use crate::registration::{find_reg_candidates, match_descriptors, Candidate};
use crate::spherical::{render_spherical, SphericalImage};

/// The reference model with everything precomputed once: sampled cloud,
/// keypoints, descriptors and the raycast acceleration structure.
pub struct ReferenceModel {
    pub bvh: Bvh,
    pub cloud: PointCloud,
    pub keypoints: Vec<OrientedKeypoint>,
    pub descriptors: Vec<TbscDescriptor>,
}

#[derive(Serialize, Deserialize)]
struct ReferenceCacheFile {
    version: u32,
    key: String,
    cloud: Vec<Point3>,
    keypoints: Vec<OrientedKeypoint>,
    descriptors: Vec<TbscDescriptor>,
}

const CACHE_VERSION: u32 = 1;

impl ReferenceModel {
    /// Sample, detect and describe the reference mesh.
    pub fn prepare(mesh: TriangleMesh, cfg: &JpilConfig) -> Result<Self> {
        cfg.validate()?;
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let cloud = sample_mesh(&mesh, cfg.sample_density, cfg.seed)?;
        let keypoints = detect_keypoints(&cloud, cfg.r_scale, cfg.k_ratio, cfg.min_curvature)?;
        let descriptors = keypoints
            .iter()
            .map(|kp| compute_tbsc(&cloud, kp, cfg.desc_radius, cfg.n_r, cfg.n_a))
            .collect::<Result<Vec<_>>>()?;
        log::info!(
            "reference prepared: {} points, {} keypoints",
            cloud.len(),
            keypoints.len()
        );
        Ok(ReferenceModel { bvh: Bvh::build(mesh), cloud, keypoints, descriptors })
    }

    /// Like [`ReferenceModel::prepare`], but persists the sampled cloud,
    /// keypoints and descriptors under `cache_dir`, keyed by a hash of the
    /// mesh and of the preparation-relevant configuration.
    pub fn prepare_cached(mesh: TriangleMesh, cfg: &JpilConfig, cache_dir: &std::path::Path) -> Result<Self> {
        cfg.validate()?;
        let key = cache_key(&mesh, cfg);
        let path = cache_dir.join(format!("ref-{key}.json"));
        if let Ok(bytes) = std::fs::read(&path) {
            match serde_json::from_slice::<ReferenceCacheFile>(&bytes) {
                Ok(file) if file.version == CACHE_VERSION && file.key == key => {
                    log::info!("reference cache hit: {}", path.display());
                    return Ok(ReferenceModel {
                        bvh: Bvh::build(mesh),
                        cloud: PointCloud::new(file.cloud),
                        keypoints: file.keypoints,
                        descriptors: file.descriptors,
                    });
                }
                _ => log::warn!("ignoring stale reference cache {}", path.display()),
            }
        }
        let model = Self::prepare(mesh, cfg)?;
        let file = ReferenceCacheFile {
            version: CACHE_VERSION,
            key,
            cloud: model.cloud.points.clone(),
            keypoints: model.keypoints.clone(),
            descriptors: model.descriptors.clone(),
        };
        std::fs::create_dir_all(cache_dir)?;
        std::fs::write(&path, serde_json::to_vec(&file).expect("cache serializes"))?;
        Ok(model)
    }
}

/// FNV-1a over the mesh geometry and the preparation-relevant config fields.
fn cache_key(mesh: &TriangleMesh, cfg: &JpilConfig) -> String {
    let mut hash: u128 = 0x6c62272e07bb014262b821756295c58d;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u128;
            hash = hash.wrapping_mul(0x0000000001000000000000000000013b);
        }
    };
    for v in mesh.vertices() {
        eat(&v.x.to_le_bytes());
        eat(&v.y.to_le_bytes());
        eat(&v.z.to_le_bytes());
    }
    for t in mesh.triangles() {
        for &i in t {
            eat(&i.to_le_bytes());
        }
    }
    for f in [cfg.sample_density, cfg.r_scale, cfg.k_ratio, cfg.desc_radius] {
        eat(&f.to_le_bytes());
    }
    for u in [cfg.n_r as u64, cfg.n_a as u64, cfg.seed] {
        eat(&u.to_le_bytes());
    }
    format!("{hash:032x}")
}

/// One localization request: the session spatial map, the headset state in
/// the session frame, and the spherical camera image.
pub struct LocalizationRequest {
    pub session_mesh: TriangleMesh,
    pub state: HeadsetState,
    pub image: SphericalImage,
}

impl LocalizationRequest {
    pub fn new(session_mesh: TriangleMesh, state: HeadsetState, image: SphericalImage) -> Result<Self> {
        if session_mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(LocalizationRequest { session_mesh, state, image })
    }
}

/// How the returned candidate was selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    /// The camera-pose estimate confirmed the candidate position.
    ConfidentPositive,
    /// No candidate passed the image gate; lowest alignment cost returned.
    FallbackMinCost,
}

impl Gate {
    pub fn label(&self) -> &'static str {
        match self {
            Gate::ConfidentPositive => "confident-positive",
            Gate::FallbackMinCost => "fallback-min-cost",
        }
    }
}

/// The localization answer: session-to-reference transform plus provenance.
#[derive(Debug, Clone)]
pub struct LocalizationResult {
    pub transform: RigidTransform,
    pub gate: Gate,
    pub candidate_count: usize,
    /// Headset position mapped into the reference frame.
    pub headset_position_ref: Point3,
}

/// Run registration only: session sampling, keypoints, descriptors, matching
/// and candidate clustering. Returns candidates sorted by ascending cost.
pub fn registration_candidates(
    reference: &ReferenceModel,
    req: &LocalizationRequest,
    cfg: &JpilConfig,
) -> Result<Vec<Candidate>> {
    let session_cloud = sample_mesh(&req.session_mesh, cfg.sample_density, cfg.seed)?;
    let skps = detect_keypoints(&session_cloud, cfg.r_scale, cfg.k_ratio, cfg.min_curvature)?;
    let sdescs = skps
        .iter()
        .map(|kp| compute_tbsc(&session_cloud, kp, cfg.desc_radius, cfg.n_r, cfg.n_a))
        .collect::<Result<Vec<_>>>()?;
    let matches = match_descriptors(
        &skps,
        &sdescs,
        &reference.keypoints,
        &reference.descriptors,
        cfg.eps_desc,
    )?;
    let candidates = find_reg_candidates(
        &matches,
        &reference.cloud,
        &session_cloud,
        cfg.eps_clust,
        cfg.min_cluster,
        cfg.n_r,
        cfg.n_a,
    )?;
    // ENU alignment makes the true transform translation-dominant; clusters
    // that needed a large rotation to fit are inconsistent matches.
    let max_angle = cfg.max_rotation_deg.to_radians();
    Ok(candidates
        .into_iter()
        .filter(|c| rotation_angle(c.transform.rotation()) <= max_angle)
        .collect())
}

/// Rotation angle of an orthonormal matrix, radians.
fn rotation_angle(r: &nalgebra::Matrix3<f64>) -> f64 {
    (((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// Full localization: registration candidates in ascending cost order, then
/// per-candidate synthetic render and camera-pose gate; the first confident
/// positive wins, otherwise the minimum-cost candidate is returned with the
/// fallback label. Zero candidates is the distinct `NoRegistration` error.
pub fn localize(
    reference: &ReferenceModel,
    req: &LocalizationRequest,
    cfg: &JpilConfig,
    matcher: &dyn FeatureMatcher,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    let candidates = registration_candidates(reference, req, cfg)?;
    if candidates.is_empty() {
        return Err(Error::NoRegistration);
    }
    for (ci, cand) in candidates.iter().enumerate() {
        let x_cand = cand.transform.apply(&req.state.position);
        let render = render_spherical(
            &reference.bvh,
            x_cand,
            req.state.orientation,
            cfg.render_width,
            cfg.render_height,
            cfg.sigma_kernel,
        )?;
        let corrs = build_correspondences(&req.image, &render, cfg.eps_sigma, matcher)?;
        if corrs.len() < 4 {
            log::debug!("candidate {ci}: only {} correspondences, skipping gate", corrs.len());
            continue;
        }
        let estimate = match ransac_snp(
            &corrs,
            &req.state.orientation,
            cfg.eps_q,
            &x_cand,
            cfg.ransac_iters,
            cfg.ransac_thresh,
            cfg.seed.wrapping_add(ci as u64),
        ) {
            Ok(e) => e,
            Err(e) => {
                log::debug!("candidate {ci}: pose estimation failed ({e})");
                continue;
            }
        };
        let dist = c_image(&x_cand, &estimate);
        log::debug!(
            "candidate {ci}: cost {}, image distance {dist:.3} m, {} inliers",
            cand.align_cost,
            estimate.inliers
        );
        if confident_positive(dist, cfg.eps_plus) {
            return Ok(result_from(cand, Gate::ConfidentPositive, candidates.len(), req));
        }
    }
    Ok(result_from(&candidates[0], Gate::FallbackMinCost, candidates.len(), req))
}

/// Registration-only localization: the minimum-cost candidate without any
/// image gating. Used as the comparison baseline.
pub fn localize_point_cloud_only(
    reference: &ReferenceModel,
    req: &LocalizationRequest,
    cfg: &JpilConfig,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    let candidates = registration_candidates(reference, req, cfg)?;
    if candidates.is_empty() {
        return Err(Error::NoRegistration);
    }
    Ok(result_from(&candidates[0], Gate::FallbackMinCost, candidates.len(), req))
}

fn result_from(
    cand: &Candidate,
    gate: Gate,
    candidate_count: usize,
    req: &LocalizationRequest,
) -> LocalizationResult {
    LocalizationResult {
        transform: cand.transform,
        gate,
        candidate_count,
        headset_position_ref: cand.transform.apply(&req.state.position),
    }
}

/// Transform the headset pose into the reference frame and raycast the gaze
/// into the reference mesh: the measured point of interest, or `None` if the
/// gaze misses all geometry.
pub fn measure_point(
    result: &LocalizationResult,
    reference: &Bvh,
    state: &HeadsetState,
) -> Result<Option<Point3>> {
    let origin = result.transform.apply(&state.position);
    let gaze = result.transform.rotate(&state.gaze);
    Ok(reference.raycast(&origin, &gaze)?.map(|hit| hit.point))
}
