//! Descriptor matching, geometric-consistency clustering into multiple
//! candidate transforms, SVD rigid-transform estimation and the
//! descriptor-based alignment cost.
//!
//! Small session maps on repetitive structures register ambiguously: the
//! clustering step therefore returns *every* translation-consistent cluster
//! of matches as its own candidate instead of a single best transform.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::cloud::{clip_box, PointCloud};
use crate::descriptor::{compute_tbsc, hamming, TbscDescriptor};
use crate::error::{Error, Result};
use crate::geom::{Point3, RigidTransform};
use crate::keypoints::{enu_lrf, OrientedKeypoint};

/// One descriptor match between a session (source) and reference (target)
/// keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    /// Index into the session keypoint list.
    pub source_idx: usize,
    /// Index into the reference keypoint list.
    pub target_idx: usize,
    /// Session keypoint position.
    pub source: Point3,
    /// Reference keypoint position.
    pub target: Point3,
    /// Hamming distance between the two descriptors.
    pub distance: u32,
}

/// A geometrically consistent cluster of matches with its estimated
/// transform and alignment cost.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Indices into the match list this candidate was built from.
    pub match_indices: Vec<usize>,
    /// Rigid transform mapping session coordinates into the reference frame.
    pub transform: RigidTransform,
    /// Hamming distance between the box-level descriptors after alignment.
    pub align_cost: u32,
}

/// All source/target pairs whose descriptor distance passes the threshold
/// `distance < len * eps_desc` (many-to-many). `eps_desc >= 1` disables the
/// filter entirely.
///
/// Matches are returned sorted by ascending distance (ties by source then
/// target index), so greedy downstream clustering seeds from the strongest
/// matches first.
pub fn match_descriptors(
    source_kps: &[OrientedKeypoint],
    source_descs: &[TbscDescriptor],
    target_kps: &[OrientedKeypoint],
    target_descs: &[TbscDescriptor],
    eps_desc: f64,
) -> Result<Vec<Match>> {
    if source_kps.len() != source_descs.len() || target_kps.len() != target_descs.len() {
        return Err(Error::Validation("keypoint/descriptor count mismatch".into()));
    }
    if !(eps_desc > 0.0 && eps_desc <= 1.0) {
        return Err(Error::Validation(format!("eps_desc must be in (0, 1], got {eps_desc}")));
    }
    let mut matches = Vec::new();
    for (i, (skp, sd)) in source_kps.iter().zip(source_descs).enumerate() {
        for (j, (tkp, td)) in target_kps.iter().zip(target_descs).enumerate() {
            let d = hamming(sd, td)?;
            let c_max = sd.len() as f64;
            if (d as f64) < c_max * eps_desc || eps_desc >= 1.0 {
                matches.push(Match {
                    source_idx: i,
                    target_idx: j,
                    source: skp.position,
                    target: tkp.position,
                    distance: d,
                });
            }
        }
    }
    matches.sort_by_key(|m| (m.distance, m.source_idx, m.target_idx));
    Ok(matches)
}

/// Greedy single-pass clustering of matches by translation consistency.
///
/// The first unassigned match seeds a cluster; every later unassigned match
/// whose per-axis translation residuals against the *seed* sum below
/// `3 * eps_clust` joins it. All visited matches are marked assigned whether
/// or not their cluster reaches `min_cluster` members; only clusters with at
/// least `min_cluster` members are returned. Input order fixes the result.
pub fn cluster_matches(matches: &[Match], eps_clust: f64, min_cluster: usize) -> Vec<Vec<usize>> {
    assert!(eps_clust > 0.0, "eps_clust must be positive");
    let n = matches.len();
    let mut assigned = vec![false; n];
    let mut clusters = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        assigned[i] = true;
        let seed = &matches[i];
        let mut cluster = vec![i];
        for j in i + 1..n {
            if assigned[j] {
                continue;
            }
            let m = &matches[j];
            let e_x = (seed.target.x - seed.source.x - m.target.x + m.source.x).abs();
            let e_y = (seed.target.y - seed.source.y - m.target.y + m.source.y).abs();
            let e_z = (seed.target.z - seed.source.z - m.target.z + m.source.z).abs();
            if e_x + e_y + e_z < 3.0 * eps_clust {
                cluster.push(j);
                assigned[j] = true;
            }
        }
        if cluster.len() >= min_cluster {
            clusters.push(cluster);
        }
    }
    clusters
}

/// Least-squares rigid transform (no scale) mapping `pairs[i].0` onto
/// `pairs[i].1`, by SVD of the cross-covariance with a determinant sign fix.
pub fn rigid_transform(pairs: &[(Point3, Point3)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mut mu_s = Vector3::zeros();
    let mut mu_t = Vector3::zeros();
    for (s, t) in pairs {
        mu_s += s.coords();
        mu_t += t.coords();
    }
    mu_s /= n;
    mu_t /= n;

    // Cross-covariance H = sum (t - mu_t)(s - mu_s)^T.
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in pairs {
        let sc = s.coords() - mu_s;
        let tc = t.coords() - mu_t;
        h += tc * sc.transpose();
        spread += sc * sc.transpose();
    }

    // Collinear sources leave the rotation about the line unconstrained.
    let spread_eig = nalgebra::SymmetricEigen::new(spread / n).eigenvalues;
    let mut eigs: Vec<f64> = spread_eig.iter().copied().collect();
    eigs.sort_by(f64::total_cmp);
    if eigs[1] <= 1e-12 * eigs[2].max(1e-30) {
        return Err(Error::DegenerateGeometry("source points are collinear".into()));
    }

    let svd = nalgebra::SVD::new(h, true, true);
    let u = svd.u.ok_or_else(|| Error::DegenerateGeometry("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::DegenerateGeometry("SVD failed".into()))?;
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let translation = mu_t - rotation * mu_s;
    RigidTransform::new(rotation, translation)
}

/// Alignment cost of transform `a`: transform the session cloud, clip the
/// reference cloud to its bounding box, describe both with a single
/// box-scale tBSC at the box center (radius = longest box side) and return
/// their Hamming distance. An empty clipped region costs the maximum.
pub fn align_cost(
    a: &RigidTransform,
    reference: &PointCloud,
    session: &PointCloud,
    n_r: usize,
    n_a: usize,
) -> Result<u32> {
    let c_max = (3 * 2 * n_r * n_a) as u32;
    let aligned = session.transformed(a);
    let Some(bbox) = aligned.bounding_box() else {
        return Ok(c_max);
    };
    let clipped = clip_box(reference, &bbox);
    if clipped.is_empty() {
        return Ok(c_max);
    }
    let radius = bbox.longest_side().max(1e-9);
    let center = probe_keypoint(bbox.center());
    let d_session = compute_tbsc(&aligned, &center, radius, n_r, n_a)?;
    let d_reference = compute_tbsc(&clipped, &center, radius, n_r, n_a)?;
    hamming(&d_session, &d_reference)
}

/// A synthetic keypoint (ENU LRF, no neighborhood features) used to probe
/// box centers for the alignment cost.
fn probe_keypoint(position: Point3) -> OrientedKeypoint {
    OrientedKeypoint {
        position,
        lrf: enu_lrf(),
        features: crate::keypoints::EigenFeatures {
            lambda3d: [0.0; 3],
            evecs3d: [Vector3::x(), Vector3::y(), Vector3::z()],
            lambda2d: [0.0; 2],
            evecs2d: [nalgebra::Vector2::x(), nalgebra::Vector2::y()],
            curvature: 0.0,
        },
        index: usize::MAX,
    }
}

/// Cluster matches and turn every sufficiently large cluster into a
/// [`Candidate`] with its SVD transform and alignment cost. Candidates are
/// returned sorted by ascending alignment cost, which fixes the evaluation
/// order of the downstream image gate. Degenerate clusters are skipped.
pub fn find_reg_candidates(
    matches: &[Match],
    reference: &PointCloud,
    session: &PointCloud,
    eps_clust: f64,
    min_cluster: usize,
    n_r: usize,
    n_a: usize,
) -> Result<Vec<Candidate>> {
    let clusters = cluster_matches(matches, eps_clust, min_cluster);
    let mut candidates: Vec<Candidate> = clusters
        .into_par_iter()
        .filter_map(|cluster| {
            let pairs: Vec<(Point3, Point3)> =
                cluster.iter().map(|&i| (matches[i].source, matches[i].target)).collect();
            let transform = match rigid_transform(&pairs) {
                Ok(t) => t,
                Err(e) => {
                    log::debug!("skipping degenerate cluster of {}: {e}", cluster.len());
                    return None;
                }
            };
            let cost = match align_cost(&transform, reference, session, n_r, n_a) {
                Ok(c) => c,
                Err(e) => {
                    log::debug!("alignment cost failed: {e}");
                    return None;
                }
            };
            Some(Candidate { match_indices: cluster, transform, align_cost: cost })
        })
        .collect();
    candidates.sort_by_key(|c| (c.align_cost, c.match_indices[0]));
    Ok(candidates)
}
