//! Random-walk mapping trials: how much surface area must a user map before
//! localization first succeeds, with and without the image gate.

use jpil_core::features::FeatureMatcher;
use jpil_core::geom::{BoundingBox, Point3, RigidTransform};
use jpil_core::mesh::Bvh;
use jpil_core::pipeline::{localize, localize_point_cloud_only, ReferenceModel};
use jpil_core::{JpilConfig, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::Scene;
use crate::session::{position_error, simulate_session, SessionParams};

/// Walk protocol parameters.
#[derive(Debug, Clone)]
pub struct WalkConfig {
    pub trials: usize,
    pub seed: u64,
    /// Growth of the mapped stretch per step, meters along the girder.
    pub step_len: f64,
    /// Steps per walk.
    pub steps: usize,
    /// Success threshold on the headset position error, meters.
    pub success_dist: f64,
    /// Session vertex noise.
    pub noise_sigma: f64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            trials: 15,
            seed: 0,
            step_len: 0.8,
            steps: 7,
            success_dist: 0.6,
            noise_sigma: 0.01,
        }
    }
}

/// Outcome of one walk under one method.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkRecord {
    pub method: &'static str,
    pub trial: usize,
    /// Smallest mapped surface area at which localization was correct, if any.
    pub min_area: Option<f64>,
    /// Success flags per step (areas ascending), for monotonicity checks.
    pub successes: Vec<bool>,
    /// Areas per step.
    pub areas: Vec<f64>,
}

/// Serialize records as CSV: `method,trial,min_area,succeeded`.
pub fn walk_csv(records: &[WalkRecord]) -> String {
    let mut s = String::from("method,trial,min_area,succeeded\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.method,
            r.trial,
            r.min_area.map_or(String::from("nan"), |a| format!("{a:.3}")),
            r.min_area.is_some()
        ));
    }
    s
}

/// Success-monotonicity flakes: a success followed by a failure at larger
/// area within the same walk.
pub fn count_flakes(records: &[WalkRecord]) -> usize {
    records
        .iter()
        .map(|r| {
            let mut seen = false;
            let mut flakes = 0;
            for &ok in &r.successes {
                if seen && !ok {
                    flakes += 1;
                }
                seen |= ok;
            }
            flakes
        })
        .sum()
}

/// Median of the recorded minimum areas; walks that never succeeded count as
/// infinite.
pub fn median_min_area(records: &[WalkRecord], method: &str) -> f64 {
    let mut areas: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method)
        .map(|r| r.min_area.unwrap_or(f64::INFINITY))
        .collect();
    areas.sort_by(f64::total_cmp);
    if areas.is_empty() {
        return f64::NAN;
    }
    areas[areas.len() / 2]
}

/// Run paired walks: each trial grows a mapped stretch of one girder step by
/// step and localizes with (a) the full pipeline and (b) registration-only
/// argmin-cost, recording the first area at which each succeeds.
pub fn run_walk_cdf(
    scene: &Scene,
    reference: &ReferenceModel,
    scene_bvh: &Bvh,
    matcher: &dyn FeatureMatcher,
    cfg: &JpilConfig,
    walk: &WalkConfig,
) -> Result<Vec<WalkRecord>> {
    let mut records = Vec::new();
    for trial in 0..walk.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(walk.seed.wrapping_add(trial as u64 * 7919));
        // Walk start: a random spot on a random girder.
        let girder = rng.gen_range(0..scene.girder_x.len());
        let gx = scene.girder_x[girder];
        let y0: f64 = rng.gen_range(-1.0..1.0);
        let a_true = RigidTransform::from_translation(Vector3::new(
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-5.0..5.0),
        ));
        let h = &scene.girder_half;

        let mut jpil_rec = WalkRecord {
            method: "jpil",
            trial,
            min_area: None,
            successes: Vec::new(),
            areas: Vec::new(),
        };
        let mut pc_rec = WalkRecord {
            method: "point-cloud-only",
            trial,
            min_area: None,
            successes: Vec::new(),
            areas: Vec::new(),
        };

        for step in 0..walk.steps {
            // The mapped stretch grows along the girder axis, clamped to the
            // girder, then spills onto the neighboring girders.
            let reach = 0.7 + walk.step_len * step as f64;
            let y_lo = (y0 - reach).max(-h.y);
            let y_hi = (y0 + reach).min(h.y);
            let spill = (reach - 2.0 * h.y).max(0.0);
            let crop = BoundingBox::new(
                Point3::new(gx - h.x - spill, y_lo, -0.8),
                Point3::new(gx + h.x + spill, y_hi, scene.deck_underside + 0.02),
            )?;
            let mut params = SessionParams::facing_crop(crop, a_true, rng.gen());
            params.noise_sigma = walk.noise_sigma;
            // The camera stays at the walk start; only the map grows.
            params.x_true = Point3::new(gx, y0 - 2.5, 0.9);
            let (req, truth) = simulate_session(scene_bvh, &params, cfg)?;
            let area = req.session_mesh.surface_area();

            let jpil_ok = localize(reference, &req, cfg, matcher)
                .map(|r| position_error(&r, &req.state, &truth) < walk.success_dist)
                .unwrap_or(false);
            let pc_ok = localize_point_cloud_only(reference, &req, cfg)
                .map(|r| position_error(&r, &req.state, &truth) < walk.success_dist)
                .unwrap_or(false);

            for (rec, ok) in [(&mut jpil_rec, jpil_ok), (&mut pc_rec, pc_ok)] {
                rec.areas.push(area);
                rec.successes.push(ok);
                if ok && rec.min_area.is_none() {
                    rec.min_area = Some(area);
                }
            }
        }
        records.push(jpil_rec);
        records.push(pc_rec);
    }
    let flakes = count_flakes(&records);
    let steps_total: usize = records.iter().map(|r| r.successes.len()).sum();
    if flakes > 0 {
        log::warn!("{flakes} monotonicity flakes over {steps_total} walk steps");
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: &'static str, trial: usize, outcomes: &[(f64, bool)]) -> WalkRecord {
        WalkRecord {
            method,
            trial,
            min_area: outcomes.iter().find(|(_, ok)| *ok).map(|(a, _)| *a),
            successes: outcomes.iter().map(|(_, ok)| *ok).collect(),
            areas: outcomes.iter().map(|(a, _)| *a).collect(),
        }
    }

    #[test]
    fn flake_counting() {
        let records = vec![
            record("jpil", 0, &[(5.0, false), (10.0, true), (15.0, true)]),
            record("jpil", 1, &[(5.0, true), (10.0, false), (15.0, true)]),
        ];
        assert_eq!(count_flakes(&records), 1);
    }

    #[test]
    fn median_handles_failures() {
        let records = vec![
            record("jpil", 0, &[(5.0, true)]),
            record("jpil", 1, &[(6.0, false)]),
            record("jpil", 2, &[(4.0, true)]),
        ];
        let m = median_min_area(&records, "jpil");
        assert_eq!(m, 5.0);
    }

    #[test]
    fn csv_shape() {
        let records = vec![record("jpil", 3, &[(7.5, true)])];
        let csv = walk_csv(&records);
        assert_eq!(csv, "method,trial,min_area,succeeded\njpil,3,7.500,true\n");
    }
}
