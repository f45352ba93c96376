//! Pipeline configuration: every threshold in one place, with defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All tunable parameters of the localization pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JpilConfig {
    /// Mesh sampling density, points per square meter.
    pub sample_density: f64,
    /// Keypoint neighborhood radius, meters.
    pub r_scale: f64,
    /// Keypoint planar eigenvalue ratio threshold.
    pub k_ratio: f64,
    /// Curvature noise floor for keypoints. Sampled flat surfaces carry
    /// small nonzero curvature; maxima below this are sampling noise, not
    /// geometry, and are not repeatable across scans.
    pub min_curvature: f64,
    /// Descriptor support radius, meters.
    pub desc_radius: f64,
    /// Descriptor radial rings per projection plane.
    pub n_r: usize,
    /// Descriptor azimuthal sectors per projection plane.
    pub n_a: usize,
    /// Descriptor match threshold, fraction of the maximum Hamming distance.
    pub eps_desc: f64,
    /// Clustering consistency margin, meters.
    pub eps_clust: f64,
    /// Minimum cluster size for a registration candidate.
    pub min_cluster: usize,
    /// Orientation box half-width for pose estimation, degrees.
    pub eps_q: f64,
    /// Backtrack uncertainty rejection threshold, meters.
    pub eps_sigma: f64,
    /// Confident-positive position agreement threshold, meters.
    pub eps_plus: f64,
    /// Maximum rotation (degrees) a candidate transform may carry. Both
    /// models are ENU-aligned, so the true transform is translation-dominant;
    /// clusters that fit a large rotation contradict that premise.
    pub max_rotation_deg: f64,
    /// RANSAC hypothesis count for pose estimation.
    pub ransac_iters: usize,
    /// RANSAC angular inlier threshold, radians.
    pub ransac_thresh: f64,
    /// Half-width of the sigma-map window, pixels.
    pub sigma_kernel: usize,
    /// Synthetic render width, pixels (must be 2 x height).
    pub render_width: u32,
    /// Synthetic render height, pixels.
    pub render_height: u32,
    /// Master seed for sampling and RANSAC.
    pub seed: u64,
}

impl Default for JpilConfig {
    fn default() -> Self {
        JpilConfig {
            sample_density: 100.0,
            r_scale: 0.4,
            k_ratio: 0.8,
            min_curvature: 0.01,
            desc_radius: 3.0,
            n_r: 4,
            n_a: 8,
            eps_desc: 0.15,
            eps_clust: 0.8,
            min_cluster: 5,
            eps_q: 4.0,
            eps_sigma: 0.5,
            eps_plus: 1.5,
            max_rotation_deg: 15.0,
            ransac_iters: 500,
            ransac_thresh: 0.01,
            sigma_kernel: 2,
            render_width: 1280,
            render_height: 640,
            seed: 0,
        }
    }
}

impl JpilConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        }
        positive("sample_density", self.sample_density)?;
        positive("r_scale", self.r_scale)?;
        positive("desc_radius", self.desc_radius)?;
        positive("eps_clust", self.eps_clust)?;
        positive("eps_sigma", self.eps_sigma)?;
        positive("eps_plus", self.eps_plus)?;
        positive("ransac_thresh", self.ransac_thresh)?;
        if !(self.k_ratio > 0.0 && self.k_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "k_ratio must be in (0, 1), got {}",
                self.k_ratio
            )));
        }
        if !(self.eps_desc > 0.0 && self.eps_desc <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eps_desc must be in (0, 1], got {}",
                self.eps_desc
            )));
        }
        if self.eps_q < 0.0 {
            return Err(Error::InvalidConfig(format!("eps_q must be >= 0, got {}", self.eps_q)));
        }
        if self.n_r == 0 || self.n_a == 0 {
            return Err(Error::InvalidConfig("n_r and n_a must be at least 1".into()));
        }
        if self.min_cluster < 3 {
            return Err(Error::InvalidConfig("min_cluster must be at least 3".into()));
        }
        if self.sigma_kernel == 0 {
            return Err(Error::InvalidConfig("sigma_kernel must be at least 1".into()));
        }
        if self.render_width != 2 * self.render_height || self.render_height == 0 {
            return Err(Error::InvalidConfig(format!(
                "render size must be 2:1, got {}x{}",
                self.render_width, self.render_height
            )));
        }
        Ok(())
    }

    /// Descriptor bit length implied by the bin layout.
    pub fn descriptor_bits(&self) -> usize {
        3 * 2 * self.n_r * self.n_a
    }
}
