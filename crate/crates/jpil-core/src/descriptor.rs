//! Translation-specific binary shape context (tBSC) descriptors.
//!
//! Neighbor offsets around a keypoint are expressed in the keypoint's LRF,
//! projected onto the three LRF coordinate planes (xy, xz, yz) and binned in
//! an equal-area polar grid (`n_r` rings x `n_a` sectors). Each bin yields a
//! density feature (point count fraction) and a distance feature (mean
//! in-plane distance to the keypoint); a feature binarizes to 1 iff it
//! exceeds the mean of that feature across its plane's bins. Descriptors are
//! compared with the Hamming distance, whose maximum possible value equals
//! the bit length.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::keypoints::OrientedKeypoint;

/// Number of projection planes (xy, xz, yz) in the bin layout.
const PLANES: usize = 3;
/// Features per bin: density and mean distance.
const FEATURES: usize = 2;

/// A fixed-length bit string descriptor with its support radius.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TbscDescriptor {
    words: Vec<u64>,
    len: usize,
    /// Support radius used to gather neighbors, meters.
    pub radius: f64,
}

impl TbscDescriptor {
    fn zeros(len: usize, radius: f64) -> Self {
        TbscDescriptor { words: vec![0; len.div_ceil(64)], len, radius }
    }

    /// Bit length; also the maximum possible Hamming distance.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn set_bit(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// All-zero descriptor, produced when a keypoint has no support points.
    pub fn is_low_support(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Bitwise complement (for tests).
    pub fn complement(&self) -> TbscDescriptor {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        // Clear bits beyond the logical length.
        let tail = out.len % 64;
        if tail != 0 {
            *out.words.last_mut().unwrap() &= (1u64 << tail) - 1;
        }
        out
    }

    /// Hex dump, two lowercase digits per byte, bytes in bit order
    /// (bit `i` lives in byte `i / 8` at position `i % 8`).
    pub fn to_hex(&self) -> String {
        let n_bytes = self.len.div_ceil(8);
        let mut s = String::with_capacity(n_bytes * 2);
        for b in 0..n_bytes {
            let word = self.words[b / 8];
            let byte = (word >> ((b % 8) * 8)) as u8;
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str, len: usize, radius: f64) -> Result<Self> {
        let n_bytes = len.div_ceil(8);
        if hex.len() != n_bytes * 2 {
            return Err(Error::Validation(format!(
                "hex descriptor has {} digits, expected {}",
                hex.len(),
                n_bytes * 2
            )));
        }
        let mut d = TbscDescriptor::zeros(len, radius);
        for b in 0..n_bytes {
            let byte = u8::from_str_radix(&hex[b * 2..b * 2 + 2], 16)
                .map_err(|e| Error::Validation(format!("bad hex digit: {e}")))?;
            d.words[b / 8] |= (byte as u64) << ((b % 8) * 8);
        }
        Ok(d)
    }
}

/// Hamming distance between two descriptors of equal length.
pub fn hamming(a: &TbscDescriptor, b: &TbscDescriptor) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::DescriptorLengthMismatch { left: a.len, right: b.len });
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum())
}

/// Compute the tBSC descriptor of `kp` over `cloud` with the given support
/// radius and bin layout.
///
/// The result depends only on the multiset of neighbor offsets expressed in
/// the keypoint's LRF; exact-zero offsets (the keypoint itself) carry no
/// shape information and are skipped. No neighbors yields the all-zero
/// low-support descriptor.
pub fn compute_tbsc(
    cloud: &PointCloud,
    kp: &OrientedKeypoint,
    radius: f64,
    n_r: usize,
    n_a: usize,
) -> Result<TbscDescriptor> {
    if !(radius > 0.0) {
        return Err(Error::Validation(format!("descriptor radius must be positive, got {radius}")));
    }
    let len = PLANES * FEATURES * n_r * n_a;
    let mut desc = TbscDescriptor::zeros(len, radius);
    let r2 = radius * radius;
    let lrf_t = kp.lrf.transpose();

    // Neighbor offsets in LRF coordinates.
    let mut offsets = Vec::new();
    for p in &cloud.points {
        let d = p.sub(&kp.position);
        let n2 = d.norm_squared();
        if n2 <= r2 && n2 > 0.0 {
            offsets.push(lrf_t * d);
        }
    }
    if offsets.is_empty() {
        return Ok(desc); // low support
    }

    let bins = n_r * n_a;
    let sector_width = std::f64::consts::TAU / n_a as f64;
    for plane in 0..PLANES {
        let mut counts = vec![0usize; bins];
        let mut dists: Vec<Vec<f64>> = vec![Vec::new(); bins];
        for o in &offsets {
            let (a, b) = match plane {
                0 => (o.x, o.y),
                1 => (o.x, o.z),
                _ => (o.y, o.z),
            };
            let rho = a.hypot(b);
            // Equal-area rings: ring boundaries at radius * sqrt(i / n_r).
            let ring = ((n_r as f64) * (rho / radius).powi(2)).floor() as usize;
            let ring = ring.min(n_r - 1);
            let mut angle = b.atan2(a);
            if angle < 0.0 {
                angle += std::f64::consts::TAU;
            }
            let sector = ((angle / sector_width).floor() as usize).min(n_a - 1);
            let bin = ring * n_a + sector;
            counts[bin] += 1;
            dists[bin].push(rho);
        }
        let total = offsets.len() as f64;
        let density: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
        // Mean distance per bin; summed in sorted order so the feature is
        // exactly permutation invariant.
        let distance: Vec<f64> = dists
            .iter_mut()
            .map(|v| {
                if v.is_empty() {
                    0.0
                } else {
                    v.sort_by(f64::total_cmp);
                    v.iter().sum::<f64>() / v.len() as f64
                }
            })
            .collect();
        for (feature, values) in [(0usize, &density), (1usize, &distance)] {
            let mean = values.iter().sum::<f64>() / bins as f64;
            for (bin, &v) in values.iter().enumerate() {
                if v > mean {
                    desc.set_bit(plane * FEATURES * bins + feature * bins + bin);
                }
            }
        }
    }
    Ok(desc)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geom::Point3;
    use crate::keypoints::enu_lrf;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp_at(p: Point3) -> OrientedKeypoint {
        OrientedKeypoint {
            position: p,
            lrf: enu_lrf(),
            features: crate::keypoints::EigenFeatures {
                lambda3d: [0.0; 3],
                evecs3d: [Vector3::x(), Vector3::y(), Vector3::z()],
                lambda2d: [0.0; 2],
                evecs2d: [nalgebra::Vector2::x(), nalgebra::Vector2::y()],
                curvature: 0.0,
            },
            index: 0,
        }
    }

    pub(crate) fn random_neighborhood(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-0.9..0.9),
                        rng.gen_range(-0.9..0.9),
                        rng.gen_range(-0.9..0.9),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn translation_invariance_exact() {
        let cloud = random_neighborhood(1, 300);
        let kp = kp_at(Point3::ORIGIN);
        let d0 = compute_tbsc(&cloud, &kp, 1.0, 4, 8).unwrap();

        let shift = Vector3::new(10.0, 3.0, -2.0);
        let moved = PointCloud::new(cloud.points.iter().map(|p| p.add(&shift)).collect());
        let kp2 = kp_at(Point3::from_coords(shift));
        let d1 = compute_tbsc(&moved, &kp2, 1.0, 4, 8).unwrap();
        assert_eq!(d0, d1);
        assert_eq!(hamming(&d0, &d1).unwrap(), 0);
    }

    #[test]
    fn rotation_changes_bits() {
        let cloud = random_neighborhood(2, 300);
        let kp = kp_at(Point3::ORIGIN);
        let d0 = compute_tbsc(&cloud, &kp, 1.0, 4, 8).unwrap();

        // Rotate the neighborhood 90 degrees about z (yaw).
        let rot = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let rotated =
            PointCloud::new(cloud.points.iter().map(|p| Point3::from_coords(rot * p.coords())).collect());
        let d1 = compute_tbsc(&rotated, &kp, 1.0, 4, 8).unwrap();
        assert!(hamming(&d0, &d1).unwrap() > 0, "descriptor should be orientation specific");
    }

    #[test]
    fn permutation_invariance_exact() {
        let cloud = random_neighborhood(3, 200);
        let kp = kp_at(Point3::ORIGIN);
        let d0 = compute_tbsc(&cloud, &kp, 1.0, 4, 8).unwrap();
        let mut rev = cloud.points.clone();
        rev.reverse();
        // Shuffle deterministically.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in (1..rev.len()).rev() {
            let j = rng.gen_range(0..=i);
            rev.swap(i, j);
        }
        let d1 = compute_tbsc(&PointCloud::new(rev), &kp, 1.0, 4, 8).unwrap();
        assert_eq!(d0, d1);
    }

    #[test]
    fn duplicated_points_leave_bits_unchanged() {
        let cloud = random_neighborhood(4, 150);
        let kp = kp_at(Point3::ORIGIN);
        let d0 = compute_tbsc(&cloud, &kp, 1.0, 4, 8).unwrap();
        let mut doubled = cloud.points.clone();
        doubled.extend_from_slice(&cloud.points);
        let d1 = compute_tbsc(&PointCloud::new(doubled), &kp, 1.0, 4, 8).unwrap();
        // Density fractions and per-bin mean distances are both unchanged
        // under uniform duplication, so the whole descriptor is.
        assert_eq!(d0, d1);
    }

    #[test]
    fn zero_neighbors_low_support() {
        let cloud = PointCloud::new(vec![Point3::new(5.0, 5.0, 5.0)]);
        let kp = kp_at(Point3::ORIGIN);
        let d = compute_tbsc(&cloud, &kp, 1.0, 4, 8).unwrap();
        assert!(d.is_low_support());
        assert_eq!(d.count_ones(), 0);
        assert_eq!(d.len(), 192);
    }

    #[test]
    fn hamming_identity_and_complement() {
        let cloud = random_neighborhood(5, 100);
        let kp = kp_at(Point3::ORIGIN);
        let d = compute_tbsc(&cloud, &kp, 1.0, 4, 8).unwrap();
        assert_eq!(hamming(&d, &d).unwrap(), 0);
        assert_eq!(hamming(&d, &d.complement()).unwrap(), d.len() as u32);
    }

    #[test]
    fn hamming_length_mismatch_errors() {
        let a = TbscDescriptor::zeros(192, 1.0);
        let b = TbscDescriptor::zeros(64, 1.0);
        assert!(matches!(hamming(&a, &b), Err(Error::DescriptorLengthMismatch { .. })));
    }

    #[test]
    fn hex_round_trip() {
        let cloud = random_neighborhood(6, 100);
        let kp = kp_at(Point3::ORIGIN);
        let d = compute_tbsc(&cloud, &kp, 1.0, 4, 8).unwrap();
        let hex = d.to_hex();
        assert_eq!(hex.len(), 48);
        let back = TbscDescriptor::from_hex(&hex, d.len(), d.radius).unwrap();
        assert_eq!(back, d);
    }

    fn random_bits(rng: &mut impl Rng, len: usize) -> TbscDescriptor {
        let mut d = TbscDescriptor::zeros(len, 1.0);
        for i in 0..len {
            if rng.gen::<bool>() {
                d.set_bit(i);
            }
        }
        d
    }

    /// Naive per-bit oracle for the Hamming distance.
    fn naive_hamming(a: &TbscDescriptor, b: &TbscDescriptor) -> u32 {
        (0..a.len()).filter(|&i| a.bit(i) != b.bit(i)).count() as u32
    }

    #[test]
    fn hamming_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let a = random_bits(&mut rng, 192);
            let b = random_bits(&mut rng, 192);
            assert_eq!(hamming(&a, &b).unwrap(), naive_hamming(&a, &b));
        }
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_bits(&mut rng, 192);
            let b = random_bits(&mut rng, 192);
            let c = random_bits(&mut rng, 192);
            let ab = hamming(&a, &b).unwrap();
            let ba = hamming(&b, &a).unwrap();
            let ac = hamming(&a, &c).unwrap();
            let cb = hamming(&c, &b).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(hamming(&a, &a).unwrap(), 0);
            prop_assert!((ab == 0) == (a == b));
            prop_assert!(ab <= ac + cb, "triangle inequality violated");
        }
    }
}
