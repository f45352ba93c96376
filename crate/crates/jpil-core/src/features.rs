//! 2D feature matching between equirectangular images.
//!
//! The matcher interface is pluggable so the pose-estimation stage can run
//! on any correspondence source (including precomputed files). The default
//! implementation detects multi-scale Harris corners and describes them with
//! binary intensity-comparison patches matched by mutual nearest neighbor
//! under Hamming distance. Patches wrap horizontally (the equirectangular
//! seam is contiguous on the sphere) and clamp vertically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::spherical::SphericalImage;

/// A 2D-2D match in continuous pixel coordinates (real image, synthetic image).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMatch {
    pub real: (f64, f64),
    pub synth: (f64, f64),
}

/// Produces 2D-2D correspondences between the real camera image and a
/// synthetic render of the same scene.
pub trait FeatureMatcher: Send + Sync {
    fn match_images(&self, real: &SphericalImage, synth: &SphericalImage) -> Vec<PixelMatch>;
}

/// Returns a fixed list of matches regardless of image content. Used to test
/// the pose-estimation stage in isolation.
pub struct FixedMatches(pub Vec<PixelMatch>);

impl FeatureMatcher for FixedMatches {
    fn match_images(&self, _real: &SphericalImage, _synth: &SphericalImage) -> Vec<PixelMatch> {
        self.0.clone()
    }
}

const BRIEF_BITS: usize = 256;
const PATCH_RADIUS: i64 = 12;

/// Default matcher: pyramid Harris corners + binary patch descriptors +
/// mutual nearest neighbor.
pub struct HarrisBriefMatcher {
    /// Pyramid levels (level l is downsampled by 2^l).
    pub levels: usize,
    /// Maximum corners kept per level.
    pub max_per_level: usize,
    /// Harris response threshold relative to the level maximum.
    pub rel_threshold: f64,
    /// Maximum accepted Hamming distance (of [`BRIEF_BITS`]).
    pub max_distance: u32,
    /// Best/second-best distance ratio gate.
    pub ratio: f64,
    pairs: Vec<(i64, i64, i64, i64)>,
}

impl Default for HarrisBriefMatcher {
    fn default() -> Self {
        // Fixed comparison pattern; seeded so every matcher instance agrees.
        let mut rng = ChaCha8Rng::seed_from_u64(0xB121F);
        let pairs = (0..BRIEF_BITS)
            .map(|_| {
                (
                    rng.gen_range(-PATCH_RADIUS..=PATCH_RADIUS),
                    rng.gen_range(-PATCH_RADIUS..=PATCH_RADIUS),
                    rng.gen_range(-PATCH_RADIUS..=PATCH_RADIUS),
                    rng.gen_range(-PATCH_RADIUS..=PATCH_RADIUS),
                )
            })
            .collect();
        HarrisBriefMatcher {
            levels: 3,
            max_per_level: 400,
            rel_threshold: 0.005,
            max_distance: 60,
            ratio: 0.9,
            pairs,
        }
    }
}

/// Grayscale float image with wrap-x / clamp-y addressing.
struct Gray {
    w: i64,
    h: i64,
    data: Vec<f32>,
}

impl Gray {
    fn from_image(img: &SphericalImage) -> Gray {
        Gray {
            w: img.width() as i64,
            h: img.height() as i64,
            data: img.pixels().iter().map(|&p| p as f32).collect(),
        }
    }

    #[inline]
    fn at(&self, x: i64, y: i64) -> f32 {
        let x = x.rem_euclid(self.w);
        let y = y.clamp(0, self.h - 1);
        self.data[(y * self.w + x) as usize]
    }

    fn halved(&self) -> Gray {
        let w = self.w / 2;
        let h = self.h / 2;
        let mut data = vec![0.0; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                data[(y * w + x) as usize] = 0.25
                    * (self.at(2 * x, 2 * y)
                        + self.at(2 * x + 1, 2 * y)
                        + self.at(2 * x, 2 * y + 1)
                        + self.at(2 * x + 1, 2 * y + 1));
            }
        }
        Gray { w, h, data }
    }

    /// 3x3 box blur.
    fn blurred(&self) -> Gray {
        let mut data = vec![0.0; (self.w * self.h) as usize];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut s = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        s += self.at(x + dx, y + dy);
                    }
                }
                data[(y * self.w + x) as usize] = s / 9.0;
            }
        }
        Gray { w: self.w, h: self.h, data }
    }
}

struct Corner {
    x: i64,
    y: i64,
    response: f64,
}

fn harris_corners(img: &Gray, max_corners: usize, rel_threshold: f64) -> Vec<Corner> {
    let w = img.w;
    let h = img.h;
    let mut ixx = vec![0.0f64; (w * h) as usize];
    let mut iyy = vec![0.0f64; (w * h) as usize];
    let mut ixy = vec![0.0f64; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let gx = (img.at(x + 1, y) - img.at(x - 1, y)) as f64 * 0.5;
            let gy = (img.at(x, y + 1) - img.at(x, y - 1)) as f64 * 0.5;
            let i = (y * w + x) as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    // Structure tensor summed over a 5x5 window, then the Harris response.
    let idx = |x: i64, y: i64| (y.clamp(0, h - 1) * w + x.rem_euclid(w)) as usize;
    let mut response = vec![0.0f64; (w * h) as usize];
    let mut max_r: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let i = idx(x + dx, y + dy);
                    sxx += ixx[i];
                    syy += iyy[i];
                    sxy += ixy[i];
                }
            }
            let det = sxx * syy - sxy * sxy;
            let tr = sxx + syy;
            let r = det - 0.04 * tr * tr;
            response[(y * w + x) as usize] = r;
            max_r = max_r.max(r);
        }
    }
    if max_r <= 0.0 {
        return Vec::new();
    }
    let threshold = rel_threshold * max_r;
    let mut corners = Vec::new();
    for y in 1..h - 1 {
        'px: for x in 0..w {
            let r = response[(y * w + x) as usize];
            if r < threshold {
                continue;
            }
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let rn = response[idx(x + dx, y + dy)];
                    if rn > r || (rn == r && (dy < 0 || (dy == 0 && dx < 0))) {
                        continue 'px; // not the window maximum
                    }
                }
            }
            corners.push(Corner { x, y, response: r });
        }
    }
    corners.sort_by(|a, b| b.response.total_cmp(&a.response).then((a.y, a.x).cmp(&(b.y, b.x))));
    corners.truncate(max_corners);
    corners
}

struct Described {
    /// Level-0 continuous pixel coordinates.
    pos: (f64, f64),
    desc: [u64; BRIEF_BITS / 64],
}

impl HarrisBriefMatcher {
    fn describe(&self, img: &SphericalImage) -> Vec<Described> {
        let mut level_img = Gray::from_image(img);
        let mut out = Vec::new();
        for level in 0..self.levels {
            if level > 0 {
                if level_img.w < 4 * PATCH_RADIUS || level_img.h < 4 * PATCH_RADIUS {
                    break;
                }
                level_img = level_img.halved();
            }
            let blurred = level_img.blurred();
            let corners =
                harris_corners(&level_img, self.max_per_level, self.rel_threshold);
            let scale = (1u64 << level) as f64;
            for c in corners {
                let mut desc = [0u64; BRIEF_BITS / 64];
                for (bit, &(ax, ay, bx, by)) in self.pairs.iter().enumerate() {
                    if blurred.at(c.x + ax, c.y + ay) < blurred.at(c.x + bx, c.y + by) {
                        desc[bit / 64] |= 1 << (bit % 64);
                    }
                }
                out.push(Described {
                    pos: ((c.x as f64 + 0.5) * scale, (c.y as f64 + 0.5) * scale),
                    desc,
                });
            }
        }
        out
    }
}

fn desc_distance(a: &[u64; BRIEF_BITS / 64], b: &[u64; BRIEF_BITS / 64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

impl FeatureMatcher for HarrisBriefMatcher {
    fn match_images(&self, real: &SphericalImage, synth: &SphericalImage) -> Vec<PixelMatch> {
        let real_feats = self.describe(real);
        let synth_feats = self.describe(synth);
        if real_feats.is_empty() || synth_feats.is_empty() {
            return Vec::new();
        }
        // Best and second-best synth candidate per real feature.
        let forward: Vec<(usize, u32, u32)> = real_feats
            .iter()
            .map(|rf| {
                let mut best = (usize::MAX, u32::MAX);
                let mut second = u32::MAX;
                for (j, sf) in synth_feats.iter().enumerate() {
                    let d = desc_distance(&rf.desc, &sf.desc);
                    if d < best.1 {
                        second = best.1;
                        best = (j, d);
                    } else if d < second {
                        second = d;
                    }
                }
                (best.0, best.1, second)
            })
            .collect();
        // Best real candidate per synth feature (for the mutual check).
        let backward: Vec<usize> = synth_feats
            .iter()
            .map(|sf| {
                let mut best = (usize::MAX, u32::MAX);
                for (i, rf) in real_feats.iter().enumerate() {
                    let d = desc_distance(&rf.desc, &sf.desc);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best.0
            })
            .collect();

        let mut matches = Vec::new();
        for (i, &(j, d, second)) in forward.iter().enumerate() {
            if j == usize::MAX || d > self.max_distance {
                continue;
            }
            if backward[j] != i {
                continue;
            }
            if second != u32::MAX && (d as f64) > self.ratio * second as f64 {
                continue;
            }
            matches.push(PixelMatch { real: real_feats[i].pos, synth: synth_feats[j].pos });
        }
        matches
    }
}
