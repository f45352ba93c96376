//! Equirectangular spherical camera model, synthetic rendering with a
//! per-pixel 3D backtrack buffer, and the backtrack-spread sigma map.
//!
//! Pixel convention: continuous pixel coordinates, where integer pixel
//! `(ix, iy)` covers `[ix, ix+1) x [iy, iy+1)` and is sampled at its center
//! `(ix + 0.5, iy + 0.5)`. Longitude `theta = 2*pi*x/w - pi` is zero at North
//! and increases eastward; latitude `phi = pi/2 - pi*y/h` is `pi/2` at the
//! zenith. The camera-frame ray is
//! `(cos(phi)*sin(theta), cos(phi)*cos(theta), sin(phi))`, mapped to world by
//! the orientation rotation.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{OrientationENU, Point3};
use crate::mesh::Bvh;

/// An 8-bit grayscale equirectangular image with a 2:1 aspect ratio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SphericalImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl SphericalImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width != 2 * height || height == 0 {
            return Err(Error::Validation(format!(
                "spherical image must be 2:1, got {width}x{height}"
            )));
        }
        if pixels.len() != (width * height) as usize {
            return Err(Error::Validation(format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width * height
            )));
        }
        Ok(SphericalImage { width, height, pixels })
    }

    pub fn zeros(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, vec![0; (width as usize) * (height as usize)])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    /// Decode a PNG (color images are converted to grayscale).
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Png(e.to_string()))?;
        let gray = img.to_luma8();
        Self::new(gray.width(), gray.height(), gray.into_raw())
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length is validated");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png).map_err(|e| Error::Png(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// Camera-frame unit ray for continuous pixel coordinates (no orientation).
fn camera_ray(x: f64, y: f64, w: u32, h: u32) -> Vector3<f64> {
    let theta = std::f64::consts::TAU * x / w as f64 - std::f64::consts::PI;
    let phi = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * y / h as f64;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(cp * st, cp * ct, sp)
}

/// World-frame unit ray through continuous pixel `(x, y)` of a `w x h`
/// equirectangular image with the given camera orientation.
///
/// Out-of-range coordinates are an error. The center of integer pixel `ix`
/// is at `x = ix + 0.5`, so the identity-orientation image center
/// `(w/2, h/2)` maps exactly to North `(0, 1, 0)`.
pub fn pixel_to_ray(x: f64, y: f64, w: u32, h: u32, orientation: &OrientationENU) -> Result<Vector3<f64>> {
    if !(0.0..(w as f64 + 1e-9)).contains(&x) || !(0.0..(h as f64 + 1e-9)).contains(&y) {
        return Err(Error::PixelOutOfRange { x, y, w, h });
    }
    Ok(orientation.rotation() * camera_ray(x, y, w, h))
}

/// The spherical camera: position, orientation and image size.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalCamera {
    pub position: Point3,
    pub orientation: OrientationENU,
    rotation: Matrix3<f64>,
    pub width: u32,
    pub height: u32,
}

impl SphericalCamera {
    pub fn new(position: Point3, orientation: OrientationENU, width: u32, height: u32) -> Result<Self> {
        if width != 2 * height || height == 0 {
            return Err(Error::Validation(format!("render size must be 2:1, got {width}x{height}")));
        }
        Ok(SphericalCamera { position, orientation, rotation: orientation.rotation(), width, height })
    }

    /// World unit ray through continuous pixel coordinates.
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        self.rotation * camera_ray(x, y, self.width, self.height)
    }

    /// Camera-frame unit ray through continuous pixel coordinates.
    pub fn ray_camera(&self, x: f64, y: f64) -> Vector3<f64> {
        camera_ray(x, y, self.width, self.height)
    }

    /// Project a world point to continuous pixel coordinates.
    ///
    /// Returns `None` for points coincident with the camera center.
    pub fn project(&self, p: &Point3) -> Option<(f64, f64)> {
        let v = self.rotation.transpose() * p.sub(&self.position);
        let n = v.norm();
        if n < 1e-12 {
            return None;
        }
        let theta = v.x.atan2(v.y);
        let phi = (v.z / n).clamp(-1.0, 1.0).asin();
        let mut x = (theta + std::f64::consts::PI) * self.width as f64 / std::f64::consts::TAU;
        let y = (std::f64::consts::FRAC_PI_2 - phi) * self.height as f64 / std::f64::consts::PI;
        if x >= self.width as f64 {
            x -= self.width as f64;
        }
        Some((x, y))
    }
}

/// A synthetic render: shaded image, per-pixel backtrack points and the
/// sigma uncertainty map.
#[derive(Debug, Clone)]
pub struct SphericalRender {
    pub camera: SphericalCamera,
    pub image: SphericalImage,
    /// Hit point per pixel, row-major; `None` where the ray missed.
    pub backtrack: Vec<Option<Point3>>,
    /// Backtrack spread per pixel, meters; infinite where unsupported.
    pub sigma: Vec<f64>,
}

impl SphericalRender {
    pub fn backtrack_at(&self, ix: u32, iy: u32) -> Option<Point3> {
        self.backtrack[(iy * self.camera.width + ix) as usize]
    }

    pub fn sigma_at(&self, ix: u32, iy: u32) -> f64 {
        self.sigma[(iy * self.camera.width + ix) as usize]
    }

    /// Binary little-endian dump of the backtrack buffer: float32 x, y, z per
    /// pixel, row-major, NaN triplets for misses.
    pub fn backtrack_dump(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.backtrack.len() * 12);
        for bt in &self.backtrack {
            let (x, y, z) = match bt {
                Some(p) => (p.x as f32, p.y as f32, p.z as f32),
                None => (f32::NAN, f32::NAN, f32::NAN),
            };
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
            out.extend_from_slice(&z.to_le_bytes());
        }
        out
    }
}

/// Render the mesh from `position` with `orientation`: per-pixel nearest
/// raycast, Lambertian shading from a headlamp at the camera, hit points
/// recorded in the backtrack buffer, misses left black and invalid. The
/// sigma map is computed with window half-width `sigma_kernel`.
pub fn render_spherical(
    bvh: &Bvh,
    position: Point3,
    orientation: OrientationENU,
    width: u32,
    height: u32,
    sigma_kernel: usize,
) -> Result<SphericalRender> {
    let camera = SphericalCamera::new(position, orientation, width, height)?;
    let w = width as usize;
    let h = height as usize;
    let mut pixels = vec![0u8; w * h];
    let mut backtrack: Vec<Option<Point3>> = vec![None; w * h];

    pixels
        .par_chunks_mut(w)
        .zip(backtrack.par_chunks_mut(w))
        .enumerate()
        .for_each(|(iy, (row_px, row_bt))| {
            for ix in 0..w {
                let dir = camera.ray(ix as f64 + 0.5, iy as f64 + 0.5);
                if let Some(hit) = bvh.raycast(&position, &dir).expect("unit ray") {
                    let normal = bvh.mesh().triangle_normal(hit.triangle);
                    let lambert = normal.dot(&dir).abs();
                    row_px[ix] = (255.0 * lambert).round().clamp(0.0, 255.0) as u8;
                    row_bt[ix] = Some(hit.point);
                }
            }
        });

    let sigma = sigma_map_buffers(&backtrack, width, height, sigma_kernel);
    Ok(SphericalRender {
        camera,
        image: SphericalImage::new(width, height, pixels)?,
        backtrack,
        sigma,
    })
}

/// Per-pixel spread of the valid backtrack points in a `(2n+1)²` window:
/// the RMS distance to the window centroid. Windows wrap horizontally
/// (the image seam is contiguous on the sphere) and clamp vertically.
/// Pixels with fewer than 4 valid window members get infinite sigma.
pub fn sigma_map(render: &SphericalRender, n: usize) -> Vec<f64> {
    sigma_map_buffers(&render.backtrack, render.camera.width, render.camera.height, n)
}

fn sigma_map_buffers(backtrack: &[Option<Point3>], width: u32, height: u32, n: usize) -> Vec<f64> {
    assert!(n >= 1, "sigma kernel half-width must be at least 1");
    let w = width as i64;
    let h = height as i64;
    let mut sigma = vec![f64::INFINITY; (width * height) as usize];
    sigma
        .par_chunks_mut(width as usize)
        .enumerate()
        .for_each(|(iy, row)| {
            let iy = iy as i64;
            for ix in 0..w {
                let mut count = 0usize;
                let mut sum = Vector3::zeros();
                let mut sum_sq = 0.0;
                for dy in -(n as i64)..=(n as i64) {
                    let y = iy + dy;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for dx in -(n as i64)..=(n as i64) {
                        let x = (ix + dx).rem_euclid(w);
                        if let Some(p) = backtrack[(y * w + x) as usize] {
                            let v = p.coords();
                            sum += v;
                            sum_sq += v.norm_squared();
                            count += 1;
                        }
                    }
                }
                if count >= 4 {
                    let mean = sum / count as f64;
                    let var = (sum_sq / count as f64 - mean.norm_squared()).max(0.0);
                    row[ix as usize] = var.sqrt();
                }
            }
        });
    sigma
}
