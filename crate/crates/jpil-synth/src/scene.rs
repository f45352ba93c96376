//! Deterministic bridge-like scenes with genuine translational symmetry.
//!
//! The repeated girders are exact translated copies of each other, so a
//! small session map registers ambiguously against every girder; the
//! asymmetric end blocks keep camera viewpoints globally distinguishable.

use jpil_core::geom::Point3;
use jpil_core::mesh::{box_mesh, TriangleMesh};
use jpil_core::{Error, Result};
use nalgebra::Vector3;

/// Parameters of a synthetic girder-bridge scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Number of identical girders.
    pub girders: usize,
    /// Girder center-to-center spacing, meters.
    pub spacing: f64,
    /// Girder web size (x thickness, y length, z height).
    pub girder_size: [f64; 3],
    /// Deck overhang beyond the outermost girders (x), width (y) and
    /// thickness (z).
    pub deck_size: [f64; 3],
    /// Default session vertex noise, meters.
    pub noise_sigma: f64,
    /// Default seed for sessions derived from this scene.
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            girders: 3,
            spacing: 10.0,
            girder_size: [0.6, 4.0, 2.1],
            deck_size: [10.0, 5.0, 0.4],
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.girders == 0 {
            return Err(Error::Validation("scene needs at least one girder".into()));
        }
        for d in self.girder_size.iter().chain(self.deck_size.iter()) {
            if !(*d > 0.0) {
                return Err(Error::Validation(format!("non-positive scene dimension {d}")));
            }
        }
        if self.girders > 1 && self.spacing <= self.girder_size[0] {
            return Err(Error::Validation(format!(
                "girder spacing {} must exceed girder width {}",
                self.spacing, self.girder_size[0]
            )));
        }
        Ok(())
    }

    /// Surface area of the generated mesh in closed form: the sum of the
    /// areas of its boxes.
    pub fn analytic_area(&self) -> f64 {
        boxes(self).iter().map(|(_, s)| 2.0 * (s.x * s.y + s.y * s.z + s.z * s.x)).sum()
    }
}

/// A generated scene: the mesh plus the ground-truth layout facts benchmark
/// protocols need.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: TriangleMesh,
    /// Girder center x coordinates, ascending.
    pub girder_x: Vec<f64>,
    /// Girder half extents (web plus attachments), for crop placement.
    pub girder_half: Vector3<f64>,
    /// Top of the deck slab.
    pub deck_top: f64,
    /// Underside plane of the deck slab (girder crops should reach just
    /// past it so session maps include the soffit patch the descriptors see).
    pub deck_underside: f64,
}

/// Knob ladder on each girder web: (y, z, size scale). Sizes are spread so
/// keypoint non-max suppression picks the same physical features in
/// independently sampled clouds; positions are identical on every girder to
/// keep the inter-girder symmetry exact.
const KNOBS: [(f64, f64, f64); 5] = [
    (-1.7, 0.45, 0.5),
    (-0.85, 1.25, 0.8),
    (0.0, 0.4, 1.1),
    (0.85, 1.3, 1.4),
    (1.7, 0.75, 1.7),
];

fn boxes(spec: &SceneSpec) -> Vec<(Point3, Vector3<f64>)> {
    let [gw, gl, gh] = spec.girder_size;
    let [dm, dw, dt] = spec.deck_size;
    let span = (spec.girders - 1) as f64 * spec.spacing;
    let web_top = gh - 0.3; // web is centered so its top carries the deck
    let mut out = Vec::new();
    // Deck slab resting on the girder webs.
    out.push((
        Point3::new(0.0, 0.0, web_top + dt / 2.0),
        Vector3::new(span + 2.0 * dm, dw, dt),
    ));
    for i in 0..spec.girders {
        let x = -span / 2.0 + i as f64 * spec.spacing;
        // Web, top flush with the deck underside.
        out.push((Point3::new(x, 0.0, web_top - gh / 2.0), Vector3::new(gw, gl, gh)));
        // Bottom flange meeting the web bottom exactly.
        let web_bottom = web_top - gh;
        out.push((
            Point3::new(x, 0.0, web_bottom - 0.075),
            Vector3::new(gw + 0.5, gl + 0.2, 0.15),
        ));
        // Surface-mounted gusset knobs on both web faces (never
        // interpenetrating: sampled walls inside a volume would blanket the
        // interior with spurious curvature).
        for (ky, kz, s) in KNOBS {
            let prot = 0.25 + 0.1 * s;
            let kz = web_bottom + kz;
            for side in [-1.0, 1.0] {
                out.push((
                    Point3::new(x + side * (gw / 2.0 + prot / 2.0), ky * gl / 4.0, kz),
                    Vector3::new(prot, 0.5 * s, 0.45 * s),
                ));
            }
        }
    }
    // Asymmetric end blocks: they break the scene's global symmetry so the
    // spherical image can disambiguate which girder the session map covers.
    out.push((
        Point3::new(-span / 2.0 - 0.75 * spec.spacing, 0.5, 0.9),
        Vector3::new(0.8, 1.6, 1.8),
    ));
    out.push((
        Point3::new(span / 2.0 + 0.75 * spec.spacing, -1.0, 0.5),
        Vector3::new(1.4, 0.9, 1.0),
    ));
    out
}

/// Build the scene mesh. Deterministic: the same spec always yields the
/// identical mesh.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut verts: Vec<Point3> = Vec::new();
    let mut tris: Vec<[u32; 3]> = Vec::new();
    for (center, size) in boxes(spec) {
        let b = box_mesh(center, size);
        let off = verts.len() as u32;
        verts.extend_from_slice(b.vertices());
        tris.extend(b.triangles().iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }
    let mesh = TriangleMesh::new(verts, tris)?;
    let span = (spec.girders - 1) as f64 * spec.spacing;
    let girder_x = (0..spec.girders).map(|i| -span / 2.0 + i as f64 * spec.spacing).collect();
    let max_knob = KNOBS.iter().fold(0.0f64, |a, &(_, _, s)| a.max(0.25 + 0.1 * s));
    Ok(Scene {
        mesh,
        girder_x,
        girder_half: Vector3::new(
            spec.girder_size[0] / 2.0 + max_knob + 0.1,
            spec.girder_size[1] / 2.0 + 0.25,
            spec.girder_size[2] / 2.0,
        ),
        deck_top: spec.girder_size[2] - 0.3 + spec.deck_size[2],
        deck_underside: spec.girder_size[2] - 0.3,
    })
}
