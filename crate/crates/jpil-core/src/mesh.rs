//! Triangle meshes, surface area accounting and ray casting.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::{BoundingBox, Point3, RigidTransform};

/// Zero-area tolerance below which a triangle is considered degenerate (m²).
pub const DEGENERATE_AREA: f64 = 1e-12;

/// An indexed triangle mesh. Degenerate (zero-area) triangles are dropped at
/// construction with a warning; out-of-range indices are an error.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (i, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::InvalidMesh(format!(
                        "triangle {i} references vertex {v} but mesh has {n} vertices"
                    )));
                }
            }
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        let before = triangles.len();
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| triangle_area(&vertices, t) > DEGENERATE_AREA)
            .collect();
        let dropped = before - triangles.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} degenerate triangle(s) at mesh load");
        }
        Ok(TriangleMesh { vertices, triangles })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_points(&self, i: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        triangle_area(&self.vertices, &self.triangles[i])
    }

    /// Unit normal of triangle `i` (cross-product orientation).
    pub fn triangle_normal(&self, i: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle_points(i);
        b.sub(&a).cross(&c.sub(&a)).normalize()
    }

    /// Total surface area: the sum of triangle areas.
    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        BoundingBox::from_points(self.vertices.iter())
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| t.apply(p)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// The sub-mesh of triangles whose vertices all lie inside `b`,
    /// reindexed to drop unused vertices. Growing the box grows the result
    /// monotonically.
    pub fn cropped(&self, b: &BoundingBox) -> TriangleMesh {
        let mut map = std::collections::HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for tri in &self.triangles {
            if !tri.iter().all(|&v| b.contains(&self.vertices[v as usize])) {
                continue;
            }
            let mut nt = [0u32; 3];
            for (k, &v) in tri.iter().enumerate() {
                nt[k] = *map.entry(v).or_insert_with(|| {
                    vertices.push(self.vertices[v as usize]);
                    (vertices.len() - 1) as u32
                });
            }
            triangles.push(nt);
        }
        TriangleMesh { vertices, triangles }
    }

    /// Brute-force nearest ray hit over every triangle. Reference path for
    /// the BVH; quadratic, test use only.
    pub fn raycast_brute(&self, origin: &Point3, direction: &Vector3<f64>) -> Result<Option<RayHit>> {
        let dir = normalize_direction(direction)?;
        let mut best: Option<RayHit> = None;
        for i in 0..self.triangles.len() {
            let tri = self.triangle_points(i);
            if let Some(t) = ray_triangle(origin, &dir, &tri) {
                if best.as_ref().map_or(true, |b| t < b.t) {
                    best = Some(RayHit::at(origin, &dir, t, i));
                }
            }
        }
        Ok(best)
    }
}

fn triangle_area(vertices: &[Point3], tri: &[u32; 3]) -> f64 {
    let a = vertices[tri[0] as usize];
    let b = vertices[tri[1] as usize];
    let c = vertices[tri[2] as usize];
    0.5 * b.sub(&a).cross(&c.sub(&a)).norm()
}

fn normalize_direction(direction: &Vector3<f64>) -> Result<Vector3<f64>> {
    let n = direction.norm();
    if n < 1e-12 {
        return Err(Error::DegenerateDirection);
    }
    Ok(direction / n)
}

/// A ray-mesh intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Intersection point.
    pub point: Point3,
    /// Ray parameter (distance along the unit direction).
    pub t: f64,
    /// Index of the intersected triangle.
    pub triangle: usize,
}

impl RayHit {
    fn at(origin: &Point3, dir: &Vector3<f64>, t: f64, triangle: usize) -> RayHit {
        RayHit { point: origin.add(&(dir * t)), t, triangle }
    }
}

/// Minimum positive ray parameter; hits closer than this are ignored so a ray
/// starting on a surface does not intersect it.
const T_MIN: f64 = 1e-12;

/// Möller–Trumbore ray/triangle intersection. Returns the ray parameter.
fn ray_triangle(origin: &Point3, dir: &Vector3<f64>, tri: &[Point3; 3]) -> Option<f64> {
    let e1 = tri[1].sub(&tri[0]);
    let e2 = tri[2].sub(&tri[0]);
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-16 {
        return None; // parallel
    }
    let inv_det = 1.0 / det;
    let tvec = origin.sub(&tri[0]);
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > T_MIN).then_some(t)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { min: Vector3::repeat(f64::INFINITY), max: Vector3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Point3) {
        let v = p.coords();
        self.min = self.min.inf(&v);
        self.max = self.max.sup(&v);
    }

    /// Slab test against `[T_MIN, t_max]`.
    fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> bool {
        let mut t0 = T_MIN;
        let mut t1 = t_max;
        for k in 0..3 {
            if inv_dir[k].is_infinite() {
                // Parallel to the slab: inside or miss.
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return false;
                }
                continue;
            }
            let ta = (self.min[k] - origin[k]) * inv_dir[k];
            let tb = (self.max[k] - origin[k]) * inv_dir[k];
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug)]
struct BvhNode {
    aabb: Aabb,
    /// Leaf: index of first triangle ref. Internal: index of left child
    /// (right child is `index + 1` in build order is not guaranteed, so we
    /// store it explicitly).
    left: u32,
    right: u32,
    /// Leaf when `count > 0`; then `left` is the first index into `order`.
    first: u32,
    count: u32,
}

/// Bounding volume hierarchy over a mesh for accelerated ray casting.
///
/// Output is required to match [`TriangleMesh::raycast_brute`] exactly: the
/// per-triangle intersection math is identical, so the nearest hit agrees.
#[derive(Debug)]
pub struct Bvh {
    mesh: TriangleMesh,
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(mesh: TriangleMesh) -> Self {
        let n = mesh.triangles().len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let [a, b, c] = mesh.triangle_points(i);
                (a.coords() + b.coords() + c.coords()) / 3.0
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * n.max(1));
        if n > 0 {
            Self::split(&mesh, &centroids, &mut order, 0, n, &mut nodes);
        }
        Bvh { mesh, nodes, order }
    }

    fn node_aabb(mesh: &TriangleMesh, order: &[u32], lo: usize, hi: usize) -> Aabb {
        let mut aabb = Aabb::empty();
        for &ti in &order[lo..hi] {
            for p in mesh.triangle_points(ti as usize) {
                aabb.grow(&p);
            }
        }
        aabb
    }

    fn split(
        mesh: &TriangleMesh,
        centroids: &[Vector3<f64>],
        order: &mut [u32],
        lo: usize,
        hi: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> u32 {
        let aabb = Self::node_aabb(mesh, order, lo, hi);
        let idx = nodes.len() as u32;
        nodes.push(BvhNode { aabb, left: 0, right: 0, first: lo as u32, count: (hi - lo) as u32 });
        if hi - lo <= LEAF_SIZE {
            return idx;
        }
        // Median split along the widest centroid axis.
        let mut cmin = Vector3::repeat(f64::INFINITY);
        let mut cmax = Vector3::repeat(f64::NEG_INFINITY);
        for &ti in &order[lo..hi] {
            cmin = cmin.inf(&centroids[ti as usize]);
            cmax = cmax.sup(&centroids[ti as usize]);
        }
        let ext = cmax - cmin;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        if ext[axis] < 1e-12 {
            return idx; // all centroids coincide, keep as leaf
        }
        let mid = lo + (hi - lo) / 2;
        order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let left = Self::split(mesh, centroids, order, lo, mid, nodes);
        let right = Self::split(mesh, centroids, order, mid, hi, nodes);
        nodes[idx as usize].left = left;
        nodes[idx as usize].right = right;
        nodes[idx as usize].count = 0;
        idx
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// Nearest intersection of the ray with the mesh, if any.
    ///
    /// `direction` is normalized internally; a zero vector is an error.
    pub fn raycast(&self, origin: &Point3, direction: &Vector3<f64>) -> Result<Option<RayHit>> {
        let dir = normalize_direction(direction)?;
        if self.nodes.is_empty() {
            return Ok(None);
        }
        let o = origin.coords();
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut stack = [0u32; 64];
        let mut top = 0usize;
        stack[top] = 0;
        top += 1;
        while top > 0 {
            top -= 1;
            let node = &self.nodes[stack[top] as usize];
            let t_max = best.as_ref().map_or(f64::INFINITY, |b| b.t);
            if !node.aabb.hit(&o, &inv_dir, t_max) {
                continue;
            }
            if node.count > 0 {
                for k in node.first..node.first + node.count {
                    let ti = self.order[k as usize] as usize;
                    let tri = self.mesh.triangle_points(ti);
                    if let Some(t) = ray_triangle(origin, &dir, &tri) {
                        if best.as_ref().map_or(true, |b| t < b.t) {
                            best = Some(RayHit::at(origin, &dir, t, ti));
                        }
                    }
                }
            } else {
                stack[top] = node.left;
                stack[top + 1] = node.right;
                top += 2;
            }
        }
        Ok(best)
    }
}

/// An axis-aligned box centered at `center` with side lengths `size`,
/// 12 triangles with outward normals.
pub fn box_mesh(center: Point3, size: Vector3<f64>) -> TriangleMesh {
    let h = size / 2.0;
    let c = center.coords();
    let corner = |sx: f64, sy: f64, sz: f64| {
        Point3::new(c.x + sx * h.x, c.y + sy * h.y, c.z + sz * h.z)
    };
    // 8 corners: bit 0 = +x, bit 1 = +y, bit 2 = +z.
    let v: Vec<Point3> = (0..8)
        .map(|i| {
            corner(
                if i & 1 != 0 { 1.0 } else { -1.0 },
                if i & 2 != 0 { 1.0 } else { -1.0 },
                if i & 4 != 0 { 1.0 } else { -1.0 },
            )
        })
        .collect();
    let quads: [[u32; 4]; 6] = [
        [1, 3, 7, 5], // +x
        [0, 4, 6, 2], // -x
        [2, 6, 7, 3], // +y
        [0, 1, 5, 4], // -y
        [4, 5, 7, 6], // +z
        [0, 2, 3, 1], // -z
    ];
    let mut tris = Vec::with_capacity(12);
    for q in quads {
        tris.push([q[0], q[1], q[2]]);
        tris.push([q[0], q[2], q[3]]);
    }
    TriangleMesh::new(v, tris).expect("box mesh is valid")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_right_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    /// Icosphere: subdivided icosahedron projected onto the unit sphere.
    pub(crate) fn icosphere(subdivisions: u32) -> TriangleMesh {
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        let mut verts: Vec<Vector3<f64>> = [
            (-1.0, phi, 0.0),
            (1.0, phi, 0.0),
            (-1.0, -phi, 0.0),
            (1.0, -phi, 0.0),
            (0.0, -1.0, phi),
            (0.0, 1.0, phi),
            (0.0, -1.0, -phi),
            (0.0, 1.0, -phi),
            (phi, 0.0, -1.0),
            (phi, 0.0, 1.0),
            (-phi, 0.0, -1.0),
            (-phi, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoints = std::collections::HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    let m = ((verts[a as usize] + verts[b as usize]) / 2.0).normalize();
                    verts.push(m);
                    (verts.len() - 1) as u32
                })
            };
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.push([a, ab, ca]);
                next.push([b, bc, ab]);
                next.push([c, ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        TriangleMesh::new(verts.into_iter().map(Point3::from_coords).collect(), faces).unwrap()
    }

    #[test]
    fn area_unit_right_triangle() {
        assert_relative_eq!(unit_right_triangle().surface_area(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn area_unit_cube() {
        let cube = box_mesh(Point3::ORIGIN, Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(cube.triangles().len(), 12);
        assert_relative_eq!(cube.surface_area(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn area_icosphere_near_analytic() {
        let sphere = icosphere(4);
        let analytic = 4.0 * std::f64::consts::PI;
        let area = sphere.surface_area();
        assert!(
            (area - analytic).abs() / analytic < 0.01,
            "icosphere area {area} vs {analytic}"
        );
    }

    #[test]
    fn area_invariant_under_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sphere = icosphere(2);
        let a0 = sphere.surface_area();
        for _ in 0..10 {
            let t = crate::geom::tests::random_rigid(&mut rng);
            let a1 = sphere.transformed(&t).surface_area();
            assert_relative_eq!(a0, a1, max_relative = 1e-9);
        }
    }

    #[test]
    fn degenerate_triangles_dropped() {
        let m = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3], [1, 1, 2]],
        )
        .unwrap();
        assert_eq!(m.triangles().len(), 1);
    }

    #[test]
    fn bad_index_rejected() {
        assert!(TriangleMesh::new(vec![Point3::ORIGIN], vec![[0, 0, 5]]).is_err());
    }

    #[test]
    fn raycast_floor_hit() {
        let floor = box_mesh(Point3::new(0.0, 0.0, -2.5), Vector3::new(10.0, 10.0, 1.0));
        let bvh = Bvh::build(floor);
        let hit = bvh
            .raycast(&Point3::ORIGIN, &Vector3::new(0.0, 0.0, -1.0))
            .unwrap()
            .expect("floor hit");
        assert_relative_eq!(hit.point.z, -2.0, epsilon = 1e-12);
        assert_relative_eq!(hit.point.x, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn raycast_parallel_miss() {
        let m = unit_right_triangle();
        let bvh = Bvh::build(m);
        let hit = bvh
            .raycast(&Point3::new(0.0, 0.0, 1.0), &Vector3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert!(hit.is_none());
    }

    #[test]
    fn raycast_zero_direction_errors() {
        let bvh = Bvh::build(unit_right_triangle());
        assert!(bvh.raycast(&Point3::ORIGIN, &Vector3::zeros()).is_err());
    }

    #[test]
    fn raycast_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sphere = icosphere(2);
        let bvh = Bvh::build(sphere.clone());
        let mut hits = 0;
        for _ in 0..500 {
            let origin = Point3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            // Aim roughly at the sphere with some scatter.
            let dir = -origin.coords()
                + Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
            if dir.norm() < 1e-6 {
                continue;
            }
            let brute = sphere.raycast_brute(&origin, &dir).unwrap();
            let fast = bvh.raycast(&origin, &dir).unwrap();
            match (brute, fast) {
                (None, None) => {}
                (Some(b), Some(f)) => {
                    hits += 1;
                    assert!(
                        (b.t - f.t).abs() < 1e-9,
                        "t mismatch: {} vs {}",
                        b.t,
                        f.t
                    );
                    assert!(b.point.distance(&f.point) < 1e-9);
                }
                (b, f) => panic!("hit disagreement: brute={b:?} bvh={f:?}"),
            }
        }
        assert!(hits > 50, "expected many hits, got {hits}");
    }

    #[test]
    fn raycast_hit_on_ray_and_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sphere = icosphere(2);
        let bvh = Bvh::build(sphere.clone());
        for _ in 0..200 {
            let origin = Point3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if dir.norm() < 1e-6 {
                continue;
            }
            if let Some(hit) = bvh.raycast(&origin, &dir).unwrap() {
                let d = dir.normalize();
                // On the ray:
                let along = origin.add(&(d * hit.t));
                assert!(along.distance(&hit.point) < 1e-9);
                // On the triangle plane:
                let [a, _, _] = sphere.triangle_points(hit.triangle);
                let n = sphere.triangle_normal(hit.triangle);
                assert!(hit.point.sub(&a).dot(&n).abs() < 1e-9);
            }
        }
    }
}
