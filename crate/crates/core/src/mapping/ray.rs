//! Rays, ray/triangle intersection and a bounding-volume hierarchy over mesh
//! faces.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::mesh::TriMesh;

/// Barycentric slack so that hits on a shared edge register on both faces.
const EDGE_EPS: f64 = 1e-12;
/// Ray parameters closer than this (relative) count as the same distance.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub face: usize,
    pub point: Vector3<f64>,
    pub t: f64,
}

pub fn cast_pixel_ray(camera: &Camera, pixel: &Vector2<f64>) -> Ray {
    Ray {
        origin: camera.pose.center(),
        direction: camera.ray_direction(pixel),
    }
}

/// Moller-Trumbore; returns the ray parameter of a hit with `t > 0`.
pub fn intersect_triangle(ray: &Ray, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-14 * scale || scale == 0.0 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-12).then_some(t)
}

/// `(t, face)` beats the current best when strictly nearer, or equally near
/// with a lower face index.
fn better(t: f64, face: usize, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((bt, bf)) => {
            let tol = TIE_EPS * bt.abs().max(1.0);
            t < bt - tol || ((t - bt).abs() <= tol && face < bf)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vector3::repeat(f64::INFINITY),
            hi: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn of_triangle(tri: &[Vector3<f64>; 3]) -> Self {
        let mut b = Self::empty();
        for v in tri {
            b.grow(v);
        }
        b
    }

    fn grow(&mut self, v: &Vector3<f64>) {
        self.lo = self.lo.inf(v);
        self.hi = self.hi.sup(v);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    /// Slab test over `[0, t_max]`, padded so that grazing hits survive.
    fn hit(&self, ray: &Ray, t_max: f64) -> bool {
        let pad = 1e-9 * (self.hi - self.lo).amax().max(1.0);
        let (mut t0, mut t1) = (0.0f64, t_max);
        for a in 0..3 {
            let (lo, hi) = (self.lo[a] - pad, self.hi[a] + pad);
            let d = ray.direction[a];
            let o = ray.origin[a];
            if d.abs() < 1e-300 {
                if o < lo || o > hi {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut ta, mut tb) = ((lo - o) * inv, (hi - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

/// Nearest hit by testing every face (after a per-face box check).
pub fn intersect_ray_mesh(ray: &Ray, mesh: &TriMesh) -> Option<Hit> {
    let mut best: Option<(f64, usize)> = None;
    for face in 0..mesh.faces.len() {
        let tri = mesh.triangle(face);
        let limit = best.map_or(f64::INFINITY, |(t, _)| t + TIE_EPS * t.max(1.0));
        if !Aabb::of_triangle(&tri).hit(ray, limit) {
            continue;
        }
        if let Some(t) = intersect_triangle(ray, &tri) {
            if better(t, face, best) {
                best = Some((t, face));
            }
        }
    }
    best.map(|(t, face)| Hit {
        face,
        point: ray.at(t),
        t,
    })
}

enum Node {
    Leaf { bounds: Aabb, faces: Vec<usize> },
    Inner { bounds: Aabb, left: usize, right: usize },
}

/// Median-split bounding-volume hierarchy giving the same answers as
/// [`intersect_ray_mesh`].
pub struct Bvh<'m> {
    mesh: &'m TriMesh,
    nodes: Vec<Node>,
}

const LEAF_SIZE: usize = 4;

impl<'m> Bvh<'m> {
    pub fn new(mesh: &'m TriMesh) -> Self {
        let boxes: Vec<Aabb> = (0..mesh.faces.len())
            .map(|f| Aabb::of_triangle(&mesh.triangle(f)))
            .collect();
        let centroids: Vec<Vector3<f64>> = (0..mesh.faces.len()).map(|f| mesh.centroid(f)).collect();
        let mut bvh = Self {
            mesh,
            nodes: Vec::new(),
        };
        if !boxes.is_empty() {
            let all: Vec<usize> = (0..boxes.len()).collect();
            bvh.build(all, &boxes, &centroids);
        }
        bvh
    }

    fn build(&mut self, mut faces: Vec<usize>, boxes: &[Aabb], centroids: &[Vector3<f64>]) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &f in &faces {
            bounds.merge(&boxes[f]);
            cbox.grow(&centroids[f]);
        }
        let idx = self.nodes.len();
        let extent = cbox.hi - cbox.lo;
        if faces.len() <= LEAF_SIZE || extent.amax() <= 0.0 {
            self.nodes.push(Node::Leaf { bounds, faces });
            return idx;
        }
        let axis = extent.imax();
        faces.sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
        let right_half = faces.split_off(faces.len() / 2);
        self.nodes.push(Node::Leaf {
            bounds,
            faces: Vec::new(),
        });
        let left = self.build(faces, boxes, centroids);
        let right = self.build(right_half, boxes, centroids);
        self.nodes[idx] = Node::Inner { bounds, left, right };
        idx
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let limit = best.map_or(f64::INFINITY, |(t, _)| t + TIE_EPS * t.max(1.0));
            match &self.nodes[n] {
                Node::Leaf { bounds, faces } => {
                    if !bounds.hit(ray, limit) {
                        continue;
                    }
                    for &face in faces {
                        if let Some(t) = intersect_triangle(ray, &self.mesh.triangle(face)) {
                            if better(t, face, best) {
                                best = Some((t, face));
                            }
                        }
                    }
                }
                Node::Inner { bounds, left, right } => {
                    if bounds.hit(ray, limit) {
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
            }
        }
        best.map(|(t, face)| Hit {
            face,
            point: ray.at(t),
            t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};
    use crate::units::Units;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_triangle(z: f64) -> [Vector3<f64>; 3] {
        [
            Vector3::new(0.0, 0.0, z),
            Vector3::new(1.0, 0.0, z),
            Vector3::new(0.0, 1.0, z),
        ]
    }

    #[test]
    fn axis_aligned_hit() {
        let ray = Ray::new(Vector3::new(0.25, 0.25, 1.0), Vector3::new(0.0, 0.0, -1.0));
        let mesh = TriMesh::new(unit_triangle(0.0).to_vec(), vec![[0, 1, 2]], Units::Cm).unwrap();
        let hit = intersect_ray_mesh(&ray, &mesh).unwrap();
        assert_eq!(hit.face, 0);
        assert!((hit.t - 1.0).abs() < 1e-15);
        assert!((hit.point - Vector3::new(0.25, 0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn parallel_ray_misses() {
        let ray = Ray::new(Vector3::new(-1.0, 0.2, 0.0), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(intersect_triangle(&ray, &unit_triangle(0.0)), None);
    }

    #[test]
    fn nearest_of_stacked_triangles() {
        let mut v = unit_triangle(-1.0).to_vec();
        v.extend(unit_triangle(0.0));
        // back face listed first so index order cannot decide
        let mesh = TriMesh::new(v, vec![[0, 1, 2], [3, 4, 5]], Units::Cm).unwrap();
        let ray = Ray::new(Vector3::new(0.2, 0.2, 2.0), Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(intersect_ray_mesh(&ray, &mesh).unwrap().face, 1);
        assert_eq!(Bvh::new(&mesh).intersect(&ray).unwrap().face, 1);
    }

    #[test]
    fn shared_edge_goes_to_lowest_face() {
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let mesh = TriMesh::new(v, vec![[0, 2, 3], [0, 1, 2]], Units::Cm).unwrap();
        let ray = Ray::new(Vector3::new(0.5, 0.5, 1.0), Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(intersect_ray_mesh(&ray, &mesh).unwrap().face, 0);
        assert_eq!(Bvh::new(&mesh).intersect(&ray).unwrap().face, 0);
    }

    #[test]
    fn principal_point_looks_down_z() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        let cam = Camera::new(k, CameraPose::identity());
        let r = cast_pixel_ray(&cam, &Vector2::new(320.0, 240.0));
        assert!((r.direction - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn bvh_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v = Vec::new();
        let mut f = Vec::new();
        for i in 0..200 {
            let c = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            for _ in 0..3 {
                v.push(
                    c + Vector3::new(
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                    ),
                );
            }
            f.push([3 * i, 3 * i + 1, 3 * i + 2]);
        }
        let mesh = TriMesh::new(v, f, Units::Cm).unwrap();
        let bvh = Bvh::new(&mesh);
        for _ in 0..500 {
            let o = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let target = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let ray = Ray::new(o, target - o);
            assert_eq!(bvh.intersect(&ray), intersect_ray_mesh(&ray, &mesh));
        }
    }
}
