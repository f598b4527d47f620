//! Triangle meshes with exact ray casting through a bounding volume hierarchy.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geodesy::LocalPoint;

/// Faces with a smaller area are dropped when a mesh is built.
pub const MIN_FACE_AREA: f64 = 1e-12;
/// |det| below this counts as a ray parallel to the triangle.
const PARALLEL_EPS: f64 = 1e-12;
/// Barycentric slack so a ray through a shared edge hits at least one face.
const EDGE_EPS: f64 = 1e-10;
const LEAF_SIZE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    BadIndex { face: usize, index: usize, count: usize },
    #[error("mesh has no faces with positive area")]
    Empty,
    #[error("sampling density must be positive, got {0}")]
    BadDensity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: LocalPoint,
    pub face_index: usize,
    /// Distance along the (unit) ray direction.
    pub distance: f64,
    pub barycentric: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn entry(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            if inv_dir[a].is_infinite() {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let mut near = (self.min[a] - origin[a]) * inv_dir[a];
            let mut far = (self.max[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // Pad against rounding so boundary hits are never culled.
            let pad = 1e-12 * (1.0 + near.abs().max(far.abs()));
            t0 = t0.max(near - pad);
            t1 = t1.min(far + pad);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    fn build(vertices: &[LocalPoint], faces: &[[usize; 3]]) -> Self {
        if faces.is_empty() {
            return Self::default();
        }
        let boxes: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                for &i in f {
                    b.grow(&vertices[i].coords);
                }
                b
            })
            .collect();
        let centroids: Vec<Vector3<f64>> = boxes.iter().map(|b| (b.min + b.max) * 0.5).collect();
        let mut bvh = Self {
            nodes: Vec::with_capacity(2 * faces.len() / LEAF_SIZE + 1),
            order: (0..faces.len()).collect(),
        };
        bvh.build_node(&boxes, &centroids, 0, faces.len());
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], centroids: &[Vector3<f64>], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &self.order[start..end] {
            bounds.merge(&boxes[f]);
            cbounds.grow(&centroids[f]);
        }
        let id = self.nodes.len();
        let count = end - start;
        let extent = cbounds.max - cbounds.min;
        if count <= LEAF_SIZE || extent.max() <= 0.0 {
            self.nodes.push(Node::Leaf { bounds, start, count });
            return id;
        }
        let axis = extent.imax();
        let mid = start + count / 2;
        self.order[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        self.nodes.push(Node::Leaf { bounds, start, count });
        let left = self.build_node(boxes, centroids, start, mid);
        let right = self.build_node(boxes, centroids, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }
}

/// Indexed triangle mesh; immutable once built.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<LocalPoint>,
    faces: Vec<[usize; 3]>,
    bvh: Bvh,
}

impl TriangleMesh {
    /// Validates indices, drops degenerate faces and builds the BVH.
    pub fn new(vertices: Vec<LocalPoint>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= vertices.len() {
                    return Err(MeshError::BadIndex {
                        face: fi,
                        index: i,
                        count: vertices.len(),
                    });
                }
            }
        }
        let before = faces.len();
        let faces: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]) > MIN_FACE_AREA)
            .collect();
        if faces.len() < before {
            log::debug!("dropped {} degenerate faces", before - faces.len());
        }
        let bvh = Bvh::build(&vertices, &faces);
        Ok(Self { vertices, faces, bvh })
    }

    pub fn vertices(&self) -> &[LocalPoint] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [LocalPoint; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        triangle_area(&a, &b, &c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Unit normal of a face, following the vertex winding.
    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        let vertices = self.vertices.iter().map(|v| v + offset).collect();
        Self::new(vertices, self.faces.clone()).expect("translation keeps the mesh valid")
    }

    fn hit_face(&self, face: usize, origin: &LocalPoint, dir: &Vector3<f64>) -> Option<RayHit> {
        let [v0, v1, v2] = self.triangle(face);
        moller_trumbore(&v0, &v1, &v2, origin, dir).map(|(t, u, v)| RayHit {
            point: origin + dir * t,
            face_index: face,
            distance: t,
            barycentric: [1.0 - u - v, u, v],
        })
    }
}

fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Returns (t, u, v) for a hit with t > 0.
fn moller_trumbore(
    v0: &Point3<f64>,
    v1: &Point3<f64>,
    v2: &Point3<f64>,
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, f64, f64)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < PARALLEL_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(&p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t > 0.0 {
        Some((t, u, v))
    } else {
        None
    }
}

fn closer(candidate: &RayHit, best: &Option<RayHit>) -> bool {
    match best {
        None => true,
        Some(b) => {
            candidate.distance < b.distance || (candidate.distance == b.distance && candidate.face_index < b.face_index)
        }
    }
}

/// Nearest hit of the ray `origin + s·direction`, s > 0, using the BVH.
/// Ties in distance go to the lower face index.
pub fn ray_intersect(mesh: &TriangleMesh, origin: &LocalPoint, direction: &Vector3<f64>) -> Option<RayHit> {
    if mesh.bvh.nodes.is_empty() {
        return None;
    }
    let inv_dir = direction.map(|d| 1.0 / d);
    let o = origin.coords;
    let mut best: Option<RayHit> = None;
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        let node = &mesh.bvh.nodes[id];
        let t_max = best.map_or(f64::INFINITY, |b| b.distance);
        if node.bounds().entry(&o, &inv_dir, t_max).is_none() {
            continue;
        }
        match *node {
            Node::Leaf { start, count, .. } => {
                for &face in &mesh.bvh.order[start..start + count] {
                    if let Some(hit) = mesh.hit_face(face, origin, direction) {
                        if closer(&hit, &best) {
                            best = Some(hit);
                        }
                    }
                }
            }
            Node::Inner { left, right, .. } => {
                stack.push(right);
                stack.push(left);
            }
        }
    }
    best
}

/// Reference implementation testing every face.
pub fn ray_intersect_brute_force(mesh: &TriangleMesh, origin: &LocalPoint, direction: &Vector3<f64>) -> Option<RayHit> {
    let mut best = None;
    for face in 0..mesh.faces.len() {
        if let Some(hit) = mesh.hit_face(face, origin, direction) {
            if closer(&hit, &best) {
                best = Some(hit);
            }
        }
    }
    best
}

/// Area-weighted uniform sampling: round(density × area) points, each on a
/// face chosen with probability proportional to its area. Returns the point
/// and its source face.
pub fn sample_surface_with_faces(
    mesh: &TriangleMesh,
    density: f64,
    seed: u64,
) -> Result<Vec<(LocalPoint, usize)>, MeshError> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(MeshError::BadDensity(density));
    }
    if mesh.faces.is_empty() {
        return Err(MeshError::Empty);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    let count = (density * total).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.random_range(0.0..total);
        let face = cumulative.partition_point(|&c| c <= r).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.triangle(face);
        let s = rng.random::<f64>().sqrt();
        let w = rng.random::<f64>();
        let p = a.coords * (1.0 - s) + b.coords * (s * (1.0 - w)) + c.coords * (s * w);
        out.push((Point3::from(p), face));
    }
    Ok(out)
}

pub fn sample_surface(mesh: &TriangleMesh, density: f64, seed: u64) -> Result<Vec<LocalPoint>, MeshError> {
    Ok(sample_surface_with_faces(mesh, density, seed)?
        .into_iter()
        .map(|(p, _)| p)
        .collect())
}

/// Regular grid mesh over [x0, x0+nx·step] × [y0, y0+ny·step] with heights from `height`.
pub fn grid_mesh(x0: f64, y0: f64, step: f64, nx: usize, ny: usize, height: impl Fn(f64, f64) -> f64) -> TriangleMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = x0 + i as f64 * step;
            let y = y0 + j as f64 * step;
            vertices.push(Point3::new(x, y, height(x, y)));
        }
    }
    let mut faces = Vec::with_capacity(2 * nx * ny);
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("grid mesh indices are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn unit_triangle() -> TriangleMesh {
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

    fn random_mesh(rng: &mut ChaCha8Rng, faces: usize) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut f = Vec::new();
        for i in 0..faces {
            let c = Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            for _ in 0..3 {
                vertices.push(Point3::from(
                    c + Vector3::new(
                        rng.random_range(-1.5..1.5),
                        rng.random_range(-1.5..1.5),
                        rng.random_range(-1.5..1.5),
                    ),
                ));
            }
            f.push([3 * i, 3 * i + 1, 3 * i + 2]);
        }
        TriangleMesh::new(vertices, f).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn axis_aligned_hit() {
        let mesh = unit_triangle();
        let hit = ray_intersect(&mesh, &Point3::new(0.25, 0.25, 1.0), &Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(hit.point, Point3::new(0.25, 0.25, 0.0));
        assert_eq!(hit.distance, 1.0);
        assert_eq!(hit.face_index, 0);
        let b = hit.barycentric;
        assert!((b[0] + b[1] + b[2] - 1.0).abs() < 1e-12);
        assert!((b[1] - 0.25).abs() < 1e-12 && (b[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_backward_rays_miss() {
        let mesh = unit_triangle();
        assert!(ray_intersect(&mesh, &Point3::new(-1.0, 0.2, 0.0), &Vector3::new(1.0, 0.0, 0.0)).is_none());
        assert!(ray_intersect(&mesh, &Point3::new(0.2, 0.2, 1.0), &Vector3::new(0.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(mesh.faces().is_empty());
        assert_eq!(sample_surface(&mesh, 10.0, 0), Err(MeshError::Empty));
        assert!(matches!(
            TriangleMesh::new(vec![Point3::origin()], vec![[0, 1, 2]]),
            Err(MeshError::BadIndex { .. })
        ));
    }

    #[test]
    fn bvh_matches_brute_force_on_random_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mesh = random_mesh(&mut rng, 1000);
        let mut hits = 0;
        for _ in 0..10_000 {
            let origin = Point3::new(
                rng.random_range(-15.0..15.0),
                rng.random_range(-15.0..15.0),
                rng.random_range(-15.0..15.0),
            );
            let dir = random_unit(&mut rng);
            let a = ray_intersect(&mesh, &origin, &dir);
            let b = ray_intersect_brute_force(&mesh, &origin, &dir);
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    hits += 1;
                    assert_eq!(a.face_index, b.face_index);
                    assert!((a.distance - b.distance).abs() < 1e-9);
                }
                _ => panic!("bvh and brute force disagree: {a:?} vs {b:?}"),
            }
        }
        assert!(hits > 1000);
    }

    #[test]
    fn samples_on_single_triangle() {
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 1.0),
                Point3::new(2.0, 0.0, 1.0),
                Point3::new(0.0, 1.0, 1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!((mesh.total_area() - 1.0).abs() < 1e-12);
        let pts = sample_surface(&mesh, 1000.0, 4).unwrap();
        let sigma = 1000f64.sqrt();
        assert!((pts.len() as f64 - 1000.0).abs() <= 3.0 * sigma);
        for p in pts {
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x / 2.0 + p.y <= 1.0 + 1e-12);
            assert!((p.z - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_counts_follow_areas() {
        // Areas 1 and 3.
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(13.0, 0.0, 0.0),
                Point3::new(10.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let samples = sample_surface_with_faces(&mesh, 2000.0, 21).unwrap();
        let n = samples.len() as f64;
        let first = samples.iter().filter(|(_, f)| *f == 0).count() as f64;
        // Binomial(n, 1/4): 4σ band.
        let sd = (n * 0.25 * 0.75).sqrt();
        assert!((first - n / 4.0).abs() < 4.0 * sd, "{first} of {n}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let mesh = grid_mesh(0.0, 0.0, 1.0, 4, 4, |x, y| 0.1 * x + y.sin());
        assert_eq!(
            sample_surface(&mesh, 5.0, 3).unwrap(),
            sample_surface(&mesh, 5.0, 3).unwrap()
        );
    }

    proptest! {
        #[test]
        fn samples_lie_on_their_face_plane(seed in 0u64..1000) {
            let mesh = grid_mesh(-3.0, -2.0, 0.7, 5, 4, |x, y| (0.3 * x).sin() * 2.0 + 0.2 * y * y);
            for (p, f) in sample_surface_with_faces(&mesh, 3.0, seed).unwrap() {
                let [a, _, _] = mesh.triangle(f);
                let dist = (p - a).dot(&mesh.face_normal(f)).abs();
                prop_assert!(dist < 1e-9);
            }
        }

        #[test]
        fn translation_equivariance(
            ox in -5.0f64..5.0, oy in -5.0f64..5.0, seed in 0u64..100,
            tx in -100.0f64..100.0, ty in -100.0f64..100.0, tz in -100.0f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mesh = grid_mesh(-6.0, -6.0, 1.0, 12, 12, |x, y| (x * 0.4).cos() + 0.1 * y);
            let dir = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), -1.0).normalize();
            let origin = Point3::new(ox, oy, 10.0);
            let offset = Vector3::new(tx, ty, tz);
            let moved = mesh.translated(&offset);
            let a = ray_intersect(&mesh, &origin, &dir);
            let b = ray_intersect(&moved, &(origin + offset), &dir);
            match (a, b) {
                (Some(a), Some(b)) => {
                    prop_assert!((a.point + offset - b.point).norm() < 1e-9);
                    prop_assert_eq!(a.face_index, b.face_index);
                }
                (None, None) => {}
                _ => prop_assert!(false, "hit mismatch"),
            }
        }
    }
}
