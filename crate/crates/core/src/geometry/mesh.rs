use std::collections::HashMap;

use rand::Rng;

use super::{Aabb, GeometryError, Vec3};

/// Triangles with area at or below this are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Indexed triangle mesh with per-vertex unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
}

impl TriMesh {
    /// Builds a mesh and checks its invariants.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, normals: Vec<Vec3>) -> Result<Self, GeometryError> {
        let m = Self {
            vertices,
            triangles,
            normals,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds a mesh whose normals are angle-weighted averages of the
    /// incident face normals.
    pub fn from_triangles(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let nv = vertices.len() as u32;
        if let Some((i, t)) = triangles.iter().enumerate().find(|(_, t)| t.iter().any(|&v| v >= nv)) {
            return Err(GeometryError::InvalidMesh(format!(
                "triangle {i} has an index out of range ({t:?}, {nv} vertices)"
            )));
        }
        let mut m = Self {
            vertices,
            triangles,
            normals: Vec::new(),
        };
        m.normals = m.angle_weighted_vertex_normals();
        for n in &mut m.normals {
            if n.norm() == 0.0 {
                *n = Vec3::z();
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidMesh(m));
        if self.normals.len() != self.vertices.len() {
            return bad(format!(
                "{} normals for {} vertices",
                self.normals.len(),
                self.vertices.len()
            ));
        }
        let nv = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return bad(format!("triangle {i} has an index out of range ({t:?}, {nv} vertices)"));
            }
            let a = self.triangle_area(i);
            if !(a > MIN_TRIANGLE_AREA) {
                return bad(format!("triangle {i} is degenerate (area {a:e})"));
            }
        }
        for (i, n) in self.normals.iter().enumerate() {
            if !((n.norm() - 1.0).abs() <= 1e-6) {
                return bad(format!("normal {i} is not unit length (|n| = {})", n.norm()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.corners(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn face_normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.corners(i);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        Aabb::new(min, max)
    }

    /// Enclosed volume by the divergence theorem; positive for outward
    /// (counter-clockwise seen from outside) winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.corners(i);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// True when every undirected edge is used by exactly two triangles, once
    /// in each direction.
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Reversed winding and negated normals.
    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
            normals: self.normals.iter().map(|n| -n).collect(),
        }
    }

    /// Applies `x -> rotation * (scale * x) + translation`.
    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>, scale: f64, translation: &Vec3) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| rotation * (v * scale) + translation)
                .collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.iter().map(|n| rotation * n).collect(),
        }
    }

    pub fn angle_weighted_vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (i, t) in self.triangles.iter().enumerate() {
            let corners = self.corners(i);
            let cross = (corners[1] - corners[0]).cross(&(corners[2] - corners[0]));
            let len = cross.norm();
            if len == 0.0 {
                continue;
            }
            let n = cross / len;
            for k in 0..3 {
                let e1 = corners[(k + 1) % 3] - corners[k];
                let e2 = corners[(k + 2) % 3] - corners[k];
                let angle = e1.angle(&e2);
                acc[t[k] as usize] += n * angle;
            }
        }
        acc.into_iter()
            .map(|v| {
                let n = v.norm();
                if n > 0.0 {
                    v / n
                } else {
                    v
                }
            })
            .collect()
    }

    /// Uniform area-weighted point on the surface with its interpolated unit
    /// normal.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        let cdf = self.area_cdf();
        self.sample_with_cdf(&cdf, rng)
    }

    pub fn sample_points<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(Vec3, Vec3)> {
        let cdf = self.area_cdf();
        (0..n).map(|_| self.sample_with_cdf(&cdf, rng)).collect()
    }

    fn area_cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        (0..self.triangles.len())
            .map(|i| {
                acc += self.triangle_area(i);
                acc
            })
            .collect()
    }

    fn sample_with_cdf<R: Rng + ?Sized>(&self, cdf: &[f64], rng: &mut R) -> (Vec3, Vec3) {
        let total = *cdf.last().expect("mesh has triangles");
        let t = rng.random::<f64>() * total;
        let i = cdf.partition_point(|c| *c <= t).min(cdf.len() - 1);
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let bary = [1.0 - u - v, u, v];
        (self.interpolate_point(i, &bary), self.interpolate_normal(i, &bary))
    }

    pub fn interpolate_point(&self, tri: usize, bary: &[f64; 3]) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        a * bary[0] + b * bary[1] + c * bary[2]
    }

    pub fn interpolate_normal(&self, tri: usize, bary: &[f64; 3]) -> Vec3 {
        let t = self.triangles[tri];
        let n = self.normals[t[0] as usize] * bary[0]
            + self.normals[t[1] as usize] * bary[1]
            + self.normals[t[2] as usize] * bary[2];
        let len = n.norm();
        if len > 1e-12 {
            n / len
        } else {
            self.face_normal(tri)
        }
    }

    /// Geodesic sphere by repeated midpoint subdivision of an icosahedron.
    pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> TriMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut tris: Vec<[u32; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    verts.push((verts[a as usize] + verts[b as usize]).normalize());
                    verts.len() as u32 - 1
                })
            };
            let mut next = Vec::with_capacity(tris.len() * 4);
            for [a, b, c] in tris {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            tris = next;
        }
        let normals = verts.clone();
        TriMesh {
            vertices: verts.iter().map(|v| center + v * radius).collect(),
            triangles: tris,
            normals,
        }
    }
}

/// Which part of a triangle the closest point falls on. Vertex and edge
/// indices are local to the triangle (edges are `0: v0-v1`, `1: v1-v2`,
/// `2: v2-v0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFeature {
    Vertex(u8),
    Edge(u8),
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit {
    pub point: Vec3,
    pub distance: f64,
    pub triangle: usize,
    pub bary: [f64; 3],
    pub feature: MeshFeature,
}

/// Closest point on triangle `abc` to `p` (Ericson's region classification).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3], MeshFeature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0], MeshFeature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0], MeshFeature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0], MeshFeature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0], MeshFeature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w], MeshFeature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w], MeshFeature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w], MeshFeature::Face)
}

/// Uniform grid over the mesh bounds; each cell lists the triangles whose
/// bounding boxes overlap it.
#[derive(Debug, Clone)]
pub struct TriangleIndex {
    origin: Vec3,
    cell: Vec3,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl TriangleIndex {
    pub fn build(mesh: &TriMesh) -> Self {
        let bounds = mesh.bounds();
        let n = mesh.triangles.len().max(1);
        let per_axis = ((n as f64).cbrt() * 1.5).ceil().clamp(1.0, 160.0) as usize;
        let pad = bounds.extent().max().max(1e-9) * 1e-6;
        let origin = bounds.min.add_scalar(-pad);
        let extent = bounds.extent().add_scalar(2.0 * pad);
        let dims = [per_axis; 3];
        let cell = extent / per_axis as f64;
        let n_cells = per_axis * per_axis * per_axis;

        let cell_range = |lo: &Vec3, hi: &Vec3| -> [(usize, usize); 3] {
            let mut r = [(0, 0); 3];
            for a in 0..3 {
                let l = ((lo[a] - origin[a]) / cell[a]).floor().max(0.0) as usize;
                let h = ((hi[a] - origin[a]) / cell[a]).floor().max(0.0) as usize;
                r[a] = (l.min(dims[a] - 1), h.min(dims[a] - 1));
            }
            r
        };

        let mut counts = vec![0u32; n_cells + 1];
        let ranges: Vec<_> = (0..mesh.triangles.len())
            .map(|i| {
                let [a, b, c] = mesh.corners(i);
                cell_range(&a.inf(&b).inf(&c), &a.sup(&b).sup(&c))
            })
            .collect();
        let flat = |x: usize, y: usize, z: usize| (x * dims[1] + y) * dims[2] + z;
        for r in &ranges {
            for x in r[0].0..=r[0].1 {
                for y in r[1].0..=r[1].1 {
                    for z in r[2].0..=r[2].1 {
                        counts[flat(x, y, z) + 1] += 1;
                    }
                }
            }
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; counts[n_cells] as usize];
        for (t, r) in ranges.iter().enumerate() {
            for x in r[0].0..=r[0].1 {
                for y in r[1].0..=r[1].1 {
                    for z in r[2].0..=r[2].1 {
                        let c = flat(x, y, z);
                        items[fill[c] as usize] = t as u32;
                        fill[c] += 1;
                    }
                }
            }
        }
        Self {
            origin,
            cell,
            dims,
            starts: counts,
            items,
        }
    }

    /// Nearest point on `mesh` (which must be the mesh the index was built
    /// from). Returns `None` for an empty mesh.
    pub fn closest(&self, mesh: &TriMesh, p: &Vec3) -> Option<ClosestHit> {
        if mesh.triangles.is_empty() {
            return None;
        }
        let mut center = [0usize; 3];
        for a in 0..3 {
            let c = ((p[a] - self.origin[a]) / self.cell[a]).floor();
            center[a] = c.clamp(0.0, (self.dims[a] - 1) as f64) as usize;
        }
        let mut best: Option<ClosestHit> = None;
        let max_r = *self.dims.iter().max().unwrap();
        for r in 0..=max_r {
            let lo: [usize; 3] = std::array::from_fn(|a| center[a].saturating_sub(r));
            let hi: [usize; 3] = std::array::from_fn(|a| (center[a] + r).min(self.dims[a] - 1));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let on_shell = [x, y, z]
                            .iter()
                            .enumerate()
                            .any(|(a, &c)| c + r == center[a] || c == center[a] + r);
                        if r > 0 && !on_shell {
                            continue;
                        }
                        let c = (x * self.dims[1] + y) * self.dims[2] + z;
                        for &t in &self.items[self.starts[c] as usize..self.starts[c + 1] as usize] {
                            let [a, b, cc] = mesh.corners(t as usize);
                            let (q, bary, feature) = closest_point_on_triangle(p, &a, &b, &cc);
                            let d = (p - q).norm();
                            if best.is_none_or(|h| d < h.distance) {
                                best = Some(ClosestHit {
                                    point: q,
                                    distance: d,
                                    triangle: t as usize,
                                    bary,
                                    feature,
                                });
                            }
                        }
                    }
                }
            }
            if let Some(h) = best {
                // Every unvisited cell lies beyond one of the interior faces
                // of the visited block.
                let mut bound = f64::INFINITY;
                for a in 0..3 {
                    if lo[a] > 0 {
                        bound = bound.min(p[a] - (self.origin[a] + lo[a] as f64 * self.cell[a]));
                    }
                    if hi[a] + 1 < self.dims[a] {
                        bound = bound.min(self.origin[a] + (hi[a] + 1) as f64 * self.cell[a] - p[a]);
                    }
                }
                if h.distance <= bound {
                    return best;
                }
            }
        }
        best
    }
}

/// Brute-force nearest point over every triangle.
pub fn closest_brute_force(mesh: &TriMesh, p: &Vec3) -> Option<ClosestHit> {
    let mut best: Option<ClosestHit> = None;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(t);
        let (q, bary, feature) = closest_point_on_triangle(p, &a, &b, &c);
        let d = (p - q).norm();
        if best.is_none_or(|h| d < h.distance) {
            best = Some(ClosestHit {
                point: q,
                distance: d,
                triangle: t,
                bary,
                feature,
            });
        }
    }
    best
}

/// A closed mesh usable as a [`super::Shape`]: unsigned distance from the
/// triangle index, signed with angle-weighted pseudo-normals.
#[derive(Debug, Clone)]
pub struct MeshShape {
    mesh: TriMesh,
    index: TriangleIndex,
    face_normals: Vec<Vec3>,
    edge_normals: HashMap<(u32, u32), Vec3>,
    vertex_normals: Vec<Vec3>,
}

impl MeshShape {
    pub fn new(mesh: TriMesh) -> Result<Self, GeometryError> {
        mesh.validate()?;
        if mesh.is_empty() {
            return Err(GeometryError::InvalidMesh("mesh shape needs at least one triangle".into()));
        }
        let face_normals: Vec<Vec3> = (0..mesh.triangles.len()).map(|i| mesh.face_normal(i)).collect();
        let mut edge_normals: HashMap<(u32, u32), Vec3> = HashMap::new();
        for (i, t) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edge_normals.entry((a.min(b), a.max(b))).or_insert_with(Vec3::zeros) += face_normals[i];
            }
        }
        let vertex_normals = mesh.angle_weighted_vertex_normals();
        let index = TriangleIndex::build(&mesh);
        Ok(Self {
            mesh,
            index,
            face_normals,
            edge_normals,
            vertex_normals,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn closest(&self, p: &Vec3) -> ClosestHit {
        self.index
            .closest(&self.mesh, p)
            .expect("mesh shape is non-empty")
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let hit = self.closest(p);
        let t = self.mesh.triangles[hit.triangle];
        let pseudo = match hit.feature {
            MeshFeature::Face => self.face_normals[hit.triangle],
            MeshFeature::Vertex(k) => self.vertex_normals[t[k as usize] as usize],
            MeshFeature::Edge(k) => {
                let (a, b) = (t[k as usize], t[(k as usize + 1) % 3]);
                self.edge_normals[&(a.min(b), a.max(b))]
            }
        };
        if (p - hit.point).dot(&pseudo) > 0.0 {
            -hit.distance
        } else {
            hit.distance
        }
    }
}
