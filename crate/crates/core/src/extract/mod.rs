//! Dense lattice evaluation and marching-cubes extraction.

pub mod io;
mod tables;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, TriMesh, Vec3, MIN_TRIANGLE_AREA};
use crate::model::OccupancyField;

pub use io::{read_mesh, write_mesh, MeshFormat, MeshIoError};

/// Occupancy sampled on a regular lattice. Node `(i, j, k)` is stored at
/// `(k * ny + j) * nx + i`, so x varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub bbox: Aabb,
    pub res: [usize; 3],
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(bbox: Aabb, res: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if res.iter().any(|&r| r < 2) {
            return Err(Error::config("extract.resolution", format!("need at least 2 nodes per axis, got {res:?}")));
        }
        if !bbox.is_valid() {
            return Err(Error::config("scene.bbox", "min must be below max on every axis"));
        }
        if values.len() != res[0] * res[1] * res[2] {
            return Err(Error::Numeric(format!("{} values for a {res:?} grid", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite grid value at node {i}")));
        }
        Ok(Self { bbox, res, values })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res[1] + j) * self.res[0] + i
    }

    /// Node spacing per axis.
    pub fn spacing(&self) -> Vec3 {
        let e = self.bbox.extent();
        Vec3::new(
            e.x / (self.res[0] - 1) as f64,
            e.y / (self.res[1] - 1) as f64,
            e.z / (self.res[2] - 1) as f64,
        )
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        node_position(&self.bbox, self.res, i, j, k)
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn node_position(bbox: &Aabb, res: [usize; 3], i: usize, j: usize, k: usize) -> Vec3 {
    let e = bbox.extent();
    let t = |n: usize, r: usize| n as f64 / (r - 1) as f64;
    bbox.min + Vec3::new(e.x * t(i, res[0]), e.y * t(j, res[1]), e.z * t(k, res[2]))
}

/// All lattice nodes in storage order.
pub fn lattice_points(bbox: &Aabb, res: [usize; 3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(res[0] * res[1] * res[2]);
    for k in 0..res[2] {
        for j in 0..res[1] {
            for i in 0..res[0] {
                out.push(node_position(bbox, res, i, j, k));
            }
        }
    }
    out
}

/// Evaluates `field` at every node, clamping to `[0, 1]`.
pub fn evaluate_grid(field: &dyn OccupancyField, bbox: &Aabb, res: [usize; 3]) -> Result<FieldGrid> {
    if res.iter().any(|&r| r < 2) {
        return Err(Error::config("extract.resolution", format!("need at least 2 nodes per axis, got {res:?}")));
    }
    let pts = lattice_points(bbox, res);
    let mut values = field.occupancy(&pts)?;
    for v in &mut values {
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite occupancy on the grid".into()));
        }
        *v = v.clamp(0.0, 1.0);
    }
    FieldGrid::new(*bbox, res, values)
}

/// Extraction result; `empty` is set when the field never crosses the iso
/// value, in which case `mesh` has no triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub mesh: TriMesh,
    pub empty: bool,
}

/// Lower corner offset and axis of each of the 12 cell edges, in the
/// lookup-table numbering.
const CELL_EDGES: [([usize; 3], usize); 12] = [
    ([0, 0, 0], 0),
    ([1, 0, 0], 1),
    ([0, 1, 0], 0),
    ([0, 0, 0], 1),
    ([0, 0, 1], 0),
    ([1, 0, 1], 1),
    ([0, 1, 1], 0),
    ([0, 0, 1], 1),
    ([0, 0, 0], 2),
    ([1, 0, 0], 2),
    ([1, 1, 0], 2),
    ([0, 1, 0], 2),
];

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const NO_VERTEX: u32 = u32::MAX;

/// Edge vertices stay this fraction of a cell away from lattice nodes, so
/// crossings on different edges never coincide and no triangle collapses.
pub const NODE_OFFSET: f64 = 1e-3;

/// Marching cubes at `iso`. Nodes with value below `iso` are outside; the
/// output is welded along shared edges and wound so that normals point
/// toward decreasing occupancy.
pub fn marching_cubes(grid: &FieldGrid, iso: f64) -> Result<Extraction> {
    let [nx, ny, nz] = grid.res;
    let below = |idx: usize| grid.values[idx] < iso;

    // Vertices on crossing lattice edges, numbered in edge-id order.
    let per_slab: Vec<Vec<(usize, Vec3)>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::new();
            for j in 0..ny {
                for i in 0..nx {
                    let a = grid.index(i, j, k);
                    let pa = grid.node(i, j, k);
                    let neighbours = [
                        (i + 1 < nx).then(|| (grid.index(i + 1, j, k), grid.node(i + 1, j, k))),
                        (j + 1 < ny).then(|| (grid.index(i, j + 1, k), grid.node(i, j + 1, k))),
                        (k + 1 < nz).then(|| (grid.index(i, j, k + 1), grid.node(i, j, k + 1))),
                    ];
                    for (axis, nb) in neighbours.iter().enumerate() {
                        let Some((b, pb)) = nb else { continue };
                        if below(a) != below(*b) {
                            let (va, vb) = (grid.values[a], grid.values[*b]);
                            let t = ((iso - va) / (vb - va)).clamp(NODE_OFFSET, 1.0 - NODE_OFFSET);
                            out.push((a * 3 + axis, pa + (pb - pa) * t));
                        }
                    }
                }
            }
            out
        })
        .collect();
    let total: usize = per_slab.iter().map(Vec::len).sum();
    if total == 0 {
        return Ok(Extraction {
            mesh: TriMesh::default(),
            empty: true,
        });
    }
    if total >= NO_VERTEX as usize {
        return Err(Error::Numeric("too many vertices for 32-bit indices".into()));
    }
    let mut edge_vertex = vec![NO_VERTEX; grid.len() * 3];
    let mut vertices = Vec::with_capacity(total);
    for slab in per_slab {
        for (edge, p) in slab {
            edge_vertex[edge] = vertices.len() as u32;
            vertices.push(p);
        }
    }

    let per_layer: Vec<Vec<[u32; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut case = 0usize;
                    for (c, off) in CORNERS.iter().enumerate() {
                        if below(grid.index(i + off[0], j + off[1], k + off[2])) {
                            case |= 1 << c;
                        }
                    }
                    if tables::EDGE_MASK[case] == 0 {
                        continue;
                    }
                    let row = &tables::TRI_TABLE[case];
                    for t in row.chunks_exact(3) {
                        if t[0] < 0 {
                            break;
                        }
                        let v = |e: i8| {
                            let (off, axis) = CELL_EDGES[e as usize];
                            edge_vertex[grid.index(i + off[0], j + off[1], k + off[2]) * 3 + axis]
                        };
                        tris.push([v(t[0]), v(t[1]), v(t[2])]);
                    }
                }
            }
            tris
        })
        .collect();
    let tris: Vec<[u32; 3]> = per_layer
        .into_iter()
        .flatten()
        .filter(|t| {
            t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && {
                let (a, b, c) = (vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]);
                0.5 * (b - a).cross(&(c - a)).norm() > MIN_TRIANGLE_AREA
            }
        })
        .collect();
    if tris.is_empty() {
        return Ok(Extraction {
            mesh: TriMesh::default(),
            empty: true,
        });
    }

    // Drop vertices left unreferenced by removed slivers.
    let mut remap = vec![NO_VERTEX; vertices.len()];
    let mut kept = Vec::new();
    let tris: Vec<[u32; 3]> = tris
        .into_iter()
        .map(|t| {
            t.map(|v| {
                let r = &mut remap[v as usize];
                if *r == NO_VERTEX {
                    *r = kept.len() as u32;
                    kept.push(vertices[v as usize]);
                }
                *r
            })
        })
        .collect();
    let mesh = TriMesh::from_triangles(kept, tris)?;
    Ok(Extraction { mesh, empty: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SmoothOccParams;
    use crate::geometry::Shape;
    use crate::model::AnalyticOccupancy;

    fn sphere_grid(res: usize) -> FieldGrid {
        let f = AnalyticOccupancy {
            shape: Shape::sphere(Vec3::zeros(), 0.5).unwrap(),
            occ: SmoothOccParams::default(),
        };
        evaluate_grid(&f, &Aabb::cube(1.0), [res; 3]).unwrap()
    }

    #[test]
    fn tables_are_consistent() {
        for case in 0..256 {
            let mut mask = 0u16;
            for &e in tables::TRI_TABLE[case].iter().take_while(|&&e| e >= 0) {
                mask |= 1 << e;
            }
            assert_eq!(mask, tables::EDGE_MASK[case], "case {case}");
        }
        assert_eq!(tables::EDGE_MASK[0], 0);
        assert_eq!(tables::EDGE_MASK[255], 0);
    }

    #[test]
    fn cell_edges_join_table_corners() {
        // corner pairs of the lookup-table edge numbering
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)];
        for (e, (a, b)) in pairs.iter().enumerate() {
            let (off, axis) = CELL_EDGES[e];
            let (ca, cb) = (CORNERS[*a], CORNERS[*b]);
            let lo = if ca[axis] < cb[axis] { ca } else { cb };
            assert_eq!(lo, off, "edge {e}");
            for d in 0..3 {
                assert_eq!(ca[d] != cb[d], d == axis);
            }
        }
    }

    #[test]
    fn grid_evaluation_basics() {
        let g = sphere_grid(64);
        let c = g.value(32, 32, 32);
        assert!(c > 0.99, "{c}");
        let g2 = sphere_grid(2);
        assert_eq!(g2.values.len(), 8);
        assert_eq!(sphere_grid(16), sphere_grid(16));
        assert!(FieldGrid::new(Aabb::cube(1.0), [1, 4, 4], vec![0.0; 16]).is_err());
    }

    #[test]
    fn sphere_extraction_is_accurate_closed_and_outward() {
        let g = sphere_grid(64);
        let cell = g.spacing().x;
        let out = marching_cubes(&g, 0.5).unwrap();
        assert!(!out.empty);
        let m = &out.mesh;
        m.validate().unwrap();
        let mean_err = m.vertices.iter().map(|v| (v.norm() - 0.5).abs()).sum::<f64>() / m.vertices.len() as f64;
        assert!(mean_err < cell, "{mean_err}");
        assert!(m.is_watertight());
        let vol = m.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!(vol > 0.0 && (vol - exact).abs() / exact < 0.02, "{vol}");
        // normals point away from the occupied interior
        let outward = m.vertices.iter().zip(&m.normals).filter(|(v, n)| v.dot(n) > 0.0).count();
        assert_eq!(outward, m.vertices.len());
    }

    #[test]
    fn vertices_lie_on_straddling_edges() {
        let g = sphere_grid(20);
        let out = marching_cubes(&g, 0.5).unwrap();
        let h = g.spacing();
        for v in &out.mesh.vertices {
            let r = (v - g.bbox.min).component_div(&h);
            let off: Vec<usize> = (0..3).filter(|&d| (r[d] - r[d].round()).abs() > 1e-9).collect();
            assert!(off.len() <= 1);
            if let Some(&d) = off.first() {
                let mut lo = [r.x.round() as usize, r.y.round() as usize, r.z.round() as usize];
                lo[d] = r[d].floor() as usize;
                let mut hi = lo;
                hi[d] += 1;
                let (a, b) = (g.value(lo[0], lo[1], lo[2]), g.value(hi[0], hi[1], hi[2]));
                assert!((a < 0.5) != (b < 0.5));
            }
        }
    }

    #[test]
    fn crossings_on_nodes_stay_closed() {
        // 0.5 exactly on a shell of nodes: every crossing sits on a node
        let res = 12;
        let bbox = Aabb::cube(1.0);
        let values: Vec<f64> = lattice_points(&bbox, [res; 3])
            .iter()
            .map(|p| {
                let r = p.norm();
                if r < 0.45 {
                    1.0
                } else if r < 0.75 {
                    0.5
                } else {
                    0.0
                }
            })
            .collect();
        let g = FieldGrid::new(bbox, [res; 3], values).unwrap();
        let out = marching_cubes(&g, 0.5).unwrap();
        assert!(!out.empty);
        assert!(out.mesh.is_watertight());
        assert!(out.mesh.signed_volume() > 0.0);
    }

    #[test]
    fn constant_field_is_flagged_empty() {
        let g = FieldGrid::new(Aabb::cube(1.0), [8; 3], vec![0.7; 512]).unwrap();
        let out = marching_cubes(&g, 0.5).unwrap();
        assert!(out.empty && out.mesh.is_empty());
    }

    #[test]
    fn symmetric_field_gives_symmetric_mesh() {
        // O(-s) = 1 - O(s) with an odd sdf. An even node count keeps every
        // node off the level set, where the `< iso` tie-break is one-sided.
        let res = 16;
        let bbox = Aabb::cube(1.0);
        let vals: Vec<f64> = lattice_points(&bbox, [res; 3])
            .iter()
            .map(|p| SmoothOccParams::default().occupancy(p.x + 0.3 * p.y - 0.2 * p.z - 0.5 * p.x.powi(3)))
            .collect();
        let g = FieldGrid::new(bbox, [res; 3], vals).unwrap();
        let m = marching_cubes(&g, 0.5).unwrap().mesh;
        for v in &m.vertices {
            let closest = m.vertices.iter().map(|w| (w + v).norm()).fold(f64::INFINITY, f64::min);
            assert!(closest < 1e-6, "{v:?}");
        }
    }

    #[test]
    fn halving_cell_size_converges() {
        use crate::metrics::chamfer_to_shape;
        let s = Shape::sphere(Vec3::zeros(), 0.5).unwrap();
        let c32 = chamfer_to_shape(&marching_cubes(&sphere_grid(33), 0.5).unwrap().mesh, &s, 20_000, 1).unwrap();
        let c64 = chamfer_to_shape(&marching_cubes(&sphere_grid(65), 0.5).unwrap().mesh, &s, 20_000, 1).unwrap();
        assert!(c32 / c64 >= 1.5, "{c32} {c64}");
    }
}
