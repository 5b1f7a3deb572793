//! Marching cubes on an analytic sphere at increasing resolution.
//!
//! `cargo run --release --example extract_sphere [out_dir]`

use std::path::PathBuf;

use dif::extract::{evaluate_grid, marching_cubes, write_mesh};
use dif::metrics::chamfer_to_shape;
use dif::model::AnalyticOccupancy;
use dif::{Aabb, Shape, SmoothOccParams, Vec3};

fn main() {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let shape = Shape::sphere(Vec3::zeros(), 0.5).unwrap();
    let field = AnalyticOccupancy {
        shape: shape.clone(),
        occ: SmoothOccParams { alpha: 20.0 },
    };
    for nodes in [17, 33, 65, 129] {
        let grid = evaluate_grid(&field, &Aabb::cube(1.0), [nodes; 3]).unwrap();
        let ex = marching_cubes(&grid, 0.5).unwrap();
        let c = chamfer_to_shape(&ex.mesh, &shape, 20_000, 0).unwrap();
        println!(
            "{nodes:>4} nodes: {:>6} triangles, watertight {}, chamfer {c:.6} ({:.3} cells)",
            ex.mesh.triangles.len(),
            ex.mesh.is_watertight(),
            c / grid.spacing().x
        );
        if nodes == 65 {
            let path = out.join("sphere_65.obj");
            write_mesh(&ex.mesh, &path).unwrap();
            println!("wrote {}", path.display());
        }
    }
}
