//! OBJ and binary PLY round trips of an icosphere.
//!
//! `cargo run --example mesh_io [out_dir]`

use std::path::PathBuf;

use dif::extract::{read_mesh, write_mesh};
use dif::{TriMesh, Vec3};

fn main() {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let mesh = TriMesh::icosphere(Vec3::zeros(), 0.5, 3);
    println!(
        "icosphere: {} vertices, {} triangles, area {:.5}, volume {:.5}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.area(),
        mesh.signed_volume()
    );
    for name in ["icosphere.obj", "icosphere.ply"] {
        let path = out.join(name);
        write_mesh(&mesh, &path).unwrap();
        let back = read_mesh(&path).unwrap();
        let same = back.vertices == mesh.vertices && back.triangles == mesh.triangles;
        println!("{}: {} bytes, exact round trip {same}", path.display(), std::fs::metadata(&path).unwrap().len());
    }
}
