//! Signed distances of the analytic shapes and a labelled training batch.
//!
//! `cargo run --example shapes_and_sampling`

use dif::geometry::{sample_training_points, SamplingParams};
use dif::{Aabb, DesignParams, Shape, SmoothOccParams, Vec3};

fn main() {
    let shapes = [
        ("sphere", Shape::sphere(Vec3::zeros(), 0.5).unwrap()),
        ("torus", Shape::torus(Vec3::zeros(), 0.5, 0.15).unwrap()),
        ("box", Shape::cuboid(Vec3::zeros(), Vec3::new(0.4, 0.3, 0.2)).unwrap()),
        ("capsule", Shape::capsule(Vec3::new(-0.3, 0.0, 0.0), Vec3::new(0.3, 0.0, 0.0), 0.2).unwrap()),
    ];
    let q = Vec3::new(0.45, 0.1, 0.0);
    for (name, s) in &shapes {
        println!("{name:<8} sdf at {:?} = {:>8.4}, area {:.4}", q.as_slice(), s.sdf(&q), s.area());
    }
    let params = SamplingParams {
        n: 10_000,
        mix: 0.5,
        noise_sd: 0.05,
        bbox: Aabb::cube(1.0),
    };
    let batch = sample_training_points(&shapes[1].1, &params, &SmoothOccParams { alpha: 20.0 }, &DesignParams::new(0.6, 4.0).unwrap(), 0).unwrap();
    let inside = batch.gt_sdf.iter().filter(|&&d| d > 0.0).count();
    let near = batch.gt_sdf.iter().filter(|d| d.abs() < 0.05).count();
    println!("torus batch: {} points, {inside} inside, {near} within 0.05 of the surface", batch.len());
    print!("{}", batch.to_csv().lines().take(4).collect::<Vec<_>>().join("\n"));
    println!();
}
