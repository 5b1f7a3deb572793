//! Smooth occupancy across a sphere surface and the designed spread it
//! implies.
//!
//! `cargo run --example smooth_occupancy`

use dif::field::{designed_from_occupancy, smooth_occupancy};
use dif::{DesignParams, Shape, Vec3};

fn main() {
    let sphere = Shape::sphere(Vec3::zeros(), 0.5).unwrap();
    let design = DesignParams::new(0.6, 4.0).unwrap();
    println!("{:>6} {:>9} {:>8} {:>8}", "x", "sdf", "O", "sigma_d");
    for i in 0..=12 {
        let x = 0.2 + 0.05 * i as f64;
        let sdf = sphere.sdf(&Vec3::new(x, 0.0, 0.0));
        let o = smooth_occupancy(sdf, 20.0);
        let d = designed_from_occupancy(o, &design);
        println!("{x:>6.2} {sdf:>9.4} {o:>8.4} {:>8.4}", d.sigma);
    }
    // a sharper field approaches a binary indicator
    for alpha in [5.0, 20.0, 1e3] {
        println!("alpha {alpha:>6}: O(+0.01) = {:.6}, O(-0.01) = {:.6}", smooth_occupancy(0.01, alpha), smooth_occupancy(-0.01, alpha));
    }
}
