//! One seed of the three-way comparison: deterministic baseline, D-IF
//! without the rectifier, full D-IF.
//!
//! `cargo run --release --example rectifier_ablation [seed]`

use dif::cli::{ground_truth_mesh, run_variant, ExperimentConfig, ABLATION_VARIANTS};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = ExperimentConfig::default();
    let scene = cfg.scene.build().unwrap();
    let gt = ground_truth_mesh(&cfg, &scene).unwrap();
    println!("{:<18} {:>10} {:>10} {:>10}", "variant", "chamfer", "p2s", "normals");
    for variant in ABLATION_VARIANTS {
        let m = run_variant(&cfg, &scene, &gt, variant, seed, None).unwrap();
        println!("{:<18} {:>10.6} {:>10.6} {:>10.6}", variant.name(), m.chamfer, m.p2s, m.normal_consistency);
    }
}
