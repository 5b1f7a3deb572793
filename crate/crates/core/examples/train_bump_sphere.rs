//! Default experiment end to end: train on the bump sphere, extract the
//! mean surface, score it.
//!
//! `cargo run --release --example train_bump_sphere [out_dir]`

use std::path::PathBuf;

use dif::cli::{cmd_train, extract_model_mesh, ground_truth_mesh, ExperimentConfig};
use dif::extract::write_mesh;
use dif::metrics::MetricsReport;
use dif::model::EvalMode;

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dif_bump_sphere"));
    let cfg = ExperimentConfig {
        output: out.clone(),
        ..ExperimentConfig::default()
    };
    let scene = cfg.scene.build().unwrap();
    let fit = cmd_train(&cfg, &mut |r| {
        println!("phase {} epoch {:>2}  l_rec {:.6}  l_dis {}", r.phase, r.epoch, r.l_rec, r.l_dis.map_or("-".into(), |d| format!("{d:.5}")));
    })
    .unwrap();
    let mesh = extract_model_mesh(&fit.model, &scene, cfg.extraction.resolution, EvalMode::Mean).unwrap();
    write_mesh(&mesh, &out.join("mesh_mean.obj")).unwrap();
    let gt = ground_truth_mesh(&cfg, &scene).unwrap();
    print!("{}", MetricsReport::compute(&mesh, &gt, cfg.metrics.samples, 0).unwrap().table());
    println!("run directory {}", out.display());
}
