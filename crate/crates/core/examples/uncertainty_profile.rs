//! Predicted spread against distance to the surface, for the designed
//! target, a D-IF model and a model trained with the heteroscedastic loss.
//!
//! `cargo run --release --example uncertainty_profile`

use dif::cli::ExperimentConfig;
use dif::metrics::{sigma_profile, SigmaProfile};
use dif::model::{DesignedSigma, EvalMode, ModelField};
use dif::train::{fit, TrainConfig, TrainMode};

fn show(name: &str, p: &SigmaProfile) {
    let bins: Vec<String> = p.mean_sigma.iter().map(|m| m.map_or("-".into(), |v| format!("{v:.3}"))).collect();
    println!("{name:<17} rho {:>6.3} (pointwise {:>6.3})  {}", p.spearman, p.spearman_points, bins.join(" "));
}

fn main() {
    let cfg = ExperimentConfig::default();
    let scene = cfg.scene.build().unwrap();
    let m = &cfg.metrics;
    let designed = DesignedSigma {
        shape: scene.target.clone(),
        occ: cfg.train.occ(),
        design: cfg.train.design(),
    };
    show("designed", &sigma_profile(&designed, &scene.target, m.profile_points, m.profile_bins, 0).unwrap());
    for mode in [TrainMode::Dif, TrainMode::BayesDiagnostic] {
        let train = TrainConfig { mode, ..cfg.train.clone() };
        let out = fit(&train, &scene.target, &scene.prior, &scene.bbox, None).unwrap();
        let field = ModelField {
            model: &out.model,
            target: &scene.target,
            prior: &scene.prior,
            mode: EvalMode::Mean,
        };
        show(mode.name(), &sigma_profile(&field, &scene.target, m.profile_points, m.profile_bins, 0).unwrap());
    }
}
