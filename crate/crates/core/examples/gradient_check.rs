//! Finite-difference check of the three network architectures.
//!
//! `cargo run --release --example gradient_check`

use dif::model::{baseline_architecture, predictor_architecture, rectifier_architecture};
use dif::nn::{grad_check, Mlp};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, arch) in [
        ("predictor", predictor_architecture()),
        ("rectifier", rectifier_architecture()),
        ("baseline", baseline_architecture()),
    ] {
        let net = Mlp::new(&arch, &mut rng).unwrap();
        let x = Array2::from_shape_fn((8, net.input_dim()), |_| rng.random_range(-1.0..1.0));
        let r = grad_check(&net, x.view(), 1e-4).unwrap();
        println!(
            "{name:<10} {:>6} params  max rel err {:.2e}  {}",
            r.n_checked,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAILED" }
        );
    }
}
