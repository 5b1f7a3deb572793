//! Closed-form Gaussian KL against a Monte Carlo estimate.
//!
//! `cargo run --release --example kl_monte_carlo`

use dif::field::gaussian_kl;
use dif::OccDistribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pairs = [((0.3, 0.4), (0.8, 0.25)), ((0.9, 0.1), (1.0, 0.22)), ((0.5, 0.6), (0.5, 0.3))];
    for ((mp, sp), (mq, sq)) in pairs {
        let p = OccDistribution::new(mp, sp).unwrap();
        let q = OccDistribution::new(mq, sq).unwrap();
        let logpdf = |x: f64, d: &OccDistribution| -0.5 * ((x - d.mu) / d.sigma).powi(2) - d.sigma.ln();
        let n = 1_000_000;
        let mc = (0..n)
            .map(|_| {
                let x = p.mu + p.sigma * rng.sample::<f64, _>(StandardNormal);
                logpdf(x, &p) - logpdf(x, &q)
            })
            .sum::<f64>()
            / n as f64;
        println!("KL(N({mp}, {sp}) || N({mq}, {sq})) = {:.5}, monte carlo {mc:.5}", gaussian_kl(&p, &q).unwrap());
    }
}
