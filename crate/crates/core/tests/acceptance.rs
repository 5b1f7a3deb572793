//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported, not hidden. The process exits non-zero on a
//! failure only when `DIF_ACCEPTANCE_STRICT=1`, so `cargo test` reports the
//! outcome without aborting the rest of the workspace run.

use std::time::{Duration, Instant};

use dif::cli::{cmd_ablate, ExperimentConfig};
use dif::extract::{evaluate_grid, marching_cubes};
use dif::field::{designed_sigma, gaussian_kl, smooth_occupancy};
use dif::geometry::SampleBatch;
use dif::metrics::{chamfer, chamfer_to_shape, sigma_profile};
use dif::model::{
    baseline_architecture, feature_matrix, predictor_architecture, rectifier_architecture, AnalyticOccupancy, DifModel,
    EvalMode, ModelField,
};
use dif::nn::{grad_check, reparam_sample, Mlp};
use dif::train::{dif_loss_grad, fit, initial_model, LossWeights, Targets, TrainConfig, TrainMode};
use dif::{Aabb, DesignParams, OccDistribution, Shape, Vec3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    run_after(id, name, budget, Duration::ZERO, f)
}

/// `spent` is time already used by shared work the criterion depends on.
fn run_after(id: usize, name: &str, budget: Duration, spent: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let elapsed = spent + t.elapsed();
    let in_time = elapsed <= budget;
    let pass = o.pass && in_time;
    println!(
        "[{}] {id:>2} {name}: {} ({:.1}s, budget {}s{})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", over budget" }
    );
    pass
}

fn surface_shapes() -> Vec<Shape> {
    vec![
        Shape::sphere(Vec3::new(0.1, -0.2, 0.05), 0.45).unwrap(),
        Shape::torus(Vec3::zeros(), 0.5, 0.15).unwrap(),
        Shape::cuboid(Vec3::zeros(), Vec3::new(0.4, 0.3, 0.5)).unwrap(),
        Shape::capsule(Vec3::new(-0.3, 0.0, 0.0), Vec3::new(0.3, 0.2, 0.0), 0.2).unwrap(),
    ]
}

fn level_set() -> Outcome {
    let alpha = TrainConfig::default().alpha;
    let shapes = surface_shapes();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let s = &shapes[i % shapes.len()];
        let p = s.sample_surface(&mut rng);
        worst = worst.max((smooth_occupancy(s.sdf(&p), alpha) - 0.5).abs());
    }
    let mut violations = 0;
    for _ in 0..10_000 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b = a + rng.random_range(1e-6..0.5);
        if smooth_occupancy(a, alpha) >= smooth_occupancy(b, alpha) {
            violations += 1;
        }
    }
    outcome(
        worst <= 1e-12 && violations == 0,
        format!("max |O - 0.5| on surface {worst:.2e} (tol 1e-12), monotonicity violations {violations}/10000"),
    )
}

fn sigma_design() -> Outcome {
    let dp = DesignParams::new(0.6, 4.0).unwrap();
    let peak = designed_sigma(0.5, &dp);
    let sweep: Vec<f64> = (0..=100).map(|i| designed_sigma(0.5 + i as f64 * 0.005, &dp)).collect();
    let decreasing = sweep.windows(2).all(|w| w[1] < w[0]);
    let asym = (0..=100)
        .map(|i| {
            let d = i as f64 * 0.005;
            (designed_sigma(0.5 + d, &dp) - designed_sigma(0.5 - d, &dp)).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        peak == 0.6 && decreasing && asym <= 1e-15,
        format!("sigma(0.5) = {peak}, strictly decreasing {decreasing} on 101 points, max asymmetry {asym:.1e} (tol 1e-15)"),
    )
}

const MIN_RESOLVABLE_KL: f64 = 0.05;

fn kl_oracle(p: &OccDistribution, q: &OccDistribution, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let logpdf = |x: f64, d: &OccDistribution| -0.5 * ((x - d.mu) / d.sigma).powi(2) - d.sigma.ln();
    let mut acc = 0.0;
    for _ in 0..n / 2 {
        let z: f64 = rng.sample(StandardNormal);
        for x in [p.mu + p.sigma * z, p.mu - p.sigma * z] {
            acc += logpdf(x, p) - logpdf(x, q);
        }
    }
    acc / (n / 2 * 2) as f64
}

fn kl_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut self_kl: f64 = 0.0;
    let mut smallest = f64::INFINITY;
    let mut pairs = 0;
    while pairs < 20 {
        let p = OccDistribution::new(rng.random_range(0.0..1.0), rng.random_range(0.05..0.6)).unwrap();
        let q = OccDistribution::new(rng.random_range(0.0..1.0), rng.random_range(0.05..0.6)).unwrap();
        self_kl = self_kl.max(gaussian_kl(&p, &p).unwrap().abs());
        let exact = gaussian_kl(&p, &q).unwrap();
        // near-identical pairs sit below the oracle's resolution: at KL ~ 2e-3
        // the standard error of 10^6 draws is already several percent of KL
        if exact < MIN_RESOLVABLE_KL {
            continue;
        }
        let mc = kl_oracle(&p, &q, 1_000_000, &mut rng);
        worst = worst.max(((exact - mc) / mc).abs());
        smallest = smallest.min(exact);
        pairs += 1;
    }
    outcome(
        worst < 0.01 && self_kl <= 1e-12,
        format!(
            "max relative error vs Monte Carlo {worst:.2e} on 20 pairs with KL >= {smallest:.3} (tol 1e-2), max KL(p,p) {self_kl:.1e} (tol 1e-12)"
        ),
    )
}

fn sphere_scene() -> (Shape, Shape) {
    (Shape::sphere(Vec3::zeros(), 0.5).unwrap(), Shape::sphere(Vec3::zeros(), 0.45).unwrap())
}

/// Central differences of the full objective through sample and rectifier,
/// over every seventh parameter of both networks.
fn end_to_end_fd_error() -> f64 {
    let (t, p) = sphere_scene();
    let mut m: DifModel = initial_model(&TrainConfig::default()).unwrap().as_dif().unwrap().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for w in m.rectifier.as_mut().unwrap().layers[2].weight.iter_mut() {
        *w = rng.random_range(-0.3..0.3);
    }
    let pts: Vec<Vec3> = (0..6).map(|_| Vec3::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7))).collect();
    let x = feature_matrix(&t, &p, &pts, 0.0, 0).unwrap();
    let lab = SampleBatch::label(&t, pts, &m.occ, &m.design);
    let eps: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
    let tg = Targets {
        gt: &lab.gt_occ,
        mu_d: &lab.designed_mu,
        sigma_d: &lab.designed_sigma,
    };
    let w = LossWeights { rec: 0.55, dis: 1.0 };
    let obj = |m: &DifModel| dif_loss_grad(m, x.view(), &eps, tg, w, false, 6).unwrap().0.objective;
    let (_, g, _) = dif_loss_grad(&m, x.view(), &eps, tg, w, false, 6).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for net in 0..2 {
        let grads = if net == 0 { g.predictor.flatten() } else { g.rectifier.as_ref().unwrap().flatten() };
        let base = if net == 0 { m.predictor.clone() } else { m.rectifier.clone().unwrap() };
        let arch = base.architecture();
        let flat = base.flatten();
        let with = |values: &[f64]| {
            let mut c = m.clone();
            let n = Mlp::from_flat(&arch, values).unwrap();
            if net == 0 {
                c.predictor = n;
            } else {
                c.rectifier = Some(n);
            }
            c
        };
        for k in (0..flat.len()).step_by(7) {
            let (mut a, mut b) = (flat.clone(), flat.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (obj(&with(&a)) - obj(&with(&b))) / (2.0 * h);
            worst = worst.max((fd - grads[k]).abs() / fd.abs().max(grads[k].abs()).max(1e-6));
        }
    }
    worst
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, arch) in [
        ("predictor", predictor_architecture()),
        ("rectifier", rectifier_architecture()),
        ("baseline", baseline_architecture()),
    ] {
        let net = Mlp::new(&arch, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, net.input_dim()), |_| rng.random_range(-1.0..1.0));
        let r = grad_check(&net, x.view(), 1e-4).unwrap();
        pass &= r.passed;
        parts.push(format!("{name} {:.1e}", r.max_rel_err));
    }
    let e2e = end_to_end_fd_error();
    pass &= e2e < 1e-3;
    outcome(pass, format!("max relative error {} (tol 1e-4), end to end {e2e:.1e} (tol 1e-3)", parts.join(", ")))
}

fn rectifier_identity() -> Outcome {
    let (t, p) = sphere_scene();
    let m = initial_model(&TrainConfig::default()).unwrap().as_dif().unwrap().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts: Vec<Vec3> = (0..10_000).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let x = feature_matrix(&t, &p, &pts, 0.0, 0).unwrap();
    let eps: Vec<f64> = (0..pts.len()).map(|_| rng.sample(StandardNormal)).collect();
    let o = m.forward_batch(x.view(), &eps).unwrap();
    let differing = o.fine.iter().zip(&o.coarse).filter(|(f, c)| f.to_bits() != c.to_bits()).count();
    outcome(differing == 0, format!("{differing}/10000 points where fine and coarse differ bitwise"))
}

fn sphere_chamfer(nodes: usize) -> (f64, f64) {
    let s = Shape::sphere(Vec3::zeros(), 0.5).unwrap();
    let field = AnalyticOccupancy { shape: s.clone(), occ: TrainConfig::default().occ() };
    let grid = evaluate_grid(&field, &Aabb::cube(1.0), [nodes; 3]).unwrap();
    let mesh = marching_cubes(&grid, 0.5).unwrap().mesh;
    (chamfer_to_shape(&mesh, &s, 100_000, 7).unwrap(), grid.spacing().x)
}

fn extraction_convergence() -> Outcome {
    let (c64, cell) = sphere_chamfer(64);
    let (c_half, _) = sphere_chamfer(127);
    let ratio = c64 / c_half;
    outcome(
        c64 < 2.0 * cell && c64 < 0.0625 && ratio >= 1.5,
        format!("chamfer {c64:.5} at 64 nodes (tol {:.4}), halved cell {c_half:.5}, ratio {ratio:.2} (tol 1.5)", 2.0 * cell),
    )
}

fn end_to_end_fit() -> Outcome {
    let cfg = ExperimentConfig::default();
    let scene = cfg.scene.build().unwrap();
    let gt = dif::cli::ground_truth_mesh(&cfg, &scene).unwrap();
    let out = fit(&cfg.train, &scene.target, &scene.prior, &scene.bbox, None).unwrap();
    let mesh = dif::cli::extract_model_mesh(&out.model, &scene, cfg.extraction.resolution, EvalMode::Mean).unwrap();
    let c = chamfer(&mesh, &gt, cfg.metrics.samples, 0).unwrap();
    outcome(c < 0.02, format!("mean-mode chamfer to ground truth {c:.5} (tol 0.02)"))
}

fn ablation(report: &dif::cli::AblationReport) -> (Outcome, Outcome) {
    let seeds = ExperimentConfig::default().metrics.seeds;
    let mut wins = 0;
    for &s in &seeds {
        if let (Some(d), Some(n)) = (report.chamfer(TrainMode::Dif, s), report.chamfer(TrainMode::DifNoRectifier, s)) {
            if d < n {
                wins += 1;
            }
        }
    }
    let mean = |v| report.summary_for(v).filter(|s| s.runs == seeds.len()).map(|s| s.chamfer_mean);
    let (dif, norect, base) = (mean(TrainMode::Dif), mean(TrainMode::DifNoRectifier), mean(TrainMode::Baseline));
    let c8 = match (dif, norect) {
        (Some(d), Some(n)) => {
            let gain = (n - d) / n;
            outcome(
                wins >= 4 && gain >= 0.10,
                format!("dif beats dif_no_rectifier in {wins}/{} seeds (tol 4), mean improvement {:.1}% (tol 10%)", seeds.len(), 100.0 * gain),
            )
        }
        _ => outcome(false, "a variant run failed".into()),
    };
    let c9 = match (dif, base) {
        (Some(d), Some(b)) => outcome(d <= b, format!("dif mean chamfer {d:.5} vs baseline {b:.5} (needs dif <= baseline)")),
        _ => outcome(false, "a variant run failed".into()),
    };
    (c8, c9)
}

fn spatial_uncertainty() -> Outcome {
    let cfg = ExperimentConfig::default();
    let scene = cfg.scene.build().unwrap();
    let train = TrainConfig {
        mode: TrainMode::BayesDiagnostic,
        ..cfg.train.clone()
    };
    let out = fit(&train, &scene.target, &scene.prior, &scene.bbox, None).unwrap();
    let field = ModelField {
        model: &out.model,
        target: &scene.target,
        prior: &scene.prior,
        mode: EvalMode::Mean,
    };
    let m = &cfg.metrics;
    let p = sigma_profile(&field, &scene.target, m.profile_points, m.profile_bins, m.seeds[0]).unwrap();
    outcome(
        p.spearman < -0.5 && p.populated_bins >= 10,
        format!(
            "spearman {:.3} over {} populated bins (tol < -0.5, >= 10 bins), pointwise {:.3}",
            p.spearman, p.populated_bins, p.spearman_points
        ),
    )
}

fn reparam_statistics() -> Outcome {
    let d = OccDistribution::new(0.3, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| reparam_sample(&d, rng.sample(StandardNormal))).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let (em, es) = ((mean - d.mu).abs() / d.mu, (sd - d.sigma).abs() / d.sigma);
    outcome(
        em < 0.01 && es < 0.01,
        format!("mean {mean:.5} (rel err {em:.2e}), std {sd:.5} (rel err {es:.2e}), tol 1e-2"),
    )
}

fn main() {
    let total = Instant::now();
    let secs = Duration::from_secs;
    let mut results = vec![
        run(1, "level-set identity", secs(5), level_set),
        run(2, "sigma design", secs(1), sigma_design),
        run(3, "KL correctness", secs(30), kl_correctness),
        run(4, "gradient exactness", secs(60), gradients),
        run(5, "rectifier identity at init", secs(5), rectifier_identity),
        run(6, "extraction convergence", secs(60), extraction_convergence),
        run(7, "end-to-end fit", secs(600), end_to_end_fit),
    ];

    let dir = tempfile::TempDir::new().expect("temp dir");
    let cfg = ExperimentConfig {
        output: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let t = Instant::now();
    let report = cmd_ablate(&cfg, &mut |_| {});
    let ablate_time = t.elapsed();
    match report {
        Ok(report) => {
            let (c8, c9) = ablation(&report);
            results.push(run_after(8, "rectifier ablation direction", secs(45 * 60), ablate_time, || c8));
            results.push(run_after(9, "dif vs deterministic baseline", secs(45 * 60), ablate_time, || c9));
            print!("{}", report.table());
        }
        Err(e) => {
            for (id, name) in [(8, "rectifier ablation direction"), (9, "dif vs deterministic baseline")] {
                results.push(run_after(id, name, secs(45 * 60), ablate_time, || outcome(false, format!("ablation failed: {e}"))));
            }
        }
    }
    println!("     (criteria 8 and 9 share one ablation of {:.1}s)", ablate_time.as_secs_f64());

    results.push(run(10, "spatial-aware uncertainty", secs(600), spatial_uncertainty));
    results.push(run(11, "reparameterization statistics", secs(5), reparam_statistics));

    let passed = results.iter().filter(|&&p| p).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1}s on {} thread(s)",
        results.len(),
        total.elapsed().as_secs_f64(),
        rayon::current_num_threads()
    );
    let strict = std::env::var("DIF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
