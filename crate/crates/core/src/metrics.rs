//! Surface reconstruction metrics and the predicted-uncertainty profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Shape, TriMesh, TriangleIndex, Vec3};
use crate::model::SigmaSource;

/// Default sample count per mesh.
pub const DEFAULT_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{0} mesh is empty")]
    EmptyMesh(&'static str),
    #[error("need at least one point")]
    NoPoints,
    #[error("invalid profile parameters: {0}")]
    InvalidProfile(String),
    #[error("sigma source failed: {0}")]
    Source(String),
}

/// Mean distance from `points` to the surface of `mesh`.
pub fn mean_distance_to(points: &[Vec3], mesh: &TriMesh, index: &TriangleIndex) -> f64 {
    let sum: f64 = points
        .par_iter()
        .map(|p| index.closest(mesh, p).expect("non-empty mesh").distance)
        .collect::<Vec<_>>()
        .iter()
        .sum();
    sum / points.len() as f64
}

fn samples(mesh: &TriMesh, n: usize, seed: u64) -> Vec<(Vec3, Vec3)> {
    mesh.sample_points(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn non_empty(mesh: &TriMesh, which: &'static str) -> Result<(), MetricsError> {
    if mesh.is_empty() {
        Err(MetricsError::EmptyMesh(which))
    } else {
        Ok(())
    }
}

/// Average of the two one-sided mean closest-point distances, each from `n`
/// area-weighted samples.
pub fn chamfer(a: &TriMesh, b: &TriMesh, n: usize, seed: u64) -> Result<f64, MetricsError> {
    let (ab, ba) = one_sided_chamfer(a, b, n, seed)?;
    Ok(0.5 * (ab + ba))
}

/// `(a -> b, b -> a)` mean distances.
pub fn one_sided_chamfer(a: &TriMesh, b: &TriMesh, n: usize, seed: u64) -> Result<(f64, f64), MetricsError> {
    non_empty(a, "first")?;
    non_empty(b, "second")?;
    if n == 0 {
        return Err(MetricsError::NoPoints);
    }
    let pa: Vec<Vec3> = samples(a, n, seed).into_iter().map(|s| s.0).collect();
    let pb: Vec<Vec3> = samples(b, n, seed ^ 0x5EED).into_iter().map(|s| s.0).collect();
    let (ia, ib) = (TriangleIndex::build(a), TriangleIndex::build(b));
    Ok((mean_distance_to(&pa, b, &ib), mean_distance_to(&pb, a, &ia)))
}

/// Chamfer between a mesh and an analytic shape whose SDF is an exact
/// distance: samples on the shape go to the mesh, mesh samples use `|sdf|`.
pub fn chamfer_to_shape(mesh: &TriMesh, shape: &Shape, n: usize, seed: u64) -> Result<f64, MetricsError> {
    non_empty(mesh, "reconstructed")?;
    if n == 0 {
        return Err(MetricsError::NoPoints);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let on_shape: Vec<Vec3> = (0..n).map(|_| shape.sample_surface(&mut rng)).collect();
    let to_mesh = mean_distance_to(&on_shape, mesh, &TriangleIndex::build(mesh));
    let on_mesh = samples(mesh, n, seed ^ 0x5EED);
    let to_shape = on_mesh.par_iter().map(|(p, _)| shape.sdf(p).abs()).sum::<f64>() / n as f64;
    Ok(0.5 * (to_mesh + to_shape))
}

/// Mean distance from `gt_points` to `mesh`.
pub fn p2s(gt_points: &[Vec3], mesh: &TriMesh) -> Result<f64, MetricsError> {
    non_empty(mesh, "reconstructed")?;
    if gt_points.is_empty() {
        return Err(MetricsError::NoPoints);
    }
    Ok(mean_distance_to(gt_points, mesh, &TriangleIndex::build(mesh)))
}

fn one_sided_normal(a: &TriMesh, b: &TriMesh, index: &TriangleIndex, n: usize, seed: u64) -> f64 {
    let s = samples(a, n, seed);
    let cos: Vec<f64> = s
        .par_iter()
        .map(|(p, na)| {
            let hit = index.closest(b, p).expect("non-empty mesh");
            na.dot(&b.interpolate_normal(hit.triangle, &hit.bary))
        })
        .collect();
    cos.iter().sum::<f64>() / n as f64
}

/// `1 - mean cosine` between sampled normals on one mesh and interpolated
/// normals at the closest point on the other, averaged over both directions.
pub fn normal_consistency(a: &TriMesh, b: &TriMesh, n: usize, seed: u64) -> Result<f64, MetricsError> {
    non_empty(a, "first")?;
    non_empty(b, "second")?;
    if n == 0 {
        return Err(MetricsError::NoPoints);
    }
    let (ia, ib) = (TriangleIndex::build(a), TriangleIndex::build(b));
    let ab = one_sided_normal(a, b, &ib, n, seed);
    let ba = one_sided_normal(b, a, &ia, n, seed ^ 0x5EED);
    Ok(1.0 - 0.5 * (ab + ba))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chamfer: f64,
    pub p2s: f64,
    pub normal_consistency: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl MetricsReport {
    /// Compares `mesh` against the ground-truth mesh `gt`.
    pub fn compute(mesh: &TriMesh, gt: &TriMesh, n: usize, seed: u64) -> Result<Self, MetricsError> {
        let chamfer = chamfer(mesh, gt, n, seed)?;
        let gt_pts: Vec<Vec3> = samples(gt, n, seed ^ 0x5EED).into_iter().map(|s| s.0).collect();
        let p2s = p2s(&gt_pts, mesh)?;
        let normal_consistency = normal_consistency(mesh, gt, n, seed)?;
        Ok(Self {
            chamfer,
            p2s,
            normal_consistency,
            n_samples: n,
            seed,
        })
    }

    pub fn table(&self) -> String {
        format!(
            "{:<20} {:>12}\n{:<20} {:>12.6}\n{:<20} {:>12.6}\n{:<20} {:>12.6}\n{:<20} {:>12}\n{:<20} {:>12}\n",
            "metric", "value", "chamfer", self.chamfer, "p2s", self.p2s, "normal_consistency", self.normal_consistency, "n_samples", self.n_samples, "seed", self.seed
        )
    }
}

/// Predicted sigma binned by distance to the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaProfile {
    /// `bins + 1` edges over `|sdf|`.
    pub bin_edges: Vec<f64>,
    /// Mean sigma per bin, `None` where the bin is empty.
    pub mean_sigma: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Rank correlation between bin centers and per-bin mean sigma; empty
    /// bins are left out.
    pub spearman: f64,
    /// Rank correlation between `|sdf|` and sigma over all profiled points.
    pub spearman_points: f64,
    pub populated_bins: usize,
    pub n_points: usize,
    pub seed: u64,
}

impl SigmaProfile {
    /// `bin_lo,bin_hi,count,mean_sigma` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count,mean_sigma\n");
        for b in 0..self.counts.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_edges[b],
                self.bin_edges[b + 1],
                self.counts[b],
                self.mean_sigma[b].map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>10} {:>10} {:>8} {:>12}\n", "|sdf| lo", "hi", "count", "mean sigma");
        for b in 0..self.counts.len() {
            let m = self.mean_sigma[b].map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
            s.push_str(&format!("{:>10.4} {:>10.4} {:>8} {:>12}\n", self.bin_edges[b], self.bin_edges[b + 1], self.counts[b], m));
        }
        s.push_str(&format!(
            "spearman {:.4} over {} populated bins (pointwise {:.4})\n",
            self.spearman, self.populated_bins, self.spearman_points
        ));
        s
    }
}

/// Largest `|sdf|` covered by [`sigma_profile`].
pub const PROFILE_MAX_DIST: f64 = 0.5;

/// Points stratified over `|sdf|` in `[0, PROFILE_MAX_DIST]`: each bin gets
/// an equal share of surface points pushed along the normal (alternately
/// inward and outward) by a uniform offset in that bin. Points are then
/// binned by their actual `|sdf|`.
pub fn profile_points(shape: &Shape, n_points: usize, bins: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = PROFILE_MAX_DIST / bins as f64;
    (0..n_points)
        .map(|i| {
            let b = i % bins;
            let q = shape.sample_surface(&mut rng);
            let n = shape.normal_or_axis(&q);
            let d = width * (b as f64 + rng.random::<f64>());
            let sign = if (i / bins).is_multiple_of(2) { 1.0 } else { -1.0 };
            q + n * (sign * d)
        })
        .collect()
}

pub fn sigma_profile(source: &dyn SigmaSource, shape: &Shape, n_points: usize, bins: usize, seed: u64) -> Result<SigmaProfile, MetricsError> {
    if bins == 0 || n_points == 0 {
        return Err(MetricsError::InvalidProfile(format!("bins = {bins}, n_points = {n_points}")));
    }
    let pts = profile_points(shape, n_points, bins, seed);
    let sig = source.sigma(&pts).map_err(|e| MetricsError::Source(e.to_string()))?;
    let dist: Vec<f64> = pts.iter().map(|p| shape.sdf(p).abs()).collect();
    let width = PROFILE_MAX_DIST / bins as f64;
    // running means stay exact for constant input, so ties survive ranking
    let mut means = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (d, s) in dist.iter().zip(&sig) {
        if *d > PROFILE_MAX_DIST {
            continue;
        }
        let b = ((d / width) as usize).min(bins - 1);
        counts[b] += 1;
        means[b] += (s - means[b]) / counts[b] as f64;
        xs.push(*d);
        ys.push(*s);
    }
    let mean_sigma: Vec<Option<f64>> = means.iter().zip(&counts).map(|(&m, &c)| (c > 0).then_some(m)).collect();
    let bin_edges: Vec<f64> = (0..=bins).map(|b| b as f64 * width).collect();
    let (bc, bm): (Vec<f64>, Vec<f64>) = mean_sigma
        .iter()
        .enumerate()
        .filter_map(|(b, m)| m.map(|m| ((b as f64 + 0.5) * width, m)))
        .unzip();
    Ok(SigmaProfile {
        bin_edges,
        populated_bins: bc.len(),
        spearman: spearman(&bc, &bm),
        spearman_points: spearman(&xs, &ys),
        mean_sigma,
        counts,
        n_points,
        seed,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side has no rank variance.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return 0.0;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DesignParams, SmoothOccParams};
    use crate::model::{ConstantSigma, DesignedSigma};
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    fn ico(r: f64) -> TriMesh {
        TriMesh::icosphere(Vec3::zeros(), r, 5)
    }

    #[test]
    fn chamfer_examples() {
        let a = ico(0.5);
        assert!(chamfer(&a, &a, 5_000, 1).unwrap() < 1e-6);
        let b = ico(0.6);
        let c = chamfer(&a, &b, 20_000, 2).unwrap();
        assert!((c - 0.1).abs() / 0.1 < 0.02, "{c}");
        assert!(chamfer(&TriMesh::default(), &a, 10, 1).is_err());
    }

    #[test]
    fn chamfer_rigid_and_scale_behaviour() {
        let a = ico(0.5);
        let b = TriMesh::icosphere(Vec3::new(0.05, 0.0, 0.02), 0.45, 4);
        let base = chamfer(&a, &b, 20_000, 3).unwrap();
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::new(1.0, 2.0, -0.5)), 0.8);
        let t = Vec3::new(0.1, -0.2, 0.3);
        let moved = chamfer(&a.transformed(&rot, 1.0, &t), &b.transformed(&rot, 1.0, &t), 20_000, 3).unwrap();
        assert!((moved - base).abs() / base < 0.01, "{base} {moved}");
        let scaled = chamfer(&a.transformed(&rot, 2.0, &t), &b.transformed(&rot, 2.0, &t), 20_000, 3).unwrap();
        assert!((scaled / base - 2.0).abs() < 0.02, "{base} {scaled}");
    }

    #[test]
    fn one_sided_bounded_by_bilateral() {
        let a = ico(0.5);
        let b = TriMesh::icosphere(Vec3::new(0.3, 0.0, 0.0), 0.2, 3);
        let (ab, ba) = one_sided_chamfer(&a, &b, 5_000, 4).unwrap();
        let c = chamfer(&a, &b, 5_000, 4).unwrap();
        assert!(ab <= 2.0 * c + 1e-12 && ba <= 2.0 * c + 1e-12);
    }

    #[test]
    fn p2s_examples() {
        let a = ico(0.5);
        let pts: Vec<Vec3> = a.sample_points(2_000, &mut ChaCha8Rng::seed_from_u64(5)).into_iter().map(|s| s.0).collect();
        assert!(p2s(&pts, &a).unwrap() < 1e-6);
        let sphere_pts: Vec<Vec3> = pts.iter().map(|p| p.normalize() * 0.5).collect();
        let d = p2s(&sphere_pts, &ico(0.6)).unwrap();
        assert!((d - 0.1).abs() / 0.1 < 0.02, "{d}");
        let tri = TriMesh::from_triangles(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        assert!((p2s(&[Vec3::new(0.2, 0.2, 0.37)], &tri).unwrap() - 0.37).abs() < 1e-15);
        assert!(p2s(&[], &tri).is_err());
    }

    #[test]
    fn normal_consistency_examples() {
        let a = ico(0.5);
        assert!(normal_consistency(&a, &a, 5_000, 1).unwrap() < 1e-6);
        let inv = normal_consistency(&a, &a.flipped(), 5_000, 1).unwrap();
        assert!((inv - 2.0).abs() < 1e-6, "{inv}");
        assert!(normal_consistency(&a, &ico(0.6), 5_000, 1).unwrap() < 1e-3);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn spearman_in_range_and_invariant_to_monotone_maps(v in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 2..40)) {
            let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let r = spearman(&x, &y);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            let xe: Vec<f64> = x.iter().map(|a| a.exp()).collect();
            prop_assert!((spearman(&xe, &y) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn designed_sigma_profile_declines() {
        let s = Shape::sphere(Vec3::zeros(), 0.5).unwrap();
        let src = DesignedSigma {
            shape: s.clone(),
            occ: SmoothOccParams::default(),
            design: DesignParams::default(),
        };
        let p = sigma_profile(&src, &s, 4_000, 20, 1).unwrap();
        assert!(p.spearman < -0.9, "{}", p.spearman);
        assert!(p.spearman_points < -0.9);
        assert!(p.populated_bins >= 10);
        assert!(p.counts.iter().all(|&c| c > 0));
        assert_eq!(p, sigma_profile(&src, &s, 4_000, 20, 1).unwrap());
        let flat = sigma_profile(&ConstantSigma(0.2), &s, 4_000, 20, 1).unwrap();
        assert_eq!(flat.spearman, 0.0);
        assert_eq!(flat.spearman_points, 0.0);
    }
}
