use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Aabb, GeometryError, Shape, Vec3};
use crate::field::{designed_sigma, DesignParams, SmoothOccParams};

/// How training points are drawn: a fraction `mix` uniformly in `bbox`, the
/// rest on the surface then jittered by isotropic Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub n: usize,
    pub mix: f64,
    pub noise_sd: f64,
    pub bbox: Aabb,
}

/// Query points with their ground-truth SDF, smooth occupancy and designed
/// distribution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleBatch {
    pub points: Vec<Vec3>,
    pub gt_sdf: Vec<f64>,
    pub gt_occ: Vec<f64>,
    pub designed_mu: Vec<f64>,
    pub designed_sigma: Vec<f64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fills the ground-truth columns for an explicit list of points.
    pub fn label(shape: &Shape, points: Vec<Vec3>, occ: &SmoothOccParams, design: &DesignParams) -> Self {
        let gt_sdf: Vec<f64> = points.iter().map(|p| shape.sdf(p)).collect();
        let gt_occ: Vec<f64> = gt_sdf.iter().map(|s| occ.occupancy(*s)).collect();
        let designed_sigma = gt_occ.iter().map(|o| designed_sigma(*o, design)).collect();
        Self {
            points,
            gt_sdf,
            designed_mu: gt_occ.clone(),
            gt_occ,
            designed_sigma,
        }
    }

    /// CSV with header `x,y,z,sdf,occ,mu_d,sigma_d`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z,sdf,occ,mu_d,sigma_d\n");
        for i in 0..self.len() {
            let p = self.points[i];
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.x, p.y, p.z, self.gt_sdf[i], self.gt_occ[i], self.designed_mu[i], self.designed_sigma[i]
            ));
        }
        out
    }
}

/// Draws a labelled batch. Pure in `(shape, params, occ, design, seed)`.
pub fn sample_training_points(
    shape: &Shape,
    params: &SamplingParams,
    occ: &SmoothOccParams,
    design: &DesignParams,
    seed: u64,
) -> Result<SampleBatch, GeometryError> {
    if params.n == 0 {
        return Err(GeometryError::EmptyBatch);
    }
    if !(0.0..=1.0).contains(&params.mix) {
        return Err(GeometryError::InvalidSampling(format!("mix must be in [0, 1], got {}", params.mix)));
    }
    if !(params.noise_sd > 0.0) {
        return Err(GeometryError::InvalidSampling(format!(
            "noise_sd must be > 0, got {}",
            params.noise_sd
        )));
    }
    if !params.bbox.is_valid() {
        return Err(GeometryError::InvalidSampling("bbox must have min < max on every axis".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_uniform = ((params.mix * params.n as f64).round() as usize).min(params.n);
    let b = &params.bbox;
    let mut points = Vec::with_capacity(params.n);
    for _ in 0..n_uniform {
        points.push(Vec3::new(
            rng.random_range(b.min.x..b.max.x),
            rng.random_range(b.min.y..b.max.y),
            rng.random_range(b.min.z..b.max.z),
        ));
    }
    for _ in n_uniform..params.n {
        let q = shape.sample_surface(&mut rng);
        let jitter = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * params.noise_sd;
        points.push(q + jitter);
    }
    Ok(SampleBatch::label(shape, points, occ, design))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, mix: f64) -> SamplingParams {
        SamplingParams {
            n,
            mix,
            noise_sd: 0.05,
            bbox: Aabb::cube(1.0),
        }
    }

    fn sphere() -> Shape {
        Shape::sphere(Vec3::zeros(), 0.5).unwrap()
    }

    /// Two-sided one-sample Kolmogorov-Smirnov p-value against U(lo, hi),
    /// asymptotic distribution.
    fn ks_uniform_p(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut d: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let f = (x - lo) / (hi - lo);
            d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
        }
        let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
        let mut p = 0.0;
        for k in 1..100 {
            let k = k as f64;
            p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn uniform_points_pass_ks() {
        let occ = SmoothOccParams::default();
        let b = sample_training_points(&sphere(), &params(1000, 1.0), &occ, &DesignParams::default(), 7).unwrap();
        assert_eq!(b.len(), 1000);
        assert!(b.points.iter().all(|p| Aabb::cube(1.0).contains(p)));
        for axis in 0..3 {
            let p = ks_uniform_p(b.points.iter().map(|q| q[axis]).collect(), -1.0, 1.0);
            assert!(p > 0.01, "axis {axis}: p = {p}");
        }
    }

    #[test]
    fn near_surface_points_stay_close() {
        let occ = SmoothOccParams::default();
        let b = sample_training_points(&sphere(), &params(1000, 0.0), &occ, &DesignParams::default(), 7).unwrap();
        let mean = b.gt_sdf.iter().map(|s| s.abs()).sum::<f64>() / 1000.0;
        assert!(mean < 3.0 * 0.05, "{mean}");
    }

    #[test]
    fn deterministic_given_seed() {
        let occ = SmoothOccParams::default();
        let d = DesignParams::default();
        let a = sample_training_points(&sphere(), &params(500, 0.5), &occ, &d, 42).unwrap();
        let b = sample_training_points(&sphere(), &params(500, 0.5), &occ, &d, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_training_points(&sphere(), &params(500, 0.5), &occ, &d, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_follow_definitions() {
        let occ = SmoothOccParams::default();
        let d = DesignParams::default();
        let b = sample_training_points(&sphere(), &params(300, 0.5), &occ, &d, 1).unwrap();
        for i in 0..b.len() {
            assert_eq!(b.gt_occ[i], occ.occupancy(b.gt_sdf[i]));
            assert_eq!(b.designed_mu[i], b.gt_occ[i]);
            assert!(b.designed_sigma[i] > 0.0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let occ = SmoothOccParams::default();
        let d = DesignParams::default();
        assert_eq!(
            sample_training_points(&sphere(), &params(0, 0.5), &occ, &d, 1),
            Err(GeometryError::EmptyBatch)
        );
        assert!(sample_training_points(&sphere(), &params(10, 1.5), &occ, &d, 1).is_err());
        let mut p = params(10, 0.5);
        p.noise_sd = 0.0;
        assert!(sample_training_points(&sphere(), &p, &occ, &d, 1).is_err());
    }
}
