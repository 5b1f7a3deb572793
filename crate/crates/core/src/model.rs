//! Feature extraction, the distribution predictor with its occupancy
//! rectifier, and the deterministic value baseline.

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{designed_from_occupancy, DesignParams, OccDistribution, SmoothOccParams};
use crate::geometry::{GeometryError, Shape, Vec3};
use crate::nn::{reparam_sample, sigma_from_raw, Activation, Architecture, Mlp};

pub const FEATURE_DIM: usize = 7;
pub const RECTIFIER_INPUT_DIM: usize = 3 + FEATURE_DIM;

/// Points per parallel work item when evaluating many queries.
const EVAL_CHUNK: usize = 2048;

pub fn predictor_architecture() -> Architecture {
    Architecture::stack(&[FEATURE_DIM, 128, 128, 128, 2], Activation::Relu)
}

pub fn rectifier_architecture() -> Architecture {
    Architecture::stack(&[RECTIFIER_INPUT_DIM, 64, 64, 1], Activation::Relu)
}

pub fn baseline_architecture() -> Architecture {
    Architecture::stack(&[FEATURE_DIM, 128, 128, 128, 1], Activation::Relu)
}

/// Per-point input: prior-surface normal, noisy target normal and the prior
/// signed distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVec7 {
    pub prior_normal: Vec3,
    pub target_normal_noisy: Vec3,
    pub prior_sdf: f64,
}

impl FeatureVec7 {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        let (a, b) = (self.prior_normal, self.target_normal_noisy);
        [a.x, a.y, a.z, b.x, b.y, b.z, self.prior_sdf]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            prior_normal: Vec3::new(v[0], v[1], v[2]),
            target_normal_noisy: Vec3::new(v[3], v[4], v[5]),
            prior_sdf: v[6],
        }
    }
}

/// Features with an explicit perturbation added to the target normal before
/// renormalisation. `noise = 0` gives the clean features used at evaluation.
pub fn features_with_noise(target: &Shape, prior: &Shape, p: &Vec3, noise: &Vec3) -> Result<FeatureVec7, GeometryError> {
    let qp = prior.nearest_surface_point(p)?;
    let prior_normal = prior.normal_or_axis(&qp);
    let qt = target.nearest_surface_point(p)?;
    let clean = target.normal_or_axis(&qt);
    let perturbed = clean + noise;
    let n = perturbed.norm();
    let target_normal_noisy = if n > 1e-12 { perturbed / n } else { clean };
    Ok(FeatureVec7 {
        prior_normal,
        target_normal_noisy,
        prior_sdf: prior.sdf(p),
    })
}

pub fn extract_features<R: Rng + ?Sized>(
    target: &Shape,
    prior: &Shape,
    p: &Vec3,
    noise_sd: f64,
    rng: &mut R,
) -> Result<FeatureVec7, GeometryError> {
    let noise = gaussian3(rng) * noise_sd;
    features_with_noise(target, prior, p, &noise)
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    )
}

/// Feature matrix (`points.len() x 7`). Noise vectors are drawn in point
/// order from `seed` before the parallel projection, so the result does not
/// depend on the thread count.
pub fn feature_matrix(target: &Shape, prior: &Shape, points: &[Vec3], noise_sd: f64, seed: u64) -> Result<Array2<f64>, GeometryError> {
    let noise: Vec<Vec3> = if noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..points.len()).map(|_| gaussian3(&mut rng) * noise_sd).collect()
    } else {
        vec![Vec3::zeros(); points.len()]
    };
    let rows: Vec<[f64; FEATURE_DIM]> = points
        .par_iter()
        .zip(noise.par_iter())
        .map(|(p, n)| features_with_noise(target, prior, p, n).map(|f| f.to_array()))
        .collect::<Result<_, _>>()?;
    Ok(Array2::from_shape_vec((rows.len(), FEATURE_DIM), rows.into_iter().flatten().collect()).expect("row-major"))
}

/// Deterministic evaluation draws `eps` per query index: the generator for
/// point `i` is ChaCha8 seeded with `seed` on stream `i`.
pub fn indexed_normal(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum EvalMode {
    /// `eps = 0`: the coarse value is the predicted mean.
    #[default]
    Mean,
    /// Seeded draw per query point.
    Sample(u64),
}

impl EvalMode {
    pub fn eps(&self, index: u64) -> f64 {
        match self {
            EvalMode::Mean => 0.0,
            EvalMode::Sample(seed) => indexed_normal(*seed, index),
        }
    }
}

/// Distribution predictor plus optional occupancy rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DifModel {
    pub predictor: Mlp,
    /// `None` for the ablation without a rectifier: fine = coarse.
    pub rectifier: Option<Mlp>,
    pub occ: SmoothOccParams,
    pub design: DesignParams,
    pub feature_noise_sd: f64,
}

/// Batched intermediate values of the D-IF forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DifOutputs {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
}

impl DifModel {
    /// Fresh model; the rectifier's output layer starts at zero so the
    /// untrained model returns the coarse sample unchanged.
    pub fn new<R: Rng + ?Sized>(
        occ: SmoothOccParams,
        design: DesignParams,
        feature_noise_sd: f64,
        with_rectifier: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let predictor = Mlp::new(&predictor_architecture(), rng)?;
        let rectifier = if with_rectifier {
            let mut r = Mlp::new(&rectifier_architecture(), rng)?;
            r.zero_output_layer();
            Some(r)
        } else {
            None
        };
        Ok(Self {
            predictor,
            rectifier,
            occ,
            design,
            feature_noise_sd,
        })
    }

    pub fn predict_distribution(&self, features: &FeatureVec7) -> Result<OccDistribution> {
        let (y, _) = self.predictor.forward_vec(&features.to_array())?;
        let dist = OccDistribution {
            mu: y[0],
            sigma: sigma_from_raw(y[1]),
        };
        if !(dist.mu.is_finite() && dist.sigma.is_finite()) {
            return Err(Error::Numeric(format!("predictor output ({}, {})", y[0], y[1])));
        }
        Ok(dist)
    }

    /// Coarse sample `mu + sigma * eps` with its distribution.
    pub fn coarse_occupancy(&self, features: &FeatureVec7, eps: f64) -> Result<(f64, OccDistribution)> {
        let d = self.predict_distribution(features)?;
        Ok((reparam_sample(&d, eps), d))
    }

    /// `coarse + R([coarse, mu, sigma, features])`, unclamped.
    pub fn rectify(&self, coarse: f64, dist: &OccDistribution, features: &FeatureVec7) -> Result<f64> {
        let Some(r) = &self.rectifier else {
            return Ok(coarse);
        };
        let mut z = [0.0; RECTIFIER_INPUT_DIM];
        z[0] = coarse;
        z[1] = dist.mu;
        z[2] = dist.sigma;
        z[3..].copy_from_slice(&features.to_array());
        let (y, _) = r.forward_vec(&z)?;
        Ok(coarse + y[0])
    }

    /// Batched forward pass over a feature matrix with one `eps` per row.
    pub fn forward_batch(&self, features: ArrayView2<f64>, eps: &[f64]) -> Result<DifOutputs> {
        let y = self.predictor.predict(features)?;
        let n = y.nrows();
        let mu: Vec<f64> = y.column(0).to_vec();
        let sigma: Vec<f64> = y.column(1).iter().map(|&r| sigma_from_raw(r)).collect();
        let coarse: Vec<f64> = (0..n).map(|i| mu[i] + sigma[i] * eps[i]).collect();
        let fine = match &self.rectifier {
            None => coarse.clone(),
            Some(r) => {
                let z = rectifier_inputs(&coarse, &mu, &sigma, features);
                let res = r.predict(z.view())?;
                coarse.iter().zip(res.column(0)).map(|(c, d)| c + d).collect()
            }
        };
        Ok(DifOutputs { mu, sigma, coarse, fine })
    }
}

pub(crate) fn rectifier_inputs(coarse: &[f64], mu: &[f64], sigma: &[f64], features: ArrayView2<f64>) -> Array2<f64> {
    let n = coarse.len();
    let mut z = Array2::zeros((n, RECTIFIER_INPUT_DIM));
    for i in 0..n {
        z[[i, 0]] = coarse[i];
        z[[i, 1]] = mu[i];
        z[[i, 2]] = sigma[i];
    }
    z.slice_mut(s![.., 3..]).assign(&features);
    z
}

/// Deterministic value regression trained on the reconstruction loss only.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub net: Mlp,
    pub occ: SmoothOccParams,
}

impl BaselineModel {
    pub fn new<R: Rng + ?Sized>(occ: SmoothOccParams, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(&baseline_architecture(), rng)?,
            occ,
        })
    }

    pub fn forward(&self, features: &FeatureVec7) -> Result<f64> {
        let (y, _) = self.net.forward_vec(&features.to_array())?;
        if !y[0].is_finite() {
            return Err(Error::Numeric(format!("baseline output {}", y[0])));
        }
        Ok(y[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Dif(DifModel),
    Baseline(BaselineModel),
}

impl TrainedModel {
    /// Fine occupancy for each feature row, unclamped.
    pub fn occupancy_rows(&self, features: ArrayView2<f64>, eps: &[f64]) -> Result<Vec<f64>> {
        let out = match self {
            TrainedModel::Dif(m) => m.forward_batch(features, eps)?.fine,
            TrainedModel::Baseline(b) => b.net.predict(features)?.column(0).to_vec(),
        };
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite occupancy at row {i}")));
        }
        Ok(out)
    }

    pub fn as_dif(&self) -> Option<&DifModel> {
        match self {
            TrainedModel::Dif(m) => Some(m),
            TrainedModel::Baseline(_) => None,
        }
    }
}

/// Full composition for one query point with clean features.
pub fn evaluate_field(model: &TrainedModel, target: &Shape, prior: &Shape, p: &Vec3, mode: EvalMode) -> Result<f64> {
    Ok(evaluate_points(model, target, prior, std::slice::from_ref(p), mode)?[0])
}

/// Fine occupancy at many points, in parallel chunks. Point `i` uses
/// `mode.eps(i)`, so results do not depend on chunking.
pub fn evaluate_points(model: &TrainedModel, target: &Shape, prior: &Shape, points: &[Vec3], mode: EvalMode) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = points
        .par_chunks(EVAL_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let f = feature_matrix(target, prior, chunk, 0.0, 0)?;
            let start = (c * EVAL_CHUNK) as u64;
            let eps: Vec<f64> = (0..chunk.len() as u64).map(|i| mode.eps(start + i)).collect();
            model.occupancy_rows(f.view(), &eps)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Anything that assigns an occupancy to query points.
pub trait OccupancyField: Sync {
    fn occupancy(&self, points: &[Vec3]) -> Result<Vec<f64>>;
}

/// The exact smooth occupancy of a shape.
#[derive(Debug, Clone)]
pub struct AnalyticOccupancy {
    pub shape: Shape,
    pub occ: SmoothOccParams,
}

impl OccupancyField for AnalyticOccupancy {
    fn occupancy(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        Ok(points.par_iter().map(|p| self.occ.occupancy(self.shape.sdf(p))).collect())
    }
}

/// A trained model with its scene, evaluated with clean features.
#[derive(Debug, Clone, Copy)]
pub struct ModelField<'a> {
    pub model: &'a TrainedModel,
    pub target: &'a Shape,
    pub prior: &'a Shape,
    pub mode: EvalMode,
}

impl OccupancyField for ModelField<'_> {
    fn occupancy(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        evaluate_points(self.model, self.target, self.prior, points, self.mode)
    }
}

/// Anything that reports a predicted standard deviation at query points.
pub trait SigmaSource: Sync {
    fn sigma(&self, points: &[Vec3]) -> Result<Vec<f64>>;
}

impl SigmaSource for ModelField<'_> {
    fn sigma(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        let Some(m) = self.model.as_dif() else {
            return Err(Error::config("train.mode", "the deterministic baseline has no predicted sigma"));
        };
        let chunks: Vec<Vec<f64>> = points
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let f = feature_matrix(self.target, self.prior, chunk, 0.0, 0)?;
                let y = m.predictor.predict(f.view())?;
                Ok(y.column(1).iter().map(|&r| sigma_from_raw(r)).collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.concat())
    }
}

/// The designed target spread `sigma_d(O_gt(p))`.
#[derive(Debug, Clone)]
pub struct DesignedSigma {
    pub shape: Shape,
    pub occ: SmoothOccParams,
    pub design: DesignParams,
}

impl SigmaSource for DesignedSigma {
    fn sigma(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .map(|p| designed_from_occupancy(self.occ.occupancy(self.shape.sdf(p)), &self.design).sigma)
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantSigma(pub f64);

impl SigmaSource for ConstantSigma {
    fn sigma(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        Ok(vec![self.0; points.len()])
    }
}
