//! Losses, the two-phase training schedule and checkpoints.

mod checkpoint;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{decode_f64s, encode_f64s, Checkpoint, NetworkBlob, OptimizerBlob, FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::field::{gaussian_kl, gaussian_kl_grad, gaussian_kl_unchecked, DesignParams, FieldError, OccDistribution, SmoothOccParams};
use crate::geometry::{sample_training_points, Aabb, SampleBatch, SamplingParams, Shape};
use crate::model::{feature_matrix, rectifier_inputs, BaselineModel, DifModel, TrainedModel};
use crate::nn::{sigma_from_raw, sigma_from_raw_grad, AdamConfig, AdamState, Gradients, Mlp};

/// `|sdf|` below which a training point counts as near the surface in the log.
pub const NEAR_SURFACE: f64 = 0.05;
/// `|sdf|` above which a training point counts as far from the surface.
pub const FAR_FROM_SURFACE: f64 = 0.25;

/// Rows per parallel gradient shard. Fixed so that the reduction order, and
/// therefore every bit of the result, is independent of the thread count.
const SHARD_ROWS: usize = 128;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("loss over an empty batch")]
    EmptyBatch,
    #[error("batch length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}{}", dump.as_ref().map(|p| format!(" (batch written to {})", p.display())).unwrap_or_default())]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        dump: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Dif,
    DifNoRectifier,
    Baseline,
    BayesDiagnostic,
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Dif => "dif",
            TrainMode::DifNoRectifier => "dif_no_rectifier",
            TrainMode::Baseline => "baseline",
            TrainMode::BayesDiagnostic => "bayes_diagnostic",
        }
    }
}

/// Which networks the first (reconstruction-only) phase updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Phase1Scope {
    #[default]
    Both,
    PredictorOnly,
    RectifierOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight of the distribution (KL) loss.
    pub alpha1: f64,
    /// Weight of the reconstruction loss.
    pub alpha2: f64,
    pub k: f64,
    pub beta: f64,
    /// Smooth-occupancy graininess.
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub samples_per_epoch: usize,
    pub sampling_mix: f64,
    pub sampling_noise_sd: f64,
    pub feature_noise_sd: f64,
    pub seed: u64,
    /// Treat the coarse sample and the predicted distribution as constants
    /// inside the rectifier path.
    pub detached: bool,
    pub phase1_scope: Phase1Scope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Dif,
            alpha1: 1.0,
            alpha2: 0.55,
            k: 0.6,
            beta: 4.0,
            alpha: 20.0,
            lr: 1e-4,
            batch_size: 512,
            epochs_phase1: 10,
            epochs_phase2: 5,
            samples_per_epoch: 65_536,
            sampling_mix: 0.5,
            sampling_noise_sd: 0.05,
            feature_noise_sd: 0.1,
            seed: 0,
            detached: false,
            phase1_scope: Phase1Scope::Both,
        }
    }
}

impl TrainConfig {
    /// Checks ranges; errors name the offending key under `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let key = |k: &str| format!("{prefix}.{k}");
        let nonneg = [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("feature_noise_sd", self.feature_noise_sd)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key(name), format!("must be >= 0, got {v}")));
            }
        }
        let pos = [
            ("k", self.k),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("lr", self.lr),
            ("sampling_noise_sd", self.sampling_noise_sd),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key(name), format!("must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.sampling_mix) {
            return Err(Error::config(key("sampling_mix"), format!("must be in [0, 1], got {}", self.sampling_mix)));
        }
        if self.batch_size == 0 {
            return Err(Error::config(key("batch_size"), "must be >= 1"));
        }
        if self.samples_per_epoch == 0 {
            return Err(Error::config(key("samples_per_epoch"), "must be >= 1"));
        }
        Ok(())
    }

    pub fn occ(&self) -> SmoothOccParams {
        SmoothOccParams { alpha: self.alpha }
    }

    pub fn design(&self) -> DesignParams {
        DesignParams { k: self.k, beta: self.beta }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Mean squared error.
pub fn loss_rec(fine: &[f64], gt: &[f64]) -> Result<f64, TrainError> {
    check_lengths(fine.len(), gt.len())?;
    Ok(fine.iter().zip(gt).map(|(f, g)| (f - g) * (f - g)).sum::<f64>() / fine.len() as f64)
}

/// Batch mean of `KL(pred_i || designed_i)`.
pub fn loss_dis(pred: &[OccDistribution], designed: &[OccDistribution]) -> Result<f64, TrainError> {
    check_lengths(pred.len(), designed.len())?;
    let mut s = 0.0;
    for (p, d) in pred.iter().zip(designed) {
        s += gaussian_kl(p, d)?;
    }
    Ok(s / pred.len() as f64)
}

/// `(1/2N) * sum((o_hat - o)^2 / sigma^2 + ln sigma)`.
pub fn loss_bayes(samples: &[f64], gts: &[f64], sigmas: &[f64]) -> Result<f64, TrainError> {
    check_lengths(samples.len(), gts.len())?;
    check_lengths(samples.len(), sigmas.len())?;
    let mut s = 0.0;
    for ((o_hat, o), &sig) in samples.iter().zip(gts).zip(sigmas) {
        if !(sig > 0.0) {
            return Err(TrainError::NonPositiveSigma(sig));
        }
        s += (o_hat - o).powi(2) / (sig * sig) + sig.ln();
    }
    Ok(s / (2.0 * samples.len() as f64))
}

/// `alpha1 * l_dis + alpha2 * l_rec`.
pub fn total_loss(l_dis: f64, l_rec: f64, alpha1: f64, alpha2: f64) -> f64 {
    alpha1 * l_dis + alpha2 * l_rec
}

fn check_lengths(a: usize, b: usize) -> Result<(), TrainError> {
    if a == 0 {
        return Err(TrainError::EmptyBatch);
    }
    if a != b {
        return Err(TrainError::LengthMismatch(a, b));
    }
    Ok(())
}

/// Per-row supervision for one mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    pub gt: &'a [f64],
    pub mu_d: &'a [f64],
    pub sigma_d: &'a [f64],
}

/// Loss weights for one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub dis: f64,
}

/// Objective value and its components, all batch means.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub objective: f64,
    pub l_rec: f64,
    pub l_dis: f64,
}

impl BatchLoss {
    fn add(&mut self, o: &BatchLoss) {
        self.objective += o.objective;
        self.l_rec += o.l_rec;
        self.l_dis += o.l_dis;
    }
}

/// Parameter gradients of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub predictor: Gradients,
    pub rectifier: Option<Gradients>,
}

impl ModelGrads {
    fn accumulate(&mut self, o: &ModelGrads) {
        self.predictor.accumulate(&o.predictor);
        if let (Some(a), Some(b)) = (&mut self.rectifier, &o.rectifier) {
            a.accumulate(b);
        }
    }
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

/// D-IF objective `w.rec * L_rec + w.dis * L_dis` through the
/// sample-then-rectify path, with exact gradients. Rows are scaled by
/// `1 / norm_rows`, so shards of a batch can be summed.
pub fn dif_loss_grad(
    model: &DifModel,
    x: ArrayView2<f64>,
    eps: &[f64],
    t: Targets<'_>,
    w: LossWeights,
    detached: bool,
    norm_rows: usize,
) -> Result<(BatchLoss, ModelGrads, Vec<f64>)> {
    let n = x.nrows();
    let inv = 1.0 / norm_rows as f64;
    let (y, pc) = model.predictor.forward(x)?;
    let mu: Vec<f64> = y.column(0).to_vec();
    let raw: Vec<f64> = y.column(1).to_vec();
    let sigma: Vec<f64> = raw.iter().map(|&r| sigma_from_raw(r)).collect();
    let coarse: Vec<f64> = (0..n).map(|i| mu[i] + sigma[i] * eps[i]).collect();

    let rect = match &model.rectifier {
        Some(r) => {
            let z = rectifier_inputs(&coarse, &mu, &sigma, x);
            let (out, rc) = r.forward(z.view())?;
            Some((r, out, rc))
        }
        None => None,
    };
    let fine: Vec<f64> = match &rect {
        Some((_, out, _)) => (0..n).map(|i| coarse[i] + out[[i, 0]]).collect(),
        None => coarse.clone(),
    };

    let mut loss = BatchLoss::default();
    let mut g_fine = vec![0.0; n];
    for i in 0..n {
        let r = fine[i] - t.gt[i];
        loss.l_rec += r * r * inv;
        g_fine[i] = w.rec * 2.0 * r * inv;
    }

    let mut g_coarse = g_fine.clone();
    let mut g_mu = vec![0.0; n];
    let mut g_sigma = vec![0.0; n];
    let rect_grads = match &rect {
        Some((r, _, rc)) => {
            let (g, dz) = r.backward(rc, column(&g_fine).view())?;
            for i in 0..n {
                g_coarse[i] += dz[[i, 0]];
                g_mu[i] += dz[[i, 1]];
                g_sigma[i] += dz[[i, 2]];
            }
            Some(g)
        }
        None => None,
    };
    if detached {
        g_mu.fill(0.0);
        g_sigma.fill(0.0);
    } else {
        for i in 0..n {
            g_mu[i] += g_coarse[i];
            g_sigma[i] += g_coarse[i] * eps[i];
        }
    }
    if w.dis != 0.0 {
        for i in 0..n {
            loss.l_dis += gaussian_kl_unchecked(mu[i], sigma[i], t.mu_d[i], t.sigma_d[i]) * inv;
            let (dm, ds) = gaussian_kl_grad(mu[i], sigma[i], t.mu_d[i], t.sigma_d[i]);
            g_mu[i] += w.dis * dm * inv;
            g_sigma[i] += w.dis * ds * inv;
        }
    }
    let mut dy = Array2::zeros((n, 2));
    for i in 0..n {
        dy[[i, 0]] = g_mu[i];
        dy[[i, 1]] = g_sigma[i] * sigma_from_raw_grad(raw[i]);
    }
    let (pg, _) = model.predictor.backward(&pc, dy.view())?;
    loss.objective = w.rec * loss.l_rec + w.dis * loss.l_dis;
    Ok((
        loss,
        ModelGrads {
            predictor: pg,
            rectifier: rect_grads,
        },
        sigma,
    ))
}

/// Reconstruction loss of the deterministic baseline.
pub fn baseline_loss_grad(net: &Mlp, x: ArrayView2<f64>, gt: &[f64], norm_rows: usize) -> Result<(BatchLoss, Gradients)> {
    let inv = 1.0 / norm_rows as f64;
    let (y, cache) = net.forward(x)?;
    let mut loss = BatchLoss::default();
    let mut dy = Array2::zeros((x.nrows(), 1));
    for i in 0..x.nrows() {
        let r = y[[i, 0]] - gt[i];
        loss.l_rec += r * r * inv;
        dy[[i, 0]] = 2.0 * r * inv;
    }
    loss.objective = loss.l_rec;
    let (g, _) = net.backward(&cache, dy.view())?;
    Ok((loss, g))
}

/// Heteroscedastic loss on the predictor alone, using the sampled value
/// `mu + sigma * eps`.
pub fn bayes_loss_grad(
    net: &Mlp,
    x: ArrayView2<f64>,
    eps: &[f64],
    gt: &[f64],
    norm_rows: usize,
) -> Result<(BatchLoss, Gradients, Vec<f64>)> {
    let n = x.nrows();
    let half_inv = 0.5 / norm_rows as f64;
    let (y, cache) = net.forward(x)?;
    let mut loss = BatchLoss::default();
    let mut dy = Array2::zeros((n, 2));
    let mut sigmas = Vec::with_capacity(n);
    for i in 0..n {
        let (mu, raw) = (y[[i, 0]], y[[i, 1]]);
        let s = sigma_from_raw(raw);
        let r = mu + s * eps[i] - gt[i];
        let s2 = s * s;
        loss.l_rec += r * r * 2.0 * half_inv;
        loss.objective += (r * r / s2 + s.ln()) * half_inv;
        dy[[i, 0]] = 2.0 * r / s2 * half_inv;
        let ds = (2.0 * r * eps[i] / s2 - 2.0 * r * r / (s2 * s) + 1.0 / s) * half_inv;
        dy[[i, 1]] = ds * sigma_from_raw_grad(raw);
        sigmas.push(s);
    }
    let (g, _) = net.backward(&cache, dy.view())?;
    Ok((loss, g, sigmas))
}

/// One row of the training log. Distribution terms are absent while they
/// are not part of the objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub l_rec: f64,
    pub l_dis: Option<f64>,
    pub l_un: Option<f64>,
    pub sigma_near: Option<f64>,
    pub sigma_far: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV with header `epoch,l_rec,l_dis,l_un,sigma_near,sigma_far,seconds`;
    /// absent values are empty fields. In the diagnostic mode `l_un` holds the
    /// heteroscedastic objective.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from("epoch,l_rec,l_dis,l_un,sigma_near,sigma_far,seconds\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.3}\n",
                r.epoch,
                r.l_rec,
                opt(r.l_dis),
                opt(r.l_un),
                opt(r.sigma_near),
                opt(r.sigma_far),
                r.seconds
            ));
        }
        s
    }

    pub fn first_l_rec(&self) -> Option<f64> {
        self.rows.first().map(|r| r.l_rec)
    }

    pub fn last_l_rec(&self) -> Option<f64> {
        self.rows.last().map(|r| r.l_rec)
    }
}

/// Everything [`fit`] produces.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: TrainedModel,
    pub log: TrainLog,
    pub checkpoint: Checkpoint,
}

/// Independent stream seeds derived from the experiment seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_INIT: u64 = 1;
const TAG_SAMPLES: u64 = 2;
const TAG_FEATURE_NOISE: u64 = 3;
const TAG_SHUFFLE: u64 = 4;
const TAG_EPS: u64 = 5;

#[derive(Debug, Clone, Copy)]
struct Phase {
    index: usize,
    epochs: usize,
    weights: LossWeights,
    train_predictor: bool,
    train_rectifier: bool,
    log_distribution: bool,
}

fn phases(cfg: &TrainConfig) -> Vec<Phase> {
    match cfg.mode {
        TrainMode::Dif | TrainMode::DifNoRectifier => {
            let (p, r) = match cfg.phase1_scope {
                Phase1Scope::Both => (true, true),
                Phase1Scope::PredictorOnly => (true, false),
                Phase1Scope::RectifierOnly => (false, true),
            };
            vec![
                Phase {
                    index: 1,
                    epochs: cfg.epochs_phase1,
                    weights: LossWeights { rec: cfg.alpha2, dis: 0.0 },
                    train_predictor: p,
                    train_rectifier: r,
                    log_distribution: false,
                },
                Phase {
                    index: 2,
                    epochs: cfg.epochs_phase2,
                    weights: LossWeights {
                        rec: cfg.alpha2,
                        dis: cfg.alpha1,
                    },
                    train_predictor: true,
                    train_rectifier: true,
                    log_distribution: true,
                },
            ]
        }
        TrainMode::Baseline | TrainMode::BayesDiagnostic => vec![Phase {
            index: 1,
            epochs: cfg.epochs_phase1 + cfg.epochs_phase2,
            weights: LossWeights { rec: 1.0, dis: 0.0 },
            train_predictor: true,
            train_rectifier: false,
            log_distribution: cfg.mode == TrainMode::BayesDiagnostic,
        }],
    }
}

/// The model a run starts from.
pub fn initial_model(cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_INIT, 0));
    Ok(match cfg.mode {
        TrainMode::Baseline => TrainedModel::Baseline(BaselineModel::new(cfg.occ(), &mut rng)?),
        TrainMode::Dif => TrainedModel::Dif(DifModel::new(cfg.occ(), cfg.design(), cfg.feature_noise_sd, true, &mut rng)?),
        TrainMode::DifNoRectifier | TrainMode::BayesDiagnostic => {
            TrainedModel::Dif(DifModel::new(cfg.occ(), cfg.design(), cfg.feature_noise_sd, false, &mut rng)?)
        }
    })
}

/// Labelled points, features and sampling noise for one epoch, already
/// shuffled.
#[derive(Debug, Clone)]
pub struct EpochData {
    pub batch: SampleBatch,
    pub features: Array2<f64>,
    pub eps: Vec<f64>,
}

pub fn epoch_data(cfg: &TrainConfig, target: &Shape, prior: &Shape, bbox: &Aabb, epoch: usize) -> Result<EpochData> {
    let e = epoch as u64;
    let params = SamplingParams {
        n: cfg.samples_per_epoch,
        mix: cfg.sampling_mix,
        noise_sd: cfg.sampling_noise_sd,
        bbox: *bbox,
    };
    let raw = sample_training_points(target, &params, &cfg.occ(), &cfg.design(), derive_seed(cfg.seed, TAG_SAMPLES, e))?;
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_SHUFFLE, e)));
    let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let batch = SampleBatch {
        points: order.iter().map(|&i| raw.points[i]).collect(),
        gt_sdf: pick(&raw.gt_sdf),
        gt_occ: pick(&raw.gt_occ),
        designed_mu: pick(&raw.designed_mu),
        designed_sigma: pick(&raw.designed_sigma),
    };
    let features = feature_matrix(
        target,
        prior,
        &batch.points,
        cfg.feature_noise_sd,
        derive_seed(cfg.seed, TAG_FEATURE_NOISE, e),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_EPS, e));
    let eps = (0..batch.len()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(EpochData { batch, features, eps })
}

/// Loss and gradients for rows `range` of an epoch, sharded and reduced in a
/// fixed order.
fn batch_step(
    model: &TrainedModel,
    cfg: &TrainConfig,
    data: &EpochData,
    range: std::ops::Range<usize>,
    w: LossWeights,
) -> Result<(BatchLoss, ModelGrads, Vec<f64>)> {
    let rows = range.len();
    let starts: Vec<usize> = range.clone().step_by(SHARD_ROWS).collect();
    let parts: Vec<(BatchLoss, ModelGrads, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + SHARD_ROWS).min(range.end);
            let x = data.features.slice(ndarray::s![s..e, ..]);
            let b = &data.batch;
            match model {
                TrainedModel::Dif(m) if cfg.mode == TrainMode::BayesDiagnostic => {
                    let (l, g, sig) = bayes_loss_grad(&m.predictor, x, &data.eps[s..e], &b.gt_occ[s..e], rows)?;
                    Ok((
                        l,
                        ModelGrads {
                            predictor: g,
                            rectifier: None,
                        },
                        sig,
                    ))
                }
                TrainedModel::Dif(m) => dif_loss_grad(
                    m,
                    x,
                    &data.eps[s..e],
                    Targets {
                        gt: &b.gt_occ[s..e],
                        mu_d: &b.designed_mu[s..e],
                        sigma_d: &b.designed_sigma[s..e],
                    },
                    w,
                    cfg.detached,
                    rows,
                ),
                TrainedModel::Baseline(bm) => {
                    let (l, g) = baseline_loss_grad(&bm.net, x, &b.gt_occ[s..e], rows)?;
                    Ok((
                        l,
                        ModelGrads {
                            predictor: g,
                            rectifier: None,
                        },
                        Vec::new(),
                    ))
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let (mut loss, mut grads, mut sig) = it.next().expect("non-empty range");
    for (l, g, s) in it {
        loss.add(&l);
        grads.accumulate(&g);
        sig.extend(s);
    }
    Ok((loss, grads, sig))
}

fn dump_batch(out_dir: Option<&Path>, data: &EpochData, range: std::ops::Range<usize>, epoch: usize, batch: usize) -> Option<PathBuf> {
    let dir = out_dir?;
    let b = &data.batch;
    let sub = SampleBatch {
        points: b.points[range.clone()].to_vec(),
        gt_sdf: b.gt_sdf[range.clone()].to_vec(),
        gt_occ: b.gt_occ[range.clone()].to_vec(),
        designed_mu: b.designed_mu[range.clone()].to_vec(),
        designed_sigma: b.designed_sigma[range].to_vec(),
    };
    let path = dir.join(format!("diverged_epoch{epoch}_batch{batch}.csv"));
    std::fs::write(&path, sub.to_csv()).ok()?;
    Some(path)
}

fn optimizer_names(model: &TrainedModel) -> Vec<&'static str> {
    match model {
        TrainedModel::Baseline(_) => vec!["baseline"],
        TrainedModel::Dif(m) if m.rectifier.is_some() => vec!["predictor", "rectifier"],
        TrainedModel::Dif(_) => vec!["predictor"],
    }
}

fn nets_mut(model: &mut TrainedModel) -> (&mut Mlp, Option<&mut Mlp>) {
    match model {
        TrainedModel::Baseline(b) => (&mut b.net, None),
        TrainedModel::Dif(m) => (&mut m.predictor, m.rectifier.as_mut()),
    }
}

/// Trains per `cfg` on `target` with `prior` features, sampling in `bbox`.
/// When `out_dir` is given, writes `checkpoint_phase{k}.json` after each
/// phase, `checkpoint.json` and `train_log.csv`.
pub fn fit(cfg: &TrainConfig, target: &Shape, prior: &Shape, bbox: &Aabb, out_dir: Option<&Path>) -> Result<FitOutput> {
    fit_with_progress(cfg, target, prior, bbox, out_dir, &mut |_| {})
}

pub fn fit_with_progress(
    cfg: &TrainConfig,
    target: &Shape,
    prior: &Shape,
    bbox: &Aabb,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<FitOutput> {
    cfg.validate("train")?;
    let mut model = initial_model(cfg)?;
    let mut opts: BTreeMap<String, AdamState> = BTreeMap::new();
    {
        let names = optimizer_names(&model);
        let (p, r) = nets_mut(&mut model);
        opts.insert(names[0].into(), AdamState::new(cfg.adam(), p.num_params()));
        if let Some(r) = r {
            opts.insert(names[1].into(), AdamState::new(cfg.adam(), r.num_params()));
        }
    }
    let mut log = TrainLog::default();
    let mut epoch = 0;
    let mut last_phase = 0;
    for ph in phases(cfg) {
        for _ in 0..ph.epochs {
            epoch += 1;
            let started = Instant::now();
            let data = epoch_data(cfg, target, prior, bbox, epoch)?;
            let n = data.batch.len();
            let mut sums = BatchLoss::default();
            let mut sigmas = Vec::with_capacity(n);
            for (bi, start) in (0..n).step_by(cfg.batch_size).enumerate() {
                let range = start..(start + cfg.batch_size).min(n);
                let (loss, grads, sig) = batch_step(&model, cfg, &data, range.clone(), ph.weights)?;
                if !loss.objective.is_finite() {
                    let dump = dump_batch(out_dir, &data, range, epoch, bi);
                    return Err(TrainError::Diverged {
                        epoch,
                        batch: bi,
                        loss: loss.objective,
                        dump,
                    }
                    .into());
                }
                let frac = range.len() as f64 / n as f64;
                sums.objective += loss.objective * frac;
                sums.l_rec += loss.l_rec * frac;
                sums.l_dis += loss.l_dis * frac;
                sigmas.extend(sig);
                let first = optimizer_names(&model)[0];
                let (p, r) = nets_mut(&mut model);
                if ph.train_predictor {
                    opts.get_mut(first).expect("state").update(p, &grads.predictor)?;
                }
                if let (true, Some(r), Some(g)) = (ph.train_rectifier, r, grads.rectifier.as_ref()) {
                    opts.get_mut("rectifier").expect("state").update(r, g)?;
                }
            }
            let band = |pred: &dyn Fn(f64) -> bool| -> Option<f64> {
                if sigmas.is_empty() {
                    return None;
                }
                let (s, c) = sigmas
                    .iter()
                    .zip(&data.batch.gt_sdf)
                    .filter(|(_, d)| pred(d.abs()))
                    .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
                (c > 0).then(|| s / c as f64)
            };
            let rec = EpochRecord {
                epoch,
                phase: ph.index,
                l_rec: sums.l_rec,
                l_dis: (ph.log_distribution && cfg.mode != TrainMode::BayesDiagnostic).then_some(sums.l_dis),
                l_un: ph.log_distribution.then_some(sums.objective),
                sigma_near: band(&|d| d < NEAR_SURFACE),
                sigma_far: band(&|d| d > FAR_FROM_SURFACE),
                seconds: started.elapsed().as_secs_f64(),
            };
            progress(&rec);
            log.rows.push(rec);
        }
        last_phase = ph.index;
        if let Some(dir) = out_dir {
            Checkpoint::new(&model, cfg.mode, &opts, cfg.seed, epoch, ph.index).save(&dir.join(format!("checkpoint_phase{}.json", ph.index)))?;
        }
    }
    let checkpoint = Checkpoint::new(&model, cfg.mode, &opts, cfg.seed, epoch, last_phase);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("checkpoint.json"))?;
        std::fs::write(dir.join("train_log.csv"), log.to_csv()).map_err(|e| Error::io("writing train_log.csv", e))?;
    }
    Ok(FitOutput { model, log, checkpoint })
}
