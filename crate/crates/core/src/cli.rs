//! Experiment configuration and the commands behind the `dif` binary.
//!
//! A run directory holds everything a command produced:
//!
//! ```text
//! <out>/config.json          resolved configuration
//! <out>/gt_mesh.obj          ground-truth surface (gen)
//! <out>/samples.csv          labelled training points (gen)
//! <out>/checkpoint*.json     model state per phase (train)
//! <out>/train_log.csv        per-epoch losses (train)
//! <out>/mesh_mean.obj        extracted surface (extract)
//! <out>/metrics.json         reconstruction metrics (eval)
//! <out>/ablation.{csv,json}  variant x seed comparison (ablate)
//! <out>/sigma_profile.*      uncertainty profile (profile)
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::extract::{evaluate_grid, marching_cubes, read_mesh, write_mesh};
use crate::geometry::{Aabb, Bump, SamplingParams, Shape, TriMesh, Vec3};
use crate::metrics::{sigma_profile, MetricsReport, SigmaProfile};
use crate::model::{AnalyticOccupancy, ConstantSigma, EvalMode, ModelField, SigmaSource, TrainedModel};
use crate::train::{fit_with_progress, Checkpoint, EpochRecord, FitOutput, TrainConfig, TrainMode};

/// Declarative shape, as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Torus {
        center: Vec3,
        major_radius: f64,
        minor_radius: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
    },
    Capsule {
        a: Vec3,
        b: Vec3,
        radius: f64,
    },
    Union {
        members: Vec<ShapeSpec>,
    },
    BumpSphere {
        center: Vec3,
        radius: f64,
        bumps: Vec<Bump>,
    },
    Mesh {
        path: PathBuf,
    },
    /// Prior only: the mean-radius sphere of a bump-sphere target.
    BestFitSphere,
}

fn key(path: &str, k: &str) -> String {
    if path.is_empty() {
        k.to_string()
    } else {
        format!("{path}.{k}")
    }
}

fn field<'a>(v: &'a Value, path: &str, k: &str) -> Result<&'a Value> {
    v.get(k).ok_or_else(|| Error::config(key(path, k), "missing required key"))
}

fn number(v: &Value, path: &str, k: &str) -> Result<f64> {
    field(v, path, k)?
        .as_f64()
        .ok_or_else(|| Error::config(key(path, k), "expected a number"))
}

fn vector(v: &Value, path: &str, k: &str) -> Result<Vec3> {
    let p = key(path, k);
    let arr = field(v, path, k)?
        .as_array()
        .filter(|a| a.len() == 3)
        .ok_or_else(|| Error::config(&p, "expected an array of three numbers"))?;
    let mut out = Vec3::zeros();
    for (i, x) in arr.iter().enumerate() {
        out[i] = x.as_f64().ok_or_else(|| Error::config(format!("{p}[{i}]"), "expected a number"))?;
    }
    Ok(out)
}

fn vector_or(v: &Value, path: &str, k: &str, default: Vec3) -> Result<Vec3> {
    if v.get(k).is_some() {
        vector(v, path, k)
    } else {
        Ok(default)
    }
}

impl ShapeSpec {
    /// Parses a shape object; errors carry the dotted path of the offending
    /// key, e.g. `scene.target.radius`.
    pub fn parse(v: &Value, path: &str) -> Result<Self> {
        if !v.is_object() {
            return Err(Error::config(path, "expected a shape object"));
        }
        let ty = field(v, path, "type")?
            .as_str()
            .ok_or_else(|| Error::config(key(path, "type"), "expected a string"))?;
        let center = || vector_or(v, path, "center", Vec3::zeros());
        Ok(match ty {
            "sphere" => ShapeSpec::Sphere {
                center: center()?,
                radius: number(v, path, "radius")?,
            },
            "torus" => ShapeSpec::Torus {
                center: center()?,
                major_radius: number(v, path, "major_radius")?,
                minor_radius: number(v, path, "minor_radius")?,
            },
            "box" => ShapeSpec::Box {
                center: center()?,
                half_extents: vector(v, path, "half_extents")?,
            },
            "capsule" => ShapeSpec::Capsule {
                a: vector(v, path, "a")?,
                b: vector(v, path, "b")?,
                radius: number(v, path, "radius")?,
            },
            "union" => {
                let p = key(path, "members");
                let arr = field(v, path, "members")?
                    .as_array()
                    .ok_or_else(|| Error::config(&p, "expected an array of shapes"))?;
                ShapeSpec::Union {
                    members: arr
                        .iter()
                        .enumerate()
                        .map(|(i, m)| ShapeSpec::parse(m, &format!("{p}[{i}]")))
                        .collect::<Result<_>>()?,
                }
            }
            "bump_sphere" => {
                let p = key(path, "bumps");
                let arr = match v.get("bumps") {
                    None => Vec::new(),
                    Some(b) => b.as_array().ok_or_else(|| Error::config(&p, "expected an array"))?.clone(),
                };
                let bumps = arr
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        let bp = format!("{p}[{i}]");
                        let d = vector(b, &bp, "direction")?;
                        if !(d.norm() > 0.0) {
                            return Err(Error::config(key(&bp, "direction"), "must be non-zero"));
                        }
                        Ok(Bump {
                            direction: if (d.norm() - 1.0).abs() < 1e-12 { d } else { d.normalize() },
                            amplitude: number(b, &bp, "amplitude")?,
                            width: number(b, &bp, "width")?,
                        })
                    })
                    .collect::<Result<_>>()?;
                ShapeSpec::BumpSphere {
                    center: center()?,
                    radius: number(v, path, "radius")?,
                    bumps,
                }
            }
            "mesh" => ShapeSpec::Mesh {
                path: PathBuf::from(
                    field(v, path, "path")?
                        .as_str()
                        .ok_or_else(|| Error::config(key(path, "path"), "expected a string"))?,
                ),
            },
            "best_fit_sphere" => ShapeSpec::BestFitSphere,
            other => return Err(Error::config(key(path, "type"), format!("unknown shape type {other:?}"))),
        })
    }

    /// Builds the shape; `target` resolves `best_fit_sphere`.
    pub fn build(&self, path: &str, target: Option<&Shape>) -> Result<Shape> {
        let wrap = |r: std::result::Result<Shape, crate::geometry::GeometryError>| r.map_err(|e| Error::config(path, e.to_string()));
        match self {
            ShapeSpec::Sphere { center, radius } => wrap(Shape::sphere(*center, *radius)),
            ShapeSpec::Torus {
                center,
                major_radius,
                minor_radius,
            } => wrap(Shape::torus(*center, *major_radius, *minor_radius)),
            ShapeSpec::Box { center, half_extents } => wrap(Shape::cuboid(*center, *half_extents)),
            ShapeSpec::Capsule { a, b, radius } => wrap(Shape::capsule(*a, *b, *radius)),
            ShapeSpec::Union { members } => {
                let built = members
                    .iter()
                    .enumerate()
                    .map(|(i, m)| m.build(&format!("{path}.members[{i}]"), target))
                    .collect::<Result<Vec<_>>>()?;
                wrap(Shape::union(built))
            }
            ShapeSpec::BumpSphere { center, radius, bumps } => wrap(Shape::bump_sphere(*center, *radius, bumps.clone())),
            ShapeSpec::Mesh { path: file } => {
                let mesh = read_mesh(file).map_err(|e| Error::config(key(path, "path"), e.to_string()))?;
                wrap(Shape::mesh(mesh))
            }
            ShapeSpec::BestFitSphere => match target {
                Some(Shape::BumpSphere(bs)) => Ok(bs.best_fit_sphere()),
                _ => Err(Error::config(
                    key(path, "type"),
                    "best_fit_sphere needs a bump_sphere target",
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneConfig {
    pub target: ShapeSpec,
    pub prior: ShapeSpec,
    pub bbox: Aabb,
}

/// The scene with its shapes constructed.
#[derive(Debug, Clone)]
pub struct Scene {
    pub target: Shape,
    pub prior: Shape,
    pub bbox: Aabb,
}

impl SceneConfig {
    pub fn build(&self) -> Result<Scene> {
        let target = self.target.build("scene.target", None)?;
        let prior = self.prior.build("scene.prior", Some(&target))?;
        if !self.bbox.is_valid() {
            return Err(Error::config("scene.bbox", "min must be below max on every axis"));
        }
        for (name, s) in [("target", &target), ("prior", &prior)] {
            if !self.bbox.contains_box(&s.bounds()) {
                return Err(Error::config("scene.bbox", format!("does not contain the {name} shape")));
            }
        }
        Ok(Scene {
            target,
            prior,
            bbox: self.bbox,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Lattice nodes per axis for reconstructed meshes.
    pub resolution: usize,
    /// Lattice nodes per axis for the ground-truth mesh.
    pub gt_resolution: usize,
    pub mode: EvalMode,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            gt_resolution: 128,
            mode: EvalMode::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub samples: usize,
    pub seeds: Vec<u64>,
    pub profile_points: usize,
    pub profile_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            samples: crate::metrics::DEFAULT_SAMPLES,
            seeds: vec![0, 1, 2, 3, 4],
            profile_points: 20_000,
            profile_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub extraction: ExtractionConfig,
    pub metrics: MetricsConfig,
    pub output: PathBuf,
}

/// Bumpy sphere used by the default experiment.
pub fn default_target() -> ShapeSpec {
    let bump = |d: [f64; 3], amplitude: f64, width: f64| Bump {
        direction: Vec3::from(d).normalize(),
        amplitude,
        width,
    };
    ShapeSpec::BumpSphere {
        center: Vec3::zeros(),
        radius: 0.5,
        bumps: vec![
            bump([0.0, 0.0, 1.0], 0.1, 0.4),
            bump([0.8, 0.6, 0.0], 0.08, 0.45),
            bump([-0.6, 0.3, -0.74], 0.1, 0.4),
            bump([0.2, -0.9, -0.4], 0.08, 0.45),
            bump([-0.5, -0.5, 0.7], 0.06, 0.35),
        ],
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig {
                target: default_target(),
                prior: ShapeSpec::BestFitSphere,
                bbox: Aabb::cube(1.0),
            },
            train: TrainConfig::default(),
            extraction: ExtractionConfig::default(),
            metrics: MetricsConfig::default(),
            output: PathBuf::from("runs/default"),
        }
    }
}

fn section<T: for<'de> Deserialize<'de> + Default>(root: &Value, name: &str) -> Result<T> {
    match root.get(name) {
        None => Ok(T::default()),
        Some(v) => serde_path_to_error::deserialize(v).map_err(|e| {
            let inner = e.path().to_string();
            let path = if inner == "." { name.to_string() } else { format!("{name}.{inner}") };
            Error::config(path, e.into_inner().to_string())
        }),
    }
}

impl ExperimentConfig {
    /// Parses JSON text. Absent sections take their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        if !root.is_object() {
            return Err(Error::config("<root>", "expected a JSON object"));
        }
        for k in root.as_object().expect("object").keys() {
            if !["scene", "train", "extraction", "metrics", "output"].contains(&k.as_str()) {
                return Err(Error::config(k.clone(), "unknown key"));
            }
        }
        let defaults = ExperimentConfig::default();
        let scene = match root.get("scene") {
            None => defaults.scene.clone(),
            Some(s) => SceneConfig {
                target: match s.get("target") {
                    Some(t) => ShapeSpec::parse(t, "scene.target")?,
                    None => defaults.scene.target.clone(),
                },
                prior: match s.get("prior") {
                    Some(p) => ShapeSpec::parse(p, "scene.prior")?,
                    None => defaults.scene.prior.clone(),
                },
                bbox: match s.get("bbox") {
                    Some(b) => Aabb::new(vector(b, "scene.bbox", "min")?, vector(b, "scene.bbox", "max")?),
                    None => defaults.scene.bbox,
                },
            },
        };
        let output = match root.get("output") {
            None => defaults.output,
            Some(v) => PathBuf::from(v.as_str().ok_or_else(|| Error::config("output", "expected a string"))?),
        };
        let cfg = Self {
            scene,
            train: section(&root, "train")?,
            extraction: section(&root, "extraction")?,
            metrics: section(&root, "metrics")?,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate("train")?;
        if self.extraction.resolution < 2 {
            return Err(Error::config("extraction.resolution", "must be >= 2"));
        }
        if self.extraction.gt_resolution < 2 {
            return Err(Error::config("extraction.gt_resolution", "must be >= 2"));
        }
        if self.metrics.samples == 0 {
            return Err(Error::config("metrics.samples", "must be >= 1"));
        }
        if self.metrics.seeds.is_empty() {
            return Err(Error::config("metrics.seeds", "need at least one seed"));
        }
        if self.metrics.profile_bins == 0 || self.metrics.profile_points == 0 {
            return Err(Error::config("metrics.profile_bins", "profile needs bins and points"));
        }
        self.scene.build().map(|_| ())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn snapshot(cfg: &ExperimentConfig) -> Result<()> {
    ensure_dir(&cfg.output)?;
    write_text(&cfg.output.join("config.json"), &cfg.to_json())
}

/// Marching cubes on the exact smooth occupancy of the target.
pub fn ground_truth_mesh(cfg: &ExperimentConfig, scene: &Scene) -> Result<TriMesh> {
    let field = AnalyticOccupancy {
        shape: scene.target.clone(),
        occ: cfg.train.occ(),
    };
    let grid = evaluate_grid(&field, &scene.bbox, [cfg.extraction.gt_resolution; 3])?;
    let out = marching_cubes(&grid, 0.5)?;
    if out.empty {
        return Err(Error::EmptySurface("ground-truth field has no 0.5 crossing".into()));
    }
    Ok(out.mesh)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenReport {
    pub gt_mesh: PathBuf,
    pub samples_csv: PathBuf,
    pub vertices: usize,
    pub triangles: usize,
}

/// Points written to `samples.csv` for inspection.
pub const PREVIEW_SAMPLES: usize = 4096;

pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<GenReport> {
    let scene = cfg.scene.build()?;
    snapshot(cfg)?;
    let mesh = ground_truth_mesh(cfg, &scene)?;
    let gt_mesh = cfg.output.join("gt_mesh.obj");
    write_mesh(&mesh, &gt_mesh)?;
    let params = SamplingParams {
        n: PREVIEW_SAMPLES,
        mix: cfg.train.sampling_mix,
        noise_sd: cfg.train.sampling_noise_sd,
        bbox: scene.bbox,
    };
    let batch = crate::geometry::sample_training_points(&scene.target, &params, &cfg.train.occ(), &cfg.train.design(), cfg.train.seed)?;
    let samples_csv = cfg.output.join("samples.csv");
    write_text(&samples_csv, &batch.to_csv())?;
    Ok(GenReport {
        gt_mesh,
        samples_csv,
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
    })
}

pub fn cmd_train(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&EpochRecord)) -> Result<FitOutput> {
    let scene = cfg.scene.build()?;
    snapshot(cfg)?;
    fit_with_progress(&cfg.train, &scene.target, &scene.prior, &scene.bbox, Some(&cfg.output), progress)
}

/// Grid evaluation plus marching cubes for a trained model.
pub fn extract_model_mesh(model: &TrainedModel, scene: &Scene, res: usize, mode: EvalMode) -> Result<TriMesh> {
    let field = ModelField {
        model,
        target: &scene.target,
        prior: &scene.prior,
        mode,
    };
    let grid = evaluate_grid(&field, &scene.bbox, [res; 3])?;
    let out = marching_cubes(&grid, 0.5)?;
    if out.empty {
        return Err(Error::EmptySurface(format!(
            "the field has no 0.5 crossing at resolution {res}; no mesh written"
        )));
    }
    Ok(out.mesh)
}

pub fn mesh_file_name(mode: EvalMode) -> String {
    match mode {
        EvalMode::Mean => "mesh_mean.obj".into(),
        EvalMode::Sample(s) => format!("mesh_sample{s}.obj"),
    }
}

pub fn cmd_extract(cfg: &ExperimentConfig, checkpoint: &Path, mode: EvalMode, output: Option<&Path>) -> Result<PathBuf> {
    let scene = cfg.scene.build()?;
    let (_, model) = Checkpoint::load_model(checkpoint)?;
    let mesh = extract_model_mesh(&model, &scene, cfg.extraction.resolution, mode)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            ensure_dir(&cfg.output)?;
            cfg.output.join(mesh_file_name(mode))
        }
    };
    write_mesh(&mesh, &path)?;
    Ok(path)
}

/// Compares `mesh` against `gt`, or against a freshly extracted ground truth.
pub fn cmd_eval(cfg: &ExperimentConfig, mesh: &Path, gt: Option<&Path>) -> Result<MetricsReport> {
    let m = read_mesh(mesh)?;
    let gt_mesh = match gt {
        Some(p) => read_mesh(p)?,
        None => ground_truth_mesh(cfg, &cfg.scene.build()?)?,
    };
    let report = MetricsReport::compute(&m, &gt_mesh, cfg.metrics.samples, cfg.metrics.seeds[0])?;
    ensure_dir(&cfg.output)?;
    write_text(&cfg.output.join("metrics.json"), &serde_json::to_string_pretty(&report).expect("serializes"))?;
    Ok(report)
}

pub const ABLATION_VARIANTS: [TrainMode; 3] = [TrainMode::Baseline, TrainMode::DifNoRectifier, TrainMode::Dif];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: TrainMode,
    pub seed: u64,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: TrainMode,
    pub runs: usize,
    pub chamfer_mean: f64,
    pub chamfer_sd: f64,
    pub p2s_mean: f64,
    pub normal_consistency_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn chamfer(&self, variant: TrainMode, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.seed == seed)
            .and_then(|r| r.metrics.as_ref().map(|m| m.chamfer))
    }

    pub fn summary_for(&self, variant: TrainMode) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,chamfer,p2s,normal_consistency,error\n");
        for r in &self.rows {
            match &r.metrics {
                Some(m) => s.push_str(&format!("{},{},{},{},{},\n", r.variant.name(), r.seed, m.chamfer, m.p2s, m.normal_consistency)),
                None => s.push_str(&format!(
                    "{},{},,,,\"{}\"\n",
                    r.variant.name(),
                    r.seed,
                    r.error.clone().unwrap_or_default().replace('"', "'")
                )),
            }
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<18} {:>5} {:>22} {:>12} {:>12}\n", "variant", "runs", "chamfer (mean ± sd)", "p2s", "normals");
        for v in &self.summary {
            s.push_str(&format!(
                "{:<18} {:>5} {:>12.6} ± {:<8.6} {:>12.6} {:>12.6}\n",
                v.variant.name(),
                v.runs,
                v.chamfer_mean,
                v.chamfer_sd,
                v.p2s_mean,
                v.normal_consistency_mean
            ));
        }
        s
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// One variant and seed: train, extract the mean-mode mesh, score against
/// `gt`.
pub fn run_variant(cfg: &ExperimentConfig, scene: &Scene, gt: &TriMesh, variant: TrainMode, seed: u64, out_dir: Option<&Path>) -> Result<MetricsReport> {
    let train = TrainConfig {
        mode: variant,
        seed,
        ..cfg.train.clone()
    };
    if let Some(d) = out_dir {
        ensure_dir(d)?;
    }
    let fit = crate::train::fit(&train, &scene.target, &scene.prior, &scene.bbox, out_dir)?;
    let mesh = extract_model_mesh(&fit.model, scene, cfg.extraction.resolution, EvalMode::Mean)?;
    if let Some(d) = out_dir {
        write_mesh(&mesh, &d.join("mesh_mean.obj"))?;
    }
    Ok(MetricsReport::compute(&mesh, gt, cfg.metrics.samples, seed)?)
}

/// Variants run one after another so the logs stay deterministic; a failing
/// run is recorded and the rest proceed.
pub fn cmd_ablate(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&AblationRow)) -> Result<AblationReport> {
    let scene = cfg.scene.build()?;
    snapshot(cfg)?;
    let gt = ground_truth_mesh(cfg, &scene)?;
    let mut rows = Vec::new();
    for &seed in &cfg.metrics.seeds {
        for variant in ABLATION_VARIANTS {
            let dir = cfg.output.join(format!("{}_seed{seed}", variant.name()));
            let row = match run_variant(cfg, &scene, &gt, variant, seed, Some(&dir)) {
                Ok(m) => AblationRow {
                    variant,
                    seed,
                    metrics: Some(m),
                    error: None,
                },
                Err(e) => AblationRow {
                    variant,
                    seed,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            };
            progress(&row);
            rows.push(row);
        }
    }
    let summary = ABLATION_VARIANTS
        .iter()
        .map(|&variant| {
            let ms: Vec<&MetricsReport> = rows.iter().filter(|r| r.variant == variant).filter_map(|r| r.metrics.as_ref()).collect();
            let (chamfer_mean, chamfer_sd) = mean_sd(&ms.iter().map(|m| m.chamfer).collect::<Vec<_>>());
            VariantSummary {
                variant,
                runs: ms.len(),
                chamfer_mean,
                chamfer_sd,
                p2s_mean: mean_sd(&ms.iter().map(|m| m.p2s).collect::<Vec<_>>()).0,
                normal_consistency_mean: mean_sd(&ms.iter().map(|m| m.normal_consistency).collect::<Vec<_>>()).0,
            }
        })
        .collect();
    let report = AblationReport { rows, summary };
    write_text(&cfg.output.join("ablation.csv"), &report.to_csv())?;
    write_text(&cfg.output.join("ablation.json"), &serde_json::to_string_pretty(&report).expect("serializes"))?;
    Ok(report)
}

/// Uncertainty profile of a checkpoint, or of a constant-sigma stub when
/// `constant_sigma` is given.
pub fn cmd_profile(cfg: &ExperimentConfig, checkpoint: Option<&Path>, constant_sigma: Option<f64>) -> Result<SigmaProfile> {
    let scene = cfg.scene.build()?;
    let m = &cfg.metrics;
    let seed = m.seeds[0];
    let profile = match (checkpoint, constant_sigma) {
        (_, Some(s)) => sigma_profile(&ConstantSigma(s), &scene.target, m.profile_points, m.profile_bins, seed)?,
        (Some(path), None) => {
            let (_, model) = Checkpoint::load_model(path)?;
            let field = ModelField {
                model: &model,
                target: &scene.target,
                prior: &scene.prior,
                mode: EvalMode::Mean,
            };
            profile_of(&field, &scene, cfg)?
        }
        (None, None) => return Err(Error::config("checkpoint", "profile needs a checkpoint or a constant sigma")),
    };
    ensure_dir(&cfg.output)?;
    write_text(&cfg.output.join("sigma_profile.json"), &serde_json::to_string_pretty(&profile).expect("serializes"))?;
    write_text(&cfg.output.join("sigma_profile.csv"), &profile.to_csv())?;
    Ok(profile)
}

fn profile_of(source: &dyn SigmaSource, scene: &Scene, cfg: &ExperimentConfig) -> Result<SigmaProfile> {
    let m = &cfg.metrics;
    Ok(sigma_profile(source, &scene.target, m.profile_points, m.profile_bins, m.seeds[0])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::parse(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_radius_names_the_key() {
        let text = r#"{"scene": {"target": {"type": "sphere", "center": [0, 0, 0]}, "prior": {"type": "sphere", "radius": 0.4}}}"#;
        match ExperimentConfig::parse(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "scene.target.radius"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nested_errors_carry_paths() {
        let bad_train = r#"{"train": {"lr": "fast"}}"#;
        match ExperimentConfig::parse(bad_train) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "train.lr"),
            other => panic!("{other:?}"),
        }
        let bad_bump = r#"{"scene": {"target": {"type": "bump_sphere", "radius": 0.5, "bumps": [{"direction": [0, 0, 1], "width": 0.3}]}}}"#;
        match ExperimentConfig::parse(bad_bump) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "scene.target.bumps[0].amplitude"),
            other => panic!("{other:?}"),
        }
        let unknown = r#"{"trian": {}}"#;
        assert!(matches!(ExperimentConfig::parse(unknown), Err(Error::Config { .. })));
        let too_big = r#"{"scene": {"target": {"type": "sphere", "radius": 3.0}, "prior": {"type": "sphere", "radius": 0.4}}}"#;
        match ExperimentConfig::parse(too_big) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "scene.bbox"),
            other => panic!("{other:?}"),
        }
        let bad_prior = r#"{"scene": {"target": {"type": "sphere", "radius": 0.5}}}"#;
        match ExperimentConfig::parse(bad_prior) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "scene.prior.type"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_shape_type_parses() {
        let text = r#"{"type": "union", "members": [
            {"type": "sphere", "radius": 0.2},
            {"type": "torus", "major_radius": 0.5, "minor_radius": 0.1},
            {"type": "box", "center": [0.1, 0, 0], "half_extents": [0.1, 0.2, 0.3]},
            {"type": "capsule", "a": [0, 0, -0.3], "b": [0, 0, 0.3], "radius": 0.1}
        ]}"#;
        let v: Value = serde_json::from_str(text).unwrap();
        let spec = ShapeSpec::parse(&v, "scene.target").unwrap();
        let shape = spec.build("scene.target", None).unwrap();
        assert!(shape.sdf(&Vec3::zeros()) > 0.0);
        let back: Value = serde_json::to_value(&spec).unwrap();
        assert_eq!(ShapeSpec::parse(&back, "x").unwrap(), spec);
    }
}
