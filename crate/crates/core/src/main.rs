use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dif::cli::{self, ExperimentConfig};
use dif::model::EvalMode;
use dif::train::TrainMode;
use dif::{Error, Result};

#[derive(Parser)]
#[command(name = "dif", version, about = "Train and evaluate implicit distribution fields")]
struct Args {
    /// JSON experiment config; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Training seed (overrides `train.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "DIF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mean,
    Sample,
}

#[derive(Subcommand)]
enum Command {
    /// Write the ground-truth mesh and a preview of labelled samples.
    Gen,
    /// Run the training schedule and write checkpoints.
    Train {
        /// dif, dif_no_rectifier, baseline or bayes_diagnostic.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Extract a mesh from a checkpoint.
    Extract {
        /// Defaults to <out>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mean")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        /// Lattice nodes per axis.
        #[arg(long)]
        resolution: Option<usize>,
        /// Defaults to <out>/mesh_mean.obj or <out>/mesh_sample<seed>.obj.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a mesh against the ground truth.
    Eval {
        #[arg(long)]
        mesh: PathBuf,
        /// Defaults to a freshly extracted ground-truth mesh.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Compare baseline, DIF without rectifier and full DIF across seeds.
    Ablate,
    /// Mean predicted sigma binned by distance to the surface.
    Profile {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Profile a constant sigma instead of a model.
        #[arg(long)]
        constant_sigma: Option<f64>,
    },
}

fn load_config(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<()> {
    let threads = args.threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    let mut cfg = load_config(&args)?;
    match args.command {
        Command::Gen => {
            let r = cli::cmd_gen(&cfg)?;
            println!(
                "wrote {} ({} vertices, {} triangles) and {}",
                r.gt_mesh.display(),
                r.vertices,
                r.triangles,
                r.samples_csv.display()
            );
        }
        Command::Train { mode } => {
            if let Some(m) = mode {
                cfg.train.mode = serde_json::from_value::<TrainMode>(serde_json::Value::String(m.clone()))
                    .map_err(|_| Error::config("mode", format!("unknown mode {m:?}")))?;
            }
            let fit = cli::cmd_train(&cfg, &mut |r| {
                let mut line = format!("phase {} epoch {:>3} l_rec {:.6}", r.phase, r.epoch, r.l_rec);
                if let Some(d) = r.l_dis {
                    line.push_str(&format!(" l_dis {d:.6}"));
                }
                if let (Some(n), Some(f)) = (r.sigma_near, r.sigma_far) {
                    line.push_str(&format!(" sigma near {n:.4} far {f:.4}"));
                }
                eprintln!("{line} ({:.1}s)", r.seconds);
            })?;
            println!(
                "trained {} for {} epochs; checkpoint in {}",
                cfg.train.mode.name(),
                fit.log.rows.len(),
                cfg.output.display()
            );
        }
        Command::Extract {
            checkpoint,
            mode,
            sample_seed,
            resolution,
            output,
        } => {
            if let Some(r) = resolution {
                cfg.extraction.resolution = r;
                cfg.validate()?;
            }
            let mode = match mode {
                ModeArg::Mean => EvalMode::Mean,
                ModeArg::Sample => EvalMode::Sample(sample_seed),
            };
            let ckpt = checkpoint.unwrap_or_else(|| cfg.output.join("checkpoint.json"));
            let path = cli::cmd_extract(&cfg, &ckpt, mode, output.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Eval { mesh, gt } => {
            let report = cli::cmd_eval(&cfg, &mesh, gt.as_deref())?;
            print!("{}", report.table());
        }
        Command::Ablate => {
            let report = cli::cmd_ablate(&cfg, &mut |row| match (&row.metrics, &row.error) {
                (Some(m), _) => eprintln!("{} seed {}: chamfer {:.6}", row.variant.name(), row.seed, m.chamfer),
                (None, Some(e)) => eprintln!("{} seed {}: failed: {e}", row.variant.name(), row.seed),
                _ => {}
            })?;
            print!("{}", report.table());
        }
        Command::Profile {
            checkpoint,
            constant_sigma,
        } => {
            let ckpt = checkpoint.unwrap_or_else(|| cfg.output.join("checkpoint.json"));
            let profile = cli::cmd_profile(&cfg, Some(&ckpt), constant_sigma)?;
            print!("{}", profile.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
