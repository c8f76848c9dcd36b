use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use oct_cascade::cascade::{
    self, BoundarySource, InfusionConfig, Priors, ShadowSource, VesselBackendConfig,
};
use oct_cascade::enface::{self, ShadowConfig};
use oct_cascade::io;
use oct_cascade::layers::{self, DpConfig};
use oct_cascade::phantom::{PhantomConfig, Scale};
use oct_cascade::pipeline::{self, InputSource, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "oct-cascade",
    version,
    about = "Layer-guided 3D vessel segmentation for OCT volumes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic phantom tools.
    Phantom {
        #[command(subcommand)]
        action: PhantomAction,
    },
    /// Run the full cascade from a pipeline config.
    Run(Common),
    /// Run all four prior combinations over a list of seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
        seeds: Vec<u64>,
    },
    /// Score a predicted mask against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        prob: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace the four retinal boundaries of a volume.
    Layers {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// DP configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Project the RPE band to an en-face image.
    Enface {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        boundaries: PathBuf,
        /// Output container stem; a PGM is written alongside.
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect vessel shadows in an en-face image.
    Shadows {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output mask container stem; a PGM is written alongside.
        #[arg(long)]
        out: PathBuf,
        /// Shadow detector configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score, infuse and binarize vessels given precomputed priors.
    Vessels {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        boundaries: PathBuf,
        #[arg(long)]
        shadow_mask: PathBuf,
        /// Output directory for mask and probability containers.
        #[arg(long)]
        out: PathBuf,
        /// JSON object with optional "backend" and "infusion" fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PhantomAction {
    /// Generate a phantom volume and its ground truth.
    Gen {
        #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
        scale: ScaleArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_vessels: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// Slice count for the full-size (496x384 B-scan) scale.
        #[arg(long, default_value_t = 64)]
        n_slices: usize,
        /// Phantom config JSON; command-line flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Args)]
struct Common {
    /// Pipeline config JSON; desk phantom defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the phantom seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::desk_default("out"),
        };
        if let Some(seed) = self.seed {
            match &mut cfg.input {
                InputSource::Phantom(p) => p.seed = seed,
                InputSource::Volume(_) => bail!("--seed only applies to phantom inputs"),
            }
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(serde::Deserialize, Default)]
struct VesselStageConfig {
    #[serde(default)]
    backend: VesselBackendConfig,
    #[serde(default)]
    infusion: InfusionConfig,
}

fn phantom_gen(
    scale: ScaleArg,
    seed: Option<u64>,
    n_vessels: Option<usize>,
    noise: Option<f64>,
    n_slices: usize,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read_json::<PhantomConfig>(p)?,
        None => PhantomConfig::default_for(match scale {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper { n_slices },
        }),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = n_vessels {
        cfg.n_vessels = n;
    }
    if let Some(s) = noise {
        cfg.noise_sigma = s;
    }
    pipeline::write_phantom(&cfg, out)?;
    let d = cfg.dims;
    println!(
        "phantom dims={}x{}x{} n_vessels={} seed={}",
        d.n_slices, d.height, d.width, cfg.n_vessels, cfg.seed
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom {
            action:
                PhantomAction::Gen {
                    scale,
                    seed,
                    n_vessels,
                    noise,
                    n_slices,
                    config,
                    out,
                },
        } => phantom_gen(
            scale,
            seed,
            n_vessels,
            noise,
            n_slices,
            config.as_deref(),
            &out,
        ),
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let summary = pipeline::run(&cfg)?;
            println!(
                "run: {} components, {} vessel voxels -> {}",
                summary.component_count,
                summary.vessel_voxels,
                cfg.output_dir.display()
            );
            for r in &summary.metrics {
                println!("{}", r.report.csv_row(r.name));
            }
            Ok(())
        }
        Command::Ablate { common, seeds } => {
            let cfg = common.resolve()?;
            let summary = pipeline::ablate_reports(&cfg, &seeds)?;
            pipeline::write_ablation(&summary, &cfg.output_dir)?;
            for s in &summary.stats {
                println!("{:<26} iou {:.4} +/- {:.4}", s.name, s.iou.0, s.iou.1);
            }
            if summary.ordering_holds {
                println!("ORDERING: PASS");
                Ok(())
            } else {
                println!("ORDERING: FAIL");
                bail!("ablation ordering violated")
            }
        }
        Command::Eval {
            pred,
            gt,
            prob,
            out,
        } => {
            let report = pipeline::eval(&pred, &gt, prob.as_deref(), &out)?;
            println!("{}", report.csv_row("eval"));
            Ok(())
        }
        Command::Layers { input, out, config } => {
            let volume = io::read_oct_volume(&input)?;
            let dp = match config {
                Some(p) => read_json::<DpConfig>(&p)?,
                None => DpConfig::for_height(volume.dims().height),
            };
            let b = layers::segment_boundaries(&volume, &dp).context("layer segmentation")?;
            io::write_boundaries(&b, &out)?;
            Ok(())
        }
        Command::Enface {
            input,
            boundaries,
            out,
        } => {
            let volume = io::read_oct_volume(&input)?;
            let b = io::read_boundaries(&boundaries)?;
            let e = enface::project_rpe(&volume, &b).context("en-face projection")?;
            io::write_volume(&e, &out)?;
            io::write_pgm(e.data(), &out.with_extension("pgm"))?;
            Ok(())
        }
        Command::Shadows { input, out, config } => {
            let e = io::read_enface(&input)?;
            let sc = match config {
                Some(p) => read_json::<ShadowConfig>(&p)?,
                None => ShadowConfig::default(),
            };
            let (mask, _) = enface::segment_shadows(&e, &sc).context("shadow detection")?;
            io::write_volume(&mask, &out)?;
            io::write_pgm(&io::mask_to_image(mask.data()), &out.with_extension("pgm"))?;
            Ok(())
        }
        Command::Vessels {
            input,
            boundaries,
            shadow_mask,
            out,
            config,
        } => {
            let volume = io::read_oct_volume(&input)?;
            let stage = match config {
                Some(p) => read_json::<VesselStageConfig>(&p)?,
                None => VesselStageConfig::default(),
            };
            let b = io::read_boundaries(&boundaries).context("boundary source")?;
            let m = io::read_pixel_mask(&shadow_mask).context("shadow source")?;
            let priors: Priors = cascade::compute_priors(
                &volume,
                &BoundarySource::Given(b),
                &ShadowSource::Given(m),
            )?;
            let (mask, n, prob, _) =
                cascade::infer_vessels(&volume, &priors, &stage.backend, &stage.infusion)
                    .context("vessel stage")?;
            std::fs::create_dir_all(&out)?;
            io::write_volume(&mask, &out.join("mask"))?;
            io::write_volume(&prob, &out.join("probability"))?;
            println!("vessels: {n} components, {} voxels", mask.count());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("OCT_CASCADE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::FAILURE;
                }
            }
            _ => {
                eprintln!("error: OCT_CASCADE_THREADS must be a positive integer, got {v:?}");
                return ExitCode::FAILURE;
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
