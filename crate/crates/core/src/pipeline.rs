//! Batch orchestration behind the command-line interface: pipeline
//! configuration, cascade runs with report files, ablation sweeps over
//! seeds and stand-alone evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    self, BoundarySource, InfusionConfig, Priors, ShadowSource, VesselBackendConfig,
};
use crate::enface::{self, ShadowConfig};
use crate::io;
use crate::layers::{self, DpConfig};
use crate::metrics::MetricsReport;
use crate::model::{OctVolume, PixelMask, ProbabilityMap3D, VoxelMask};
use crate::phantom::{self, PhantomConfig, PhantomGroundTruth, Scale};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Phantom(PhantomConfig),
    Volume(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySourceConfig {
    Classical(DpConfig),
    Import(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowSourceConfig {
    Classical(ShadowConfig),
    Import(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    pub overlays: bool,
    pub montage: bool,
}

impl Default for ReportFlags {
    fn default() -> Self {
        Self {
            overlays: true,
            montage: true,
        }
    }
}

/// One JSON file drives a whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: InputSource,
    /// Vessel ground truth for volume inputs; phantoms carry their own.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    pub boundaries: BoundarySourceConfig,
    pub shadows: ShadowSourceConfig,
    #[serde(default)]
    pub backend: VesselBackendConfig,
    #[serde(default)]
    pub infusion: InfusionConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub report: ReportFlags,
}

impl PipelineConfig {
    /// Desk-scale phantom with every stage classical and both priors on.
    pub fn desk_default(output_dir: impl Into<PathBuf>) -> Self {
        let phantom = PhantomConfig::default_for(Scale::Desk);
        Self {
            boundaries: BoundarySourceConfig::Classical(DpConfig::for_height(phantom.dims.height)),
            input: InputSource::Phantom(phantom),
            ground_truth: None,
            shadows: ShadowSourceConfig::Classical(ShadowConfig::default()),
            backend: VesselBackendConfig::default(),
            infusion: InfusionConfig::default(),
            output_dir: output_dir.into(),
            report: ReportFlags::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if let InputSource::Phantom(p) = &self.input {
            p.validate().context("input")?;
        }
        if let BoundarySourceConfig::Classical(dp) = &self.boundaries {
            dp.params().validate().context("boundary source")?;
        }
        if let ShadowSourceConfig::Classical(sc) = &self.shadows {
            sc.validate().context("shadow source")?;
        }
        self.backend.validate().context("backend")?;
        self.infusion.validate().context("infusion")?;
        Ok(())
    }

    fn boundary_source(&self) -> Result<BoundarySource> {
        Ok(match &self.boundaries {
            BoundarySourceConfig::Classical(dp) => BoundarySource::Classical(dp.clone()),
            BoundarySourceConfig::Import(p) => {
                if !p.exists() {
                    bail!("boundary source: import path {} not found", p.display());
                }
                BoundarySource::Import(p.clone())
            }
        })
    }

    fn shadow_source(&self) -> Result<ShadowSource> {
        Ok(match &self.shadows {
            ShadowSourceConfig::Classical(sc) => ShadowSource::Classical(sc.clone()),
            ShadowSourceConfig::Import(p) => {
                let (json, _) = io::container_paths(p);
                if !json.exists() {
                    bail!("shadow source: import path {} not found", p.display());
                }
                ShadowSource::Import(p.clone())
            }
        })
    }

    fn check_backend(&self) -> Result<()> {
        if let VesselBackendConfig::Import { import_path } = &self.backend {
            let (json, _) = io::container_paths(import_path);
            if !json.exists() {
                bail!(
                    "vessel backend: import path {} not found",
                    import_path.display()
                );
            }
        }
        Ok(())
    }
}

/// The four ablation variants, in reporting order.
pub const VARIANTS: [(&str, bool, bool); 4] = [
    ("base", false, false),
    ("+longitudinal", true, false),
    ("+transverse", false, true),
    ("+longitudinal+transverse", true, true),
];

/// Variants implied by the configured flags: the base, each enabled prior
/// alone, and both together when both are on.
pub fn enabled_variants(infusion: &InfusionConfig) -> Vec<(&'static str, bool, bool)> {
    VARIANTS
        .into_iter()
        .filter(|&(_, l, t)| (!l || infusion.use_longitudinal) && (!t || infusion.use_transverse))
        .collect()
}

fn variant_name(infusion: &InfusionConfig) -> &'static str {
    VARIANTS
        .iter()
        .find(|v| v.1 == infusion.use_longitudinal && v.2 == infusion.use_transverse)
        .map(|v| v.0)
        .expect("all flag pairs listed")
}

struct Loaded {
    volume: OctVolume,
    truth: Option<VoxelMask>,
    phantom_truth: Option<PhantomGroundTruth>,
}

fn load_input(cfg: &PipelineConfig) -> Result<Loaded> {
    match &cfg.input {
        InputSource::Phantom(p) => {
            let (volume, gt) = phantom::generate(p).context("input: phantom generation")?;
            Ok(Loaded {
                volume,
                truth: Some(gt.vessel_mask.clone()),
                phantom_truth: Some(gt),
            })
        }
        InputSource::Volume(path) => {
            let volume = io::read_oct_volume(path)
                .with_context(|| format!("input: reading {}", path.display()))?;
            let truth = cfg
                .ground_truth
                .as_ref()
                .map(|p| {
                    io::read_voxel_mask(p)
                        .with_context(|| format!("ground truth: reading {}", p.display()))
                })
                .transpose()?;
            Ok(Loaded {
                volume,
                truth,
                phantom_truth: None,
            })
        }
    }
}

fn priors_for(cfg: &PipelineConfig, volume: &OctVolume) -> Result<Priors> {
    let boundaries = match cfg.boundary_source()? {
        BoundarySource::Classical(dp) => layers::segment_boundaries(volume, &dp)
            .context("boundary source: layer segmentation")?,
        BoundarySource::Import(p) => layers::import_boundaries(&p)
            .with_context(|| format!("boundary source: {}", p.display()))?,
        BoundarySource::Given(b) => b,
    };
    boundaries
        .check_dims(volume.dims())
        .context("boundary source: boundaries do not fit the volume")?;
    let shadows = match cfg.shadow_source()? {
        ShadowSource::Import(p) => ShadowSource::Given(
            enface::import_shadow_mask(&p)
                .with_context(|| format!("shadow source: {}", p.display()))?,
        ),
        other => other,
    };
    cascade::compute_priors(volume, &BoundarySource::Given(boundaries), &shadows)
        .context("shadow source")
}

/// Evaluation of one variant.
pub struct VariantResult {
    pub name: &'static str,
    pub report: MetricsReport,
}

fn evaluate_variant(
    volume: &OctVolume,
    priors: &Priors,
    backend: &VesselBackendConfig,
    infusion: &InfusionConfig,
    truth: &VoxelMask,
) -> Result<(VariantResult, VoxelMask, ProbabilityMap3D)> {
    let (mask, _, prob, _) =
        cascade::infer_vessels(volume, priors, backend, infusion).context("vessel stage")?;
    let report = MetricsReport::evaluate(&mask, truth, Some(&prob)).context("evaluation")?;
    Ok((
        VariantResult {
            name: variant_name(infusion),
            report,
        },
        mask,
        prob,
    ))
}

/// Summary of a `run`.
pub struct RunSummary {
    pub component_count: usize,
    pub vessel_voxels: usize,
    pub metrics: Vec<VariantResult>,
}

fn overlay(volume: &OctVolume, mask: &VoxelMask, slice: usize) -> Array2<f32> {
    let v = volume.data().slice(s![slice, .., ..]);
    let m = mask.data().slice(s![slice, .., ..]);
    let mut img = v.mapv(|x| 0.75 * x);
    ndarray::Zip::from(&mut img).and(&m).for_each(|p, &on| {
        if on {
            *p = 1.0;
        }
    });
    img
}

/// Side-by-side en face, shadow mask and depth projection of the vessels.
fn montage(enface: &Array2<f32>, shadow: &PixelMask, mask: &VoxelMask) -> Array2<f32> {
    let (h, w) = enface.dim();
    let gap = 2;
    let projection = mask
        .data()
        .map_axis(Axis(1), |c| if c.iter().any(|&v| v) { 1.0f32 } else { 0.0 });
    let panels = [enface.clone(), io::mask_to_image(shadow.data()), projection];
    let mut out = Array2::<f32>::from_elem((h, 3 * w + 2 * gap), 0.5);
    for (k, p) in panels.iter().enumerate() {
        let x0 = k * (w + gap);
        out.slice_mut(s![.., x0..x0 + w]).assign(p);
    }
    out
}

fn write_metrics_csv(path: &Path, rows: &[VariantResult]) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{}", MetricsReport::CSV_HEADER).unwrap();
    for r in rows {
        writeln!(text, "{}", r.report.csv_row(r.name)).unwrap();
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs the configured cascade and writes every report file into the
/// output directory.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    cfg.check_backend()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).with_context(|| format!("output: creating {}", out.display()))?;
    let loaded = load_input(cfg)?;
    let volume = &loaded.volume;
    let priors = priors_for(cfg, volume)?;
    let (mask, component_count, probability, degenerate) =
        cascade::infer_vessels(volume, &priors, &cfg.backend, &cfg.infusion)
            .context("vessel stage")?;
    if degenerate {
        log::warn!("vessel scores degenerate; probability map is all zero");
    }

    io::write_volume(&mask, &out.join("mask"))?;
    io::write_volume(&probability, &out.join("probability"))?;
    io::write_boundaries(&priors.boundaries, &out.join("boundaries.csv"))?;
    io::write_pgm(priors.enface.data(), &out.join("enface.pgm"))?;
    io::write_pgm(
        &io::mask_to_image(priors.shadow_mask.data()),
        &out.join("shadow_mask.pgm"),
    )?;
    let overlay_dir = out.join("overlays");
    if cfg.report.overlays {
        fs::create_dir_all(&overlay_dir)?;
        for s in 0..volume.dims().n_slices {
            io::write_pgm(
                &overlay(volume, &mask, s),
                &overlay_dir.join(format!("slice_{s:04}.pgm")),
            )?;
        }
    }
    if cfg.report.montage {
        io::write_pgm(
            &montage(priors.enface.data(), &priors.shadow_mask, &mask),
            &out.join("montage.pgm"),
        )?;
    }
    if let Some(gt) = &loaded.phantom_truth {
        io::write_volume(&gt.vessel_mask, &out.join("gt_vessels"))?;
    }

    let mut rows = Vec::new();
    if let Some(truth) = &loaded.truth {
        for (_, l, t) in enabled_variants(&cfg.infusion) {
            let inf = cfg.infusion.with_flags(l, t);
            let (row, _, _) = evaluate_variant(volume, &priors, &cfg.backend, &inf, truth)?;
            rows.push(row);
        }
        write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    }
    Ok(RunSummary {
        component_count,
        vessel_voxels: mask.count(),
        metrics: rows,
    })
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-variant statistics across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantStats {
    pub name: &'static str,
    pub iou: (f64, f64),
    pub sen: (f64, f64),
    pub acc: (f64, f64),
    pub auc: Option<(f64, f64)>,
}

pub struct AblationSummary {
    pub stats: Vec<VariantStats>,
    /// `per_seed[i][k]` is the report of seed `i`, variant `k`.
    pub per_seed: Vec<(u64, Vec<MetricsReport>)>,
    pub ordering_holds: bool,
}

impl AblationSummary {
    /// Smallest consecutive gap between mean IoUs in variant order.
    pub fn min_gap(&self) -> f64 {
        self.stats
            .windows(2)
            .map(|w| w[1].iou.0 - w[0].iou.0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs all four variants on one phantom per seed.
pub fn ablate_reports(cfg: &PipelineConfig, seeds: &[u64]) -> Result<AblationSummary> {
    cfg.validate()?;
    cfg.check_backend()?;
    let InputSource::Phantom(base) = &cfg.input else {
        bail!("input: ablation needs a phantom input (ground truth required)");
    };
    if seeds.is_empty() {
        bail!("ablation needs at least one seed");
    }
    let per_seed: Vec<Result<(u64, Vec<MetricsReport>)>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut p = base.clone();
            p.seed = seed;
            let (volume, gt) =
                phantom::generate(&p).with_context(|| format!("input: phantom seed {seed}"))?;
            let priors = priors_for(cfg, &volume)?;
            let reports = VARIANTS
                .iter()
                .map(|&(_, l, t)| {
                    let inf = cfg.infusion.with_flags(l, t);
                    evaluate_variant(&volume, &priors, &cfg.backend, &inf, &gt.vessel_mask)
                        .map(|r| r.0.report)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((seed, reports))
        })
        .collect();
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
    let stats: Vec<VariantStats> = VARIANTS
        .iter()
        .enumerate()
        .map(|(k, &(name, _, _))| {
            let col = |f: fn(&MetricsReport) -> f64| {
                per_seed.iter().map(|(_, r)| f(&r[k])).collect::<Vec<_>>()
            };
            let aucs: Option<Vec<f64>> = per_seed.iter().map(|(_, r)| r[k].auc).collect();
            VariantStats {
                name,
                iou: mean_std(&col(|r| r.iou)),
                sen: mean_std(&col(|r| r.sen)),
                acc: mean_std(&col(|r| r.acc)),
                auc: aucs.map(|a| mean_std(&a)),
            }
        })
        .collect();
    let ordering_holds = stats.windows(2).all(|w| w[0].iou.0 < w[1].iou.0);
    Ok(AblationSummary {
        stats,
        per_seed,
        ordering_holds,
    })
}

/// Writes `ablation.csv` (aggregate) and `ablation_seeds.csv` (per seed).
pub fn write_ablation(summary: &AblationSummary, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("output: creating {}", out.display()))?;
    let f = |v: f64| format!("{v:.6}");
    let mut agg = String::new();
    writeln!(
        agg,
        "# metrics pooled over all voxels of each volume, then mean/std (population) over {} seeds",
        summary.per_seed.len()
    )
    .unwrap();
    writeln!(
        agg,
        "variant,iou_mean,iou_std,sen_mean,sen_std,acc_mean,acc_std,auc_mean,auc_std"
    )
    .unwrap();
    for s in &summary.stats {
        let (am, asd) = s
            .auc
            .map_or(("NA".into(), "NA".into()), |(m, d)| (f(m), f(d)));
        writeln!(
            agg,
            "{},{},{},{},{},{},{},{am},{asd}",
            s.name,
            f(s.iou.0),
            f(s.iou.1),
            f(s.sen.0),
            f(s.sen.1),
            f(s.acc.0),
            f(s.acc.1)
        )
        .unwrap();
    }
    fs::write(out.join("ablation.csv"), agg)?;
    let mut rows = String::new();
    writeln!(rows, "seed,{}", MetricsReport::CSV_HEADER).unwrap();
    for (seed, reports) in &summary.per_seed {
        for (r, &(name, _, _)) in reports.iter().zip(VARIANTS.iter()) {
            writeln!(rows, "{seed},{}", r.csv_row(name)).unwrap();
        }
    }
    fs::write(out.join("ablation_seeds.csv"), rows)?;
    Ok(())
}

/// Scores a predicted mask against ground truth and writes a single-row
/// `metrics.csv` into `out`.
pub fn eval(pred: &Path, gt: &Path, prob: Option<&Path>, out: &Path) -> Result<MetricsReport> {
    let pred_mask =
        io::read_voxel_mask(pred).with_context(|| format!("prediction {}", pred.display()))?;
    let gt_mask =
        io::read_voxel_mask(gt).with_context(|| format!("ground truth {}", gt.display()))?;
    let scores = prob
        .map(|p| io::read_probability(p).with_context(|| format!("probability {}", p.display())))
        .transpose()?;
    let report = MetricsReport::evaluate(&pred_mask, &gt_mask, scores.as_ref())
        .map_err(|e| anyhow!("evaluation: {e}"))?;
    fs::create_dir_all(out)?;
    let rows = [VariantResult {
        name: "eval",
        report,
    }];
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    let [VariantResult { report, .. }] = rows;
    Ok(report)
}

/// Writes a phantom and its ground truth into `out`.
pub fn write_phantom(cfg: &PhantomConfig, out: &Path) -> Result<()> {
    let (volume, gt) = phantom::generate(cfg).context("phantom generation")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::write_volume(&volume, &out.join("volume"))?;
    io::write_volume(&gt.vessel_mask, &out.join("gt_vessels"))?;
    io::write_volume(&gt.shadow_footprint, &out.join("gt_shadow"))?;
    io::write_boundaries(&gt.boundaries, &out.join("gt_boundaries.csv"))?;
    let mut lines = String::from("vessel,slice,depth,column\n");
    for (k, axis) in gt.centerlines.iter().enumerate() {
        for a in axis {
            writeln!(lines, "{k},{},{},{}", a.slice, a.depth, a.column).unwrap();
        }
    }
    fs::write(out.join("gt_centerlines.csv"), lines)?;
    let mut json = serde_json::to_string_pretty(cfg)?;
    json.push('\n');
    fs::write(out.join("phantom.json"), json)?;
    Ok(())
}
