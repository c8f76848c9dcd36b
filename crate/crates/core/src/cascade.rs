//! Knowledge infusion and 3D vessel extraction.
//!
//! Two prior masks restrict a vessel probability map before it is
//! binarized: the longitudinal mask keeps depths between ILM and INL_LOWER,
//! the transverse mask keeps the (slice, column) positions that carry a
//! vessel shadow on the RPE. Masks are applied to the backend output, so
//! any backend (the classical scorer here, or an imported network map)
//! plugs in unchanged.

use std::path::PathBuf;

use log::warn;
use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::components::{dilate_square, remove_small, Connectivity};
use crate::enface::{self, ShadowConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::layers::{self, DpConfig};
use crate::model::{
    Boundary, BoundarySet, Dims, EnFaceImage, OctVolume, PixelMask, ProbabilityMap3D, VoxelMask,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfusionConfig {
    /// Histology prior: restrict to ILM..INL_LOWER.
    pub use_longitudinal: bool,
    /// Imaging prior: restrict to shadowed (slice, column) positions.
    pub use_transverse: bool,
    pub transverse_dilation: usize,
    pub binarize_threshold: f64,
    pub min_component_vox: usize,
    pub connectivity: Connectivity,
}

impl Default for InfusionConfig {
    fn default() -> Self {
        Self {
            use_longitudinal: true,
            use_transverse: true,
            transverse_dilation: 1,
            binarize_threshold: 0.5,
            min_component_vox: 8,
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl InfusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::Config(format!(
                "binarize threshold {} not in (0,1)",
                self.binarize_threshold
            )));
        }
        if self.min_component_vox < 1 {
            return Err(Error::Config("min_component_vox must be positive".into()));
        }
        Ok(())
    }

    pub fn with_flags(&self, longitudinal: bool, transverse: bool) -> Self {
        Self {
            use_longitudinal: longitudinal,
            use_transverse: transverse,
            ..self.clone()
        }
    }
}

/// Where vessel scores come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VesselBackendConfig {
    /// Weighted sum of normalized intensity and normalized shadow contrast.
    Classical { w_intensity: f64, w_shadow: f64 },
    /// A precomputed probability container, e.g. a trained network's output.
    Import { import_path: PathBuf },
}

impl Default for VesselBackendConfig {
    fn default() -> Self {
        VesselBackendConfig::Classical {
            w_intensity: 0.98,
            w_shadow: 0.02,
        }
    }
}

impl VesselBackendConfig {
    pub fn validate(&self) -> Result<()> {
        if let VesselBackendConfig::Classical {
            w_intensity,
            w_shadow,
        } = *self
        {
            if w_intensity < 0.0 || w_shadow < 0.0 || ((w_intensity + w_shadow) - 1.0).abs() > 1e-9
            {
                return Err(Error::Config(format!(
                    "classical weights ({w_intensity}, {w_shadow}) must be non-negative and sum to 1"
                )));
            }
        }
        Ok(())
    }
}

/// True where `ceil(ILM) <= z <= floor(INL_LOWER)`.
pub fn longitudinal_mask(b: &BoundarySet, dims: Dims) -> Result<VoxelMask> {
    if b.plane() != dims.plane() {
        return Err(Error::shape(&dims.plane(), &b.plane()));
    }
    let data = Array3::from_shape_fn(dims.shape(), |(s, z, x)| {
        let z = z as f64;
        b.depth(Boundary::Ilm, s, x).ceil() <= z && z <= b.depth(Boundary::InlLower, s, x).floor()
    });
    Ok(VoxelMask::new(data))
}

/// Dilates the shadow mask by a `(2d+1)^2` square and extrudes it along
/// depth.
pub fn transverse_mask(pm: &PixelMask, dims: Dims, dilation: usize) -> Result<VoxelMask> {
    pm.check_plane(dims.plane())?;
    let grown = dilate_square(pm.data(), dilation);
    let data = Array3::from_shape_fn(dims.shape(), |(s, _, x)| grown[[s, x]]);
    Ok(VoxelMask::new(data))
}

/// Soft vessel scores plus a flag raised when normalization degenerated.
#[derive(Clone, Debug, PartialEq)]
pub struct VesselScores {
    pub probability: ProbabilityMap3D,
    pub degenerate: bool,
}

fn min_max<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, &v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Scores every voxel for vessel likelihood.
///
/// The classical backend computes `w_intensity * I + w_shadow * C` where
/// `I` is the volume min-max normalized over the ILM..BM band (and clamped
/// outside it) and `C` is the shadow contrast min-max normalized over the
/// en-face plane.
pub fn vessel_probability(
    v: &OctVolume,
    b: &BoundarySet,
    shadow_contrast: &Array2<f64>,
    cfg: &VesselBackendConfig,
) -> Result<VesselScores> {
    cfg.validate()?;
    let dims = v.dims();
    match cfg {
        VesselBackendConfig::Import { import_path } => {
            let p = io::read_probability(import_path)?;
            p.check_dims(dims)?;
            Ok(VesselScores {
                probability: p,
                degenerate: false,
            })
        }
        &VesselBackendConfig::Classical {
            w_intensity,
            w_shadow,
        } => {
            b.check_dims(dims)?;
            let plane = dims.plane();
            if shadow_contrast.shape() != plane {
                return Err(Error::shape(&plane, shadow_contrast.shape()));
            }
            let data = v.data();
            let mut band = Vec::new();
            for s in 0..dims.n_slices {
                for x in 0..dims.width {
                    let lo = b.depth(Boundary::Ilm, s, x).ceil() as usize;
                    let hi = (b.depth(Boundary::Bm, s, x).floor() as usize).min(dims.height - 1);
                    band.extend((lo..=hi).map(|z| data[[s, z, x]] as f64));
                }
            }
            let (lo, hi) = min_max(band.iter()).unwrap_or((0.0, 0.0));
            if hi <= lo {
                warn!("intensity normalization degenerate (constant band); emitting zero map");
                return Ok(VesselScores {
                    probability: ProbabilityMap3D::zeros(dims),
                    degenerate: true,
                });
            }
            let contrast = match min_max(shadow_contrast.iter()) {
                Some((clo, chi)) if chi > clo => shadow_contrast.mapv(|c| (c - clo) / (chi - clo)),
                _ => Array2::zeros((plane[0], plane[1])),
            };
            let mut out = Array3::<f32>::zeros(dims.shape());
            Zip::indexed(&mut out)
                .and(data)
                .for_each(|(s, _, x), o, &i| {
                    let intensity = ((i as f64 - lo) / (hi - lo)).clamp(0.0, 1.0);
                    let score = w_intensity * intensity + w_shadow * contrast[[s, x]];
                    *o = score.clamp(0.0, 1.0) as f32;
                });
            Ok(VesselScores {
                probability: ProbabilityMap3D::new(out)?,
                degenerate: false,
            })
        }
    }
}

/// Multiplies `p` by the indicator of every provided mask.
pub fn infuse(
    p: &ProbabilityMap3D,
    lm: Option<&VoxelMask>,
    tm: Option<&VoxelMask>,
) -> Result<ProbabilityMap3D> {
    let dims = p.dims();
    let mut out = p.data().clone();
    for m in [lm, tm].into_iter().flatten() {
        m.check_dims(dims)?;
        Zip::from(&mut out).and(m.data()).for_each(|o, &keep| {
            if !keep {
                *o = 0.0;
            }
        });
    }
    ProbabilityMap3D::new(out)
}

/// Thresholds at `> binarize_threshold`, drops small components and returns
/// the cleaned mask with its component count.
pub fn binarize_and_label(
    p: &ProbabilityMap3D,
    cfg: &InfusionConfig,
) -> Result<(VoxelMask, usize)> {
    cfg.validate()?;
    let theta = cfg.binarize_threshold as f32;
    let raw = p.data().mapv(|v| v > theta);
    let (cleaned, n) = remove_small(&raw, cfg.connectivity, cfg.min_component_vox);
    Ok((VoxelMask::new(cleaned), n))
}

#[derive(Clone, Debug)]
pub enum BoundarySource {
    Classical(DpConfig),
    Import(PathBuf),
    Given(BoundarySet),
}

#[derive(Clone, Debug)]
pub enum ShadowSource {
    Classical(ShadowConfig),
    Import(PathBuf),
    Given(PixelMask),
}

/// Everything a cascade run produces.
#[derive(Clone, Debug)]
pub struct CascadeOutput {
    pub mask: VoxelMask,
    pub component_count: usize,
    /// Backend scores after infusion.
    pub probability: ProbabilityMap3D,
    pub boundaries: BoundarySet,
    pub enface: EnFaceImage,
    pub shadow_mask: PixelMask,
    pub shadow_contrast: Array2<f64>,
    pub degenerate_scores: bool,
}

/// Stages I and II: boundaries, en-face projection, shadow mask and contrast.
#[derive(Clone, Debug)]
pub struct Priors {
    pub boundaries: BoundarySet,
    pub enface: EnFaceImage,
    pub shadow_mask: PixelMask,
    pub shadow_contrast: Array2<f64>,
}

pub fn compute_priors(
    v: &OctVolume,
    boundaries: &BoundarySource,
    shadows: &ShadowSource,
) -> Result<Priors> {
    let dims = v.dims();
    let boundaries = match boundaries {
        BoundarySource::Classical(cfg) => layers::segment_boundaries(v, cfg)?,
        BoundarySource::Import(path) => layers::import_boundaries(path)?,
        BoundarySource::Given(b) => b.clone(),
    };
    boundaries.check_dims(dims)?;
    let enface = enface::project_rpe(v, &boundaries)?;
    let (shadow_mask, shadow_contrast) = match shadows {
        ShadowSource::Classical(cfg) => enface::segment_shadows(&enface, cfg)?,
        ShadowSource::Import(path) => {
            let m = enface::import_shadow_mask(path)?;
            let c = enface::shadow_contrast(&enface, ShadowConfig::default().background_window);
            (m, c)
        }
        ShadowSource::Given(m) => {
            let c = enface::shadow_contrast(&enface, ShadowConfig::default().background_window);
            (m.clone(), c)
        }
    };
    shadow_mask.check_plane(dims.plane())?;
    Ok(Priors {
        boundaries,
        enface,
        shadow_mask,
        shadow_contrast,
    })
}

/// Stage III given the priors: score, infuse, binarize.
pub fn infer_vessels(
    v: &OctVolume,
    priors: &Priors,
    backend: &VesselBackendConfig,
    infusion: &InfusionConfig,
) -> Result<(VoxelMask, usize, ProbabilityMap3D, bool)> {
    infusion.validate()?;
    let dims = v.dims();
    let scores = vessel_probability(v, &priors.boundaries, &priors.shadow_contrast, backend)?;
    let lm = if infusion.use_longitudinal {
        Some(longitudinal_mask(&priors.boundaries, dims)?)
    } else {
        None
    };
    let tm = if infusion.use_transverse {
        Some(transverse_mask(
            &priors.shadow_mask,
            dims,
            infusion.transverse_dilation,
        )?)
    } else {
        None
    };
    let infused = infuse(&scores.probability, lm.as_ref(), tm.as_ref())?;
    let (mask, n) = binarize_and_label(&infused, infusion)?;
    Ok((mask, n, infused, scores.degenerate))
}

/// Runs layers, en-face shadows and vessel extraction in order.
pub fn run_cascade(
    v: &OctVolume,
    boundaries: &BoundarySource,
    shadows: &ShadowSource,
    backend: &VesselBackendConfig,
    infusion: &InfusionConfig,
) -> Result<CascadeOutput> {
    let priors = compute_priors(v, boundaries, shadows)?;
    let (mask, component_count, probability, degenerate_scores) =
        infer_vessels(v, &priors, backend, infusion)?;
    Ok(CascadeOutput {
        mask,
        component_count,
        probability,
        boundaries: priors.boundaries,
        enface: priors.enface,
        shadow_mask: priors.shadow_mask,
        shadow_contrast: priors.shadow_contrast,
        degenerate_scores,
    })
}
