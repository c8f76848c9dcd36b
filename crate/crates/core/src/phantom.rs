//! Seeded synthetic OCT phantoms with known anatomy.
//!
//! The generator lays down four undulating surfaces, fills the bands
//! between them with constant reflectivities, threads hyperreflective tubes
//! through the ILM to INL_LOWER band, casts a forward-scattering shadow
//! below every tube and finally adds Gaussian noise. Optional
//! hyperreflective foci (small bright spheres that cast no shadow) act as
//! vessel look-alikes in the same band.
//!
//! Randomness comes from ChaCha8 seeded with `PhantomConfig::seed`, with a
//! separate stream per stage (surfaces, each vessel, noise per slice), so
//! changing `n_vessels` does not move the surfaces and noise can be drawn
//! slice-parallel without changing the result.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundarySet, Dims, OctVolume, PixelMask, VoxelMask};

const STREAM_SURFACES: u64 = 1;
const STREAM_VESSELS: u64 = 2 << 32;
const STREAM_NOISE: u64 = 3 << 32;
const STREAM_FOCI: u64 = 4 << 32;

/// Reflectivity of each anatomical band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerLevels {
    pub vitreous: f64,
    pub inner_retina: f64,
    pub middle_retina: f64,
    pub rpe: f64,
    pub choroid: f64,
}

impl Default for LayerLevels {
    fn default() -> Self {
        Self {
            vitreous: 0.02,
            inner_retina: 0.45,
            middle_retina: 0.2,
            rpe: 0.9,
            choroid: 0.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper { n_slices: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub n_vessels: usize,
    /// Tube radius in voxels.
    pub vessel_radius: f64,
    /// Where tube axes sit inside the ILM..INL_LOWER band, as fractions of
    /// the band thickness.
    pub vessel_depth_fraction_range: [f64; 2],
    /// Transmission directly below a tube axis, in (0, 1].
    pub shadow_attenuation: f64,
    pub noise_sigma: f64,
    pub layer_levels: LayerLevels,
    pub vessel_level: f64,
    /// Shadow-free bright spheres in the vessel band, rendered at
    /// `vessel_level`. Not part of the vessel ground truth.
    #[serde(default)]
    pub n_foci: usize,
    #[serde(default = "default_focus_radius")]
    pub focus_radius: f64,
    pub seed: u64,
}

fn default_focus_radius() -> f64 {
    3.0
}

impl PhantomConfig {
    pub fn default_for(scale: Scale) -> Self {
        let dims = match scale {
            Scale::Desk => Dims::new(32, 192, 160),
            Scale::Paper { n_slices } => Dims::new(n_slices, 496, 384),
        };
        Self {
            dims,
            n_vessels: 4,
            vessel_radius: 2.0,
            vessel_depth_fraction_range: [0.3, 0.7],
            shadow_attenuation: 0.4,
            noise_sigma: 0.03,
            layer_levels: LayerLevels::default(),
            vessel_level: 0.7,
            n_foci: 48,
            focus_radius: default_focus_radius(),
            seed: 0,
        }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = self.dims;
        if d.n_slices < 1 || d.height < 32 || d.width < 8 {
            return bad(format!("phantom dims {d} too small (need >= 1x32x8)"));
        }
        if !(self.shadow_attenuation > 0.0 && self.shadow_attenuation <= 1.0) {
            return bad(format!(
                "shadow_attenuation {} not in (0,1]",
                self.shadow_attenuation
            ));
        }
        if !(self.vessel_radius >= 0.5) {
            return bad(format!("vessel_radius {} < 0.5", self.vessel_radius));
        }
        let [lo, hi] = self.vessel_depth_fraction_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad(format!("vessel_depth_fraction_range [{lo}, {hi}] invalid"));
        }
        if self.n_foci > 0 && !(self.focus_radius >= 0.5) {
            return bad(format!("focus_radius {} < 0.5", self.focus_radius));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} invalid", self.noise_sigma));
        }
        let l = self.layer_levels;
        let levels = [
            l.vitreous,
            l.inner_retina,
            l.middle_retina,
            l.rpe,
            l.choroid,
            self.vessel_level,
        ];
        if levels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("layer levels must lie in [0,1]".into());
        }
        if [l.vitreous, l.inner_retina, l.middle_retina, l.choroid]
            .iter()
            .any(|&v| v >= l.rpe)
        {
            return bad("RPE level must be strictly the brightest layer".into());
        }
        Ok(())
    }
}

/// One sample of a tube axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSample {
    pub slice: usize,
    pub depth: f64,
    pub column: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomGroundTruth {
    pub boundaries: BoundarySet,
    pub vessel_mask: VoxelMask,
    pub shadow_footprint: PixelMask,
    /// One axis polyline per vessel, one sample per slice.
    pub centerlines: Vec<Vec<AxisSample>>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Sum of a few low-frequency plane waves over (slice, column).
struct Undulation {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Undulation {
    fn sample(r: &mut ChaCha8Rng, amplitude: f64, n: usize) -> Self {
        let waves = (0..n)
            .map(|_| {
                let a = amplitude * r.random_range(0.4..1.0) / n as f64;
                let fx = r.random_range(0.3..1.2);
                let fs = r.random_range(-0.6..0.6);
                let phase = r.random_range(0.0..2.0 * PI);
                (a, fx, fs, phase)
            })
            .collect();
        Self { waves }
    }

    fn at(&self, s: f64, x: f64, dims: Dims) -> f64 {
        let u = x / dims.width as f64;
        let v = s / dims.n_slices.max(2) as f64;
        self.waves
            .iter()
            .map(|&(a, fx, fs, ph)| a * (2.0 * PI * (fx * u + fs * v) + ph).sin())
            .sum()
    }
}

fn make_surfaces(cfg: &PhantomConfig) -> [Array2<f64>; 4] {
    let d = cfg.dims;
    let h = d.height as f64;
    let mut r = rng(cfg.seed, STREAM_SURFACES);
    let shared = Undulation::sample(&mut r, 0.025 * h, 3);
    let thick: Vec<Undulation> = (0..3)
        .map(|_| Undulation::sample(&mut r, 0.01 * h, 2))
        .collect();
    let rpe_thickness = (0.035 * h).max(3.0);
    let plane = (d.n_slices, d.width);
    let ilm = Array2::from_shape_fn(plane, |(s, x)| 0.2 * h + shared.at(s as f64, x as f64, d));
    let inl = Array2::from_shape_fn(plane, |(s, x)| {
        ilm[[s, x]] + 0.26 * h + thick[0].at(s as f64, x as f64, d)
    });
    let rpe = Array2::from_shape_fn(plane, |(s, x)| {
        inl[[s, x]] + 0.22 * h + thick[1].at(s as f64, x as f64, d)
    });
    let bm = Array2::from_shape_fn(plane, |(s, x)| {
        rpe[[s, x]] + rpe_thickness + 0.5 * thick[2].at(s as f64, x as f64, d).abs()
    });
    [ilm, inl, rpe, bm]
}

fn lerp_column(a: &Array2<f64>, s: usize, x: f64) -> f64 {
    let w = a.ncols();
    let x = x.clamp(0.0, (w - 1) as f64);
    let x0 = x.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let t = x - x0 as f64;
    a[[s, x0]] * (1.0 - t) + a[[s, x1]] * t
}

/// Places the tube axes: one lateral sector per vessel, a gentle sinusoidal
/// wander across slices and a fixed fractional depth inside the band.
fn make_axes(
    cfg: &PhantomConfig,
    ilm: &Array2<f64>,
    inl: &Array2<f64>,
) -> Result<Vec<Vec<AxisSample>>> {
    let d = cfg.dims;
    let r = cfg.vessel_radius;
    let n = cfg.n_vessels;
    let mut axes = Vec::with_capacity(n);
    for k in 0..n {
        let mut g = rng(cfg.seed, STREAM_VESSELS | k as u64);
        let sector = d.width as f64 / n as f64;
        let margin = r + 1.0;
        let center = sector * (k as f64 + 0.5) + g.random_range(-0.15..0.15) * sector;
        let amp = (0.12 * sector).min(0.1 * d.width as f64);
        let freq = g.random_range(0.5..1.5);
        let phase = g.random_range(0.0..2.0 * PI);
        let [lo, hi] = cfg.vessel_depth_fraction_range;
        let frac = if hi > lo { g.random_range(lo..=hi) } else { lo };
        let mut samples = Vec::with_capacity(d.n_slices);
        for s in 0..d.n_slices {
            let t = s as f64 / d.n_slices.max(2) as f64;
            let column = (center + amp * (2.0 * PI * freq * t + phase).sin())
                .clamp(margin, d.width as f64 - 1.0 - margin);
            // the whole disc must fit between ILM and INL_LOWER in every column it touches
            let x_lo = (column - r).floor().max(0.0) as usize;
            let x_hi = ((column + r).ceil() as usize).min(d.width - 1);
            let top = (x_lo..=x_hi).map(|x| ilm[[s, x]]).fold(f64::MIN, f64::max) + r;
            let bottom = (x_lo..=x_hi).map(|x| inl[[s, x]]).fold(f64::MAX, f64::min) - r;
            if top > bottom {
                return Err(Error::Config(format!(
                    "ILM..INL_LOWER band too thin for vessel radius {r} at slice {s}"
                )));
            }
            let ilm_c = lerp_column(ilm, s, column);
            let inl_c = lerp_column(inl, s, column);
            let depth = (ilm_c + frac * (inl_c - ilm_c)).clamp(top, bottom);
            samples.push(AxisSample {
                slice: s,
                depth,
                column,
            });
        }
        axes.push(samples);
    }
    Ok(axes)
}

/// A focus center in (slice, depth, column) voxel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Focus {
    slice: f64,
    depth: f64,
    column: f64,
}

/// Places foci inside the ILM..INL_LOWER band, laterally clear of every
/// vessel footprint so they never touch a tube or its shadow.
fn make_foci(
    cfg: &PhantomConfig,
    surfaces: &[Array2<f64>; 4],
    axes: &[Vec<AxisSample>],
) -> Vec<Focus> {
    let d = cfg.dims;
    let rf = cfg.focus_radius;
    let clearance = cfg.vessel_radius + rf + 3.0;
    let mut g = rng(cfg.seed, STREAM_FOCI);
    let mut foci = Vec::with_capacity(cfg.n_foci);
    for _ in 0..cfg.n_foci {
        for _attempt in 0..64 {
            let slice = g.random_range(0.0..d.n_slices as f64);
            let column = g.random_range(rf + 1.0..d.width as f64 - rf - 1.0);
            let frac: f64 = g.random_range(0.2..0.8);
            let s_lo = (slice - rf).floor().max(0.0) as usize;
            let s_hi = ((slice + rf).ceil() as usize).min(d.n_slices - 1);
            let clear = axes
                .iter()
                .flatten()
                .filter(|a| (s_lo..=s_hi).contains(&a.slice))
                .all(|a| (a.column - column).abs() >= clearance);
            let near = foci
                .iter()
                .all(|f: &Focus| (f.slice - slice).hypot(f.column - column) >= 2.0 * rf + 1.0);
            if !(clear && near) {
                continue;
            }
            let si = (slice.round() as usize).min(d.n_slices - 1);
            let ilm = lerp_column(&surfaces[0], si, column);
            let inl = lerp_column(&surfaces[1], si, column);
            let depth = ilm + frac * (inl - ilm);
            foci.push(Focus {
                slice,
                depth,
                column,
            });
            break;
        }
    }
    if foci.len() < cfg.n_foci {
        log::warn!("placed {} of {} foci; volume too crowded", foci.len(), cfg.n_foci);
    }
    foci
}

fn level_at(z: usize, col: [f64; 4], l: &LayerLevels) -> f64 {
    let z = z as f64;
    if z < col[0] {
        l.vitreous
    } else if z <= col[1] {
        l.inner_retina
    } else if z < col[2] {
        l.middle_retina
    } else if z <= col[3] {
        l.rpe
    } else {
        l.choroid
    }
}

/// Generates a phantom volume together with its ground truth.
pub fn generate(cfg: &PhantomConfig) -> Result<(OctVolume, PhantomGroundTruth)> {
    cfg.validate()?;
    let d = cfg.dims;
    let surfaces = make_surfaces(cfg);
    let floor = (d.height - 1) as f64;
    if surfaces[3].iter().any(|&v| v > floor) || surfaces[0].iter().any(|&v| v < 0.0) {
        return Err(Error::Config(format!(
            "dims {d} cannot host the layer stack"
        )));
    }
    let boundaries = BoundarySet::new(surfaces.clone())?;
    let axes = make_axes(cfg, &surfaces[0], &surfaces[1])?;

    let mut volume = Array3::from_shape_fn(d.shape(), |(s, z, x)| {
        let col = [
            surfaces[0][[s, x]],
            surfaces[1][[s, x]],
            surfaces[2][[s, x]],
            surfaces[3][[s, x]],
        ];
        level_at(z, col, &cfg.layer_levels)
    });
    let mut vessels = Array3::from_elem(d.shape(), false);
    let r = cfg.vessel_radius;
    for axis in &axes {
        for a in axis {
            let s = a.slice;
            let x_lo = (a.column - r).floor().max(0.0) as usize;
            let x_hi = ((a.column + r).ceil() as usize).min(d.width - 1);
            let z_lo = (a.depth - r).floor().max(0.0) as usize;
            let z_hi = ((a.depth + r).ceil() as usize).min(d.height - 1);
            for x in x_lo..=x_hi {
                let dx = x as f64 - a.column;
                for z in z_lo..=z_hi {
                    let dz = z as f64 - a.depth;
                    let inside_band =
                        z as f64 >= surfaces[0][[s, x]] && z as f64 <= surfaces[1][[s, x]];
                    if dx * dx + dz * dz <= r * r && inside_band {
                        vessels[[s, z, x]] = true;
                        volume[[s, z, x]] = cfg.vessel_level;
                    }
                }
            }
        }
    }

    let rf = cfg.focus_radius;
    for f in make_foci(cfg, &surfaces, &axes) {
        let range = |c: f64, n: usize| {
            (c - rf).floor().max(0.0) as usize..=((c + rf).ceil() as usize).min(n - 1)
        };
        for s in range(f.slice, d.n_slices) {
            for z in range(f.depth, d.height) {
                for x in range(f.column, d.width) {
                    let (ds, dz, dx) =
                        (s as f64 - f.slice, z as f64 - f.depth, x as f64 - f.column);
                    let zf = z as f64;
                    let in_band = zf >= surfaces[0][[s, x]] && zf <= surfaces[1][[s, x]];
                    if ds * ds + dz * dz + dx * dx <= rf * rf && in_band && !vessels[[s, z, x]] {
                        volume[[s, z, x]] = cfg.vessel_level;
                    }
                }
            }
        }
    }

    // Shadows: transmission a^(chord/diameter) below the lowest vessel voxel
    // of every footprint column, so the axis column gets the full factor and
    // the factor rises to 1 at the footprint rim.
    let half_width = r + 0.5;
    for axis in &axes {
        for a in axis {
            let s = a.slice;
            let x_lo = (a.column - r).floor().max(0.0) as usize;
            let x_hi = ((a.column + r).ceil() as usize).min(d.width - 1);
            for x in x_lo..=x_hi {
                let column = vessels.slice(s![s, .., x]);
                let Some(bottom) = column.iter().rposition(|&v| v) else {
                    continue;
                };
                let dx = (x as f64 - a.column) / half_width;
                let chord = (1.0 - dx * dx).max(0.0).sqrt();
                let transmission = cfg.shadow_attenuation.powf(chord);
                for z in bottom + 1..d.height {
                    volume[[s, z, x]] *= transmission;
                }
            }
        }
    }

    if cfg.noise_sigma > 0.0 {
        let sigma = cfg.noise_sigma;
        let seed = cfg.seed;
        volume
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(s, mut plane)| {
                let mut g = rng(seed, STREAM_NOISE | s as u64);
                for v in plane.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut g);
                    *v += sigma * n;
                }
            });
    }
    let data = volume.mapv(|v| v.clamp(0.0, 1.0) as f32);
    let footprint = vessels.map_axis(Axis(1), |col| col.iter().any(|&v| v));
    let truth = PhantomGroundTruth {
        boundaries,
        vessel_mask: VoxelMask::new(vessels),
        shadow_footprint: PixelMask::new(footprint),
        centerlines: axes,
    };
    Ok((OctVolume::new(data, None)?, truth))
}
