//! Retinal boundary segmentation by per-B-scan dynamic programming.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{BoundarySet, OctVolume};

/// Parameters of a single boundary trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    /// Cost per voxel of depth change between neighbouring columns.
    pub smoothness: f64,
    /// Largest allowed depth change between neighbouring columns.
    pub max_jump: usize,
}

impl TraceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return Err(Error::Config(format!(
                "smoothness {} must be >= 0",
                self.smoothness
            )));
        }
        if self.max_jump < 1 {
            return Err(Error::Config("max_jump must be >= 1".into()));
        }
        Ok(())
    }
}

/// Finds the path `z(x)` minimizing
/// `sum cost[z(x), x] + smoothness * sum |z(x+1) - z(x)|`
/// with `|z(x+1) - z(x)| <= max_jump` and `z(x)` inside `band[x]`
/// (inclusive rows). Among optimal paths the one ending at the smallest
/// depth wins, and backtracking prefers the smallest predecessor depth.
pub fn trace_boundary(
    cost: ArrayView2<f64>,
    params: TraceParams,
    band: &[(usize, usize)],
) -> Result<Vec<usize>> {
    params.validate()?;
    let (height, width) = cost.dim();
    if band.len() != width {
        return Err(Error::shape(&[width], &[band.len()]));
    }
    for (x, &(lo, hi)) in band.iter().enumerate() {
        if lo > hi || hi >= height {
            return Err(Error::Infeasible { column: x });
        }
    }
    if width == 0 {
        return Ok(Vec::new());
    }
    let s = params.max_jump;
    let lambda = params.smoothness;
    let mut acc = vec![f64::INFINITY; height * width];
    let mut from = vec![usize::MAX; height * width];
    let (lo0, hi0) = band[0];
    for z in lo0..=hi0 {
        acc[z * width] = cost[[z, 0]];
    }
    for x in 1..width {
        let (plo, phi) = band[x - 1];
        let (lo, hi) = band[x];
        let mut reachable = false;
        for z in lo..=hi {
            let zl = z.saturating_sub(s).max(plo);
            let zh = (z + s).min(phi);
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for zp in zl..=zh.max(zl) {
                if zp > zh {
                    break;
                }
                let prev = acc[zp * width + x - 1];
                if !prev.is_finite() {
                    continue;
                }
                let c = prev + lambda * z.abs_diff(zp) as f64;
                if c < best {
                    best = c;
                    arg = zp;
                }
            }
            if arg != usize::MAX {
                reachable = true;
                acc[z * width + x] = best + cost[[z, x]];
                from[z * width + x] = arg;
            }
        }
        if !reachable {
            return Err(Error::Infeasible { column: x });
        }
    }
    let last = width - 1;
    let (lo, hi) = band[last];
    let mut end = lo;
    for z in lo..=hi {
        if acc[z * width + last] < acc[end * width + last] {
            end = z;
        }
    }
    let mut path = vec![0; width];
    path[last] = end;
    for x in (1..width).rev() {
        path[x - 1] = from[path[x] * width + x];
    }
    Ok(path)
}

/// Objective value of a path, summed left to right.
pub fn path_cost(cost: ArrayView2<f64>, smoothness: f64, path: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &z) in path.iter().enumerate() {
        total += cost[[z, x]];
        if x > 0 {
            total += smoothness * z.abs_diff(path[x - 1]) as f64;
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Bright above, dark below.
    NegativeVerticalGradient,
    /// Dark above, bright below.
    PositiveVerticalGradient,
    NegativeIntensity,
}

impl CostKind {
    /// Gradient edges sit between the traced voxel and the one below it.
    fn depth_offset(self) -> f64 {
        match self {
            CostKind::NegativeIntensity => 0.0,
            _ => 0.5,
        }
    }
}

/// Cost kinds for every traced surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCosts {
    pub rpe_locator: CostKind,
    pub ilm: CostKind,
    pub rpe_upper: CostKind,
    pub bm: CostKind,
    pub inl_lower: CostKind,
}

impl Default for BoundaryCosts {
    fn default() -> Self {
        Self {
            rpe_locator: CostKind::NegativeIntensity,
            ilm: CostKind::PositiveVerticalGradient,
            rpe_upper: CostKind::PositiveVerticalGradient,
            bm: CostKind::NegativeVerticalGradient,
            inl_lower: CostKind::NegativeVerticalGradient,
        }
    }
}

/// Search bands, in rows, relative to previously traced surfaces.
///
/// The brightest path (the RPE) is found first over the whole column and
/// anchors everything else:
/// ILM in `[0, locator - ilm_gap]`,
/// RPE_UPPER in `[max(ILM + rpe_margin, locator - rpe_window), locator]`,
/// BM in `[RPE_UPPER + 1, RPE_UPPER + bm_window]`,
/// INL_LOWER in `[ILM + inl_margin, RPE_UPPER - inl_margin]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBands {
    pub ilm_gap: usize,
    pub rpe_margin: usize,
    pub rpe_window: usize,
    pub bm_window: usize,
    pub inl_margin: usize,
}

impl Default for SearchBands {
    fn default() -> Self {
        Self {
            ilm_gap: 12,
            rpe_margin: 4,
            rpe_window: 12,
            bm_window: 16,
            inl_margin: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub smoothness: f64,
    pub max_jump: usize,
    #[serde(default)]
    pub bands: SearchBands,
    #[serde(default)]
    pub costs: BoundaryCosts,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            smoothness: 0.5,
            max_jump: 2,
            bands: SearchBands::default(),
            costs: BoundaryCosts::default(),
        }
    }
}

impl DpConfig {
    /// Defaults with band sizes scaled from the 192-row desk geometry.
    pub fn for_height(height: usize) -> Self {
        let f = height as f64 / 192.0;
        let scale = |v: usize| ((v as f64 * f).round() as usize).max(1);
        let b = SearchBands::default();
        Self {
            bands: SearchBands {
                ilm_gap: scale(b.ilm_gap),
                rpe_margin: scale(b.rpe_margin),
                rpe_window: scale(b.rpe_window),
                bm_window: scale(b.bm_window),
                inl_margin: b.inl_margin,
            },
            ..Self::default()
        }
    }

    pub fn params(&self) -> TraceParams {
        TraceParams {
            smoothness: self.smoothness,
            max_jump: self.max_jump,
        }
    }
}

/// Vertical central differences with one-sided differences on the first
/// and last rows.
pub fn vertical_gradient(image: ArrayView2<f32>) -> Array2<f64> {
    let (h, w) = image.dim();
    Array2::from_shape_fn((h, w), |(z, x)| {
        let at = |r: usize| image[[r, x]] as f64;
        if h < 2 {
            0.0
        } else if z == 0 {
            at(1) - at(0)
        } else if z == h - 1 {
            at(h - 1) - at(h - 2)
        } else {
            0.5 * (at(z + 1) - at(z - 1))
        }
    })
}

fn cost_map(bscan: ArrayView2<f32>, kind: CostKind) -> Array2<f64> {
    let raw = match kind {
        CostKind::NegativeIntensity => bscan.mapv(|v| -(v as f64)),
        CostKind::PositiveVerticalGradient => vertical_gradient(bscan).mapv(|g| -g),
        CostKind::NegativeVerticalGradient => vertical_gradient(bscan),
    };
    let scale = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale > 0.0 {
        raw.mapv(|v| v / scale)
    } else {
        raw
    }
}

fn band_from(lo: &[i64], hi: &[i64], height: usize) -> Result<Vec<(usize, usize)>> {
    let top = height as i64 - 1;
    lo.iter()
        .zip(hi)
        .enumerate()
        .map(|(x, (&l, &h))| {
            let l = l.max(0);
            let h = h.min(top);
            if l > h {
                Err(Error::Infeasible { column: x })
            } else {
                Ok((l as usize, h as usize))
            }
        })
        .collect()
}

/// The four surfaces of one B-scan, as traced rows.
struct ScanPaths {
    ilm: Vec<usize>,
    inl: Vec<usize>,
    rpe: Vec<usize>,
    bm: Vec<usize>,
}

fn segment_bscan(bscan: ArrayView2<f32>, cfg: &DpConfig) -> Result<ScanPaths> {
    let (h, w) = bscan.dim();
    let p = cfg.params();
    let b = cfg.bands;
    let c = cfg.costs;
    let trace = |kind: CostKind, band: &[(usize, usize)]| {
        trace_boundary(cost_map(bscan, kind).view(), p, band)
    };
    let signed = |v: &[usize]| v.iter().map(|&z| z as i64).collect::<Vec<_>>();
    let shift = |v: &[i64], d: i64| v.iter().map(|&z| z + d).collect::<Vec<_>>();
    // gradient traces stop one row short so the half-voxel edge stays in range
    let last = h as i64 - 2;

    let locator = trace(c.rpe_locator, &vec![(0, h - 1); w])?;
    let loc = signed(&locator);
    let ilm = trace(
        c.ilm,
        &band_from(&vec![0; w], &shift(&loc, -(b.ilm_gap as i64)), h)?,
    )?;
    let ilm_s = signed(&ilm);
    let rpe_lo: Vec<i64> = ilm_s
        .iter()
        .zip(&loc)
        .map(|(&i, &l)| (i + b.rpe_margin as i64).max(l - b.rpe_window as i64))
        .collect();
    let rpe_hi: Vec<i64> = loc.iter().map(|&l| l.min(last - 1)).collect();
    let rpe = trace(c.rpe_upper, &band_from(&rpe_lo, &rpe_hi, h)?)?;
    let rpe_s = signed(&rpe);
    let bm_hi: Vec<i64> = rpe_s
        .iter()
        .map(|&r| (r + b.bm_window as i64).min(last))
        .collect();
    let bm = trace(c.bm, &band_from(&shift(&rpe_s, 1), &bm_hi, h)?)?;
    let inl = trace(
        c.inl_lower,
        &band_from(
            &shift(&ilm_s, b.inl_margin as i64),
            &shift(&rpe_s, -(b.inl_margin as i64)),
            h,
        )?,
    )?;
    Ok(ScanPaths { ilm, inl, rpe, bm })
}

/// Traces ILM, RPE_UPPER, BM and INL_LOWER on every B-scan. Slices are
/// processed in parallel; the result does not depend on scheduling.
pub fn segment_boundaries(v: &OctVolume, cfg: &DpConfig) -> Result<BoundarySet> {
    cfg.params().validate()?;
    let dims = v.dims();
    let scans: Vec<Result<ScanPaths>> = v
        .data()
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|bscan| segment_bscan(bscan, cfg))
        .collect();
    let plane = (dims.n_slices, dims.width);
    let mut surfaces: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros(plane));
    let offsets = [
        cfg.costs.ilm,
        cfg.costs.inl_lower,
        cfg.costs.rpe_upper,
        cfg.costs.bm,
    ]
    .map(CostKind::depth_offset);
    for (s, scan) in scans.into_iter().enumerate() {
        let scan = scan?;
        for (k, path) in [&scan.ilm, &scan.inl, &scan.rpe, &scan.bm]
            .into_iter()
            .enumerate()
        {
            for (x, &z) in path.iter().enumerate() {
                surfaces[k][[s, x]] = z as f64 + offsets[k];
            }
        }
    }
    BoundarySet::new(surfaces)
}

/// Loads externally computed boundaries.
pub fn import_boundaries(path: &std::path::Path) -> Result<BoundarySet> {
    io::read_boundaries(path)
}
