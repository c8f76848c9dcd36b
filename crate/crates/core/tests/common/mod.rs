//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Nothing here calls into the code it checks.

#![allow(dead_code)]

use ndarray::{Array2, Array3};
use oct_cascade::model::{BoundarySet, Dims, PixelMask, ProbabilityMap3D, VoxelMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small boundary-tracing problem whose costs are multiples of 1/8 so
/// every path sum is exact in f64.
#[derive(Clone, Debug)]
pub struct DpInstance {
    pub cost: Array2<f64>,
    pub smoothness: f64,
    pub max_jump: usize,
    pub band: Vec<(usize, usize)>,
}

pub fn random_dp_instance(r: &mut ChaCha8Rng, full_band: bool) -> DpInstance {
    let height = r.random_range(1..=8);
    let width = r.random_range(1..=6);
    let cost = Array2::from_shape_fn((height, width), |_| {
        r.random_range(-16i32..=16) as f64 / 8.0
    });
    let smoothness = [0.0, 0.25, 0.5, 1.0, 2.0][r.random_range(0..5)];
    let max_jump = r.random_range(1..=3);
    let band = (0..width)
        .map(|_| {
            if full_band {
                (0, height - 1)
            } else {
                let a = r.random_range(0..height);
                let b = r.random_range(0..height);
                (a.min(b), a.max(b))
            }
        })
        .collect();
    DpInstance {
        cost,
        smoothness,
        max_jump,
        band,
    }
}

/// Objective of a path, written out directly.
pub fn objective(inst: &DpInstance, path: &[usize]) -> f64 {
    let data: f64 = path
        .iter()
        .enumerate()
        .map(|(x, &z)| inst.cost[[z, x]])
        .sum();
    let moves: usize = path.windows(2).map(|w| w[0].abs_diff(w[1])).sum();
    data + inst.smoothness * moves as f64
}

pub fn path_is_feasible(inst: &DpInstance, path: &[usize]) -> bool {
    path.len() == inst.band.len()
        && path
            .iter()
            .zip(&inst.band)
            .all(|(&z, &(lo, hi))| lo <= z && z <= hi)
        && path
            .windows(2)
            .all(|w| w[0].abs_diff(w[1]) <= inst.max_jump)
}

/// Minimum objective over every feasible path, or `None` when no path
/// exists.
pub fn brute_force_min(inst: &DpInstance) -> Option<f64> {
    let width = inst.band.len();
    let mut best: Option<f64> = None;
    let mut path = Vec::with_capacity(width);
    fn walk(inst: &DpInstance, path: &mut Vec<usize>, best: &mut Option<f64>) {
        let x = path.len();
        if x == inst.band.len() {
            let v = objective(inst, path);
            if best.is_none_or(|b| v < b) {
                *best = Some(v);
            }
            return;
        }
        let (lo, hi) = inst.band[x];
        for z in lo..=hi {
            if x > 0 && path[x - 1].abs_diff(z) > inst.max_jump {
                continue;
            }
            path.push(z);
            walk(inst, path, best);
            path.pop();
        }
    }
    walk(inst, &mut path, &mut best);
    best
}

/// Probability that a random positive outscores a random negative, ties
/// counted half, by enumerating every pair.
pub fn pairwise_auc(pairs: &[(f32, bool)]) -> Option<f64> {
    let pos: Vec<f32> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
    let neg: Vec<f32> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() as f64 * neg.len() as f64))
}

/// Random labelled scores; coarse scores force ties.
pub fn random_scored_pairs(r: &mut ChaCha8Rng) -> Vec<(f32, bool)> {
    let n = r.random_range(2..=1000);
    let levels = [2u32, 5, 17, 1 << 20][r.random_range(0..4)];
    let p_pos: f64 = r.random_range(0.05..0.95);
    let mut pairs: Vec<(f32, bool)> = (0..n)
        .map(|_| {
            let s = r.random_range(0..levels) as f32 / (levels - 1) as f32;
            (s, r.random_bool(p_pos))
        })
        .collect();
    pairs[0].1 = true;
    pairs[1].1 = false;
    pairs
}

/// `base_lr * (1 - iter/max_iter)^power` evaluated at 50 significant digits
/// (mpmath), with the f64 inputs taken at their exact binary values.
#[allow(clippy::excessive_precision)]
pub const POLY_LR_ORACLE: [(f64, u64, u64, f64, f64); 5] = [
    (1e-4, 250, 1000, 0.9, 7.718895067235704701027652e-5),
    (1e-2, 1, 3, 0.9, 6.942531626616070660990536e-3),
    (3e-4, 999, 1000, 0.9, 5.985786944906637361563432e-7),
    (1e-3, 17, 40, 2.0, 3.306250000000000068825154e-4),
    (1e-2, 123, 1000, 0.9, 8.885863427951279616494458e-3),
];

/// Random planar ordered surfaces inside a column of `height` rows. About
/// a third of the depths are whole numbers to exercise rounding edges.
pub fn random_boundaries(r: &mut ChaCha8Rng, dims: Dims) -> BoundarySet {
    let floor = (dims.height - 1) as f64;
    let mut surfaces: [Array2<f64>; 4] =
        std::array::from_fn(|_| Array2::zeros((dims.n_slices, dims.width)));
    for s in 0..dims.n_slices {
        for x in 0..dims.width {
            let mut d: [f64; 4] = std::array::from_fn(|_| {
                let v = r.random_range(0.0..=floor);
                if r.random_bool(0.33) {
                    v.round()
                } else {
                    v
                }
            });
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for k in 0..4 {
                surfaces[k][[s, x]] = d[k];
            }
        }
    }
    BoundarySet::new(surfaces).expect("sorted depths are ordered")
}

pub fn random_dims(r: &mut ChaCha8Rng) -> Dims {
    Dims::new(
        r.random_range(1..=4),
        r.random_range(8..=16),
        r.random_range(1..=9),
    )
}

pub fn random_pixel_mask(r: &mut ChaCha8Rng, dims: Dims) -> PixelMask {
    let p: f64 = r.random_range(0.0..0.5);
    PixelMask::new(Array2::from_shape_fn((dims.n_slices, dims.width), |_| {
        r.random_bool(p)
    }))
}

pub fn random_probability(r: &mut ChaCha8Rng, dims: Dims) -> ProbabilityMap3D {
    ProbabilityMap3D::new(Array3::from_shape_fn(dims.shape(), |_| {
        r.random_range(0.0f32..=1.0)
    }))
    .unwrap()
}

/// True when some pixel of `m` lies within Chebyshev distance `d`.
pub fn near_shadow(m: &PixelMask, s: usize, x: usize, d: usize) -> bool {
    m.data()
        .indexed_iter()
        .any(|((ms, mx), &on)| on && ms.abs_diff(s) <= d && mx.abs_diff(x) <= d)
}

/// Depth-wise constancy of a voxel mask.
pub fn is_depth_invariant(m: &VoxelMask) -> bool {
    let d = m.dims();
    (0..d.n_slices).all(|s| {
        (0..d.width).all(|x| (1..d.height).all(|z| m.data()[[s, z, x]] == m.data()[[s, 0, x]]))
    })
}

/// Dice coefficient of two pixel masks.
pub fn dice(a: &PixelMask, b: &PixelMask) -> f64 {
    let inter = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(&p, &q)| p && q)
        .count();
    let total = a.count() + b.count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

use oct_cascade::cascade::{self, InfusionConfig};
use oct_cascade::model::Boundary;

/// Transverse mask: constant along depth and equal to the dilated shadow
/// mask, checked against a direct neighbourhood search.
pub fn check_transverse(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = random_dims(&mut r);
    let pm = random_pixel_mask(&mut r, dims);
    let d = r.random_range(0..=2);
    let tm = cascade::transverse_mask(&pm, dims, d).map_err(|e| e.to_string())?;
    if !is_depth_invariant(&tm) {
        return Err(format!("seed {seed}: transverse mask varies with depth"));
    }
    for s in 0..dims.n_slices {
        for x in 0..dims.width {
            if tm.data()[[s, 0, x]] != near_shadow(&pm, s, x, d) {
                return Err(format!(
                    "seed {seed}: dilation wrong at ({s}, {x}) with d={d}"
                ));
            }
        }
    }
    Ok(())
}

/// Longitudinal mask: voxel z is kept iff ILM <= z <= INL_LOWER, which for
/// whole-number z is the ceil/floor rule.
pub fn check_longitudinal(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = random_dims(&mut r);
    let b = random_boundaries(&mut r, dims);
    let lm = cascade::longitudinal_mask(&b, dims).map_err(|e| e.to_string())?;
    for ((s, z, x), &on) in lm.data().indexed_iter() {
        let zf = z as f64;
        let want = b.depth(Boundary::Ilm, s, x) <= zf && zf <= b.depth(Boundary::InlLower, s, x);
        if on != want {
            return Err(format!(
                "seed {seed}: longitudinal mask wrong at ({s}, {z}, {x})"
            ));
        }
    }
    Ok(())
}

fn random_infusion(r: &mut ChaCha8Rng) -> InfusionConfig {
    InfusionConfig {
        binarize_threshold: r.random_range(0.0..1.0),
        min_component_vox: r.random_range(1..=4),
        ..InfusionConfig::default().with_flags(r.random_bool(0.5), r.random_bool(0.5))
    }
}

/// The binarized output never leaves an enabled prior mask.
pub fn check_final_subset(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = random_dims(&mut r);
    let b = random_boundaries(&mut r, dims);
    let pm = random_pixel_mask(&mut r, dims);
    let p = random_probability(&mut r, dims);
    let cfg = random_infusion(&mut r);
    let lm = cascade::longitudinal_mask(&b, dims).unwrap();
    let tm = cascade::transverse_mask(&pm, dims, cfg.transverse_dilation).unwrap();
    let infused = cascade::infuse(
        &p,
        cfg.use_longitudinal.then_some(&lm),
        cfg.use_transverse.then_some(&tm),
    )
    .map_err(|e| e.to_string())?;
    let (mask, _) = cascade::binarize_and_label(&infused, &cfg).map_err(|e| e.to_string())?;
    if cfg.use_longitudinal && !mask.is_subset_of(&lm) {
        return Err(format!("seed {seed}: output escapes longitudinal mask"));
    }
    if cfg.use_transverse && !mask.is_subset_of(&tm) {
        return Err(format!("seed {seed}: output escapes transverse mask"));
    }
    let theta = cfg.binarize_threshold as f32;
    for (idx, &on) in mask.data().indexed_iter() {
        if on && infused.data()[idx] <= theta {
            return Err(format!(
                "seed {seed}: voxel {idx:?} kept at or below threshold"
            ));
        }
    }
    Ok(())
}

/// Infusing twice with the same masks changes nothing.
pub fn check_idempotent(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let dims = random_dims(&mut r);
    let b = random_boundaries(&mut r, dims);
    let pm = random_pixel_mask(&mut r, dims);
    let p = random_probability(&mut r, dims);
    let lm = cascade::longitudinal_mask(&b, dims).unwrap();
    let tm = cascade::transverse_mask(&pm, dims, r.random_range(0..=2)).unwrap();
    let (l, t) = (
        r.random_bool(0.5).then_some(&lm),
        r.random_bool(0.5).then_some(&tm),
    );
    let once = cascade::infuse(&p, l, t).map_err(|e| e.to_string())?;
    let twice = cascade::infuse(&once, l, t).map_err(|e| e.to_string())?;
    if once != twice {
        return Err(format!("seed {seed}: infusion not idempotent"));
    }
    Ok(())
}
