//! Connected components and binary morphology on voxel grids.

use std::collections::VecDeque;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Faces, edges and corners.
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::Config(format!(
                "connectivity must be 6 or 26, got {other}"
            ))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for a in -1..=1isize {
            for b in -1..=1isize {
                for c in -1..=1isize {
                    let n = a.abs() + b.abs() + c.abs();
                    let keep = match self {
                        Connectivity::Six => n == 1,
                        Connectivity::TwentySix => n > 0,
                    };
                    if keep {
                        out.push([a, b, c]);
                    }
                }
            }
        }
        out
    }
}

/// Labels foreground components. Labels start at 1 and are assigned in
/// order of each component's smallest linear index; background is 0.
/// Returns the label grid and the size of each component.
pub fn label(mask: &Array3<bool>, conn: Connectivity) -> (Array3<u32>, Vec<usize>) {
    let (d0, d1, d2) = mask.dim();
    let mut labels = Array3::<u32>::zeros((d0, d1, d2));
    let mut sizes = Vec::new();
    let offsets = conn.offsets();
    let mut queue = VecDeque::new();
    for ((i, j, k), &v) in mask.indexed_iter() {
        if !v || labels[[i, j, k]] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0;
        labels[[i, j, k]] = id;
        queue.push_back([i, j, k]);
        while let Some(p) = queue.pop_front() {
            size += 1;
            for o in &offsets {
                let q = [
                    p[0] as isize + o[0],
                    p[1] as isize + o[1],
                    p[2] as isize + o[2],
                ];
                if q[0] < 0 || q[1] < 0 || q[2] < 0 {
                    continue;
                }
                let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                if q[0] >= d0 || q[1] >= d1 || q[2] >= d2 {
                    continue;
                }
                if mask[q] && labels[q] == 0 {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Drops components smaller than `min_size`; returns the cleaned mask and
/// the number of surviving components.
pub fn remove_small(
    mask: &Array3<bool>,
    conn: Connectivity,
    min_size: usize,
) -> (Array3<bool>, usize) {
    let (labels, sizes) = label(mask, conn);
    let keep: Vec<bool> = sizes.iter().map(|&n| n >= min_size).collect();
    let count = keep.iter().filter(|&&k| k).count();
    let cleaned = labels.mapv(|l| l > 0 && keep[l as usize - 1]);
    (cleaned, count)
}

/// 2D variant with 8-connectivity.
pub fn remove_small_2d(mask: &Array2<bool>, min_size: usize) -> (Array2<bool>, usize) {
    let (h, w) = mask.dim();
    let as3 = mask.to_shape((1, h, w)).expect("contiguous").to_owned();
    let (cleaned, n) = remove_small(&as3, Connectivity::TwentySix, min_size);
    (cleaned.into_shape_with_order((h, w)).expect("same size"), n)
}

/// Dilation by a (2r+1) x (2r+1) square, i.e. Chebyshev radius `r`.
pub fn dilate_square(mask: &Array2<bool>, r: usize) -> Array2<bool> {
    if r == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    // separable: rows then columns
    let mut rows = Array2::from_elem((h, w), false);
    for i in 0..h {
        for j in 0..w {
            let lo = j.saturating_sub(r);
            let hi = (j + r).min(w - 1);
            rows[[i, j]] = (lo..=hi).any(|c| mask[[i, c]]);
        }
    }
    let mut out = Array2::from_elem((h, w), false);
    for i in 0..h {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(h - 1);
        for j in 0..w {
            out[[i, j]] = (lo..=hi).any(|k| rows[[k, j]]);
        }
    }
    out
}
