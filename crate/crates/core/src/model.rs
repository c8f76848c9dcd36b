//! Shared domain types. Every constructor validates its invariants, so a
//! value of any of these types is always well formed.

use std::fmt;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Volume dimensions as (n_slices, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub n_slices: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(n_slices: usize, height: usize, width: usize) -> Self {
        Self {
            n_slices,
            height,
            width,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_slices, self.height, self.width]
    }

    /// Transverse (slice, column) shape.
    pub fn plane(&self) -> [usize; 2] {
        [self.n_slices, self.width]
    }

    pub fn len(&self) -> usize {
        self.n_slices * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn of<T>(a: &Array3<T>) -> Self {
        let (s, h, w) = a.dim();
        Self::new(s, h, w)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.n_slices, self.height, self.width)
    }
}

fn check_unit_range<'a>(
    values: impl Iterator<Item = &'a f32>,
    what: &str,
    dims: &[usize],
) -> Result<()> {
    for (i, &v) in values.enumerate() {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Validation(format!(
                "{what} value {v} out of [0,1] at voxel {:?}",
                unravel(i, dims)
            )));
        }
    }
    Ok(())
}

/// Converts a linear row-major index to a multi-index.
pub(crate) fn unravel(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (k, &d) in dims.iter().enumerate().rev() {
        out[k] = index % d.max(1);
        index /= d.max(1);
    }
    out
}

/// A volumetric OCT scan, indexed as `[slice, depth, column]`, with
/// intensities normalized to [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct OctVolume {
    data: Array3<f32>,
    spacing: Option<[f64; 3]>,
}

impl OctVolume {
    pub const MIN_HEIGHT: usize = 8;
    pub const MIN_WIDTH: usize = 8;

    pub fn new(data: Array3<f32>, spacing: Option<[f64; 3]>) -> Result<Self> {
        let dims = Dims::of(&data);
        if dims.n_slices < 1 || dims.height < Self::MIN_HEIGHT || dims.width < Self::MIN_WIDTH {
            return Err(Error::Validation(format!(
                "volume dims {dims} below minimum 1x{}x{}",
                Self::MIN_HEIGHT,
                Self::MIN_WIDTH
            )));
        }
        check_unit_range(data.iter(), "intensity", &dims.shape())?;
        Ok(Self { data, spacing })
    }

    /// Normalizes integer samples by the maximum of their source type.
    pub fn from_u8(raw: Array3<u8>, spacing: Option<[f64; 3]>) -> Result<Self> {
        Self::new(raw.mapv(|v| v as f32 / u8::MAX as f32), spacing)
    }

    pub fn from_u16(raw: Array3<u16>, spacing: Option<[f64; 3]>) -> Result<Self> {
        Self::new(raw.mapv(|v| v as f32 / u16::MAX as f32), spacing)
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn dims(&self) -> Dims {
        Dims::of(&self.data)
    }

    /// (dy, dz, dx) in micrometers, when known.
    pub fn spacing(&self) -> Option<[f64; 3]> {
        self.spacing
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.data
    }
}

/// The four retinal surfaces the cascade needs, top to bottom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Boundary {
    Ilm,
    InlLower,
    RpeUpper,
    Bm,
}

impl Boundary {
    pub const ALL: [Boundary; 4] = [
        Boundary::Ilm,
        Boundary::InlLower,
        Boundary::RpeUpper,
        Boundary::Bm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Boundary::Ilm => "ILM",
            Boundary::InlLower => "INL_LOWER",
            Boundary::RpeUpper => "RPE_UPPER",
            Boundary::Bm => "BM",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fractional depth (in voxels) of each surface at every (slice, column).
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySet {
    surfaces: [Array2<f64>; 4],
}

impl BoundarySet {
    /// Surfaces in top-to-bottom order: ILM, INL_LOWER, RPE_UPPER, BM.
    pub fn new(surfaces: [Array2<f64>; 4]) -> Result<Self> {
        let shape = surfaces[0].dim();
        for (b, s) in Boundary::ALL.iter().zip(&surfaces) {
            if s.dim() != shape {
                return Err(Error::Validation(format!(
                    "surface {b} has shape {:?}, expected {:?}",
                    s.dim(),
                    shape
                )));
            }
        }
        let (n_slices, width) = shape;
        for s in 0..n_slices {
            for x in 0..width {
                let d = [
                    surfaces[0][[s, x]],
                    surfaces[1][[s, x]],
                    surfaces[2][[s, x]],
                    surfaces[3][[s, x]],
                ];
                if d.iter().any(|v| !v.is_finite()) || d[0] < 0.0 {
                    return Err(Error::Validation(format!(
                        "invalid depth at (slice {s}, column {x}): {d:?}"
                    )));
                }
                if !(d[0] <= d[1] && d[1] <= d[2] && d[2] <= d[3]) {
                    return Err(Error::Validation(format!(
                        "boundary ordering violated at (slice {s}, column {x}): \
                         ILM={} INL_LOWER={} RPE_UPPER={} BM={}",
                        d[0], d[1], d[2], d[3]
                    )));
                }
            }
        }
        Ok(Self { surfaces })
    }

    pub fn surface(&self, b: Boundary) -> &Array2<f64> {
        &self.surfaces[b.index()]
    }

    pub fn depth(&self, b: Boundary, slice: usize, column: usize) -> f64 {
        self.surfaces[b.index()][[slice, column]]
    }

    /// (n_slices, width)
    pub fn plane(&self) -> [usize; 2] {
        let (s, w) = self.surfaces[0].dim();
        [s, w]
    }

    /// Checks the set against a target volume: same transverse shape and
    /// every surface above the last row.
    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.plane() != dims.plane() {
            return Err(Error::shape(&dims.plane(), &self.plane()));
        }
        let floor = (dims.height - 1) as f64;
        let bm = self.surface(Boundary::Bm);
        if let Some(((s, x), v)) = bm.indexed_iter().find(|(_, &v)| v > floor) {
            return Err(Error::Validation(format!(
                "BM depth {v} below last row {floor} at (slice {s}, column {x})"
            )));
        }
        Ok(())
    }

    pub fn into_surfaces(self) -> [Array2<f64>; 4] {
        self.surfaces
    }
}

/// A 2D (slice x column) projection image.
#[derive(Clone, Debug, PartialEq)]
pub struct EnFaceImage {
    data: Array2<f32>,
}

impl EnFaceImage {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (s, w) = data.dim();
        check_unit_range(data.iter(), "en-face", &[s, w])?;
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn plane(&self) -> [usize; 2] {
        let (s, w) = self.data.dim();
        [s, w]
    }
}

/// A binary transverse (slice x column) mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    data: Array2<bool>,
}

impl PixelMask {
    pub fn new(data: Array2<bool>) -> Self {
        Self { data }
    }

    pub fn empty(plane: [usize; 2]) -> Self {
        Self::new(Array2::from_elem((plane[0], plane[1]), false))
    }

    pub fn data(&self) -> &Array2<bool> {
        &self.data
    }

    pub fn plane(&self) -> [usize; 2] {
        let (s, w) = self.data.dim();
        [s, w]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn check_plane(&self, plane: [usize; 2]) -> Result<()> {
        if self.plane() != plane {
            return Err(Error::shape(&plane, &self.plane()));
        }
        Ok(())
    }
}

/// A binary 3D mask on the volume grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelMask {
    data: Array3<bool>,
}

impl VoxelMask {
    pub fn new(data: Array3<bool>) -> Self {
        Self { data }
    }

    pub fn empty(dims: Dims) -> Self {
        Self::new(Array3::from_elem(dims.shape(), false))
    }

    pub fn full(dims: Dims) -> Self {
        Self::new(Array3::from_elem(dims.shape(), true))
    }

    pub fn data(&self) -> &Array3<bool> {
        &self.data
    }

    pub fn dims(&self) -> Dims {
        Dims::of(&self.data)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_subset_of(&self, other: &VoxelMask) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(&a, &b)| !a || b)
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::shape(&dims.shape(), &self.dims().shape()));
        }
        Ok(())
    }

    pub fn into_inner(self) -> Array3<bool> {
        self.data
    }
}

/// Per-voxel vessel scores in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap3D {
    data: Array3<f32>,
}

impl ProbabilityMap3D {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let dims = Dims::of(&data);
        check_unit_range(data.iter(), "probability", &dims.shape())?;
        Ok(Self { data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            data: Array3::zeros(dims.shape()),
        }
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn dims(&self) -> Dims {
        Dims::of(&self.data)
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::shape(&dims.shape(), &self.dims().shape()));
        }
        Ok(())
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.data
    }
}
